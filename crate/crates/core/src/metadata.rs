//! TF-IDF metadata vectors.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::profile::SeriesYearIndex;
use crate::sparse::{CscMatrix, SparseView};

/// Sparse `m x N` feature matrix. Column `i` is the metadata vector of the
/// series labelled `labels[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetadataMatrix {
    pub features: CscMatrix,
    pub vocab: Vec<String>,
    pub labels: Vec<String>,
}

impl MetadataMatrix {
    pub fn new(features: CscMatrix, vocab: Vec<String>, labels: Vec<String>) -> Result<Self> {
        features.validate()?;
        if features.n_cols() != labels.len() {
            return Err(Error::Shape(format!(
                "{} columns but {} labels",
                features.n_cols(),
                labels.len()
            )));
        }
        if !vocab.is_empty() && vocab.len() != features.n_rows {
            return Err(Error::Shape(format!(
                "{} vocabulary terms for {} rows",
                vocab.len(),
                features.n_rows
            )));
        }
        if features.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite metadata value".into()));
        }
        Ok(MetadataMatrix {
            features,
            vocab,
            labels,
        })
    }

    /// Feature dimension `m`.
    pub fn dim(&self) -> usize {
        self.features.n_rows
    }

    pub fn n_columns(&self) -> usize {
        self.features.n_cols()
    }

    pub fn column(&self, i: usize) -> SparseView<'_> {
        self.features.column(i)
    }

    /// Column of the first occurrence of `series_id`.
    pub fn column_of(&self, series_id: &str) -> Option<SparseView<'_>> {
        self.labels.iter().position(|l| l == series_id).map(|i| self.column(i))
    }

    pub fn nnz_ratio(&self) -> f64 {
        let cells = self.dim() * self.n_columns();
        if cells == 0 {
            0.0
        } else {
            self.features.nnz() as f64 / cells as f64
        }
    }
}

/// Raw-count TF times `ln(n_docs / df)` IDF, keeping only terms that appear in
/// at least two documents. The vocabulary is sorted lexicographically.
pub fn tfidf_featurize(docs: &[(String, Vec<String>)]) -> Result<MetadataMatrix> {
    if docs.len() < 2 {
        return Err(Error::InsufficientCorpus(docs.len()));
    }
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for (_, tokens) in docs {
        let distinct: BTreeSet<&str> = tokens.iter().map(String::as_str).collect();
        for t in distinct {
            *df.entry(t).or_default() += 1;
        }
    }
    let vocab: Vec<String> = df
        .iter()
        .filter(|(_, &c)| c >= 2)
        .map(|(t, _)| t.to_string())
        .collect();
    let row_of: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let n_docs = docs.len() as f64;

    let mut features = CscMatrix {
        n_rows: vocab.len(),
        col_ptr: vec![0],
        row_idx: Vec::new(),
        values: Vec::new(),
    };
    for (_, tokens) in docs {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for t in tokens {
            if let Some(&row) = row_of.get(t.as_str()) {
                *counts.entry(row).or_default() += 1;
            }
        }
        for (row, tf) in counts {
            let idf = (n_docs / df[vocab[row].as_str()] as f64).ln();
            let w = tf as f64 * idf;
            if w != 0.0 {
                features.row_idx.push(row);
                features.values.push(w);
            }
        }
        features.col_ptr.push(features.row_idx.len());
    }
    let labels = docs.iter().map(|(id, _)| id.clone()).collect();
    MetadataMatrix::new(features, vocab, labels)
}

/// Copy each series' vector onto every one of its year-columns.
pub fn replicate_for_years(per_series: &MetadataMatrix, index: &SeriesYearIndex) -> Result<MetadataMatrix> {
    let by_id: HashMap<&str, usize> = per_series
        .labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let mut columns = Vec::with_capacity(index.n_columns());
    let mut labels = Vec::with_capacity(index.n_columns());
    for span in index.spans() {
        let &col = by_id
            .get(span.id.as_str())
            .ok_or_else(|| Error::MetadataMissing(span.id.clone()))?;
        for _ in span.columns() {
            columns.push(per_series.column(col));
            labels.push(span.id.clone());
        }
    }
    let features = CscMatrix::from_columns(per_series.dim(), columns)?;
    MetadataMatrix::new(features, per_series.vocab.clone(), labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, words: &str) -> (String, Vec<String>) {
        (id.to_string(), words.split_whitespace().map(String::from).collect())
    }

    #[test]
    fn singleton_terms_are_dropped() {
        let m = tfidf_featurize(&[doc("a", "flu winter north"), doc("b", "flu summer north"), doc("c", "winter")]).unwrap();
        assert_eq!(m.vocab, vec!["flu", "north", "winter"]);
        assert!(!m.vocab.contains(&"summer".to_string()));
    }

    #[test]
    fn weights_are_count_times_log_idf() {
        let m = tfidf_featurize(&[doc("a", "x x y"), doc("b", "x z"), doc("c", "y z w")]).unwrap();
        // vocab: x, y, z (w appears once)
        assert_eq!(m.vocab, vec!["x", "y", "z"]);
        let a = m.column(0).to_dense();
        let idf = (3.0f64 / 2.0).ln();
        assert_eq!(a, vec![2.0 * idf, idf, 0.0]);
    }

    #[test]
    fn identical_documents_give_identical_columns() {
        let m = tfidf_featurize(&[doc("a", "p q r"), doc("b", "p q r"), doc("c", "p s")]).unwrap();
        assert_eq!(m.column(0), m.column(1));
    }

    #[test]
    fn term_in_every_document_has_no_weight() {
        let m = tfidf_featurize(&[doc("a", "p q"), doc("b", "p q")]).unwrap();
        assert_eq!(m.features.nnz(), 0);
        assert_eq!(m.dim(), 2);
    }

    #[test]
    fn one_document_is_insufficient() {
        assert!(matches!(tfidf_featurize(&[doc("a", "x")]), Err(Error::InsufficientCorpus(1))));
    }

    #[test]
    fn vocabulary_independent_of_order() {
        let d = [doc("a", "k l m"), doc("b", "m k"), doc("c", "l z z")];
        let rev: Vec<_> = d.iter().rev().cloned().collect();
        assert_eq!(tfidf_featurize(&d).unwrap().vocab, tfidf_featurize(&rev).unwrap().vocab);
    }

    #[test]
    fn replicate_copies_per_year() {
        let m = tfidf_featurize(&[doc("a", "p q"), doc("b", "p r"), doc("c", "q r")]).unwrap();
        let index = SeriesYearIndex::new(
            4,
            vec![("b".to_string(), 0, 12), ("a".to_string(), 0, 3)],
        )
        .unwrap();
        let rep = replicate_for_years(&m, &index).unwrap();
        assert_eq!(rep.n_columns(), 4);
        for c in 0..3 {
            assert_eq!(rep.column(c), m.column(1));
        }
        assert_eq!(rep.column(3), m.column(0));
        assert_eq!(rep.labels, vec!["b", "b", "b", "a"]);
    }

    #[test]
    fn replicate_reports_missing_series() {
        let m = tfidf_featurize(&[doc("a", "p"), doc("b", "p")]).unwrap();
        let index = SeriesYearIndex::new(4, vec![("zz".to_string(), 0, 4)]).unwrap();
        assert!(matches!(replicate_for_years(&m, &index), Err(Error::MetadataMissing(id)) if id == "zz"));
    }
}
