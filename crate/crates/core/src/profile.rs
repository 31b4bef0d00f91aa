//! The year-stacked observation matrix.
//!
//! Every period (for example every year) of every series becomes one column of a
//! `T x N` matrix. Columns are ordered series by series in input order, and by
//! ascending period within a series. Cells before a series' first sample or
//! after its last one are zero-filled and carry `mask = false`, as do samples
//! that are missing (non-finite) in the raw input.

use std::collections::{BTreeMap, HashSet};
use std::ops::Range;

use chrono::{Datelike, NaiveDate, Weekday};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One raw series in natural units. Non-finite values mark missing samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSeries {
    pub id: String,
    pub values: Vec<f64>,
    /// Position of `values[0]` within the first period.
    pub start_offset: usize,
}

impl RawSeries {
    pub fn new(id: impl Into<String>, values: Vec<f64>) -> Self {
        RawSeries {
            id: id.into(),
            values,
            start_offset: 0,
        }
    }

    pub fn with_offset(mut self, start_offset: usize) -> Self {
        self.start_offset = start_offset;
        self
    }

    /// Number of columns this series occupies for the given period.
    pub fn n_periods(&self, period: usize) -> usize {
        (self.start_offset + self.values.len()).div_ceil(period)
    }
}

/// Placement of one series inside a [`ProfileMatrix`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesSpan {
    pub id: String,
    pub start_offset: usize,
    /// Raw length, including interior missing samples.
    pub len: usize,
    pub first_column: usize,
    pub n_years: usize,
}

impl SeriesSpan {
    pub fn columns(&self) -> Range<usize> {
        self.first_column..self.first_column + self.n_years
    }
}

/// One `(series, year, column)` triple of the index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry<'a> {
    pub series_id: &'a str,
    /// 1-based year within the series.
    pub year: usize,
    pub column: usize,
}

/// Maps series and their years onto matrix columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeriesYearIndex {
    period: usize,
    spans: Vec<SeriesSpan>,
    column_owner: Vec<usize>,
}

impl SeriesYearIndex {
    /// Lay out `(id, start_offset, len)` triples consecutively.
    pub fn new(period: usize, layout: impl IntoIterator<Item = (String, usize, usize)>) -> Result<Self> {
        if period < 2 {
            return Err(Error::InvalidPeriod(period));
        }
        let mut spans = Vec::new();
        let mut column_owner = Vec::new();
        let mut seen = HashSet::new();
        for (id, start_offset, len) in layout {
            if len == 0 {
                return Err(Error::EmptyInput(format!("series '{id}' has no values")));
            }
            if start_offset >= period {
                return Err(Error::InvalidConfig(format!(
                    "series '{id}': start offset {start_offset} must be below the period {period}"
                )));
            }
            if !seen.insert(id.clone()) {
                return Err(Error::InvalidConfig(format!("duplicate series id '{id}'")));
            }
            let n_years = (start_offset + len).div_ceil(period);
            let first_column = column_owner.len();
            column_owner.extend(std::iter::repeat_n(spans.len(), n_years));
            spans.push(SeriesSpan {
                id,
                start_offset,
                len,
                first_column,
                n_years,
            });
        }
        if spans.is_empty() {
            return Err(Error::EmptyInput("no series".into()));
        }
        Ok(SeriesYearIndex {
            period,
            spans,
            column_owner,
        })
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn n_columns(&self) -> usize {
        self.column_owner.len()
    }

    pub fn n_series(&self) -> usize {
        self.spans.len()
    }

    pub fn spans(&self) -> &[SeriesSpan] {
        &self.spans
    }

    pub fn span(&self, id: &str) -> Result<&SeriesSpan> {
        self.spans
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::NotFound(id.to_string()))
    }

    /// Index into [`Self::spans`] of the series owning `column`.
    pub fn owner(&self, column: usize) -> usize {
        self.column_owner[column]
    }

    pub fn series_of(&self, column: usize) -> &SeriesSpan {
        &self.spans[self.column_owner[column]]
    }

    pub fn entries(&self) -> impl Iterator<Item = IndexEntry<'_>> + '_ {
        self.spans.iter().flat_map(|s| {
            s.columns().enumerate().map(move |(u, column)| IndexEntry {
                series_id: &s.id,
                year: u + 1,
                column,
            })
        })
    }

    /// Raw sample index of cell `(row, column)`, or `None` for padding.
    pub fn sample_index(&self, row: usize, column: usize) -> Option<usize> {
        let span = self.series_of(column);
        let pos = (column - span.first_column) * self.period + row;
        pos.checked_sub(span.start_offset).filter(|&t| t < span.len)
    }

    /// Cell `(row, column)` holding raw sample `t` of series `span`.
    pub fn cell_of(&self, span: &SeriesSpan, t: usize) -> Option<(usize, usize)> {
        if t >= span.len {
            return None;
        }
        let pos = span.start_offset + t;
        Some((pos % self.period, span.first_column + pos / self.period))
    }
}

/// The `T x N` stacked matrix with its observation mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileMatrix {
    data: Array2<f64>,
    mask: Array2<bool>,
    index: SeriesYearIndex,
}

impl ProfileMatrix {
    pub fn new(data: Array2<f64>, mask: Array2<bool>, index: SeriesYearIndex) -> Result<Self> {
        let expected = (index.period(), index.n_columns());
        if data.dim() != expected || mask.dim() != expected {
            return Err(Error::Shape(format!(
                "data {:?} and mask {:?} must both be {:?}",
                data.dim(),
                mask.dim(),
                expected
            )));
        }
        for ((cell, &v), &m) in data.indexed_iter().zip(mask.iter()) {
            if m && !v.is_finite() {
                return Err(Error::Format(format!("non-finite observed value at {cell:?}")));
            }
            if m && index.sample_index(cell.0, cell.1).is_none() {
                return Err(Error::Format(format!("padding cell {cell:?} marked observed")));
            }
        }
        Ok(ProfileMatrix { data, mask, index })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn mask(&self) -> &Array2<bool> {
        &self.mask
    }

    pub fn index(&self) -> &SeriesYearIndex {
        &self.index
    }

    /// Samples per period (`T`).
    pub fn period(&self) -> usize {
        self.index.period()
    }

    pub fn n_columns(&self) -> usize {
        self.index.n_columns()
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Same data under a different mask. The new mask may only hide cells.
    pub fn with_mask(&self, mask: Array2<bool>) -> Result<Self> {
        if mask.dim() != self.mask.dim() {
            return Err(Error::Shape(format!(
                "mask {:?} does not match {:?}",
                mask.dim(),
                self.mask.dim()
            )));
        }
        if mask.iter().zip(self.mask.iter()).any(|(&new, &old)| new && !old) {
            return Err(Error::InvalidConfig("new mask reveals unobserved cells".into()));
        }
        Ok(ProfileMatrix {
            data: self.data.clone(),
            mask,
            index: self.index.clone(),
        })
    }

    /// Same index and mask with different values, used to hold a ground-truth
    /// matrix next to a training view.
    pub fn with_data(&self, data: Array2<f64>) -> Result<Self> {
        ProfileMatrix::new(data, self.mask.clone(), self.index.clone())
    }
}

/// Stack every period of every series as a column of a `period x N` matrix.
pub fn reorganize(series: &[RawSeries], period: usize) -> Result<ProfileMatrix> {
    if period < 2 {
        return Err(Error::InvalidPeriod(period));
    }
    if series.is_empty() {
        return Err(Error::EmptyInput("no series".into()));
    }
    let index = SeriesYearIndex::new(
        period,
        series
            .iter()
            .map(|s| (s.id.clone(), s.start_offset, s.values.len())),
    )?;
    let n = index.n_columns();
    let mut data = Array2::zeros((period, n));
    let mut mask = Array2::from_elem((period, n), false);
    for (s, span) in series.iter().zip(index.spans()) {
        for (t, &v) in s.values.iter().enumerate() {
            if !v.is_finite() {
                continue;
            }
            let (row, col) = index.cell_of(span, t).expect("t within span");
            data[[row, col]] = v;
            mask[[row, col]] = true;
        }
    }
    ProfileMatrix::new(data, mask, index)
}

/// Concatenate a series' columns back into one sequence, dropping padding.
/// Unobserved samples inside the series' extent come back as NaN.
pub fn flatten(pm: &ProfileMatrix, series_id: &str) -> Result<Vec<f64>> {
    let index = pm.index();
    let span = index.span(series_id)?;
    Ok((0..span.len)
        .map(|t| {
            let (row, col) = index.cell_of(span, t).expect("t within span");
            if pm.mask[[row, col]] {
                pm.data[[row, col]]
            } else {
                f64::NAN
            }
        })
        .collect())
}

/// Mean and sample standard deviation used to standardize one series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    pub mean: f64,
    pub std: f64,
}

impl SeriesStats {
    pub fn inverse(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Per-series standardization statistics keyed by series id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub series: BTreeMap<String, SeriesStats>,
}

/// Zero-mean, unit sample-variance rescaling over the observed values.
pub fn standardize(series: &RawSeries) -> Result<(RawSeries, SeriesStats)> {
    let observed: Vec<f64> = series.values.iter().copied().filter(|v| v.is_finite()).collect();
    if observed.len() < 2 {
        return Err(Error::EmptyInput(format!(
            "series '{}' needs at least 2 observed values to standardize",
            series.id
        )));
    }
    let n = observed.len() as f64;
    let mean = observed.iter().sum::<f64>() / n;
    let var = observed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    if !(std > 0.0) || !std.is_finite() {
        return Err(Error::DegenerateSeries(series.id.clone()));
    }
    let values = series
        .values
        .iter()
        .map(|&v| if v.is_finite() { (v - mean) / std } else { v })
        .collect();
    Ok((
        RawSeries {
            id: series.id.clone(),
            values,
            start_offset: series.start_offset,
        },
        SeriesStats { mean, std },
    ))
}

/// Standardize every series, dropping (with a warning) those with zero variance.
pub fn standardize_all(series: &[RawSeries]) -> Result<(Vec<RawSeries>, StandardizationStats)> {
    let mut out = Vec::with_capacity(series.len());
    let mut stats = StandardizationStats::default();
    for s in series {
        match standardize(s) {
            Ok((z, st)) => {
                stats.series.insert(z.id.clone(), st);
                out.push(z);
            }
            Err(Error::DegenerateSeries(id)) => {
                log::warn!("dropping zero-variance series '{id}'");
            }
            Err(e) => return Err(e),
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyInput("every series was degenerate".into()));
    }
    Ok((out, stats))
}

/// Re-lay a daily series so that every period starts on `target`.
///
/// `calendar_start` is the date of `values[0]`. Each period holds
/// `7 * floor(period / 7)` consecutive days followed by NaN padding up to
/// `period`, so consecutive columns stay week-aligned. The days between the
/// preceding `target` weekday and `calendar_start` become the leading offset.
pub fn align_to_weekday(
    series: &RawSeries,
    target: Weekday,
    calendar_start: NaiveDate,
    period: usize,
) -> Result<RawSeries> {
    if period < 7 {
        return Err(Error::InvalidPeriod(period));
    }
    let lead = (calendar_start.weekday().num_days_from_sunday() as i64
        - target.num_days_from_sunday() as i64)
        .rem_euclid(7) as usize;
    let stride = (period / 7) * 7;
    let position = |day: usize| (day / stride) * period + day % stride;

    let Some(last_day) = (lead + series.values.len()).checked_sub(1) else {
        return Ok(series.clone().with_offset(lead));
    };
    let mut values = vec![f64::NAN; position(last_day) + 1 - lead];
    for (p, &v) in series.values.iter().enumerate() {
        values[position(lead + p) - lead] = v;
    }
    Ok(RawSeries {
        id: series.id.clone(),
        values,
        start_offset: lead,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(n: usize) -> Vec<f64> {
        (0..n).map(|v| v as f64).collect()
    }

    #[test]
    fn whole_years_partition_exactly() {
        let pm = reorganize(&[RawSeries::new("a", seq(8))], 4).unwrap();
        assert_eq!(pm.n_columns(), 2);
        assert_eq!(pm.data().column(0).to_vec(), vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(pm.data().column(1).to_vec(), vec![4.0, 5.0, 6.0, 7.0]);
        assert_eq!(pm.observed_count(), 8);
    }

    #[test]
    fn column_count_is_sum_of_years() {
        let series = vec![
            RawSeries::new("a", seq(10)),
            RawSeries::new("b", seq(15)),
            RawSeries::new("c", seq(10)),
        ];
        let pm = reorganize(&series, 5).unwrap();
        assert_eq!(pm.n_columns(), 7);
        let years: Vec<_> = pm.index().entries().map(|e| (e.series_id.to_string(), e.year)).collect();
        assert_eq!(years[2], ("b".to_string(), 1));
        assert_eq!(years[4], ("b".to_string(), 3));
    }

    #[test]
    fn partial_years_are_padded() {
        let s = RawSeries::new("a", seq(7)).with_offset(2);
        let pm = reorganize(&[s], 4).unwrap();
        assert_eq!(pm.n_columns(), 3);
        let mask = pm.mask();
        assert!(!mask[[0, 0]] && !mask[[1, 0]] && mask[[2, 0]]);
        assert!(mask[[0, 2]] && !mask[[1, 2]]);
        assert_eq!(pm.data()[[1, 2]], 0.0);
        assert_eq!(pm.observed_count(), 7);
    }

    #[test]
    fn flatten_drops_padding() {
        let s = RawSeries::new("a", seq(42)).with_offset(5);
        let pm = reorganize(&[s], 52).unwrap();
        assert_eq!(flatten(&pm, "a").unwrap(), seq(42));
    }

    #[test]
    fn flatten_picks_requested_series() {
        let series = vec![RawSeries::new("a", seq(6)), RawSeries::new("b", vec![9.0, 8.0, 7.0])];
        let pm = reorganize(&series, 3).unwrap();
        assert_eq!(flatten(&pm, "b").unwrap(), vec![9.0, 8.0, 7.0]);
        assert!(matches!(flatten(&pm, "zz"), Err(Error::NotFound(_))));
    }

    #[test]
    fn missing_values_are_unobserved() {
        let s = RawSeries::new("a", vec![1.0, f64::NAN, 3.0, 4.0]);
        let pm = reorganize(&[s], 2).unwrap();
        assert!(!pm.mask()[[1, 0]]);
        assert_eq!(pm.data()[[1, 0]], 0.0);
        let back = flatten(&pm, "a").unwrap();
        assert!(back[1].is_nan());
        assert_eq!(back[3], 4.0);
    }

    #[test]
    fn reorganize_errors() {
        assert!(matches!(reorganize(&[RawSeries::new("a", seq(3))], 1), Err(Error::InvalidPeriod(1))));
        assert!(matches!(reorganize(&[], 4), Err(Error::EmptyInput(_))));
        assert!(matches!(reorganize(&[RawSeries::new("a", vec![])], 4), Err(Error::EmptyInput(_))));
        let dup = [RawSeries::new("a", seq(3)), RawSeries::new("a", seq(3))];
        assert!(reorganize(&dup, 4).is_err());
    }

    #[test]
    fn standardize_simple() {
        let (z, st) = standardize(&RawSeries::new("a", vec![1.0, 2.0, 3.0])).unwrap();
        assert_eq!(z.values, vec![-1.0, 0.0, 1.0]);
        assert_eq!(st, SeriesStats { mean: 2.0, std: 1.0 });
        assert_eq!(st.inverse(1.0), 3.0);
    }

    #[test]
    fn standardize_constant_is_degenerate() {
        let err = standardize(&RawSeries::new("c", vec![5.0, 5.0, 5.0])).unwrap_err();
        assert!(matches!(err, Error::DegenerateSeries(id) if id == "c"));
    }

    #[test]
    fn standardize_is_idempotent() {
        let raw = RawSeries::new("a", vec![3.5, -2.0, 7.25, 0.5, 11.0, f64::NAN, 4.0]);
        let (once, _) = standardize(&raw).unwrap();
        let (twice, _) = standardize(&once).unwrap();
        for (a, b) in once.values.iter().zip(&twice.values) {
            assert!(a.is_nan() && b.is_nan() || (a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn standardize_all_drops_degenerate() {
        let series = vec![RawSeries::new("a", vec![1.0, 2.0]), RawSeries::new("b", vec![2.0, 2.0])];
        let (out, stats) = standardize_all(&series).unwrap();
        assert_eq!(out.len(), 1);
        assert!(stats.series.contains_key("a"));
    }

    #[test]
    fn align_identity_when_already_on_target() {
        // 2023-01-01 is a Sunday.
        let start = NaiveDate::from_ymd_opt(2023, 1, 1).unwrap();
        let s = RawSeries::new("a", seq(14));
        let out = align_to_weekday(&s, Weekday::Sun, start, 14).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn align_three_days_late_gives_three_pad_cells() {
        let start = NaiveDate::from_ymd_opt(2023, 1, 4).unwrap(); // Wednesday
        let s = RawSeries::new("a", seq(21));
        let out = align_to_weekday(&s, Weekday::Sun, start, 7).unwrap();
        assert_eq!(out.start_offset, 3);
        assert_eq!(out.values, s.values);
        let pm = reorganize(&[out], 7).unwrap();
        assert_eq!((0..3).filter(|&j| pm.mask()[[j, 0]]).count(), 0);
        assert_eq!(pm.data()[[3, 0]], 0.0);
        assert!(pm.mask()[[3, 0]]);
    }
}
