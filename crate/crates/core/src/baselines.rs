//! Reference predictors: past-year average, metadata k-nearest-neighbours and
//! matrix factorization alone.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metadata::MetadataMatrix;
use crate::model::ModelSpec;
use crate::profile::ProfileMatrix;
use crate::sparse::SparseView;

/// Default neighbour count.
pub const DEFAULT_K: usize = 10;

/// Guard added to distances before inverting them.
pub const DISTANCE_EPS: f64 = 1e-9;

/// Per-row mean over observed years.
#[derive(Debug, Clone, PartialEq)]
pub struct AvgProfile {
    pub values: Array1<f64>,
    /// Rows with no observation in any year; their value is 0.
    pub unobserved: Vec<bool>,
}

/// Average each row over the series' years, using observed cells only.
pub fn avg_py(pm: &ProfileMatrix, series_id: &str) -> Result<AvgProfile> {
    let span = pm.index().span(series_id)?;
    let t = pm.period();
    let mut sum = Array1::<f64>::zeros(t);
    let mut count = vec![0usize; t];
    for c in span.columns() {
        for j in 0..t {
            if pm.mask()[[j, c]] {
                sum[j] += pm.data()[[j, c]];
                count[j] += 1;
            }
        }
    }
    let values = Array1::from_iter((0..t).map(|j| if count[j] > 0 { sum[j] / count[j] as f64 } else { 0.0 }));
    let unobserved = count.iter().map(|&c| c == 0).collect();
    Ok(AvgProfile { values, unobserved })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnnWeighting {
    /// `w = 1 / (d + eps)`.
    #[default]
    InverseDistance,
    Uniform,
}

/// Weighted average of the profiles of the `k` training series whose metadata
/// is closest (Euclidean) to `query`. `profiles[i]` belongs to column `i` of
/// `train_meta`. Rows a neighbour never observed are left out of that row's
/// average.
pub fn knn_forecast(
    query: &SparseView<'_>,
    train_meta: &MetadataMatrix,
    profiles: &[AvgProfile],
    k: usize,
    weighting: KnnWeighting,
) -> Result<Array1<f64>> {
    let available = train_meta.n_columns();
    if profiles.len() != available {
        return Err(Error::Shape(format!(
            "{} profiles for {available} metadata columns",
            profiles.len()
        )));
    }
    if k == 0 || k > available {
        return Err(Error::KTooLarge { k, available });
    }
    if query.dim != train_meta.dim() {
        return Err(Error::Shape(format!(
            "query has dim {} but metadata has {}",
            query.dim,
            train_meta.dim()
        )));
    }
    let mut dist: Vec<(f64, usize)> = (0..available)
        .map(|i| (query.squared_distance(&train_meta.column(i)).sqrt(), i))
        .collect();
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let t = profiles[0].values.len();
    let neighbours = &dist[..k];
    let weight = |d: f64| match weighting {
        KnnWeighting::InverseDistance => 1.0 / (d + DISTANCE_EPS),
        KnnWeighting::Uniform => 1.0,
    };
    // Weights are normalized per row before mixing so that a lone neighbour
    // is copied exactly.
    Ok(Array1::from_iter((0..t).map(|j| {
        let den: f64 = neighbours
            .iter()
            .filter(|&&(_, i)| !profiles[i].unobserved[j])
            .map(|&(d, _)| weight(d))
            .sum();
        if den == 0.0 {
            return 0.0;
        }
        neighbours
            .iter()
            .filter(|&&(_, i)| !profiles[i].unobserved[j])
            .map(|&(d, i)| weight(d) / den * profiles[i].values[j])
            .sum()
    })))
}

/// Matrix factorization without a regression term. It cannot forecast
/// cold-start series beyond the bias.
pub fn mf_alone_spec(rank: usize) -> ModelSpec {
    ModelSpec::mf_alone(rank)
}
