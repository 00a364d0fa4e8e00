//! Percentile clipping with nearest-rank percentiles.

use serde::{Deserialize, Serialize};

use crate::dataset::{CaseMatrix, FeatureKind};
use crate::error::{Error, Result};

/// Nearest-rank percentile of an ascending slice: the value at rank
/// `ceil(p / 100 * n)`, clamped to `[1, n]`.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = (p * n as f64 / 100.0).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

fn check_percentiles(lo: f64, hi: f64) -> Result<()> {
    if !(lo > 0.0 && hi < 100.0 && lo < hi) {
        return Err(Error::Config(format!(
            "winsor percentiles must satisfy 0 < lo < hi < 100, got ({lo}, {hi})"
        )));
    }
    Ok(())
}

/// `(min, max)` clipping bounds of `values` at percentiles `lo` and `hi`.
pub fn percentile_bounds(values: &[f64], lo: f64, hi: f64) -> Result<(f64, f64)> {
    check_percentiles(lo, hi)?;
    if values.is_empty() {
        return Err(Error::Domain("cannot winsorize an empty list".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("winsorize input must be finite".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok((nearest_rank(&sorted, lo), nearest_rank(&sorted, hi)))
}

/// Clamps values below the `lo` percentile up to it and values above the
/// `hi` percentile down to it. Order and length are preserved.
pub fn winsorize(values: &[f64], lo: f64, hi: f64) -> Result<Vec<f64>> {
    let (min, max) = percentile_bounds(values, lo, hi)?;
    Ok(values.iter().map(|v| v.clamp(min, max)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBounds {
    pub feature_id: usize,
    pub name: String,
    pub min: f64,
    pub max: f64,
}

/// Clipping bounds learned on one population (the training split) and
/// reused for the others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinsorBounds {
    pub lo_percentile: f64,
    pub hi_percentile: f64,
    pub features: Vec<FeatureBounds>,
}

impl WinsorBounds {
    /// Fits bounds on every numeric feature of `m` that has at least one
    /// value.
    pub fn fit(m: &CaseMatrix, lo: f64, hi: f64) -> Result<Self> {
        check_percentiles(lo, hi)?;
        let mut features = Vec::new();
        for e in m.catalog().entries() {
            if e.kind != FeatureKind::Numeric {
                continue;
            }
            let values: Vec<f64> = m.column(e.feature_id).into_iter().flatten().collect();
            if values.is_empty() {
                continue;
            }
            let (min, max) = percentile_bounds(&values, lo, hi)?;
            features.push(FeatureBounds {
                feature_id: e.feature_id,
                name: e.name.clone(),
                min,
                max,
            });
        }
        Ok(WinsorBounds {
            lo_percentile: lo,
            hi_percentile: hi,
            features,
        })
    }

    pub fn apply(&self, m: &mut CaseMatrix) -> Result<()> {
        for b in &self.features {
            if m.catalog().get(b.feature_id).map(|e| e.name.as_str()) != Some(b.name.as_str()) {
                return Err(Error::Contract(format!(
                    "bounds for `{}` do not match the case catalog",
                    b.name
                )));
            }
            m.map_column(b.feature_id, |v| v.clamp(b.min, b.max));
        }
        Ok(())
    }
}
