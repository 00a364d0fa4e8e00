use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::CaseMatrix;
use crate::error::{Error, Result};

use super::{GbtModel, Node};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub rmse: f64,
    /// Squared Pearson correlation of predictions and labels.
    pub r2: Option<f64>,
    pub pearson_r: Option<f64>,
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn rmse(pred: &[f64], actual: &[f64]) -> f64 {
    let sse: f64 = pred.iter().zip(actual).map(|(p, a)| (p - a) * (p - a)).sum();
    (sse / pred.len() as f64).sqrt()
}

pub fn eval_predictions(pred: &[f64], actual: &[f64]) -> Result<EvalReport> {
    if pred.len() != actual.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} labels",
            pred.len(),
            actual.len()
        )));
    }
    if pred.len() < 2 {
        return Err(Error::Contract("evaluation needs at least 2 cases".into()));
    }
    let r = pearson(pred, actual);
    Ok(EvalReport {
        n: pred.len(),
        rmse: rmse(pred, actual),
        r2: r.map(|r| r * r),
        pearson_r: r,
    })
}

pub fn evaluate(model: &GbtModel, data: &CaseMatrix) -> Result<EvalReport> {
    eval_predictions(&model.predict(data)?, data.labels())
}

/// Coverage of one feature: the share of (case, tree) decision paths that
/// cross at least one node splitting on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCoverage {
    pub feature_id: usize,
    pub name: String,
    pub coverage: f64,
}

/// Per-feature coverage fractions, indexed by feature id.
pub fn coverage_importance(model: &GbtModel, data: &CaseMatrix) -> Result<Vec<f64>> {
    model.check_catalog(data)?;
    let m = model.n_features;
    let paths = data.n_cases() * model.trees.len();
    if paths == 0 {
        return Ok(vec![0.0; m]);
    }
    let counts = data
        .rows()
        .par_iter()
        .map(|row| {
            let mut counts = vec![0u64; m];
            let mut seen = vec![false; m];
            for tree in &model.trees {
                seen.iter_mut().for_each(|s| *s = false);
                for i in tree.path(row) {
                    if let Node::Split { feature_id, .. } = tree.nodes[i] {
                        seen[feature_id] = true;
                    }
                }
                for (c, s) in counts.iter_mut().zip(&seen) {
                    *c += u64::from(*s);
                }
            }
            counts
        })
        .reduce(
            || vec![0u64; m],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    Ok(counts.into_iter().map(|c| c as f64 / paths as f64).collect())
}

/// Features with coverage at least `threshold`, highest first; ties by
/// feature id.
pub fn ranked_coverage(
    model: &GbtModel,
    data: &CaseMatrix,
    threshold: f64,
) -> Result<Vec<FeatureCoverage>> {
    let cov = coverage_importance(model, data)?;
    let mut out: Vec<FeatureCoverage> = data
        .catalog()
        .entries()
        .iter()
        .zip(cov)
        .filter(|(_, c)| *c >= threshold && *c > 0.0)
        .map(|(e, coverage)| FeatureCoverage {
            feature_id: e.feature_id,
            name: e.name.clone(),
            coverage,
        })
        .collect();
    out.sort_by(|a, b| b.coverage.total_cmp(&a.coverage).then(a.feature_id.cmp(&b.feature_id)));
    Ok(out)
}
