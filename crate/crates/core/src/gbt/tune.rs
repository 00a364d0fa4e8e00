use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::CaseMatrix;
use crate::error::{Error, Result};
use crate::util;

use super::{metrics, train, Hyperparams};

const FOLD_STREAM: u64 = 0x464f_4c44;

/// Order in which coordinate descent visits the parameters.
pub const AXIS_ORDER: [&str; 10] = [
    "n_trees",
    "max_depth",
    "min_child_weight",
    "gamma",
    "subsample",
    "col_sample_by_tree",
    "col_sample_by_level",
    "reg_alpha",
    "reg_lambda",
    "eta",
];

/// Candidate values per parameter. Absent axes stay at the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    #[serde(alias = "n_estimators")]
    pub n_trees: Option<Vec<f64>>,
    pub max_depth: Option<Vec<f64>>,
    pub min_child_weight: Option<Vec<f64>>,
    pub gamma: Option<Vec<f64>>,
    pub subsample: Option<Vec<f64>>,
    #[serde(alias = "colsample_bytree")]
    pub col_sample_by_tree: Option<Vec<f64>>,
    #[serde(alias = "colsample_bylevel")]
    pub col_sample_by_level: Option<Vec<f64>>,
    pub reg_alpha: Option<Vec<f64>>,
    pub reg_lambda: Option<Vec<f64>>,
    #[serde(alias = "learning_rate")]
    pub eta: Option<Vec<f64>>,
}

impl Grid {
    /// Present axes in [`AXIS_ORDER`].
    pub fn axes(&self) -> Vec<(&'static str, Vec<f64>)> {
        let all = [
            &self.n_trees,
            &self.max_depth,
            &self.min_child_weight,
            &self.gamma,
            &self.subsample,
            &self.col_sample_by_tree,
            &self.col_sample_by_level,
            &self.reg_alpha,
            &self.reg_lambda,
            &self.eta,
        ];
        AXIS_ORDER
            .iter()
            .zip(all)
            .filter_map(|(name, v)| v.as_ref().map(|v| (*name, v.clone())))
            .collect()
    }
}

fn set_param(hp: &mut Hyperparams, name: &str, v: f64) -> Result<()> {
    let as_count = |v: f64| -> Result<usize> {
        if v >= 1.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(Error::Config(format!("{name} candidates must be positive integers, got {v}")))
        }
    };
    match name {
        "n_trees" => hp.n_trees = as_count(v)?,
        "max_depth" => hp.max_depth = as_count(v)?,
        "min_child_weight" => hp.min_child_weight = v,
        "gamma" => hp.gamma = v,
        "subsample" => hp.subsample = v,
        "col_sample_by_tree" => hp.col_sample_by_tree = v,
        "col_sample_by_level" => hp.col_sample_by_level = v,
        "reg_alpha" => hp.reg_alpha = v,
        "reg_lambda" => hp.reg_lambda = v,
        "eta" => hp.eta = v,
        _ => return Err(Error::Config(format!("unknown parameter `{name}`"))),
    }
    Ok(())
}

/// Result of a coordinate-descent search over an index grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DescentResult {
    /// Chosen candidate index per axis.
    pub best: Vec<usize>,
    pub score: f64,
    pub sweeps: usize,
    /// Distinct points evaluated, in evaluation order.
    pub evaluated: Vec<(Vec<usize>, f64)>,
}

/// Minimizes `objective` one axis at a time, starting from the first
/// candidate of every axis. Within an axis the lowest score wins and ties go
/// to the smaller candidate value. Stops after a sweep that changes nothing
/// or after `max_sweeps` sweeps. Each point is evaluated at most once.
pub fn coordinate_descent<F>(
    axes: &[Vec<f64>],
    max_sweeps: usize,
    mut objective: F,
) -> Result<DescentResult>
where
    F: FnMut(&[usize]) -> Result<f64>,
{
    if let Some(i) = axes.iter().position(Vec::is_empty) {
        return Err(Error::Config(format!("grid axis {i} has no candidates")));
    }
    if max_sweeps == 0 {
        return Err(Error::Config("max_sweeps must be >= 1".into()));
    }
    let mut memo: HashMap<Vec<usize>, f64> = HashMap::new();
    let mut evaluated = Vec::new();
    let mut eval = |point: &[usize]| -> Result<f64> {
        if let Some(&s) = memo.get(point) {
            return Ok(s);
        }
        let s = objective(point)?;
        memo.insert(point.to_vec(), s);
        evaluated.push((point.to_vec(), s));
        Ok(s)
    };

    let mut current = vec![0usize; axes.len()];
    let mut score = eval(&current)?;
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        sweeps += 1;
        let mut changed = false;
        for (a, candidates) in axes.iter().enumerate() {
            let mut best = (current[a], score);
            for c in 0..candidates.len() {
                let mut point = current.clone();
                point[a] = c;
                let s = eval(&point)?;
                let better = s < best.1 || (s == best.1 && candidates[c] < candidates[best.0]);
                if better {
                    best = (c, s);
                }
            }
            if best.0 != current[a] {
                current[a] = best.0;
                changed = true;
            }
            score = best.1;
        }
        if !changed {
            break;
        }
    }
    Ok(DescentResult {
        best: current,
        score,
        sweeps,
        evaluated,
    })
}

/// Case indices of each fold; a seeded shuffle dealt round-robin.
pub fn fold_indices(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 || folds > n {
        return Err(Error::Config(format!(
            "need 2 <= folds <= n_cases, got folds={folds}, n={n}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut util::stream_rng(seed, FOLD_STREAM));
    let mut out = vec![Vec::new(); folds];
    for (i, p) in perm.into_iter().enumerate() {
        out[i % folds].push(p);
    }
    out.iter_mut().for_each(|f| f.sort_unstable());
    Ok(out)
}

/// Mean held-out RMSE over the folds.
pub fn cv_rmse(data: &CaseMatrix, hp: &Hyperparams, folds: &[Vec<usize>]) -> Result<f64> {
    let per_fold: Vec<Result<f64>> = (0..folds.len())
        .into_par_iter()
        .map(|k| {
            let train_idx: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != k)
                .flat_map(|(_, f)| f.iter().copied())
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect();
            let model = train(&data.select(&train_idx), hp)?;
            let held = data.select(&folds[k]);
            Ok(metrics::rmse(&model.predict(&held)?, held.labels()))
        })
        .collect();
    let mut sum = 0.0;
    for r in per_fold {
        sum += r?;
    }
    Ok(sum / folds.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneConfig {
    pub version: u32,
    pub grid: Grid,
    pub folds: usize,
    pub max_sweeps: usize,
    pub seed: u64,
    /// Values for parameters not on the grid.
    pub base: Hyperparams,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            version: 1,
            grid: Grid::default(),
            folds: 5,
            max_sweeps: 3,
            seed: 0,
            base: Hyperparams::default(),
        }
    }
}

impl TuneConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        util::read_json(path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub params: BTreeMap<String, f64>,
    pub cv_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub best: Hyperparams,
    pub cv_rmse: f64,
    pub sweeps: usize,
    pub trials: Vec<Trial>,
}

/// Coordinate-descent search with k-fold cross-validated RMSE.
pub fn tune(data: &CaseMatrix, config: &TuneConfig) -> Result<TuneReport> {
    let axes = config.grid.axes();
    let values: Vec<Vec<f64>> = axes.iter().map(|(_, v)| v.clone()).collect();
    let folds = fold_indices(data.n_cases(), config.folds, config.seed)?;
    let make = |point: &[usize]| -> Result<Hyperparams> {
        let mut hp = config.base.clone();
        for ((name, cands), &i) in axes.iter().zip(point) {
            set_param(&mut hp, name, cands[i])?;
        }
        hp.validate()?;
        Ok(hp)
    };
    for (name, cands) in &axes {
        for &v in cands {
            set_param(&mut config.base.clone(), name, v)?;
        }
    }
    let result = coordinate_descent(&values, config.max_sweeps, |point| {
        let s = cv_rmse(data, &make(point)?, &folds)?;
        log::info!("tune {:?} -> cv rmse {s:.4}", point);
        Ok(s)
    })?;
    let trials = result
        .evaluated
        .iter()
        .map(|(point, s)| Trial {
            params: axes
                .iter()
                .zip(point)
                .map(|((name, cands), &i)| (name.to_string(), cands[i]))
                .collect(),
            cv_rmse: *s,
        })
        .collect();
    Ok(TuneReport {
        best: make(&result.best)?,
        cv_rmse: result.score,
        sweeps: result.sweeps,
        trials,
    })
}
