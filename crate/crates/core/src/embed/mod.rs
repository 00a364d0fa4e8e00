//! Exact t-SNE to two dimensions on raw feature rows or SHAP rows.

mod affinity;
mod metrics;

use std::path::Path;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{CaseId, CaseMatrix};
use crate::error::{Error, Result};
use crate::util;

pub use affinity::{compute_affinities, conditional_row, squared_distances, Affinities, P_FLOOR};
pub use metrics::{knn_label_gap, silhouette};

const INIT_STREAM: u64 = 0x5453_4e45;
const MAX_HALVINGS: usize = 30;
/// Largest KL increase accepted for one step once exaggeration is over.
pub const KL_STEP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneConfig {
    pub version: u32,
    /// Target perplexity; when absent, `min(100, (N-1)/3)`.
    pub perplexity: Option<f64>,
    pub n_iter: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch_iter: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            version: 1,
            perplexity: None,
            n_iter: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch_iter: 250,
            seed: 0,
        }
    }
}

impl TsneConfig {
    pub fn perplexity_for(&self, n: usize) -> f64 {
        self.perplexity
            .unwrap_or_else(|| 100.0f64.min((n.saturating_sub(1)) as f64 / 3.0))
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.n_iter < 1 {
            return Err(Error::Config("n_iter must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.early_exaggeration >= 1.0) {
            return Err(Error::Config(
                "learning_rate must be > 0 and early_exaggeration >= 1".into(),
            ));
        }
        let perp = self.perplexity_for(n);
        let max = (n.saturating_sub(1)) as f64 / 3.0;
        if !(perp >= 1.0 && perp <= max) {
            return Err(Error::Config(format!(
                "perplexity {perp} is infeasible for {n} points (must lie in [1, {max}])"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSpace {
    RawFeatures,
    ShapValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding2D {
    pub coords: Vec<[f64; 2]>,
    pub final_kl: f64,
    /// KL divergence after every iteration.
    pub kl_history: Vec<f64>,
    pub perplexity: f64,
    pub input_space: InputSpace,
}

/// KL(P || Q) and its gradient with respect to the flattened `n x 2`
/// coordinates. `exaggeration` scales P inside the gradient only.
pub fn kl_and_gradient(p: &Affinities, y: &[f64], exaggeration: f64) -> (f64, Vec<f64>) {
    let n = p.n;
    // Student-t kernel rows; the normalizer is summed in row order.
    let kernel: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        0.0
                    } else {
                        let dx = y[2 * i] - y[2 * j];
                        let dy = y[2 * i + 1] - y[2 * j + 1];
                        1.0 / (1.0 + dx * dx + dy * dy)
                    }
                })
                .collect()
        })
        .collect();
    let z: f64 = kernel.iter().map(|r| r.iter().sum::<f64>()).sum();
    let rows: Vec<(f64, [f64; 2])> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (mut kl, mut g) = (0.0, [0.0; 2]);
            for j in 0..n {
                if i == j {
                    continue;
                }
                let pij = p.get(i, j);
                let num = kernel[i][j];
                let q = num / z;
                kl += pij * (pij / q).ln();
                let m = 4.0 * (exaggeration * pij - q) * num;
                g[0] += m * (y[2 * i] - y[2 * j]);
                g[1] += m * (y[2 * i + 1] - y[2 * j + 1]);
            }
            (kl, g)
        })
        .collect();
    let kl = rows.iter().map(|r| r.0).sum();
    let grad = rows.iter().flat_map(|r| r.1).collect();
    (kl, grad)
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Gradient descent with momentum, per-coordinate gains and early
/// exaggeration. After the exaggeration phase a step that raises the KL by
/// more than [`KL_STEP_TOL`] is halved until it does not, or dropped.
pub fn tsne_from_affinities(
    p: &Affinities,
    config: &TsneConfig,
    input_space: InputSpace,
    perplexity: f64,
) -> Result<Embedding2D> {
    let n = p.n;
    let mut rng = util::stream_rng(config.seed, INIT_STREAM);
    let normal = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y: Vec<f64> = (0..2 * n).map(|_| normal.sample(&mut rng)).collect();
    let mut update = vec![0.0; 2 * n];
    let mut gains = vec![1.0f64; 2 * n];
    let exag = |it: usize| {
        if it < config.exaggeration_iters {
            config.early_exaggeration
        } else {
            1.0
        }
    };
    let (mut kl, mut grad) = kl_and_gradient(p, &y, exag(0));
    let mut history = Vec::with_capacity(config.n_iter);

    for it in 0..config.n_iter {
        let momentum = if it < config.momentum_switch_iter {
            config.initial_momentum
        } else {
            config.final_momentum
        };
        for k in 0..2 * n {
            gains[k] = if (grad[k] > 0.0) != (update[k] > 0.0) {
                gains[k] + 0.2
            } else {
                (gains[k] * 0.8).max(0.01)
            };
            update[k] = momentum * update[k] - config.learning_rate * gains[k] * grad[k];
        }
        let guard = it >= config.exaggeration_iters;
        let mut step = 1.0;
        let mut accepted = None;
        let mut finite = false;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = y.iter().zip(&update).map(|(a, u)| a + step * u).collect();
            let (ckl, cgrad) = kl_and_gradient(p, &cand, exag(it + 1));
            finite = ckl.is_finite() && all_finite(&cgrad) && all_finite(&cand);
            if finite && (!guard || ckl <= kl + KL_STEP_TOL) {
                accepted = Some((cand, ckl, cgrad));
                break;
            }
            step *= 0.5;
        }
        if accepted.is_none() && !finite {
            return Err(Error::Numerical(format!(
                "non-finite t-SNE gradient at iteration {it}"
            )));
        }
        match accepted {
            Some((cand, ckl, cgrad)) => {
                if step < 1.0 {
                    update.iter_mut().for_each(|u| *u *= step);
                }
                y = cand;
                kl = ckl;
                grad = cgrad;
            }
            None => {
                update.iter_mut().for_each(|u| *u = 0.0);
                let (ckl, cgrad) = kl_and_gradient(p, &y, exag(it + 1));
                kl = ckl;
                grad = cgrad;
            }
        }
        for d in 0..2 {
            let mean = (0..n).map(|i| y[2 * i + d]).sum::<f64>() / n as f64;
            (0..n).for_each(|i| y[2 * i + d] -= mean);
        }
        history.push(kl);
    }
    Ok(Embedding2D {
        coords: y.chunks(2).map(|c| [c[0], c[1]]).collect(),
        final_kl: kl.max(0.0),
        kl_history: history,
        perplexity,
        input_space,
    })
}

pub fn tsne(points: &[Vec<f64>], config: &TsneConfig, input_space: InputSpace) -> Result<Embedding2D> {
    config.validate(points.len())?;
    let perplexity = config.perplexity_for(points.len());
    let p = compute_affinities(points, perplexity)?;
    tsne_from_affinities(&p, config, input_space, perplexity)
}

/// Column medians of the training rows (0 for a column with no values),
/// used to impute missing cells before raw-space distances.
pub fn train_medians(train: &CaseMatrix) -> Vec<f64> {
    (0..train.n_features())
        .map(|j| {
            let mut v: Vec<f64> = train.column(j).into_iter().flatten().collect();
            if v.is_empty() {
                return 0.0;
            }
            v.sort_by(f64::total_cmp);
            let h = v.len() / 2;
            if v.len() % 2 == 1 {
                v[h]
            } else {
                (v[h - 1] + v[h]) / 2.0
            }
        })
        .collect()
}

/// Raw-space input: missing cells imputed with training medians, then each
/// column standardized with the training mean and standard deviation.
pub fn prepare_raw(train: &CaseMatrix, data: &CaseMatrix) -> Result<Vec<Vec<f64>>> {
    if train.catalog() != data.catalog() {
        return Err(Error::Contract("train and data catalogs differ".into()));
    }
    let med = train_medians(train);
    let impute = |m: &CaseMatrix| -> Vec<Vec<f64>> {
        m.rows()
            .iter()
            .map(|r| r.iter().zip(&med).map(|(c, md)| c.unwrap_or(*md)).collect())
            .collect()
    };
    let tr = impute(train);
    let nt = tr.len().max(1) as f64;
    let stats: Vec<(f64, f64)> = (0..med.len())
        .map(|j| {
            let mean = tr.iter().map(|r| r[j]).sum::<f64>() / nt;
            let var = tr.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / nt;
            let sd = var.sqrt();
            (mean, if sd > 0.0 { sd } else { 1.0 })
        })
        .collect();
    Ok(impute(data)
        .into_iter()
        .map(|r| r.iter().zip(&stats).map(|(v, (m, s))| (v - m) / s).collect())
        .collect())
}

pub const EMBED_HEADER: [&str; 4] = ["case_id", "x", "y", "label_ef"];

pub fn case_label(id: &CaseId) -> String {
    format!("{}:{}", id.patient_id, id.echo_date)
}

/// Writes `case_id,x,y,label_ef`, one row per embedded case.
pub fn write_embedding_csv(
    path: &Path,
    ids: &[CaseId],
    emb: &Embedding2D,
    labels: &[f64],
) -> Result<()> {
    if ids.len() != emb.coords.len() || labels.len() != ids.len() {
        return Err(Error::Contract("embedding, ids and labels differ in length".into()));
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(EMBED_HEADER).expect("in-memory csv");
    for ((id, c), l) in ids.iter().zip(&emb.coords).zip(labels) {
        w.write_record([
            case_label(id),
            util::fmt_f64(c[0]),
            util::fmt_f64(c[1]),
            util::fmt_f64(*l),
        ])
        .expect("in-memory csv");
    }
    util::write_bytes(path, &w.into_inner().expect("in-memory csv"))
}

/// One row of `embed.csv`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct EmbeddedPoint {
    pub case_id: String,
    pub x: f64,
    pub y: f64,
    pub label_ef: f64,
}

pub fn read_embedding_csv(path: &Path) -> Result<Vec<EmbeddedPoint>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let header = rdr.headers().map_err(|e| Error::csv(path, e))?;
    if header.iter().ne(EMBED_HEADER) {
        return Err(Error::parse(path, format!("expected header {}", EMBED_HEADER.join(","))));
    }
    rdr.deserialize()
        .map(|r| r.map_err(|e| Error::csv(path, e)))
        .collect()
}
