use rayon::prelude::*;

use crate::error::{Error, Result};

/// Smallest affinity kept in the joint distribution.
pub const P_FLOOR: f64 = 1e-12;
const PERPLEXITY_TOL: f64 = 1e-5;
const MAX_SEARCH_STEPS: usize = 200;

/// Joint affinities of an exact t-SNE run.
#[derive(Debug, Clone, PartialEq)]
pub struct Affinities {
    pub n: usize,
    /// Row-major `n x n`, symmetric, zero diagonal, summing to 1.
    pub p: Vec<f64>,
    /// Gaussian precision `1 / (2 sigma^2)` chosen for each row.
    pub beta: Vec<f64>,
    /// Perplexity `2^H` of each conditional row at the chosen precision.
    pub row_perplexity: Vec<f64>,
}

impl Affinities {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.n + j]
    }
}

pub fn squared_distances(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    points[i]
                        .iter()
                        .zip(&points[j])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum()
                })
                .collect()
        })
        .collect();
    rows.concat()
}

/// Conditional distribution of row `i` at precision `beta` and its entropy
/// in bits. Distances are shifted by the row minimum for stability.
pub fn conditional_row(d: &[f64], i: usize, beta: f64) -> (Vec<f64>, f64) {
    let min = d
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, v)| *v)
        .fold(f64::INFINITY, f64::min);
    let mut p: Vec<f64> = d
        .iter()
        .enumerate()
        .map(|(j, v)| if j == i { 0.0 } else { (-beta * (v - min)).exp() })
        .collect();
    let sum: f64 = p.iter().sum();
    let mut h = 0.0;
    for v in p.iter_mut() {
        *v /= sum;
        if *v > 0.0 {
            h -= *v * v.log2();
        }
    }
    (p, h)
}

fn search_row(d: &[f64], i: usize, perplexity: f64) -> (Vec<f64>, f64, f64) {
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut beta = 1.0;
    let mut best: Option<(f64, Vec<f64>, f64, f64)> = None;
    for _ in 0..MAX_SEARCH_STEPS {
        let (p, h) = conditional_row(d, i, beta);
        let perp = h.exp2();
        let err = (perp - perplexity).abs();
        if best.as_ref().is_none_or(|b| err < b.0) {
            best = Some((err, p, beta, perp));
        }
        if err < PERPLEXITY_TOL {
            break;
        }
        if perp > perplexity {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
    }
    let (_, p, beta, perp) = best.expect("at least one search step");
    (p, beta, perp)
}

/// Gaussian input affinities with per-row bandwidths matched to
/// `perplexity`, symmetrized as `(P_j|i + P_i|j) / 2N` and floored at
/// [`P_FLOOR`] while keeping the total at 1.
pub fn compute_affinities(points: &[Vec<f64>], perplexity: f64) -> Result<Affinities> {
    let n = points.len();
    if n < 4 {
        return Err(Error::Contract(format!("t-SNE needs at least 4 points, got {n}")));
    }
    let max_perp = (n - 1) as f64 / 3.0;
    if !(perplexity >= 1.0 && perplexity <= max_perp) {
        return Err(Error::Config(format!(
            "perplexity {perplexity} is infeasible for {n} points (must lie in [1, {max_perp}])"
        )));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Domain("t-SNE input must be finite".into()));
    }
    let d = squared_distances(points);
    let rows: Vec<(Vec<f64>, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| search_row(&d[i * n..(i + 1) * n], i, perplexity))
        .collect();
    let k = (n * (n - 1)) as f64;
    let scale = 1.0 - k * P_FLOOR;
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let sym = (rows[i].0[j] + rows[j].0[i]) / (2.0 * n as f64);
                p[i * n + j] = scale * sym + P_FLOOR;
            }
        }
    }
    Ok(Affinities {
        n,
        p,
        beta: rows.iter().map(|r| r.1).collect(),
        row_perplexity: rows.iter().map(|r| r.2).collect(),
    })
}
