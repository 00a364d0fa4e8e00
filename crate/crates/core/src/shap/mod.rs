//! Exact path-dependent TreeSHAP, a brute-force Shapley oracle and the
//! summaries behind the SHAP plots.

mod treeshap;

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{CaseId, CaseMatrix, Cell};
use crate::error::{Error, Result};
use crate::gbt::{GbtModel, Node, Tree};
use crate::util;

pub use treeshap::tree_shap_single;

pub const SHAP_FILE: &str = "shap.csv";
pub const SHAP_META_FILE: &str = "shap_meta.json";
/// Largest feature count the subset-enumeration oracle accepts.
pub const ORACLE_MAX_FEATURES: usize = 20;

/// Expected model output under cover-weighted conditioning on no feature.
pub fn base_value(model: &GbtModel) -> f64 {
    model.base_score + model.trees.iter().map(Tree::expected_value).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub values: Vec<f64>,
    pub base_value: f64,
}

/// SHAP values of one case.
pub fn tree_shap(model: &GbtModel, row: &[Cell]) -> Result<Explanation> {
    model.predict_row(row)?;
    let mut values = vec![0.0; model.n_features];
    for tree in &model.trees {
        tree_shap_single(tree, row, &mut values);
    }
    Ok(Explanation {
        values,
        base_value: base_value(model),
    })
}

/// `E[tree(x) | x_S]` with the cover-weighted recursion.
fn conditional_expectation(tree: &Tree, row: &[Cell], subset: u32, j: usize) -> f64 {
    match tree.nodes[j] {
        Node::Leaf { weight, .. } => weight,
        Node::Split {
            feature_id,
            left,
            right,
            cover,
            ..
        } => {
            if subset & (1 << feature_id) != 0 {
                conditional_expectation(tree, row, subset, Tree::route(&tree.nodes[j], row))
            } else {
                (tree.nodes[left].cover() * conditional_expectation(tree, row, subset, left)
                    + tree.nodes[right].cover()
                        * conditional_expectation(tree, row, subset, right))
                    / cover
            }
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Shapley values by enumerating all `2^M` feature subsets, using the same
/// cover-weighted value function as [`tree_shap`].
pub fn shapley_oracle(model: &GbtModel, row: &[Cell]) -> Result<Vec<f64>> {
    let m = model.n_features;
    if m > ORACLE_MAX_FEATURES {
        return Err(Error::Domain(format!(
            "shapley_oracle enumerates 2^M subsets and accepts at most {ORACLE_MAX_FEATURES} features, got {m}"
        )));
    }
    model.predict_row(row)?;
    let n_sets = 1usize << m;
    let v: Vec<f64> = (0..n_sets)
        .into_par_iter()
        .map(|s| {
            model.base_score
                + model
                    .trees
                    .iter()
                    .map(|t| conditional_expectation(t, row, s as u32, 0))
                    .sum::<f64>()
        })
        .collect();
    let weights: Vec<f64> = (0..m.max(1))
        .map(|k| 1.0 / (m as f64 * binomial(m - 1, k)))
        .collect();
    let mut phi = vec![0.0; m];
    for (j, p) in phi.iter_mut().enumerate() {
        let bit = 1usize << j;
        for s in (0..n_sets).filter(|s| s & bit == 0) {
            *p += weights[s.count_ones() as usize] * (v[s | bit] - v[s]);
        }
    }
    Ok(phi)
}

/// Per-case SHAP values aligned with the rows of a case matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapMatrix {
    pub base_value: f64,
    pub feature_names: Vec<String>,
    pub case_ids: Vec<CaseId>,
    pub labels: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub model_fingerprint: String,
    pub catalog_fingerprint: String,
}

impl ShapMatrix {
    pub fn n_cases(&self) -> usize {
        self.values.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[j]).collect()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }
}

pub fn explain_dataset(model: &GbtModel, data: &CaseMatrix) -> Result<ShapMatrix> {
    model.check_catalog(data)?;
    let values: Vec<Vec<f64>> = data
        .rows()
        .par_iter()
        .map(|row| {
            let mut phi = vec![0.0; model.n_features];
            for tree in &model.trees {
                tree_shap_single(tree, row, &mut phi);
            }
            phi
        })
        .collect();
    Ok(ShapMatrix {
        base_value: base_value(model),
        feature_names: data.catalog().names().map(str::to_string).collect(),
        case_ids: data.case_ids().to_vec(),
        labels: data.labels().to_vec(),
        values,
        model_fingerprint: model.fingerprint(),
        catalog_fingerprint: model.catalog_fingerprint.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapMeta {
    pub format_version: u32,
    pub base_value: f64,
    pub n_cases: usize,
    pub n_features: usize,
    pub model_fingerprint: String,
    pub catalog_fingerprint: String,
    pub shap_sha256: String,
}

fn shap_csv(s: &ShapMatrix) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let mut header = vec!["patient_id".to_string(), "echo_date".to_string()];
    header.extend(s.feature_names.iter().cloned());
    header.push("label".into());
    w.write_record(&header).expect("in-memory csv");
    for ((id, row), label) in s.case_ids.iter().zip(&s.values).zip(&s.labels) {
        let mut rec = vec![id.patient_id.to_string(), id.echo_date.to_string()];
        rec.extend(row.iter().map(|v| util::fmt_f64(*v)));
        rec.push(util::fmt_f64(*label));
        w.write_record(&rec).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

pub fn write_shap_dir(s: &ShapMatrix, dir: &Path) -> Result<ShapMeta> {
    util::create_dir(dir)?;
    let bytes = shap_csv(s);
    util::write_bytes(&dir.join(SHAP_FILE), &bytes)?;
    let meta = ShapMeta {
        format_version: 1,
        base_value: s.base_value,
        n_cases: s.n_cases(),
        n_features: s.n_features(),
        model_fingerprint: s.model_fingerprint.clone(),
        catalog_fingerprint: s.catalog_fingerprint.clone(),
        shap_sha256: util::sha256_hex(&bytes),
    };
    util::write_json(&dir.join(SHAP_META_FILE), &meta)?;
    Ok(meta)
}

pub fn read_shap_dir(dir: &Path) -> Result<ShapMatrix> {
    let meta: ShapMeta = util::read_json(&dir.join(SHAP_META_FILE))?;
    let path = dir.join(SHAP_FILE);
    let text = util::read_string(&path)?;
    if util::sha256_hex(text.as_bytes()) != meta.shap_sha256 {
        return Err(Error::parse(&path, "checksum does not match shap_meta.json"));
    }
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| Error::csv(&path, e))?.clone();
    let m = meta.n_features;
    if header.len() != m + 3 {
        return Err(Error::parse(&path, "header width does not match metadata"));
    }
    let feature_names: Vec<String> = header.iter().skip(2).take(m).map(str::to_string).collect();
    let (mut case_ids, mut labels, mut values) = (Vec::new(), Vec::new(), Vec::new());
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(&path, e))?;
        let bad = || Error::parse(&path, format!("row {}: malformed", line + 1));
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        case_ids.push(CaseId {
            patient_id: rec[0].parse().map_err(|_| bad())?,
            echo_date: NaiveDate::parse_from_str(&rec[1], "%Y-%m-%d").map_err(|_| bad())?,
        });
        values.push(
            (0..m)
                .map(|j| num(&rec[2 + j]))
                .collect::<Result<Vec<f64>>>()?,
        );
        labels.push(num(&rec[m + 2])?);
    }
    if values.len() != meta.n_cases {
        return Err(Error::parse(&path, "row count does not match metadata"));
    }
    Ok(ShapMatrix {
        base_value: meta.base_value,
        feature_names,
        case_ids,
        labels,
        values,
        model_fingerprint: meta.model_fingerprint,
        catalog_fingerprint: meta.catalog_fingerprint,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature_id: usize,
    pub name: String,
    pub mean_abs_shap: f64,
}

/// `(feature value, SHAP value)` pairs of one feature, one per case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePoints {
    pub feature_id: usize,
    pub name: String,
    pub pairs: Vec<(Cell, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapSummary {
    /// Every feature, by descending mean |SHAP|, ties by feature id.
    pub ranking: Vec<FeatureImportance>,
    /// Points of the first `top_k` ranked features, in ranking order.
    pub points: Vec<FeaturePoints>,
}

impl ShapSummary {
    pub fn top(&self, k: usize) -> &[FeatureImportance] {
        &self.ranking[..k.min(self.ranking.len())]
    }
}

fn check_aligned(shap: &ShapMatrix, data: &CaseMatrix) -> Result<()> {
    if shap.n_cases() != data.n_cases() || shap.n_features() != data.n_features() {
        return Err(Error::Contract(format!(
            "SHAP matrix is {}x{}, cases are {}x{}",
            shap.n_cases(),
            shap.n_features(),
            data.n_cases(),
            data.n_features()
        )));
    }
    if shap.case_ids != data.case_ids() {
        return Err(Error::Contract("SHAP rows and cases are not aligned".into()));
    }
    Ok(())
}

pub fn summarize(shap: &ShapMatrix, data: &CaseMatrix, top_k: usize) -> Result<ShapSummary> {
    check_aligned(shap, data)?;
    let n = shap.n_cases().max(1) as f64;
    let mut ranking: Vec<FeatureImportance> = (0..shap.n_features())
        .map(|j| FeatureImportance {
            feature_id: j,
            name: shap.feature_names[j].clone(),
            mean_abs_shap: shap.values.iter().map(|r| r[j].abs()).sum::<f64>() / n,
        })
        .collect();
    ranking.sort_by(|a, b| {
        b.mean_abs_shap
            .total_cmp(&a.mean_abs_shap)
            .then(a.feature_id.cmp(&b.feature_id))
    });
    let points = ranking
        .iter()
        .take(top_k)
        .map(|f| FeaturePoints {
            feature_id: f.feature_id,
            name: f.name.clone(),
            pairs: data
                .rows()
                .iter()
                .zip(&shap.values)
                .map(|(x, s)| (x[f.feature_id], s[f.feature_id]))
                .collect(),
        })
        .collect();
    Ok(ShapSummary { ranking, points })
}

/// Mean SHAP of one feature per observed feature value, e.g. the gap
/// between the two levels of a binary feature.
pub fn mean_shap_by_value(shap: &ShapMatrix, data: &CaseMatrix, feature: usize) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (x, s) in data.rows().iter().zip(&shap.values) {
        let key = x[feature].map(util::fmt_f64).unwrap_or_else(|| "missing".into());
        let e = acc.entry(key).or_default();
        e.0 += s[feature];
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}
