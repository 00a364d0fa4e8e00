#![allow(dead_code)]

pub mod oracles;

use chrono::NaiveDate;
use efshap::dataset::{CaseId, CaseMatrix, Category, Cell, FeatureCatalog, FeatureKind};
use efshap::gbt::{GbtModel, Node, Tree};
use rand::Rng;

pub fn numeric_catalog(m: usize) -> FeatureCatalog {
    let codes: Vec<String> = (0..m).map(|j| format!("F{j}")).collect();
    FeatureCatalog::from_codes(codes.iter().map(|c| (Category::Lb, c.as_str(), FeatureKind::Numeric)))
        .unwrap()
}

pub fn case_ids(n: usize) -> Vec<CaseId> {
    let d0 = NaiveDate::from_ymd_opt(2015, 1, 1).unwrap();
    (0..n)
        .map(|i| CaseId {
            patient_id: i as u64 + 1,
            echo_date: d0,
        })
        .collect()
}

pub fn matrix(rows: Vec<Vec<Cell>>, labels: Vec<f64>) -> CaseMatrix {
    let m = rows.first().map_or(0, Vec::len);
    let n = rows.len();
    CaseMatrix::new(numeric_catalog(m), rows, labels, case_ids(n)).unwrap()
}

fn random_subtree<R: Rng>(rng: &mut R, nodes: &mut Vec<Node>, m: usize, depth: usize) -> usize {
    let idx = nodes.len();
    if depth == 0 || (idx > 0 && rng.random_bool(0.25)) {
        let cover = f64::from(rng.random_range(1..20u32));
        nodes.push(Node::Leaf {
            weight: rng.random_range(-10.0..10.0),
            cover,
        });
        return idx;
    }
    nodes.push(Node::Leaf { weight: 0.0, cover: 0.0 });
    let left = random_subtree(rng, nodes, m, depth - 1);
    let right = random_subtree(rng, nodes, m, depth - 1);
    let cover = nodes[left].cover() + nodes[right].cover();
    nodes[idx] = Node::Split {
        feature_id: rng.random_range(0..m),
        threshold: f64::from(rng.random_range(0..5u32)) - 0.5,
        default_left: rng.random_bool(0.5),
        left,
        right,
        cover,
    };
    idx
}

/// A random ensemble over `m` features whose covers are additive.
pub fn random_model<R: Rng>(rng: &mut R, m: usize, max_trees: usize, max_depth: usize) -> GbtModel {
    let n_trees = rng.random_range(1..=max_trees);
    let trees = (0..n_trees)
        .map(|_| {
            let mut nodes = Vec::new();
            let depth = rng.random_range(1..=max_depth);
            random_subtree(rng, &mut nodes, m, depth);
            Tree { nodes }
        })
        .collect();
    GbtModel::new(rng.random_range(20.0..60.0), trees, &numeric_catalog(m))
}

/// A row with small integer values and ~15% missing cells.
pub fn random_row<R: Rng>(rng: &mut R, m: usize) -> Vec<Cell> {
    (0..m)
        .map(|_| {
            if rng.random_bool(0.15) {
                None
            } else {
                Some(f64::from(rng.random_range(0..5u32)))
            }
        })
        .collect()
}

/// Every pipeline stage on a small cohort, sized for tests.
pub fn small_pipeline(seed: u64, n_patients: usize) -> efshap::pipeline::PipelineConfig {
    use efshap::pipeline::{EmbedStage, PipelineConfig, Stage};
    let mut c = PipelineConfig::full(seed);
    for s in &mut c.stages {
        match s {
            Stage::Synth(x) => x.config.n_patients = n_patients,
            Stage::Etl(x) => x.config.min_code_count = 20,
            Stage::Tune(x) => {
                x.config.grid = efshap::gbt::Grid {
                    n_trees: Some(vec![20.0, 40.0]),
                    max_depth: Some(vec![2.0, 3.0]),
                    ..Default::default()
                };
                x.config.folds = 3;
            }
            Stage::Embed(EmbedStage { max_points, config, .. }) => {
                *max_points = Some(120);
                config.n_iter = 400;
            }
            _ => {}
        }
    }
    c
}
