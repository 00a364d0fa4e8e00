use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{CaseMatrix, Cell, FeatureCatalog};
use crate::error::{Error, Result};
use crate::util;

use super::Hyperparams;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// One tree node. Children are indices into [`Tree::nodes`]; a case goes
/// left when `value < threshold` and follows `default_left` when the value
/// is missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature_id: usize,
        threshold: f64,
        default_left: bool,
        left: usize,
        right: usize,
        cover: f64,
    },
    Leaf {
        weight: f64,
        cover: f64,
    },
}

impl Node {
    pub fn cover(&self) -> f64 {
        match *self {
            Node::Split { cover, .. } | Node::Leaf { cover, .. } => cover,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Node::Leaf { .. })
    }
}

/// A regression tree stored as a flat node list with the root at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(weight: f64, cover: f64) -> Self {
        Tree {
            nodes: vec![Node::Leaf { weight, cover }],
        }
    }

    /// Child taken at split node `n` for `row`.
    #[inline]
    pub fn route(node: &Node, row: &[Cell]) -> usize {
        match *node {
            Node::Split {
                feature_id,
                threshold,
                default_left,
                left,
                right,
                ..
            } => {
                let go_left = match row[feature_id] {
                    Some(v) => v < threshold,
                    None => default_left,
                };
                if go_left {
                    left
                } else {
                    right
                }
            }
            Node::Leaf { .. } => unreachable!("route called on a leaf"),
        }
    }

    /// Node indices visited by `row`, root first, ending at a leaf.
    pub fn path(&self, row: &[Cell]) -> Vec<usize> {
        let mut out = vec![0];
        let mut i = 0;
        while !self.nodes[i].is_leaf() {
            i = Self::route(&self.nodes[i], row);
            out.push(i);
        }
        out
    }

    pub fn predict(&self, row: &[Cell]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { weight, .. } => return weight,
                ref n => i = Self::route(n, row),
            }
        }
    }

    /// Cover-weighted mean leaf value.
    pub fn expected_value(&self) -> f64 {
        let total = self.nodes[0].cover();
        self.nodes
            .iter()
            .filter_map(|n| match *n {
                Node::Leaf { weight, cover } => Some(weight * cover / total),
                Node::Split { .. } => None,
            })
            .sum()
    }

    pub fn n_splits(&self) -> usize {
        self.nodes.iter().filter(|n| !n.is_leaf()).count()
    }

    pub fn max_feature_id(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match *n {
                Node::Split { feature_id, .. } => Some(feature_id),
                Node::Leaf { .. } => None,
            })
            .max()
    }

    /// Checks child indices, acyclicity (children after parents), positive
    /// covers and cover additivity within `tol`.
    pub fn validate(&self, n_features: usize, tol: f64) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Contract("tree without nodes".into()));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if !(n.cover() > 0.0) {
                return Err(Error::Contract(format!("node {i} has non-positive cover")));
            }
            if let Node::Split {
                feature_id,
                threshold,
                left,
                right,
                cover,
                ..
            } = *n
            {
                if feature_id >= n_features || !threshold.is_finite() {
                    return Err(Error::Contract(format!("node {i} has a bad split")));
                }
                if left <= i || right <= i || left >= self.nodes.len() || right >= self.nodes.len()
                {
                    return Err(Error::Contract(format!("node {i} has bad children")));
                }
                let sum = self.nodes[left].cover() + self.nodes[right].cover();
                if (sum - cover).abs() > tol * cover.max(1.0) {
                    return Err(Error::Contract(format!(
                        "node {i}: child covers {sum} != parent cover {cover}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A trained ensemble. The learning rate is already folded into the leaf
/// weights, so a prediction is `base_score` plus one leaf per tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub format_version: u32,
    pub base_score: f64,
    pub eta: f64,
    pub n_features: usize,
    pub catalog_fingerprint: String,
    pub hyperparams: Hyperparams,
    pub trees: Vec<Tree>,
}

impl GbtModel {
    pub fn new(base_score: f64, trees: Vec<Tree>, catalog: &FeatureCatalog) -> Self {
        GbtModel {
            format_version: MODEL_FORMAT_VERSION,
            base_score,
            eta: 1.0,
            n_features: catalog.len(),
            catalog_fingerprint: catalog.fingerprint(),
            hyperparams: Hyperparams::default(),
            trees,
        }
    }

    fn check_width(&self, width: usize) -> Result<()> {
        if width != self.n_features {
            return Err(Error::Contract(format!(
                "row has {width} features, model expects {}",
                self.n_features
            )));
        }
        Ok(())
    }

    pub(crate) fn check_catalog(&self, m: &CaseMatrix) -> Result<()> {
        self.check_width(m.n_features())?;
        if m.catalog().fingerprint() != self.catalog_fingerprint {
            return Err(Error::Contract(
                "case matrix catalog differs from the model's training catalog".into(),
            ));
        }
        Ok(())
    }

    /// Prediction for one feature row.
    pub fn predict_row(&self, row: &[Cell]) -> Result<f64> {
        self.check_width(row.len())?;
        Ok(self.predict_unchecked(row))
    }

    pub(crate) fn predict_unchecked(&self, row: &[Cell]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
    }

    pub fn predict(&self, m: &CaseMatrix) -> Result<Vec<f64>> {
        self.check_catalog(m)?;
        Ok(m.rows()
            .par_iter()
            .map(|r| self.predict_unchecked(r))
            .collect())
    }

    pub fn validate(&self) -> Result<()> {
        if !self.base_score.is_finite() {
            return Err(Error::Contract("base_score is not finite".into()));
        }
        for (t, tree) in self.trees.iter().enumerate() {
            tree.validate(self.n_features, 1e-9)
                .map_err(|e| Error::Contract(format!("tree {t}: {e}")))?;
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        util::sha256_hex(&util::to_json_bytes(self))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        util::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: GbtModel = util::read_json(path)?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::parse(
                path,
                format!("unsupported model format_version {}", m.format_version),
            ));
        }
        m.validate()
            .map_err(|e| Error::parse(path, e.to_string()))?;
        Ok(m)
    }
}
