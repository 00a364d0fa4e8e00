use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util;

/// Boosting hyperparameters. Defaults are the tuned values reported for the
/// EF regression task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    #[serde(alias = "n_estimators")]
    pub n_trees: usize,
    pub max_depth: usize,
    #[serde(alias = "learning_rate")]
    pub eta: f64,
    pub min_child_weight: f64,
    #[serde(alias = "colsample_bytree")]
    pub col_sample_by_tree: f64,
    #[serde(alias = "colsample_bylevel")]
    pub col_sample_by_level: f64,
    pub subsample: f64,
    pub reg_alpha: f64,
    pub reg_lambda: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            n_trees: 100,
            max_depth: 3,
            eta: 0.35,
            min_child_weight: 1.0,
            col_sample_by_tree: 1.0,
            col_sample_by_level: 1.0,
            subsample: 0.85,
            reg_alpha: 0.0,
            reg_lambda: 0.5,
            gamma: 0.0,
            seed: 0,
        }
    }
}

fn unit_interval(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in (0, 1], got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")))
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        unit_interval("eta", self.eta)?;
        unit_interval("subsample", self.subsample)?;
        unit_interval("col_sample_by_tree", self.col_sample_by_tree)?;
        unit_interval("col_sample_by_level", self.col_sample_by_level)?;
        if self.max_depth < 1 {
            return Err(Error::Config("max_depth must be >= 1".into()));
        }
        non_negative("min_child_weight", self.min_child_weight)?;
        non_negative("reg_alpha", self.reg_alpha)?;
        non_negative("reg_lambda", self.reg_lambda)?;
        non_negative("gamma", self.gamma)
    }

    /// Parses a hyperparameter file. `num_boost_round` is accepted as a
    /// redundant alias of `n_trees`: it is used only when no tree count is
    /// given, and always produces a warning.
    pub fn from_json_str(origin: &Path, text: &str) -> Result<(Self, Vec<String>)> {
        let mut value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::json(origin, e))?;
        let mut warnings = Vec::new();
        if let Some(obj) = value.as_object_mut() {
            if let Some(rounds) = obj.remove("num_boost_round") {
                let explicit = obj.contains_key("n_trees") || obj.contains_key("n_estimators");
                if explicit {
                    warnings.push(format!(
                        "num_boost_round = {rounds} ignored; the explicit tree count wins"
                    ));
                } else {
                    warnings.push(format!("num_boost_round = {rounds} read as n_trees"));
                    obj.insert("n_trees".into(), rounds);
                }
            }
        }
        let hp: Hyperparams = util::from_value(origin, &value)?;
        hp.validate()?;
        Ok((hp, warnings))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let (hp, warnings) = Self::from_json_str(path, &util::read_string(path)?)?;
        for w in warnings {
            log::warn!("{}: {w}", path.display());
        }
        Ok(hp)
    }
}
