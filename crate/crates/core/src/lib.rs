//! Interpretable ejection-fraction regression on EHR-style event tables.
//!
//! The crate is organized as a chain of stages, each usable on its own:
//!
//! - [`synth`] generates a synthetic heart-failure cohort with planted effects
//!   and reads/writes the nine raw event tables.
//! - [`etl`] normalizes codes, drops rare codes, winsorizes numeric features and
//!   turns echo reports plus surrounding events into a [`dataset::CaseMatrix`].
//! - [`gbt`] trains second-order boosted regression trees with sparsity-aware
//!   splits, evaluates them and tunes hyperparameters by coordinate descent.
//! - [`shap`] computes exact path-dependent TreeSHAP values, with a brute-force
//!   Shapley oracle for verification.
//! - [`embed`] runs exact t-SNE on raw feature rows or SHAP rows.
//! - [`viz`] renders deterministic SVG figures.
//! - [`pipeline`] wires the stages together and records a run manifest.
//!
//! See the `examples/` directory of this crate for one runnable program per
//! capability.

pub mod dataset;
pub mod embed;
pub mod error;
pub mod etl;
pub mod gbt;
pub mod pipeline;
pub mod shap;
pub mod synth;
pub mod util;
pub mod viz;

pub use error::{Error, Result};
