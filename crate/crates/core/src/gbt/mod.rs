//! Second-order gradient-boosted regression trees for squared error, with
//! sparsity-aware default directions, coverage importance, evaluation and a
//! coordinate-descent tuner.

mod metrics;
mod model;
mod params;
mod train;
mod tune;

pub use metrics::{
    coverage_importance, eval_predictions, evaluate, pearson, ranked_coverage, rmse, EvalReport,
    FeatureCoverage,
};
pub use model::{GbtModel, Node, Tree, MODEL_FORMAT_VERSION};
pub use params::Hyperparams;
pub use train::{leaf_weight, soft_threshold, split_gain, train};
pub use tune::{
    coordinate_descent, cv_rmse, fold_indices, tune, DescentResult, Grid, Trial, TuneConfig,
    TuneReport, AXIS_ORDER,
};
