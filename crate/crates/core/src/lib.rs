//! Label-shift density-ratio estimation and importance-weighted training
//! across multiple nodes.
//!
//! * [`types`]: validated marginals, ratios, datasets and prediction matrices.
//! * [`data`]: Gaussian-mixture oracle, Dirichlet shift, relaxed shift, IDX files.
//! * [`predictor`]: softmax predictors trained with an entropy confidence penalty.
//! * [`estimators`]: BBSE, RLLS, maximum-likelihood (EM and projected
//!   gradient) and the regularized-predictor pipeline.
//! * [`federated`]: per-node estimation, ratio aggregation and weighted global training.
//! * [`metrics`]: error metrics and trial summaries.

pub mod data;
pub mod error;
pub mod estimators;
pub mod federated;
pub mod metrics;
pub mod predictor;
pub mod seed;
pub mod types;

pub use error::{Error, IdxError, Result};
pub use types::{
    make_marginal, ratio_from_marginals, LabelMarginal, LabeledDataset, ProbabilityMatrix, RatioVector, PROB_FLOOR,
};
