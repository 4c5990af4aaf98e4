//! Density-ratio estimators.
//!
//! * [`estimate_bbse`] / [`estimate_rlls`]: confusion-matrix linear systems.
//! * [`estimate_mlls_em`] / [`estimate_mlls_gd`]: maximum likelihood on
//!   soft test predictions, by EM or by projected gradient ascent.
//! * [`estimate_vrls`]: trains a predictor with the entropy penalty and
//!   feeds its test predictions to one of the solvers above.

mod confusion;
mod mle;
mod pipeline;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::RatioVector;

pub use confusion::{condition_number, estimate_bbse, estimate_rlls, ConfusionSystem, MAX_CONDITION};
pub use mle::{empirical_objective, estimate_mlls_em, estimate_mlls_gd, objective_gradient, project_simplex};
pub use pipeline::{estimate_vrls, estimate_with_predictor, split_holdout, FittedEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Bbse,
    Rlls,
    MllsEm,
    MllsGd,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Bbse => "bbse",
            Method::Rlls => "rlls",
            Method::MllsEm => "mlls_em",
            Method::MllsGd => "mlls_gd",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorOptions {
    pub method: Method,
    pub max_iters: usize,
    /// Convergence threshold on the L-infinity change of successive ratios.
    pub tol: f64,
    /// Initial step for projected gradient ascent.
    pub step_size: f64,
    pub rlls_lambda: f64,
    /// Fraction of the labeled data held out from predictor training for
    /// the confusion matrix. Zero reuses the training set itself.
    pub holdout_fraction: f64,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            method: Method::MllsEm,
            max_iters: 1000,
            tol: 1e-6,
            step_size: 0.05,
            rlls_lambda: 0.0,
            holdout_fraction: 0.0,
        }
    }
}

impl EstimatorOptions {
    pub fn with_method(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::InvalidConfig("tol must be positive".into()));
        }
        if self.step_size.is_nan() || self.step_size <= 0.0 {
            return Err(Error::InvalidConfig("step_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::InvalidConfig("holdout_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Result of one estimation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub ratio: RatioVector,
    pub iterations_used: usize,
    /// Mean test log-likelihood at the returned ratio (likelihood methods only).
    pub final_objective: Option<f64>,
    pub converged: bool,
    /// Objective after each iteration, starting point first.
    #[serde(skip)]
    pub objective_trace: Vec<f64>,
}
