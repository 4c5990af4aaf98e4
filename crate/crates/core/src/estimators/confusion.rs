//! Confusion-matrix estimators.
//!
//! With hard predictions `z = argmax f(x)`, the holdout joint frequencies
//! `A[j][c] = P(z = j, y = c)` and test prediction frequencies
//! `B[j] = P_te(z = j)` satisfy `A w = B` at the true ratio `w`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::types::{LabelMarginal, ProbabilityMatrix, RatioVector};

use super::EstimateReport;

/// Largest condition number accepted before a solve.
pub const MAX_CONDITION: f64 = 1e12;

/// The linear system `A w = B` built from a labeled holdout and test predictions.
#[derive(Debug, Clone)]
pub struct ConfusionSystem {
    pub joint: DMatrix<f64>,
    pub test_freq: DVector<f64>,
}

impl ConfusionSystem {
    pub fn build(preds_val: &ProbabilityMatrix, labels_val: &[usize], preds_te: &ProbabilityMatrix) -> Result<Self> {
        let m = preds_val.num_classes();
        if preds_te.num_classes() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: preds_te.num_classes(),
            });
        }
        if labels_val.len() != preds_val.len() || labels_val.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: preds_val.len(),
                found: labels_val.len(),
            });
        }
        let mut present = vec![false; m];
        let mut joint = DMatrix::zeros(m, m);
        let n = labels_val.len() as f64;
        for (&z, &y) in preds_val.hard_labels().iter().zip(labels_val) {
            if y >= m {
                return Err(Error::InvalidDataset(format!("holdout label {y} out of range")));
            }
            present[y] = true;
            joint[(z, y)] += 1.0 / n;
        }
        if let Some(c) = present.iter().position(|p| !p) {
            return Err(Error::InvalidDataset(format!("class {c} absent from the holdout")));
        }
        let mut test_freq = DVector::zeros(m);
        let n_te = preds_te.len() as f64;
        for z in preds_te.hard_labels() {
            test_freq[z] += 1.0 / n_te;
        }
        Ok(Self { joint, test_freq })
    }
}

/// 2-norm condition number; infinite for singular matrices.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn solve_checked(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let condition = condition_number(&a);
    if condition.is_nan() || condition > MAX_CONDITION {
        return Err(Error::IllConditioned { condition });
    }
    a.lu().solve(b).ok_or(Error::IllConditioned {
        condition: f64::INFINITY,
    })
}

fn report(raw: &[f64], tr: &LabelMarginal) -> Result<EstimateReport> {
    Ok(EstimateReport {
        ratio: RatioVector::project_feasible(raw, tr)?,
        iterations_used: 1,
        final_objective: None,
        converged: true,
        objective_trace: Vec::new(),
    })
}

/// Black-box shift estimation: solve `A w = B`, clip negatives, renormalize
/// to feasibility against `tr`.
pub fn estimate_bbse(
    preds_val: &ProbabilityMatrix,
    labels_val: &[usize],
    preds_te: &ProbabilityMatrix,
    tr: &LabelMarginal,
) -> Result<EstimateReport> {
    let sys = ConfusionSystem::build(preds_val, labels_val, preds_te)?;
    let w = solve_checked(sys.joint, &sys.test_freq)?;
    report(w.as_slice(), tr)
}

/// Regularized variant: with `theta = r - 1`, minimizes
/// `||A (1 + theta) - B||^2 + lambda ||theta||^2`, i.e.
/// `theta = (A^T A + lambda I)^{-1} A^T (B - A 1)`. `lambda = 0` solves
/// `A theta = B - A 1` directly and reproduces [`estimate_bbse`].
pub fn estimate_rlls(
    preds_val: &ProbabilityMatrix,
    labels_val: &[usize],
    preds_te: &ProbabilityMatrix,
    tr: &LabelMarginal,
    lambda: f64,
) -> Result<EstimateReport> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "rlls lambda must be nonnegative, got {lambda}"
        )));
    }
    let sys = ConfusionSystem::build(preds_val, labels_val, preds_te)?;
    let m = sys.joint.nrows();
    let residual = &sys.test_freq - &sys.joint * DVector::from_element(m, 1.0);
    let theta = if lambda == 0.0 {
        solve_checked(sys.joint, &residual)?
    } else {
        let at = sys.joint.transpose();
        let normal = &at * &sys.joint + DMatrix::identity(m, m) * lambda;
        solve_checked(normal, &(at * residual))?
    };
    let raw: Vec<f64> = theta.iter().map(|t| 1.0 + t).collect();
    report(&raw, tr)
}
