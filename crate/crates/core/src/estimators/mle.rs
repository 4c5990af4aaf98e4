//! Maximum-likelihood ratio estimation: maximize the mean of
//! `log(f(x_j)^T r)` over test predictions, subject to `r >= 0` and
//! `sum_c r_c tr_c = 1`. Classes without training mass are held at zero.

use crate::error::{Error, Result};
use crate::types::{LabelMarginal, ProbabilityMatrix, RatioVector, PROB_FLOOR};

use super::{EstimateReport, EstimatorOptions};

/// Mean log-likelihood `(1/n) sum_j log(max(p_j^T r, eps))`.
pub fn empirical_objective(r: &RatioVector, preds_te: &ProbabilityMatrix) -> f64 {
    objective_raw(r.ratios(), preds_te)
}

pub(crate) fn objective_raw(r: &[f64], preds: &ProbabilityMatrix) -> f64 {
    let rows = preds.rows();
    let total: f64 = rows
        .outer_iter()
        .map(|p| p.iter().zip(r).map(|(a, b)| a * b).sum::<f64>().max(PROB_FLOOR).ln())
        .sum();
    total / rows.nrows() as f64
}

/// Gradient of [`empirical_objective`] with respect to `r`:
/// `(1/n) sum_j p_j / (p_j^T r)`.
pub fn objective_gradient(r: &[f64], preds: &ProbabilityMatrix) -> Vec<f64> {
    let rows = preds.rows();
    let mut grad = vec![0.0; r.len()];
    for p in rows.outer_iter() {
        let dot = p.iter().zip(r).map(|(a, b)| a * b).sum::<f64>().max(PROB_FLOOR);
        for (g, &pc) in grad.iter_mut().zip(p.iter()) {
            *g += pc / dot;
        }
    }
    let n = rows.nrows() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    grad
}

fn check_inputs(preds: &ProbabilityMatrix, tr: &LabelMarginal, opts: &EstimatorOptions) -> Result<()> {
    opts.validate()?;
    if preds.num_classes() != tr.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: tr.num_classes(),
            found: preds.num_classes(),
        });
    }
    Ok(())
}

/// Euclidean projection of `v` onto the probability simplex, restricted to
/// the coordinates where `active` is true (others are set to zero).
pub fn project_simplex(v: &[f64], active: &[bool]) -> Vec<f64> {
    let mut sorted: Vec<f64> = v.iter().zip(active).filter(|(_, &a)| a).map(|(&x, _)| x).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    v.iter()
        .zip(active)
        .map(|(&x, &a)| if a { (x - theta).max(0.0) } else { 0.0 })
        .collect()
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Expectation-maximization on the test label proportions.
///
/// Starting from `q = tr`, each iteration sets
/// `q_c <- mean_j [p_j(c) r_c / sum_k p_j(k) r_k]` with `r = q / tr`.
/// The objective never decreases; `objective_trace` records it after every
/// iteration (index 0 is the starting point).
pub fn estimate_mlls_em(
    preds_te: &ProbabilityMatrix,
    tr: &LabelMarginal,
    opts: &EstimatorOptions,
) -> Result<EstimateReport> {
    check_inputs(preds_te, tr, opts)?;
    let rows = preds_te.rows();
    let n = rows.nrows() as f64;
    let active: Vec<bool> = tr.probs().iter().map(|&p| p > 0.0).collect();
    let mut r: Vec<f64> = active.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
    let mut trace = vec![objective_raw(&r, preds_te)];
    let mut converged = false;
    let mut iterations = 0;
    let mut q = vec![0.0; r.len()];
    while iterations < opts.max_iters {
        iterations += 1;
        q.iter_mut().for_each(|v| *v = 0.0);
        for p in rows.outer_iter() {
            let dot = p.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>().max(PROB_FLOOR);
            for c in 0..q.len() {
                q[c] += p[c] * r[c] / dot;
            }
        }
        let next: Vec<f64> = q
            .iter()
            .zip(tr.probs())
            .map(|(&qc, &t)| if t > 0.0 { qc / n / t } else { 0.0 })
            .collect();
        let change = linf(&next, &r);
        r = next;
        trace.push(objective_raw(&r, preds_te));
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    let ratio = RatioVector::project_feasible(&r, tr)?;
    Ok(EstimateReport {
        final_objective: Some(empirical_objective(&ratio, preds_te)),
        ratio,
        iterations_used: iterations,
        converged,
        objective_trace: trace,
    })
}

/// Full-batch projected gradient ascent in the `q = r ⊙ tr` coordinates.
///
/// Each step moves `q` along the gradient and projects back onto the
/// simplex; the step size is halved until the objective does not decrease.
pub fn estimate_mlls_gd(
    preds_te: &ProbabilityMatrix,
    tr: &LabelMarginal,
    opts: &EstimatorOptions,
) -> Result<EstimateReport> {
    check_inputs(preds_te, tr, opts)?;
    let active: Vec<bool> = tr.probs().iter().map(|&p| p > 0.0).collect();
    let tr = tr.probs();
    let mut r: Vec<f64> = active.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
    let mut q: Vec<f64> = r.iter().zip(tr).map(|(a, b)| a * b).collect();
    let mut obj = objective_raw(&r, preds_te);
    let mut trace = vec![obj];
    let mut step = opts.step_size;
    let mut converged = false;
    let mut iterations = 0;
    let diverged = |index| Error::Diverged {
        what: "objective",
        stage: "iteration",
        index,
    };
    while iterations < opts.max_iters {
        iterations += 1;
        let grad_r = objective_gradient(&r, preds_te);
        let grad_q: Vec<f64> = grad_r
            .iter()
            .zip(tr)
            .map(|(&g, &t)| if t > 0.0 { g / t } else { 0.0 })
            .collect();
        let (next_r, next_q, next_obj) = loop {
            let moved: Vec<f64> = q.iter().zip(&grad_q).map(|(a, g)| a + step * g).collect();
            let cand_q = project_simplex(&moved, &active);
            let cand_r: Vec<f64> = cand_q
                .iter()
                .zip(tr)
                .map(|(&qc, &t)| if t > 0.0 { qc / t } else { 0.0 })
                .collect();
            let cand_obj = objective_raw(&cand_r, preds_te);
            if !cand_obj.is_finite() || cand_r.iter().any(|v| !v.is_finite()) {
                return Err(diverged(iterations));
            }
            if cand_obj >= obj {
                break (cand_r, cand_q, cand_obj);
            }
            step *= 0.5;
            if step < f64::EPSILON * opts.step_size {
                // No ascent direction left at machine precision.
                break (r.clone(), q.clone(), obj);
            }
        };
        let change = linf(&next_r, &r);
        r = next_r;
        q = next_q;
        obj = next_obj;
        trace.push(obj);
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    let ratio = RatioVector::project_feasible(&r, &LabelMarginal::new(tr.to_vec())?)?;
    Ok(EstimateReport {
        final_objective: Some(empirical_objective(&ratio, preds_te)),
        ratio,
        iterations_used: iterations,
        converged,
        objective_trace: trace,
    })
}
