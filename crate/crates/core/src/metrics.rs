//! Error metrics and trial aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-class mean squared error `(1/m) sum_c (est_c - truth_c)^2`.
pub fn ratio_mse(est: &[f64], truth: &[f64]) -> Result<f64> {
    if est.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            found: est.len(),
        });
    }
    if est.is_empty() {
        return Err(Error::InvalidConfig("empty vectors".into()));
    }
    let sq: f64 = est.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sq / est.len() as f64)
}

/// Largest absolute entry-wise difference.
pub fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Least-squares slope of `log(mse)` against `log(n)`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 3 {
        return Err(Error::InvalidConfig(format!(
            "need at least 3 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|&(n, v)| !(n > 0.0 && v > 0.0)) {
        return Err(Error::InvalidConfig("log-log fit needs positive values".into()));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidConfig("all sample sizes are equal".into()));
    }
    Ok(sxy / sxx)
}

/// Mean and sample standard deviation of repeated trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

/// Summarizes trial values; a single value has standard deviation 0.
pub fn summarize(values: &[f64]) -> Result<TrialSummary> {
    if values.is_empty() {
        return Err(Error::InvalidConfig("cannot summarize an empty list".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(TrialSummary {
        values: values.to_vec(),
        mean,
        std,
        count: n,
    })
}

/// Median of a nonempty slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidConfig("median of an empty list".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let mid = v.len() / 2;
    Ok(if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    })
}
