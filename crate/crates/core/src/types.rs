//! Validated domain types shared by every module: label marginals, density
//! ratios, labeled datasets and row-stochastic prediction matrices.
//!
//! All of them are immutable once built; constructors check the invariants
//! and every other module may rely on them.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to probabilities before they enter a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

const MARGINAL_TOL: f64 = 1e-9;
const RATIO_TOL: f64 = 1e-6;
const ROW_TOL: f64 = 1e-6;

/// A point on the probability simplex over `m >= 2` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LabelMarginal {
    probs: Vec<f64>,
}

impl LabelMarginal {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidMarginal(format!(
                "need at least 2 classes, got {}",
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidMarginal(format!("entry {p} is not a probability")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MARGINAL_TOL {
            return Err(Error::InvalidMarginal(format!("entries sum to {total}")));
        }
        Ok(Self { probs })
    }

    /// Normalizes nonnegative weights onto the simplex.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidMarginal("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::EmptyDistribution);
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    /// Empirical marginal of a vector of per-class counts.
    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::EmptyDistribution);
        }
        Self::new(counts.iter().map(|&c| c as f64 / total as f64).collect())
    }

    pub fn uniform(m: usize) -> Result<Self> {
        Self::new(vec![1.0 / m as f64; m])
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    pub fn get(&self, class: usize) -> f64 {
        self.probs[class]
    }

    /// Largest absolute entry-wise difference.
    pub fn max_abs_diff(&self, other: &LabelMarginal) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl TryFrom<Vec<f64>> for LabelMarginal {
    type Error = Error;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        Self::new(probs)
    }
}

impl From<LabelMarginal> for Vec<f64> {
    fn from(m: LabelMarginal) -> Self {
        m.probs
    }
}

/// Normalizes a vector of per-class counts.
pub fn make_marginal(counts: &[u64]) -> Result<LabelMarginal> {
    LabelMarginal::from_counts(counts)
}

/// A test/train density ratio, feasible against the training marginal it
/// was estimated for: `r >= 0` and `sum_c r_c * tr_c = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RatioRecord", into = "RatioRecord")]
pub struct RatioVector {
    ratios: Vec<f64>,
    train_marginal: LabelMarginal,
}

#[derive(Serialize, Deserialize)]
struct RatioRecord {
    ratios: Vec<f64>,
    train_marginal: LabelMarginal,
}

impl TryFrom<RatioRecord> for RatioVector {
    type Error = Error;

    fn try_from(r: RatioRecord) -> Result<Self> {
        Self::new(r.ratios, r.train_marginal)
    }
}

impl From<RatioVector> for RatioRecord {
    fn from(r: RatioVector) -> Self {
        RatioRecord {
            ratios: r.ratios,
            train_marginal: r.train_marginal,
        }
    }
}

impl RatioVector {
    pub fn new(ratios: Vec<f64>, train_marginal: LabelMarginal) -> Result<Self> {
        if ratios.len() != train_marginal.num_classes() {
            return Err(Error::DimensionMismatch {
                expected: train_marginal.num_classes(),
                found: ratios.len(),
            });
        }
        if let Some(r) = ratios.iter().find(|r| !r.is_finite() || **r < 0.0) {
            return Err(Error::InvalidRatio(format!("entry {r} is not a nonnegative ratio")));
        }
        let mass: f64 = ratios.iter().zip(train_marginal.probs()).map(|(r, p)| r * p).sum();
        if (mass - 1.0).abs() > RATIO_TOL {
            return Err(Error::InvalidRatio(format!(
                "sum of r_c * p_tr(c) is {mass}, expected 1"
            )));
        }
        Ok(Self { ratios, train_marginal })
    }

    /// Clips negative entries to zero and rescales onto the feasible set.
    /// Entries of classes without training mass are set to zero.
    pub fn project_feasible(raw: &[f64], train_marginal: &LabelMarginal) -> Result<Self> {
        if raw.len() != train_marginal.num_classes() {
            return Err(Error::DimensionMismatch {
                expected: train_marginal.num_classes(),
                found: raw.len(),
            });
        }
        let clipped: Vec<f64> = raw
            .iter()
            .zip(train_marginal.probs())
            .map(|(&r, &p)| if p > 0.0 && r.is_finite() { r.max(0.0) } else { 0.0 })
            .collect();
        let mass: f64 = clipped.iter().zip(train_marginal.probs()).map(|(r, p)| r * p).sum();
        if mass <= 0.0 {
            return Err(Error::InvalidRatio("no feasible mass left after clipping".into()));
        }
        Self::new(clipped.iter().map(|r| r / mass).collect(), train_marginal.clone())
    }

    /// The no-shift ratio, one on every supported class.
    pub fn ones(train_marginal: &LabelMarginal) -> Self {
        let ratios = train_marginal
            .probs()
            .iter()
            .map(|&p| if p > 0.0 { 1.0 } else { 0.0 })
            .collect();
        Self {
            ratios,
            train_marginal: train_marginal.clone(),
        }
    }

    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }

    pub fn train_marginal(&self) -> &LabelMarginal {
        &self.train_marginal
    }

    pub fn num_classes(&self) -> usize {
        self.ratios.len()
    }

    /// The test marginal implied by this ratio, `r ⊙ p_tr` renormalized.
    pub fn implied_test_marginal(&self) -> LabelMarginal {
        let q: Vec<f64> = self
            .ratios
            .iter()
            .zip(self.train_marginal.probs())
            .map(|(r, p)| r * p)
            .collect();
        LabelMarginal::from_weights(&q).expect("feasible ratio always carries unit mass")
    }
}

/// Exact ratio `te / tr` of two label marginals.
pub fn ratio_from_marginals(te: &LabelMarginal, tr: &LabelMarginal) -> Result<RatioVector> {
    if te.num_classes() != tr.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: tr.num_classes(),
            found: te.num_classes(),
        });
    }
    let mut ratios = Vec::with_capacity(te.num_classes());
    for (c, (&q, &p)) in te.probs().iter().zip(tr.probs()).enumerate() {
        if p > 0.0 {
            ratios.push(q / p);
        } else if q > 0.0 {
            return Err(Error::UnsupportedClass { class: c });
        } else {
            ratios.push(0.0);
        }
    }
    RatioVector::new(ratios, tr.clone())
}

/// Features (`n x d`) with integer labels in `[0, m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidDataset("dataset is empty".into()));
        }
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: labels.len(),
                found: features.nrows(),
            });
        }
        if num_classes < 2 {
            return Err(Error::InvalidDataset(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::InvalidDataset(format!(
                "label {y} out of range for {num_classes} classes"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("non-finite feature value".into()));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    /// Always false; datasets hold at least one sample.
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn class_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    pub fn empirical_marginal(&self) -> LabelMarginal {
        LabelMarginal::from_counts(&self.class_counts()).expect("dataset is nonempty")
    }

    /// Rows at `indices`, in that order (repeats allowed).
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let features = self.features.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self::new(features, labels, self.num_classes)
    }

    pub fn with_features(&self, features: Array2<f64>) -> Result<Self> {
        Self::new(features, self.labels.clone(), self.num_classes)
    }

    pub fn into_parts(self) -> (Array2<f64>, Vec<usize>, usize) {
        (self.features, self.labels, self.num_classes)
    }
}

/// An `n x m` row-stochastic matrix of predicted class probabilities.
///
/// Entries are floored at [`PROB_FLOOR`] and rows renormalized on
/// construction, so they are safe to feed into logarithms.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMatrix {
    rows: Array2<f64>,
}

impl ProbabilityMatrix {
    pub fn new(rows: Array2<f64>) -> Result<Self> {
        if rows.nrows() == 0 {
            return Err(Error::InvalidProbabilities("no rows".into()));
        }
        if rows.ncols() < 2 {
            return Err(Error::InvalidProbabilities("need at least 2 classes".into()));
        }
        for (i, row) in rows.outer_iter().enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidProbabilities(format!("row {i} has invalid entries")));
            }
            let s = row.sum();
            if (s - 1.0).abs() > ROW_TOL {
                return Err(Error::InvalidProbabilities(format!("row {i} sums to {s}")));
            }
        }
        Ok(Self::floored(rows))
    }

    /// Builds from nonnegative rows that only need the floor and a
    /// renormalization (e.g. freshly computed softmax outputs).
    pub(crate) fn floored(mut rows: Array2<f64>) -> Self {
        for mut row in rows.outer_iter_mut() {
            row.mapv_inplace(|p| p.max(PROB_FLOOR));
            let s = row.sum();
            row.mapv_inplace(|p| p / s);
        }
        Self { rows }
    }

    pub fn rows(&self) -> ArrayView2<'_, f64> {
        self.rows.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.rows.row(i)
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn num_classes(&self) -> usize {
        self.rows.ncols()
    }

    /// Arg-max class of each row (ties go to the lowest index).
    pub fn hard_labels(&self) -> Vec<usize> {
        self.rows
            .outer_iter()
            .map(|row| {
                let mut best = 0;
                for c in 1..row.len() {
                    if row[c] > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            rows: self.rows.select(Axis(0), indices),
        }
    }
}
