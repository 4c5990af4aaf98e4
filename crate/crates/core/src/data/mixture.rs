use ndarray::{Array2, ArrayView1};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;
use crate::types::{LabelMarginal, LabeledDataset, ProbabilityMatrix};

/// Class-conditional isotropic Gaussians with a shared standard deviation.
///
/// `p(x | y = c) = N(means[c], sigma^2 I)`. The class-conditionals are the
/// same for every train and test draw; only the label marginal moves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureRecord", into = "MixtureRecord")]
pub struct GaussianMixtureSpec {
    means: Array2<f64>,
    sigma: f64,
}

#[derive(Serialize, Deserialize)]
struct MixtureRecord {
    means: Vec<Vec<f64>>,
    sigma: f64,
}

impl TryFrom<MixtureRecord> for GaussianMixtureSpec {
    type Error = Error;

    fn try_from(r: MixtureRecord) -> Result<Self> {
        let m = r.means.len();
        let d = r.means.first().map_or(0, Vec::len);
        if r.means.iter().any(|row| row.len() != d) {
            return Err(Error::InvalidConfig("ragged mixture means".into()));
        }
        let flat: Vec<f64> = r.means.into_iter().flatten().collect();
        let means = Array2::from_shape_vec((m, d), flat).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Self::new(means, r.sigma)
    }
}

impl From<GaussianMixtureSpec> for MixtureRecord {
    fn from(s: GaussianMixtureSpec) -> Self {
        MixtureRecord {
            means: s.means.outer_iter().map(|r| r.to_vec()).collect(),
            sigma: s.sigma,
        }
    }
}

impl GaussianMixtureSpec {
    pub fn new(means: Array2<f64>, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma must be positive, got {sigma}")));
        }
        let m = means.nrows();
        if m < 2 {
            return Err(Error::InvalidConfig(format!("need at least 2 classes, got {m}")));
        }
        if means.ncols() == 0 || means.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("means must be finite with d >= 1".into()));
        }
        for a in 0..m {
            for b in (a + 1)..m {
                if means.row(a) == means.row(b) {
                    return Err(Error::InvalidConfig(format!("classes {a} and {b} share the same mean")));
                }
            }
        }
        Ok(Self { means, sigma })
    }

    /// `m` means with every pair exactly `separation` apart.
    ///
    /// Uses scaled basis vectors when `d >= m`, a regular polygon when
    /// `2 <= d < m` (only adjacent vertices are `separation` apart then) and
    /// evenly spaced points when `d == 1`.
    pub fn equidistant(m: usize, d: usize, separation: f64, sigma: f64) -> Result<Self> {
        if m < 2 || d == 0 {
            return Err(Error::InvalidConfig(format!("invalid shape m={m}, d={d}")));
        }
        if separation.is_nan() || separation <= 0.0 {
            return Err(Error::InvalidConfig("separation must be positive".into()));
        }
        let mut means = Array2::zeros((m, d));
        if d >= m {
            let scale = separation / std::f64::consts::SQRT_2;
            for c in 0..m {
                means[[c, c]] = scale;
            }
        } else if d >= 2 {
            let radius = separation / (2.0 * (std::f64::consts::PI / m as f64).sin());
            for c in 0..m {
                let angle = 2.0 * std::f64::consts::PI * c as f64 / m as f64;
                means[[c, 0]] = radius * angle.cos();
                means[[c, 1]] = radius * angle.sin();
            }
        } else {
            let offset = separation * (m as f64 - 1.0) / 2.0;
            for c in 0..m {
                means[[c, 0]] = separation * c as f64 - offset;
            }
        }
        Self::new(means, sigma)
    }

    pub fn means(&self) -> &Array2<f64> {
        &self.means
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn num_classes(&self) -> usize {
        self.means.nrows()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    fn check_marginal(&self, marginal: &LabelMarginal) -> Result<()> {
        if marginal.num_classes() != self.num_classes() {
            return Err(Error::DimensionMismatch {
                expected: self.num_classes(),
                found: marginal.num_classes(),
            });
        }
        Ok(())
    }
}

/// Draws `n` labeled samples: labels i.i.d. from `marginal`, features from
/// the class-conditional Gaussian.
pub fn gen_gaussian_mixture(
    spec: &GaussianMixtureSpec,
    marginal: &LabelMarginal,
    n: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    spec.check_marginal(marginal)?;
    if n == 0 {
        return Err(Error::InvalidConfig("sample count must be positive".into()));
    }
    let mut rng = rng_from_seed(seed);
    let picker = WeightedIndex::new(marginal.probs()).map_err(|e| Error::InvalidMarginal(e.to_string()))?;
    let d = spec.dim();
    let mut labels = Vec::with_capacity(n);
    let mut features = Array2::zeros((n, d));
    for i in 0..n {
        let y = picker.sample(&mut rng);
        labels.push(y);
        for j in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            features[[i, j]] = spec.means[[y, j]] + spec.sigma * z;
        }
    }
    LabeledDataset::new(features, labels, spec.num_classes())
}

/// Draws exactly `counts[c]` samples of each class `c`, in class order.
pub fn gen_gaussian_mixture_counts(spec: &GaussianMixtureSpec, counts: &[usize], seed: u64) -> Result<LabeledDataset> {
    if counts.len() != spec.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: spec.num_classes(),
            found: counts.len(),
        });
    }
    let n: usize = counts.iter().sum();
    if n == 0 {
        return Err(Error::InvalidConfig("sample count must be positive".into()));
    }
    let mut rng = rng_from_seed(seed);
    let d = spec.dim();
    let mut labels = Vec::with_capacity(n);
    let mut features = Array2::zeros((n, d));
    for (y, &k) in counts.iter().enumerate() {
        for _ in 0..k {
            let i = labels.len();
            labels.push(y);
            for j in 0..d {
                let z: f64 = StandardNormal.sample(&mut rng);
                features[[i, j]] = spec.means[[y, j]] + spec.sigma * z;
            }
        }
    }
    LabeledDataset::new(features, labels, spec.num_classes())
}

fn posterior_into(spec: &GaussianMixtureSpec, marginal: &LabelMarginal, x: ArrayView1<'_, f64>, out: &mut [f64]) {
    let inv_two_var = 1.0 / (2.0 * spec.sigma * spec.sigma);
    let mut max_log = f64::NEG_INFINITY;
    for (c, slot) in out.iter_mut().enumerate() {
        let prior = marginal.get(c);
        *slot = if prior > 0.0 {
            let sq: f64 = spec
                .means
                .row(c)
                .iter()
                .zip(x.iter())
                .map(|(mu, v)| (v - mu) * (v - mu))
                .sum();
            prior.ln() - sq * inv_two_var
        } else {
            f64::NEG_INFINITY
        };
        max_log = max_log.max(*slot);
    }
    let mut total = 0.0;
    for slot in out.iter_mut() {
        *slot = (*slot - max_log).exp();
        total += *slot;
    }
    for slot in out.iter_mut() {
        *slot /= total;
    }
}

/// Bayes posterior `p(y | x)` under the mixture with label prior `marginal`.
pub fn true_posterior(
    spec: &GaussianMixtureSpec,
    marginal: &LabelMarginal,
    x: ArrayView1<'_, f64>,
) -> Result<Vec<f64>> {
    spec.check_marginal(marginal)?;
    if x.len() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            found: x.len(),
        });
    }
    let mut out = vec![0.0; spec.num_classes()];
    posterior_into(spec, marginal, x, &mut out);
    Ok(out)
}

/// Bayes posteriors for every row of `features`, as a floored probability
/// matrix. This is the perfectly calibrated predictor.
pub fn posterior_matrix(
    spec: &GaussianMixtureSpec,
    marginal: &LabelMarginal,
    features: ndarray::ArrayView2<'_, f64>,
) -> Result<ProbabilityMatrix> {
    spec.check_marginal(marginal)?;
    if features.ncols() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            found: features.ncols(),
        });
    }
    let m = spec.num_classes();
    let mut rows = Array2::zeros((features.nrows(), m));
    let mut buf = vec![0.0; m];
    for (i, x) in features.outer_iter().enumerate() {
        posterior_into(spec, marginal, x, &mut buf);
        for c in 0..m {
            rows[[i, c]] = buf[c];
        }
    }
    Ok(ProbabilityMatrix::floored(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn two_class_line() -> GaussianMixtureSpec {
        GaussianMixtureSpec::new(array![[-1.0], [1.0]], 1.0).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(GaussianMixtureSpec::new(array![[0.0], [0.0]], 1.0).is_err());
        assert!(GaussianMixtureSpec::new(array![[0.0], [1.0]], 0.0).is_err());
        assert!(GaussianMixtureSpec::new(array![[0.0]], 1.0).is_err());
    }

    #[test]
    fn equidistant_layouts() {
        for (m, d) in [(3, 5), (3, 2), (4, 2), (3, 1)] {
            let s = GaussianMixtureSpec::equidistant(m, d, 3.0, 1.0).unwrap();
            let dist = |a: usize, b: usize| {
                let diff = &s.means().row(a) - &s.means().row(b);
                diff.dot(&diff).sqrt()
            };
            assert!((dist(0, 1) - 3.0).abs() < 1e-12, "m={m} d={d}");
            if d >= m || m == 3 && d >= 2 {
                assert!((dist(0, 2) - 3.0).abs() < 1e-12, "m={m} d={d}");
            }
        }
    }

    #[test]
    fn exact_counts() {
        let d = gen_gaussian_mixture_counts(&two_class_line(), &[3, 5], 1).unwrap();
        assert_eq!(d.class_counts(), vec![3, 5]);
        assert!(gen_gaussian_mixture_counts(&two_class_line(), &[3], 1).is_err());
        assert!(gen_gaussian_mixture_counts(&two_class_line(), &[0, 0], 1).is_err());
    }

    #[test]
    fn degenerate_marginal_gives_single_class() {
        let marginal = LabelMarginal::new(vec![1.0, 0.0]).unwrap();
        let d = gen_gaussian_mixture(&two_class_line(), &marginal, 100, 3).unwrap();
        assert!(d.labels().iter().all(|&y| y == 0));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = GaussianMixtureSpec::equidistant(3, 4, 2.0, 1.0).unwrap();
        let marginal = LabelMarginal::uniform(3).unwrap();
        let a = gen_gaussian_mixture(&spec, &marginal, 50, 11).unwrap();
        let b = gen_gaussian_mixture(&spec, &marginal, 50, 11).unwrap();
        assert_eq!(a, b);
        let c = gen_gaussian_mixture(&spec, &marginal, 50, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_samples_rejected() {
        let marginal = LabelMarginal::uniform(2).unwrap();
        assert!(gen_gaussian_mixture(&two_class_line(), &marginal, 0, 0).is_err());
    }

    #[test]
    fn label_frequencies_follow_marginal() {
        let marginal = LabelMarginal::uniform(2).unwrap();
        let d = gen_gaussian_mixture(&two_class_line(), &marginal, 100_000, 5).unwrap();
        let counts = d.class_counts();
        for c in counts {
            assert!((c as f64 / 100_000.0 - 0.5).abs() < 0.01);
        }
    }

    #[test]
    fn posterior_symmetry_and_degenerate_prior() {
        let spec = two_class_line();
        let uniform = LabelMarginal::uniform(2).unwrap();
        let p = true_posterior(&spec, &uniform, array![0.0].view()).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
        let point = LabelMarginal::new(vec![1.0, 0.0]).unwrap();
        for x in [-3.0, 0.2, 7.0] {
            let p = true_posterior(&spec, &point, array![x].view()).unwrap();
            assert_eq!(p, vec![1.0, 0.0]);
        }
    }

    #[test]
    fn posterior_matches_density_ratio_oracle() {
        // Independent route: evaluate both normal densities directly.
        let pdf = |x: f64, mu: f64| (-(x - mu) * (x - mu) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let oracle = pdf(0.5, 1.0) / (pdf(0.5, 1.0) + pdf(0.5, -1.0));
        let logistic = 1.0 / (1.0 + (-2.0f64 * 0.5).exp());
        let spec = two_class_line();
        let uniform = LabelMarginal::uniform(2).unwrap();
        let p = true_posterior(&spec, &uniform, array![0.5].view()).unwrap();
        assert!((p[1] - oracle).abs() < 1e-12);
        assert!((p[1] - logistic).abs() < 1e-12);
        assert!((p[1] - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn posterior_rows_are_normalized_and_equivariant() {
        let spec = GaussianMixtureSpec::equidistant(4, 4, 1.5, 0.8).unwrap();
        let marginal = LabelMarginal::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let perm = [2usize, 0, 3, 1];
        let pmeans = Array2::from_shape_fn((4, 4), |(c, j)| spec.means()[[perm[c], j]]);
        let pspec = GaussianMixtureSpec::new(pmeans, 0.8).unwrap();
        let pmarg = LabelMarginal::new(perm.iter().map(|&c| marginal.get(c)).collect()).unwrap();
        let x = array![0.3, -0.2, 1.1, 0.5];
        let p = true_posterior(&spec, &marginal, x.view()).unwrap();
        let q = true_posterior(&pspec, &pmarg, x.view()).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for c in 0..4 {
            assert!((q[c] - p[perm[c]]).abs() < 1e-12);
        }
    }
}
