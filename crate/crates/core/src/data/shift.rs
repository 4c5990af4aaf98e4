use rand::distr::{weighted::WeightedIndex, Distribution, Uniform};
use rand::Rng;
use rand_distr::{Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use super::mixture::{gen_gaussian_mixture, GaussianMixtureSpec};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from_seed};
use crate::types::{LabelMarginal, LabeledDataset};

/// Dirichlet label-shift protocol: the test marginal is drawn from
/// `Dirichlet(alpha * 1_m)` and `n_te` test samples are then drawn from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub alpha: f64,
    pub n_te: usize,
    pub seed: u64,
}

impl ShiftSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if self.n_te == 0 {
            return Err(Error::InvalidConfig("n_te must be at least 1".into()));
        }
        Ok(())
    }
}

/// A drawn test set together with the marginal it was sampled from.
#[derive(Debug, Clone)]
pub struct ShiftedSample {
    /// The Dirichlet draw that parameterized the multinomial.
    pub drawn_marginal: LabelMarginal,
    pub data: LabeledDataset,
}

impl ShiftedSample {
    /// Label frequencies actually realized in the sample.
    pub fn realized_marginal(&self) -> LabelMarginal {
        self.data.empirical_marginal()
    }
}

/// One draw from `Dirichlet(alpha * 1_m)` via normalized Gamma variates.
pub fn sample_dirichlet_marginal(alpha: f64, m: usize, seed: u64) -> Result<LabelMarginal> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidConfig(format!("alpha must be positive, got {alpha}")));
    }
    if m < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 classes, got {m}")));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut rng = rng_from_seed(seed);
    loop {
        let draws: Vec<f64> = (0..m).map(|_| gamma.sample(&mut rng)).collect();
        // All-zero draws only happen through underflow at tiny alpha.
        if draws.iter().sum::<f64>() > 0.0 {
            return LabelMarginal::from_weights(&draws);
        }
    }
}

/// Draws a Dirichlet-shifted test set from the mixture.
pub fn draw_shifted_mixture(spec: &GaussianMixtureSpec, shift: &ShiftSpec) -> Result<ShiftedSample> {
    shift.validate()?;
    let drawn_marginal = sample_dirichlet_marginal(shift.alpha, spec.num_classes(), derive_seed(shift.seed, &[0]))?;
    let data = gen_gaussian_mixture(spec, &drawn_marginal, shift.n_te, derive_seed(shift.seed, &[1]))?;
    Ok(ShiftedSample { drawn_marginal, data })
}

/// Draws a Dirichlet-shifted test set by label-conditional resampling of a pool.
pub fn draw_shifted_pool(pool: &LabeledDataset, shift: &ShiftSpec) -> Result<ShiftedSample> {
    shift.validate()?;
    let counts = pool.class_counts();
    let m = pool.num_classes();
    // Restrict the draw to classes the pool can serve.
    let raw = sample_dirichlet_marginal(shift.alpha, m, derive_seed(shift.seed, &[0]))?;
    let masked: Vec<f64> = raw
        .probs()
        .iter()
        .zip(&counts)
        .map(|(&p, &c)| if c > 0 { p } else { 0.0 })
        .collect();
    let drawn_marginal = LabelMarginal::from_weights(&masked)?;
    let data = resample_by_marginal(pool, &drawn_marginal, shift.n_te, derive_seed(shift.seed, &[1]))?;
    Ok(ShiftedSample { drawn_marginal, data })
}

/// Label-conditional resampling: labels i.i.d. from `marginal`, each feature
/// vector drawn uniformly with replacement from the pool's samples of that
/// label, so `p(x | y)` is the pool's empirical class-conditional.
pub fn resample_by_marginal(
    pool: &LabeledDataset,
    marginal: &LabelMarginal,
    n: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    if n == 0 {
        return Err(Error::InvalidConfig("sample count must be positive".into()));
    }
    if marginal.num_classes() != pool.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: pool.num_classes(),
            found: marginal.num_classes(),
        });
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); pool.num_classes()];
    for (i, &y) in pool.labels().iter().enumerate() {
        by_class[y].push(i);
    }
    for (c, members) in by_class.iter().enumerate() {
        if members.is_empty() && marginal.get(c) > 0.0 {
            return Err(Error::UnsupportedClass { class: c });
        }
    }
    let picker = WeightedIndex::new(marginal.probs()).map_err(|e| Error::InvalidMarginal(e.to_string()))?;
    let mut rng = rng_from_seed(seed);
    let indices: Vec<usize> = (0..n)
        .map(|_| {
            let members = &by_class[picker.sample(&mut rng)];
            members[rng.random_range(0..members.len())]
        })
        .collect();
    pool.select(&indices)
}

/// Relaxed label shift: with probability `apply_prob` per sample, add
/// isotropic Gaussian noise with a standard deviation drawn uniformly from
/// `noise_sigma_range` plus a constant offset drawn uniformly from
/// `[-brightness_delta, brightness_delta]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelaxedShiftSpec {
    pub apply_prob: f64,
    pub noise_sigma_range: (f64, f64),
    pub brightness_delta: f64,
    pub seed: u64,
}

impl RelaxedShiftSpec {
    /// Mild setting: 30% of samples, sigma in [0.1, 0.5], offset up to 0.1.
    pub fn relaxed(seed: u64) -> Self {
        Self {
            apply_prob: 0.3,
            noise_sigma_range: (0.1, 0.5),
            brightness_delta: 0.1,
            seed,
        }
    }

    /// Stronger setting: 50% of samples, sigma in [0.1, 0.7], offset up to 0.2.
    pub fn relax_m(seed: u64) -> Self {
        Self {
            apply_prob: 0.5,
            noise_sigma_range: (0.1, 0.7),
            brightness_delta: 0.2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.noise_sigma_range;
        if !(0.0..=1.0).contains(&self.apply_prob) {
            return Err(Error::InvalidConfig(format!(
                "apply_prob {} not in [0,1]",
                self.apply_prob
            )));
        }
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::InvalidConfig(format!("bad noise range ({lo}, {hi})")));
        }
        if !(self.brightness_delta >= 0.0 && self.brightness_delta.is_finite()) {
            return Err(Error::InvalidConfig("brightness_delta must be nonnegative".into()));
        }
        Ok(())
    }
}

pub fn perturb_relaxed(data: &LabeledDataset, spec: &RelaxedShiftSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let mut features = data.features().to_owned();
    if spec.apply_prob == 0.0 {
        return data.with_features(features);
    }
    let (lo, hi) = spec.noise_sigma_range;
    let sigma_dist = Uniform::new_inclusive(lo, hi).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let delta = spec.brightness_delta;
    let mut rng = rng_from_seed(spec.seed);
    for mut row in features.outer_iter_mut() {
        if !rng.random_bool(spec.apply_prob) {
            continue;
        }
        let sigma = sigma_dist.sample(&mut rng);
        let offset = if delta > 0.0 {
            rng.random_range(-delta..=delta)
        } else {
            0.0
        };
        for v in row.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += sigma * z + offset;
        }
    }
    data.with_features(features)
}
