//! JSON experiment configuration.
//!
//! One document drives every subcommand. Fields that only matter for some
//! kinds are optional and checked by [`ExperimentConfig::validate`].

use std::path::{Path, PathBuf};

use labelshift::data::{GaussianMixtureSpec, RelaxedShiftSpec};
use labelshift::estimators::EstimatorOptions;
use labelshift::federated::FederationConfig;
use labelshift::predictor::PredictorConfig;
use labelshift::LabelMarginal;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    SweepAlpha,
    SweepSize,
    RateCheck,
    EstimateOnce,
    Federate,
    RelaxedSweep,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::SweepAlpha => "sweep_alpha",
            ExperimentKind::SweepSize => "sweep_size",
            ExperimentKind::RateCheck => "rate_check",
            ExperimentKind::EstimateOnce => "estimate_once",
            ExperimentKind::Federate => "federate",
            ExperimentKind::RelaxedSweep => "relaxed_sweep",
        }
    }
}

/// Where the class-conditionals come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum DataSource {
    /// A mixture given by explicit means and a shared sigma.
    Synthetic { mixture: GaussianMixtureSpec },
    /// `m` means spaced `separation` apart in `d` dimensions.
    Equidistant {
        num_classes: usize,
        dim: usize,
        separation: f64,
        sigma: f64,
    },
    /// IDX files; train and test sets are resampled from these pools by label.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default = "ten")]
        num_classes: usize,
    },
}

fn ten() -> usize {
    10
}

impl DataSource {
    /// The mixture behind a synthetic source, `None` for IDX data.
    pub fn mixture(&self) -> Result<Option<GaussianMixtureSpec>> {
        Ok(match self {
            DataSource::Synthetic { mixture } => Some(mixture.clone()),
            DataSource::Equidistant {
                num_classes,
                dim,
                separation,
                sigma,
            } => Some(GaussianMixtureSpec::equidistant(
                *num_classes,
                *dim,
                *separation,
                *sigma,
            )?),
            DataSource::Idx { .. } => None,
        })
    }

    /// Resolves relative IDX paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        if let DataSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            ..
        } = self
        {
            for p in [train_images, train_labels, test_images, test_labels] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }
}

/// One estimator in a sweep. Estimators with equal predictor settings and
/// holdout fraction share a trained predictor within a trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub name: String,
    #[serde(default)]
    pub predictor: PredictorConfig,
    #[serde(default)]
    pub options: EstimatorOptions,
    /// Use the exact mixture posterior instead of a trained predictor.
    #[serde(default)]
    pub oracle: bool,
}

/// A named feature perturbation for relaxed sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxedPreset {
    pub name: String,
    pub apply_prob: f64,
    pub noise_sigma_range: (f64, f64),
    pub brightness_delta: f64,
}

impl RelaxedPreset {
    pub fn relaxed() -> Self {
        Self::from_spec("relaxed", RelaxedShiftSpec::relaxed(0))
    }

    pub fn relax_m() -> Self {
        Self::from_spec("relax_m", RelaxedShiftSpec::relax_m(0))
    }

    fn from_spec(name: &str, s: RelaxedShiftSpec) -> Self {
        Self {
            name: name.into(),
            apply_prob: s.apply_prob,
            noise_sigma_range: s.noise_sigma_range,
            brightness_delta: s.brightness_delta,
        }
    }

    pub fn spec(&self, seed: u64) -> RelaxedShiftSpec {
        RelaxedShiftSpec {
            apply_prob: self.apply_prob,
            noise_sigma_range: self.noise_sigma_range,
            brightness_delta: self.brightness_delta,
            seed,
        }
    }
}

fn default_presets() -> Vec<RelaxedPreset> {
    vec![RelaxedPreset::relaxed(), RelaxedPreset::relax_m()]
}

fn default_alpha_grid() -> Vec<f64> {
    // 20 log-spaced values over [0.1, 10].
    (0..20).map(|i| 10f64.powf(-1.0 + 2.0 * i as f64 / 19.0)).collect()
}

fn default_n_te_grid() -> Vec<usize> {
    vec![200, 500, 1000, 2000, 5000, 10_000]
}

fn default_trials() -> usize {
    100
}

fn default_n_tr() -> usize {
    5000
}

fn default_n_te() -> usize {
    5000
}

fn default_alpha() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub source: DataSource,
    #[serde(default)]
    pub estimators: Vec<EstimatorSpec>,
    /// Training label marginal; uniform when absent.
    #[serde(default)]
    pub train_marginal: Option<LabelMarginal>,
    #[serde(default = "default_n_tr")]
    pub n_tr: usize,
    /// Test size for alpha sweeps and single estimates.
    #[serde(default = "default_n_te")]
    pub n_te: usize,
    #[serde(default = "default_alpha_grid")]
    pub alpha_grid: Vec<f64>,
    /// Fixed alpha for size sweeps and single estimates.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_n_te_grid")]
    pub n_te_grid: Vec<usize>,
    #[serde(default = "default_presets")]
    pub relaxed_presets: Vec<RelaxedPreset>,
    #[serde(default)]
    pub federation: Option<FederationConfig>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative IDX paths are taken relative to it.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(dir) = path.parent() {
            cfg.source.resolve_paths(dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.n_tr == 0 || self.n_te == 0 {
            return bad("n_tr and n_te must be at least 1".into());
        }
        if self.kind == ExperimentKind::Federate {
            return match &self.federation {
                Some(f) => {
                    f.validate()?;
                    Ok(())
                }
                None => bad("federate needs a `federation` section".into()),
            };
        }
        if self.estimators.is_empty() {
            return bad("estimator list is empty".into());
        }
        for (i, e) in self.estimators.iter().enumerate() {
            if self.estimators[..i].iter().any(|o| o.name == e.name) {
                return bad(format!("duplicate estimator name {:?}", e.name));
            }
            e.predictor.validate()?;
            e.options.validate()?;
            if e.oracle && matches!(self.source, DataSource::Idx { .. }) {
                return bad(format!(
                    "estimator {:?}: oracle posteriors need a synthetic source",
                    e.name
                ));
            }
        }
        match self.kind {
            ExperimentKind::SweepAlpha | ExperimentKind::RelaxedSweep if self.alpha_grid.is_empty() => {
                return bad("alpha_grid is empty".into());
            }
            ExperimentKind::SweepSize | ExperimentKind::RateCheck if self.n_te_grid.is_empty() => {
                return bad("n_te_grid is empty".into());
            }
            ExperimentKind::RateCheck if self.n_te_grid.len() < 3 => {
                return bad("rate_check needs at least 3 sizes".into());
            }
            ExperimentKind::RelaxedSweep if self.relaxed_presets.is_empty() => {
                return bad("relaxed_presets is empty".into());
            }
            _ => {}
        }
        if self
            .alpha_grid
            .iter()
            .chain([&self.alpha])
            .any(|a| !(*a > 0.0 && a.is_finite()))
        {
            return bad("alpha values must be positive".into());
        }
        if self.n_te_grid.contains(&0) {
            return bad("n_te_grid values must be positive".into());
        }
        for p in &self.relaxed_presets {
            p.spec(0).validate()?;
        }
        if let (Some(tr), Some(mix)) = (&self.train_marginal, self.source.mixture()?) {
            if tr.num_classes() != mix.num_classes() {
                return bad(format!(
                    "train_marginal has {} classes, mixture has {}",
                    tr.num_classes(),
                    mix.num_classes()
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        r#"{
            "kind": "sweep_alpha",
            "source": {"type": "equidistant", "num_classes": 3, "dim": 2, "separation": 2.0, "sigma": 1.0},
            "estimators": [{"name": "vrls"}]
        }"#
    }

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::from_json(minimal()).unwrap();
        assert_eq!(cfg.trials, 100);
        assert_eq!(cfg.alpha_grid.len(), 20);
        assert!((cfg.alpha_grid[0] - 0.1).abs() < 1e-12);
        assert!((cfg.alpha_grid[19] - 10.0).abs() < 1e-9);
        assert_eq!(cfg.estimators[0].predictor.zeta, 1.0);
        assert_eq!(cfg.relaxed_presets.len(), 2);
    }

    #[test]
    fn round_trips() {
        let cfg = ExperimentConfig::from_json(minimal()).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_values() {
        let mut cfg = ExperimentConfig::from_json(minimal()).unwrap();
        cfg.trials = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::from_json(minimal()).unwrap();
        cfg.alpha_grid.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::from_json(minimal()).unwrap();
        cfg.estimators.push(cfg.estimators[0].clone());
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::from_json(minimal()).unwrap();
        cfg.kind = ExperimentKind::Federate;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn idx_paths_resolve_against_config_dir() {
        let mut src = DataSource::Idx {
            train_images: "a".into(),
            train_labels: "/abs/b".into(),
            test_images: "c".into(),
            test_labels: "d".into(),
            num_classes: 10,
        };
        src.resolve_paths(Path::new("/cfg"));
        match src {
            DataSource::Idx {
                train_images,
                train_labels,
                ..
            } => {
                assert_eq!(train_images, PathBuf::from("/cfg/a"));
                assert_eq!(train_labels, PathBuf::from("/abs/b"));
            }
            _ => unreachable!(),
        }
    }
}
