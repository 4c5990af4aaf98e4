//! Experiment runner for the `labelshift` library.
//!
//! Each experiment kind reads an [`ExperimentConfig`] and writes CSV and
//! JSON files into an output directory. Every file carries the resolved
//! config, so a result can be traced back to the run that produced it.

pub mod config;
pub mod error;
pub mod federate;
pub mod output;
pub mod sweep;

use std::path::{Path, PathBuf};

pub use config::{DataSource, EstimatorSpec, ExperimentConfig, ExperimentKind, RelaxedPreset};
pub use error::{CliError, Result};

/// Environment variable that overrides the configured output directory.
pub const OUT_ENV: &str = "LABELSHIFT_OUT";

pub const DEFAULT_OUT: &str = "results";

/// Output directory precedence: command line (or the environment), then
/// the config file, then [`DEFAULT_OUT`].
pub fn resolve_out_dir(flag: Option<PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    flag.or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

/// Runs the experiment named by `cfg.kind`.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    match cfg.kind {
        ExperimentKind::SweepAlpha
        | ExperimentKind::SweepSize
        | ExperimentKind::RateCheck
        | ExperimentKind::RelaxedSweep => sweep::run_sweep(cfg, out).map(drop),
        ExperimentKind::EstimateOnce => sweep::run_estimate_once(cfg, out).map(drop),
        ExperimentKind::Federate => federate::run_federate(cfg, out).map(drop),
    }
}
