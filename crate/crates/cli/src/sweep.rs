//! Repeated-trial estimation sweeps over alpha, test size and relaxed
//! feature perturbations.
//!
//! Trial `t` of cell `c` draws everything from `derive_seed(seed, [c, t])`:
//! the training set from child `[0]`, the shifted test set from `[1]`, the
//! predictor initialization from `[2, predictor.seed]` and the relaxed
//! perturbation from `[3]`. Results therefore do not depend on how trials
//! are scheduled across worker threads.

use std::collections::BTreeMap;
use std::path::Path;

use labelshift::data::{
    draw_shifted_mixture, draw_shifted_pool, gen_gaussian_mixture, load_idx_with_classes, perturb_relaxed,
    posterior_matrix, resample_by_marginal, GaussianMixtureSpec, ShiftSpec, ShiftedSample,
};
use labelshift::estimators::{
    estimate_bbse, estimate_mlls_em, estimate_mlls_gd, estimate_rlls, EstimateReport, FittedEstimate, Method,
};
use labelshift::metrics::{loglog_slope, summarize};
use labelshift::seed::derive_seed;
use labelshift::{ratio_from_marginals, LabelMarginal, LabeledDataset};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{DataSource, EstimatorSpec, ExperimentConfig, ExperimentKind, RelaxedPreset};
use crate::error::{CliError, Result};
use crate::output::{fmt_opt, write_csv, write_json, MSE_NORMALIZATION, SCHEMA_VERSION};

/// Accepted range for the log-log slope in rate checks.
pub const RATE_SLOPE_RANGE: (f64, f64) = (-1.4, -0.6);

/// Materialized class-conditionals.
pub enum Source {
    Mixture(GaussianMixtureSpec),
    Pools {
        train: LabeledDataset,
        test: LabeledDataset,
    },
}

impl Source {
    pub fn load(src: &DataSource) -> Result<Self> {
        if let Some(mix) = src.mixture()? {
            return Ok(Source::Mixture(mix));
        }
        match src {
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                num_classes,
            } => Ok(Source::Pools {
                train: load_idx_with_classes(train_images, train_labels, *num_classes)?,
                test: load_idx_with_classes(test_images, test_labels, *num_classes)?,
            }),
            _ => unreachable!("synthetic sources always have a mixture"),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Source::Mixture(m) => m.num_classes(),
            Source::Pools { train, .. } => train.num_classes(),
        }
    }

    pub fn draw_train(&self, marginal: &LabelMarginal, n: usize, seed: u64) -> Result<LabeledDataset> {
        Ok(match self {
            Source::Mixture(m) => gen_gaussian_mixture(m, marginal, n, seed)?,
            Source::Pools { train, .. } => resample_by_marginal(train, marginal, n, seed)?,
        })
    }

    pub fn draw_test(&self, shift: &ShiftSpec) -> Result<ShiftedSample> {
        Ok(match self {
            Source::Mixture(m) => draw_shifted_mixture(m, shift)?,
            Source::Pools { test, .. } => draw_shifted_pool(test, shift)?,
        })
    }
}

/// Outcome of one estimator on one trial under one feature variant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRow {
    pub cell: usize,
    pub alpha: f64,
    pub n_te: usize,
    pub preset: Option<String>,
    pub estimator: String,
    pub trial: usize,
    pub mse: Option<f64>,
    pub error: Option<String>,
}

/// Estimate and ground truth for one estimator.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateOutcome {
    pub estimator: String,
    pub report: EstimateReport,
    pub truth: Vec<f64>,
    pub mse: f64,
}

struct TrialSetup<'a> {
    source: &'a Source,
    train_marginal: LabelMarginal,
    n_tr: usize,
    estimators: &'a [EstimatorSpec],
}

struct TrialDraw {
    train: LabeledDataset,
    shifted: ShiftedSample,
}

impl TrialSetup<'_> {
    fn new<'a>(cfg: &'a ExperimentConfig, source: &'a Source) -> Result<TrialSetup<'a>> {
        let train_marginal = match &cfg.train_marginal {
            Some(m) => m.clone(),
            None => LabelMarginal::uniform(source.num_classes())?,
        };
        if train_marginal.num_classes() != source.num_classes() {
            return Err(CliError::Config(format!(
                "train_marginal has {} classes, data has {}",
                train_marginal.num_classes(),
                source.num_classes()
            )));
        }
        Ok(TrialSetup {
            source,
            train_marginal,
            n_tr: cfg.n_tr,
            estimators: &cfg.estimators,
        })
    }

    fn draw(&self, trial_seed: u64, alpha: f64, n_te: usize) -> Result<TrialDraw> {
        let train = self
            .source
            .draw_train(&self.train_marginal, self.n_tr, derive_seed(trial_seed, &[0]))?;
        let shifted = self.source.draw_test(&ShiftSpec {
            alpha,
            n_te,
            seed: derive_seed(trial_seed, &[1]),
        })?;
        Ok(TrialDraw { train, shifted })
    }

    /// Runs every estimator on each feature variant of the test set. The
    /// trained predictors are shared across variants and across estimators
    /// with identical training settings.
    fn run(&self, trial_seed: u64, draw: &TrialDraw, variants: &[LabeledDataset]) -> Vec<Vec<Result<EstimateOutcome>>> {
        let realized = draw.shifted.realized_marginal();
        let mut fitted: BTreeMap<String, Result<FittedEstimate>> = BTreeMap::new();
        let mut out: Vec<Vec<_>> = variants
            .iter()
            .map(|_| Vec::with_capacity(self.estimators.len()))
            .collect();
        for spec in self.estimators {
            let mut pcfg = spec.predictor.clone();
            pcfg.seed = derive_seed(trial_seed, &[2, spec.predictor.seed]);
            if spec.oracle {
                for (v, test) in variants.iter().enumerate() {
                    out[v].push(self.oracle_estimate(spec, &draw.train, test, &realized));
                }
                continue;
            }
            let key = format!(
                "{}|{}",
                serde_json::to_string(&pcfg).unwrap_or_default(),
                spec.options.holdout_fraction
            );
            let fit = fitted
                .entry(key)
                .or_insert_with(|| FittedEstimate::fit(&draw.train, &pcfg, &spec.options).map_err(Into::into));
            for (v, test) in variants.iter().enumerate() {
                let result = match fit {
                    Ok(f) => finish(
                        spec,
                        f.estimate(test.features(), &spec.options),
                        &realized,
                        &f.train_marginal,
                    ),
                    Err(e) => Err(CliError::Trial(e.to_string())),
                };
                out[v].push(result);
            }
        }
        out
    }

    fn oracle_estimate(
        &self,
        spec: &EstimatorSpec,
        train: &LabeledDataset,
        test: &LabeledDataset,
        realized: &LabelMarginal,
    ) -> Result<EstimateOutcome> {
        let Source::Mixture(mix) = self.source else {
            return Err(CliError::Config("oracle posteriors need a synthetic source".into()));
        };
        let tr = &self.train_marginal;
        let preds_te = posterior_matrix(mix, tr, test.features())?;
        let report = match spec.options.method {
            Method::MllsEm => estimate_mlls_em(&preds_te, tr, &spec.options),
            Method::MllsGd => estimate_mlls_gd(&preds_te, tr, &spec.options),
            Method::Bbse | Method::Rlls => {
                let preds_val = posterior_matrix(mix, tr, train.features())?;
                if spec.options.method == Method::Bbse {
                    estimate_bbse(&preds_val, train.labels(), &preds_te, tr)
                } else {
                    estimate_rlls(&preds_val, train.labels(), &preds_te, tr, spec.options.rlls_lambda)
                }
            }
        };
        finish(spec, report, realized, tr)
    }
}

fn finish(
    spec: &EstimatorSpec,
    report: labelshift::Result<EstimateReport>,
    realized: &LabelMarginal,
    tr: &LabelMarginal,
) -> Result<EstimateOutcome> {
    let report = report?;
    let truth = ratio_from_marginals(realized, tr)?;
    let mse = labelshift::metrics::ratio_mse(report.ratio.ratios(), truth.ratios())?;
    Ok(EstimateOutcome {
        estimator: spec.name.clone(),
        report,
        truth: truth.ratios().to_vec(),
        mse,
    })
}

/// One (alpha, n_te) cell of a sweep.
#[derive(Debug, Clone, Copy)]
struct Cell {
    alpha: f64,
    n_te: usize,
}

fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    match cfg.kind {
        ExperimentKind::SweepSize | ExperimentKind::RateCheck => cfg
            .n_te_grid
            .iter()
            .map(|&n_te| Cell { alpha: cfg.alpha, n_te })
            .collect(),
        ExperimentKind::EstimateOnce => vec![Cell {
            alpha: cfg.alpha,
            n_te: cfg.n_te,
        }],
        _ => cfg
            .alpha_grid
            .iter()
            .map(|&alpha| Cell { alpha, n_te: cfg.n_te })
            .collect(),
    }
}

/// Runs every trial of a sweep on the current rayon pool. Rows come back
/// ordered by cell, trial, preset and estimator.
pub fn run_trials(cfg: &ExperimentConfig) -> Result<Vec<TrialRow>> {
    cfg.validate()?;
    let source = Source::load(&cfg.source)?;
    let setup = TrialSetup::new(cfg, &source)?;
    let presets: Vec<Option<&RelaxedPreset>> = if cfg.kind == ExperimentKind::RelaxedSweep {
        cfg.relaxed_presets.iter().map(Some).collect()
    } else {
        vec![None]
    };
    let cells = cells(cfg);
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..cfg.trials).map(move |t| (c, t)))
        .collect();
    let per_job: Vec<Vec<TrialRow>> = jobs
        .par_iter()
        .map(|&(c, t)| {
            let cell = cells[c];
            let trial_seed = derive_seed(cfg.seed, &[c as u64, t as u64]);
            let row = |preset: Option<&RelaxedPreset>, estimator: &str, r: std::result::Result<f64, String>| TrialRow {
                cell: c,
                alpha: cell.alpha,
                n_te: cell.n_te,
                preset: preset.map(|p| p.name.clone()),
                estimator: estimator.to_string(),
                trial: t,
                mse: r.as_ref().ok().copied(),
                error: r.err(),
            };
            let outcome = setup.draw(trial_seed, cell.alpha, cell.n_te).and_then(|draw| {
                let variants = presets
                    .iter()
                    .map(|p| match p {
                        Some(p) => perturb_relaxed(&draw.shifted.data, &p.spec(derive_seed(trial_seed, &[3]))),
                        None => Ok(draw.shifted.data.clone()),
                    })
                    .collect::<labelshift::Result<Vec<_>>>()?;
                Ok(setup.run(trial_seed, &draw, &variants))
            });
            let mut rows = Vec::new();
            match outcome {
                Ok(per_variant) => {
                    for (p, results) in presets.iter().zip(per_variant) {
                        for (spec, r) in cfg.estimators.iter().zip(results) {
                            rows.push(row(*p, &spec.name, r.map(|o| o.mse).map_err(|e| e.to_string())));
                        }
                    }
                }
                Err(e) => {
                    for p in &presets {
                        for spec in &cfg.estimators {
                            rows.push(row(*p, &spec.name, Err(e.to_string())));
                        }
                    }
                }
            }
            rows
        })
        .collect();
    Ok(per_job.into_iter().flatten().collect())
}

/// Per-cell statistics in a sweep summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub alpha: f64,
    pub n_te: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub estimator: String,
    /// Trials that produced an MSE.
    pub count: usize,
    pub failures: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub median: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub schema_version: u32,
    pub kind: &'static str,
    pub mse_normalization: &'static str,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub cells: Vec<CellSummary>,
    /// Log-log slope of mean MSE against test size, per estimator.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub slopes: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slope_range: Option<(f64, f64)>,
}

pub fn summarize_rows(cfg: &ExperimentConfig, rows: &[TrialRow]) -> Result<SweepSummary> {
    type Key = (usize, Option<String>, String);
    let mut groups: Vec<(Key, Vec<&TrialRow>)> = Vec::new();
    for row in rows {
        let key = (row.cell, row.preset.clone(), row.estimator.clone());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, g)) => g.push(row),
            None => groups.push((key, vec![row])),
        }
    }
    let mut cells = Vec::with_capacity(groups.len());
    for ((_, preset, estimator), g) in groups {
        let values: Vec<f64> = g.iter().filter_map(|r| r.mse).collect();
        let stats = if values.is_empty() {
            None
        } else {
            Some(summarize(&values)?)
        };
        cells.push(CellSummary {
            alpha: g[0].alpha,
            n_te: g[0].n_te,
            preset,
            estimator,
            count: values.len(),
            failures: g.len() - values.len(),
            mean: stats.as_ref().map(|s| s.mean),
            std: stats.as_ref().map(|s| s.std),
            median: if values.is_empty() {
                None
            } else {
                Some(labelshift::metrics::median(&values)?)
            },
        });
    }
    let mut slopes = BTreeMap::new();
    if matches!(cfg.kind, ExperimentKind::SweepSize | ExperimentKind::RateCheck) && cfg.n_te_grid.len() >= 3 {
        for spec in &cfg.estimators {
            let points: Option<Vec<(f64, f64)>> = cells
                .iter()
                .filter(|c| c.estimator == spec.name)
                .map(|c| c.mean.filter(|m| *m > 0.0).map(|m| (c.n_te as f64, m)))
                .collect();
            if let Some(points) = points {
                slopes.insert(spec.name.clone(), loglog_slope(&points)?);
            }
        }
    }
    Ok(SweepSummary {
        schema_version: SCHEMA_VERSION,
        kind: cfg.kind.name(),
        mse_normalization: MSE_NORMALIZATION,
        seed: cfg.seed,
        config: cfg.clone(),
        cells,
        slopes,
        slope_range: (cfg.kind == ExperimentKind::RateCheck).then_some(RATE_SLOPE_RANGE),
    })
}

/// Column names of the trial CSV for each sweep kind.
pub fn csv_header(kind: ExperimentKind) -> &'static [&'static str] {
    match kind {
        ExperimentKind::SweepSize | ExperimentKind::RateCheck => {
            &["n_te", "alpha", "estimator", "trial", "mse", "error"]
        }
        ExperimentKind::RelaxedSweep => &["preset", "alpha", "estimator", "trial", "mse", "error"],
        _ => &["alpha", "estimator", "trial", "mse", "error"],
    }
}

fn csv_row(kind: ExperimentKind, r: &TrialRow) -> Vec<String> {
    let tail = [
        r.estimator.clone(),
        r.trial.to_string(),
        fmt_opt(r.mse),
        r.error.clone().unwrap_or_default(),
    ];
    let head = match kind {
        ExperimentKind::SweepSize | ExperimentKind::RateCheck => vec![r.n_te.to_string(), r.alpha.to_string()],
        ExperimentKind::RelaxedSweep => vec![r.preset.clone().unwrap_or_default(), r.alpha.to_string()],
        _ => vec![r.alpha.to_string()],
    };
    head.into_iter().chain(tail).collect()
}

/// Runs a sweep and writes `<kind>.csv` and `<kind>_summary.json` to `out`.
pub fn run_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<SweepSummary> {
    let rows = run_trials(cfg)?;
    let summary = summarize_rows(cfg, &rows)?;
    std::fs::create_dir_all(out)?;
    let kind = cfg.kind;
    let csv_rows: Vec<Vec<String>> = rows.iter().map(|r| csv_row(kind, r)).collect();
    write_csv(
        &out.join(format!("{}.csv", kind.name())),
        cfg,
        csv_header(kind),
        &csv_rows,
    )?;
    write_json(&out.join(format!("{}_summary.json", kind.name())), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateOnceResult {
    pub schema_version: u32,
    pub mse_normalization: &'static str,
    pub config: ExperimentConfig,
    pub drawn_marginal: LabelMarginal,
    pub realized_marginal: LabelMarginal,
    pub estimates: Vec<EstimateOnceEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateOnceEntry {
    pub estimator: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcome: Option<EstimateOutcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// A single draw at `cfg.alpha` and `cfg.n_te`, written to `estimate.json`.
pub fn run_estimate_once(cfg: &ExperimentConfig, out: &Path) -> Result<EstimateOnceResult> {
    cfg.validate()?;
    let source = Source::load(&cfg.source)?;
    let setup = TrialSetup::new(cfg, &source)?;
    let trial_seed = derive_seed(cfg.seed, &[0, 0]);
    let draw = setup.draw(trial_seed, cfg.alpha, cfg.n_te)?;
    let results = setup.run(trial_seed, &draw, std::slice::from_ref(&draw.shifted.data));
    let estimates = cfg
        .estimators
        .iter()
        .zip(results.into_iter().next().unwrap_or_default())
        .map(|(spec, r)| match r {
            Ok(o) => EstimateOnceEntry {
                estimator: spec.name.clone(),
                outcome: Some(o),
                error: None,
            },
            Err(e) => EstimateOnceEntry {
                estimator: spec.name.clone(),
                outcome: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let result = EstimateOnceResult {
        schema_version: SCHEMA_VERSION,
        mse_normalization: MSE_NORMALIZATION,
        config: cfg.clone(),
        drawn_marginal: draw.shifted.drawn_marginal.clone(),
        realized_marginal: draw.shifted.realized_marginal(),
        estimates,
    };
    std::fs::create_dir_all(out)?;
    write_json(&out.join("estimate.json"), &result)?;
    Ok(result)
}
