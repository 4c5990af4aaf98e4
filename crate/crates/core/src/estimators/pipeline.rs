use ndarray::ArrayView2;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::predictor::{train_predictor, Predictor, PredictorConfig};
use crate::seed::{derive_seed, rng_from_seed};
use crate::types::{LabelMarginal, LabeledDataset};

use super::{
    estimate_bbse, estimate_mlls_em, estimate_mlls_gd, estimate_rlls, EstimateReport, EstimatorOptions, Method,
};

/// Splits `data` into a fitting part and a holdout of roughly
/// `fraction * n` samples, shuffled with `seed`.
pub fn split_holdout(data: &LabeledDataset, fraction: f64, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(0.0..1.0).contains(&fraction) || fraction == 0.0 {
        return Err(Error::InvalidConfig(format!(
            "holdout fraction {fraction} not in (0, 1)"
        )));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let k = ((data.len() as f64) * fraction).round() as usize;
    if k == 0 || k >= data.len() {
        return Err(Error::InvalidConfig("holdout split leaves an empty part".into()));
    }
    Ok((data.select(&order[k..])?, data.select(&order[..k])?))
}

/// A trained predictor together with the labeled data it is evaluated on.
#[derive(Debug, Clone)]
pub struct FittedEstimate {
    pub predictor: Predictor,
    /// Labeled data used for the confusion matrix (the training set when no
    /// holdout is split off).
    pub holdout: LabeledDataset,
    /// Label marginal of the data the predictor was trained on.
    pub train_marginal: LabelMarginal,
}

impl FittedEstimate {
    /// Trains the predictor, splitting off a holdout when requested.
    pub fn fit(train: &LabeledDataset, pcfg: &PredictorConfig, opts: &EstimatorOptions) -> Result<Self> {
        opts.validate()?;
        let (fit, holdout) = if opts.holdout_fraction > 0.0 {
            split_holdout(train, opts.holdout_fraction, derive_seed(pcfg.seed, &[2]))?
        } else {
            (train.clone(), train.clone())
        };
        let predictor = train_predictor(&fit, pcfg)?;
        Ok(Self {
            predictor,
            holdout,
            train_marginal: fit.empirical_marginal(),
        })
    }

    pub fn estimate(&self, test_features: ArrayView2<'_, f64>, opts: &EstimatorOptions) -> Result<EstimateReport> {
        estimate_with_predictor(
            &self.predictor,
            &self.holdout,
            &self.train_marginal,
            test_features,
            opts,
        )
    }
}

/// Runs the solver selected by `opts.method` on a trained predictor.
pub fn estimate_with_predictor(
    predictor: &Predictor,
    holdout: &LabeledDataset,
    train_marginal: &LabelMarginal,
    test_features: ArrayView2<'_, f64>,
    opts: &EstimatorOptions,
) -> Result<EstimateReport> {
    let preds_te = predictor.predict_proba(test_features)?;
    match opts.method {
        Method::MllsEm => estimate_mlls_em(&preds_te, train_marginal, opts),
        Method::MllsGd => estimate_mlls_gd(&preds_te, train_marginal, opts),
        Method::Bbse | Method::Rlls => {
            let preds_val = predictor.predict_proba(holdout.features())?;
            if opts.method == Method::Bbse {
                estimate_bbse(&preds_val, holdout.labels(), &preds_te, train_marginal)
            } else {
                estimate_rlls(
                    &preds_val,
                    holdout.labels(),
                    &preds_te,
                    train_marginal,
                    opts.rlls_lambda,
                )
            }
        }
    }
}

/// Trains a predictor on `train` with the entropy penalty `pcfg.zeta`, then
/// estimates the test/train ratio from its predictions on `test_features`.
/// With `zeta = 0` this is the unregularized maximum-likelihood baseline.
pub fn estimate_vrls(
    train: &LabeledDataset,
    test_features: ArrayView2<'_, f64>,
    pcfg: &PredictorConfig,
    opts: &EstimatorOptions,
) -> Result<EstimateReport> {
    FittedEstimate::fit(train, pcfg, opts)?.estimate(test_features, opts)
}
