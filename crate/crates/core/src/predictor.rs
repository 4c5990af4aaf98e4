//! Softmax predictors trained with cross-entropy plus a Shannon-entropy
//! confidence penalty.
//!
//! The per-sample training loss is
//!
//! ```text
//! CE(softmax(z), y) + zeta * sum_c p_c log p_c,      p = softmax(z)
//! ```
//!
//! The second term is the negative entropy of the output, so minimizing it
//! pushes predictions away from over-confident one-hot vectors. Gradients
//! are computed analytically; `zeta = 0` gives plain cross-entropy.
//!
//! Parameters live in one flat vector. Layout, row-major throughout:
//!
//! * linear: `W (m x d)`, `b (m)`
//! * mlp:    `W1 (h x d)`, `b1 (h)`, `W2 (m x h)`, `b2 (m)` with a ReLU hidden layer

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from_seed};
use crate::types::{LabeledDataset, ProbabilityMatrix, PROB_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Architecture {
    Linear,
    Mlp { hidden_units: usize },
}

impl Architecture {
    pub fn param_count(&self, num_classes: usize, dim: usize) -> usize {
        match *self {
            Architecture::Linear => num_classes * dim + num_classes,
            Architecture::Mlp { hidden_units: h } => h * dim + h + num_classes * h + num_classes,
        }
    }
}

/// Training hyperparameters for a [`Predictor`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    pub architecture: Architecture,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Training stops once the epoch's mean cross-entropy (the
    /// classification part of the loss) is at or below this value.
    pub loss_threshold: f64,
    /// Strength of the entropy penalty.
    pub zeta: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Linear,
            learning_rate: 0.1,
            batch_size: 64,
            max_epochs: 100,
            loss_threshold: 0.05,
            zeta: 1.0,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.zeta >= 0.0 && self.zeta.is_finite()) {
            return Err(Error::InvalidConfig("zeta must be nonnegative".into()));
        }
        if !(self.weight_decay >= 0.0 && self.loss_threshold >= 0.0) {
            return Err(Error::InvalidConfig(
                "weight_decay and loss_threshold must be nonnegative".into(),
            ));
        }
        if let Architecture::Mlp { hidden_units: 0 } = self.architecture {
            return Err(Error::InvalidConfig("mlp needs at least one hidden unit".into()));
        }
        Ok(())
    }
}

/// Anything that can assign hard labels to feature rows.
pub trait Classifier {
    fn predict_labels(&self, features: ArrayView2<'_, f64>) -> Result<Vec<usize>>;
}

/// Negative Shannon entropy `sum_c p_c log p_c`, with `log` floored at
/// [`PROB_FLOOR`] so zero entries contribute nothing.
pub fn entropy_penalty(p: ArrayView1<'_, f64>) -> f64 {
    p.iter().map(|&v| v * v.max(PROB_FLOOR).ln()).sum()
}

/// Mean Shannon entropy of the rows of a probability matrix.
pub fn mean_entropy(probs: &ProbabilityMatrix) -> f64 {
    let rows = probs.rows();
    -rows.outer_iter().map(entropy_penalty).sum::<f64>() / rows.nrows() as f64
}

/// Loss value split into its parts (batch means).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub cross_entropy: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    architecture: Architecture,
    num_classes: usize,
    dim: usize,
    params: Vec<f64>,
}

struct Forward {
    hidden_pre: Option<Array2<f64>>,
    hidden: Option<Array2<f64>>,
    logits: Array2<f64>,
}

fn softmax_in_place(mut logits: Array2<f64>) -> Array2<f64> {
    for mut row in logits.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|z| (z - max).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    logits
}

impl Predictor {
    pub fn from_params(architecture: Architecture, num_classes: usize, dim: usize, params: Vec<f64>) -> Result<Self> {
        if num_classes < 2 || dim == 0 {
            return Err(Error::InvalidConfig(format!("invalid shape m={num_classes}, d={dim}")));
        }
        let expected = architecture.param_count(num_classes, dim);
        if params.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: params.len(),
            });
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite parameter".into()));
        }
        Ok(Self {
            architecture,
            num_classes,
            dim,
            params,
        })
    }

    /// All-zero parameters: every prediction is uniform.
    pub fn zeros(architecture: Architecture, num_classes: usize, dim: usize) -> Result<Self> {
        let n = architecture.param_count(num_classes, dim);
        Self::from_params(architecture, num_classes, dim, vec![0.0; n])
    }

    /// Each layer uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init(architecture: Architecture, num_classes: usize, dim: usize, seed: u64) -> Result<Self> {
        let mut rng = rng_from_seed(seed);
        let mut layer = |rows: usize, fan_in: usize, out: &mut Vec<f64>| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            out.extend((0..rows * fan_in + rows).map(|_| rng.random_range(-bound..=bound)));
        };
        let mut params = Vec::with_capacity(architecture.param_count(num_classes, dim));
        match architecture {
            Architecture::Linear => layer(num_classes, dim, &mut params),
            Architecture::Mlp { hidden_units } => {
                layer(hidden_units, dim, &mut params);
                layer(num_classes, hidden_units, &mut params);
            }
        }
        Self::from_params(architecture, num_classes, dim, params)
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Splits the flat vector into `(weight, bias)` views of a layer with
    /// `rows` outputs and `cols` inputs starting at `offset`.
    fn layer(params: &[f64], offset: usize, rows: usize, cols: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let w = ArrayView2::from_shape((rows, cols), &params[offset..offset + rows * cols]).expect("layer shape");
        let b = ArrayView1::from(&params[offset + rows * cols..offset + rows * cols + rows]);
        (w, b)
    }

    fn check_dim(&self, features: &ArrayView2<'_, f64>) -> Result<()> {
        if features.ncols() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: features.ncols(),
            });
        }
        Ok(())
    }

    fn forward(&self, x: ArrayView2<'_, f64>) -> Forward {
        let (m, d) = (self.num_classes, self.dim);
        match self.architecture {
            Architecture::Linear => {
                let (w, b) = Self::layer(&self.params, 0, m, d);
                Forward {
                    hidden_pre: None,
                    hidden: None,
                    logits: x.dot(&w.t()) + b,
                }
            }
            Architecture::Mlp { hidden_units: h } => {
                let (w1, b1) = Self::layer(&self.params, 0, h, d);
                let (w2, b2) = Self::layer(&self.params, h * d + h, m, h);
                let pre = x.dot(&w1.t()) + b1;
                let act = pre.mapv(|v| v.max(0.0));
                let logits = act.dot(&w2.t()) + b2;
                Forward {
                    hidden_pre: Some(pre),
                    hidden: Some(act),
                    logits,
                }
            }
        }
    }

    pub fn logits(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_dim(&features)?;
        Ok(self.forward(features).logits)
    }

    /// Softmax outputs, floored and renormalized.
    pub fn predict_proba(&self, features: ArrayView2<'_, f64>) -> Result<ProbabilityMatrix> {
        Ok(ProbabilityMatrix::floored(softmax_in_place(self.logits(features)?)))
    }

    /// Mean (optionally per-sample weighted) regularized loss over a batch
    /// and its gradient with respect to the flat parameter vector.
    ///
    /// With `weights = Some(w)` sample `i` contributes `w[i] * loss_i`; the
    /// sum is still divided by the batch size.
    pub fn loss_and_grad(
        &self,
        x: ArrayView2<'_, f64>,
        labels: &[usize],
        weights: Option<&[f64]>,
        zeta: f64,
    ) -> Result<(LossParts, Vec<f64>)> {
        self.check_dim(&x)?;
        let n = labels.len();
        if n == 0 || x.nrows() != n || weights.is_some_and(|w| w.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: x.nrows(),
            });
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= self.num_classes) {
            return Err(Error::InvalidDataset(format!("label {y} out of range")));
        }
        let fwd = self.forward(x);
        let scale = 1.0 / n as f64;
        let mut ce_sum = 0.0;
        let mut pen_sum = 0.0;
        let mut total_sum = 0.0;
        // dL/dlogits, one row per sample.
        let mut g = fwd.logits.clone();
        for (i, mut row) in g.outer_iter_mut().enumerate() {
            let y = labels[i];
            let w = weights.map_or(1.0, |w| w[i]);
            let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            let ce = lse - row[y];
            row.mapv_inplace(|z| (z - lse).exp());
            let penalty = entropy_penalty(row.view());
            ce_sum += ce;
            pen_sum += penalty;
            total_sum += w * (ce + zeta * penalty);
            for c in 0..row.len() {
                let p = row[c];
                let d_pen = p * (p.max(PROB_FLOOR).ln() - penalty);
                let d_ce = if c == y { p - 1.0 } else { p };
                row[c] = w * scale * (d_ce + zeta * d_pen);
            }
        }
        let parts = LossParts {
            total: total_sum * scale,
            cross_entropy: ce_sum * scale,
            penalty: pen_sum * scale,
        };
        Ok((parts, self.backward(x, &fwd, g)))
    }

    fn backward(&self, x: ArrayView2<'_, f64>, fwd: &Forward, g: Array2<f64>) -> Vec<f64> {
        let mut grad = Vec::with_capacity(self.params.len());
        match self.architecture {
            Architecture::Linear => {
                grad.extend(g.t().dot(&x).iter());
                grad.extend(g.sum_axis(Axis(0)).iter());
            }
            Architecture::Mlp { hidden_units: h } => {
                let (m, d) = (self.num_classes, self.dim);
                let (w2, _) = Self::layer(&self.params, h * d + h, m, h);
                let act = fwd.hidden.as_ref().expect("mlp forward keeps activations");
                let pre = fwd.hidden_pre.as_ref().expect("mlp forward keeps activations");
                let mut dh = g.dot(&w2);
                dh.zip_mut_with(pre, |v, &p| {
                    if p <= 0.0 {
                        *v = 0.0
                    }
                });
                grad.extend(dh.t().dot(&x).iter());
                grad.extend(dh.sum_axis(Axis(0)).iter());
                grad.extend(g.t().dot(act).iter());
                grad.extend(g.sum_axis(Axis(0)).iter());
            }
        }
        grad
    }

    /// Writes the binary record (see [`Predictor::to_bytes`]).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Binary record, little-endian:
    ///
    /// ```text
    /// b"LSPR" | u32 version=1 | u32 arch (0 linear, 1 mlp) | u32 hidden
    /// | u32 m | u32 d | u64 count | count x f64
    /// ```
    pub fn to_bytes(&self) -> Vec<u8> {
        let (tag, hidden) = match self.architecture {
            Architecture::Linear => (0u32, 0u32),
            Architecture::Mlp { hidden_units } => (1, hidden_units as u32),
        };
        let mut out = Vec::with_capacity(32 + 8 * self.params.len());
        out.extend_from_slice(RECORD_MAGIC);
        for word in [RECORD_VERSION, tag, hidden, self.num_classes as u32, self.dim as u32] {
            out.extend_from_slice(&word.to_le_bytes());
        }
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::MalformedRecord(msg.to_string());
        if bytes.len() < 32 || &bytes[..4] != RECORD_MAGIC {
            return Err(bad("missing LSPR header"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        if word(0) != RECORD_VERSION {
            return Err(bad("unsupported record version"));
        }
        let architecture = match (word(1), word(2)) {
            (0, _) => Architecture::Linear,
            (1, h) => Architecture::Mlp {
                hidden_units: h as usize,
            },
            _ => return Err(bad("unknown architecture tag")),
        };
        let count = u64::from_le_bytes(bytes[24..32].try_into().unwrap()) as usize;
        let body = &bytes[32..];
        if body.len() != count * 8 {
            return Err(bad("parameter count does not match payload length"));
        }
        let params = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_params(architecture, word(3) as usize, word(4) as usize, params)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&PredictorRecord::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: PredictorRecord = serde_json::from_str(text)?;
        if r.format != RECORD_FORMAT || r.version != RECORD_VERSION {
            return Err(Error::MalformedRecord(format!(
                "unsupported record {} v{}",
                r.format, r.version
            )));
        }
        Self::from_params(r.architecture, r.num_classes, r.dim, r.params)
    }
}

const RECORD_MAGIC: &[u8; 4] = b"LSPR";
const RECORD_VERSION: u32 = 1;
const RECORD_FORMAT: &str = "labelshift-predictor";

#[derive(Serialize, Deserialize)]
struct PredictorRecord {
    format: String,
    version: u32,
    architecture: Architecture,
    num_classes: usize,
    dim: usize,
    params: Vec<f64>,
}

impl From<&Predictor> for PredictorRecord {
    fn from(p: &Predictor) -> Self {
        Self {
            format: RECORD_FORMAT.into(),
            version: RECORD_VERSION,
            architecture: p.architecture,
            num_classes: p.num_classes,
            dim: p.dim,
            params: p.params.clone(),
        }
    }
}

impl Classifier for Predictor {
    fn predict_labels(&self, features: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        let logits = self.logits(features)?;
        Ok(logits
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
            .collect())
    }
}

/// Mean regularized loss of `pred` on `batch`.
pub fn regularized_loss(pred: &Predictor, batch: &LabeledDataset, zeta: f64) -> Result<f64> {
    Ok(pred
        .loss_and_grad(batch.features(), batch.labels(), None, zeta)?
        .0
        .total)
}

/// Mini-batch SGD on the regularized loss.
///
/// Stops when an epoch's mean cross-entropy reaches `loss_threshold` or
/// after `max_epochs`. The initialization and the shuffling stream are both
/// derived from `cfg.seed`.
pub fn train_predictor(train: &LabeledDataset, cfg: &PredictorConfig) -> Result<Predictor> {
    cfg.validate()?;
    let mut pred = Predictor::init(
        cfg.architecture,
        train.num_classes(),
        train.dim(),
        derive_seed(cfg.seed, &[0]),
    )?;
    let mut rng = rng_from_seed(derive_seed(cfg.seed, &[1]));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let features = train.features();
    let labels = train.labels();
    let mut batch_labels = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut ce_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = features.select(Axis(0), chunk);
            batch_labels.clear();
            batch_labels.extend(chunk.iter().map(|&i| labels[i]));
            let (parts, grad) = pred.loss_and_grad(x.view(), &batch_labels, None, cfg.zeta)?;
            if !parts.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    what: "loss",
                    stage: "epoch",
                    index: epoch,
                });
            }
            for (p, g) in pred.params.iter_mut().zip(&grad) {
                *p -= cfg.learning_rate * (g + cfg.weight_decay * *p);
            }
            ce_sum += parts.cross_entropy * chunk.len() as f64;
        }
        if ce_sum / train.len() as f64 <= cfg.loss_threshold {
            break;
        }
    }
    Ok(pred)
}

/// Row-wise softmax of raw scores.
pub fn softmax_rows(logits: Array2<f64>) -> ProbabilityMatrix {
    ProbabilityMatrix::floored(softmax_in_place(logits))
}

/// Softmax of a single score vector.
pub fn softmax(z: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = z.mapv(|v| (v - max).exp());
    let s = e.sum();
    e / s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_gaussian_mixture, GaussianMixtureSpec};
    use crate::types::LabelMarginal;
    use ndarray::array;

    #[test]
    fn entropy_penalty_examples() {
        let u = Array1::from_elem(10, 0.1);
        assert!((entropy_penalty(u.view()) + 10f64.ln()).abs() < 1e-12);
        assert!((entropy_penalty(array![0.5, 0.5].view()) + 2f64.ln()).abs() < 1e-12);
        assert_eq!(entropy_penalty(array![1.0, 0.0, 0.0].view()), 0.0);
    }

    fn small_batch(m: usize, d: usize) -> LabeledDataset {
        let spec = GaussianMixtureSpec::equidistant(m, d, 2.0, 1.0).unwrap();
        gen_gaussian_mixture(&spec, &LabelMarginal::uniform(m).unwrap(), 8, 77).unwrap()
    }

    #[test]
    fn zero_zeta_is_plain_cross_entropy() {
        let batch = small_batch(3, 4);
        let pred = Predictor::init(Architecture::Linear, 3, 4, 1).unwrap();
        let probs = pred.predict_proba(batch.features()).unwrap();
        let ce: f64 = batch
            .labels()
            .iter()
            .enumerate()
            .map(|(i, &y)| -probs.row(i)[y].ln())
            .sum::<f64>()
            / 8.0;
        assert!((regularized_loss(&pred, &batch, 0.0).unwrap() - ce).abs() < 1e-12);
    }

    #[test]
    fn uniform_output_cancels_at_unit_zeta() {
        let batch = small_batch(4, 3);
        let pred = Predictor::zeros(Architecture::Linear, 4, 3).unwrap();
        let (parts, _) = pred.loss_and_grad(batch.features(), batch.labels(), None, 1.0).unwrap();
        assert!((parts.cross_entropy - 4f64.ln()).abs() < 1e-12);
        assert!((parts.penalty + 4f64.ln()).abs() < 1e-12);
        assert!(parts.total.abs() < 1e-12);
    }

    #[test]
    fn zero_weights_give_uniform_rows() {
        let pred = Predictor::zeros(Architecture::Linear, 5, 2).unwrap();
        let p = pred.predict_proba(array![[1.0, -3.0], [10.0, 4.0]].view()).unwrap();
        assert!(p.rows().iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let pred = Predictor::zeros(Architecture::Linear, 2, 3).unwrap();
        assert!(matches!(
            pred.predict_proba(array![[1.0, 2.0]].view()),
            Err(Error::DimensionMismatch { expected: 3, found: 2 })
        ));
    }

    #[test]
    fn zero_epochs_keeps_initialization() {
        let data = small_batch(3, 2);
        let cfg = PredictorConfig {
            max_epochs: 0,
            seed: 5,
            ..PredictorConfig::default()
        };
        let trained = train_predictor(&data, &cfg).unwrap();
        let init = Predictor::init(Architecture::Linear, 3, 2, derive_seed(5, &[0])).unwrap();
        assert_eq!(trained, init);
    }

    #[test]
    fn divergence_is_reported() {
        let spec = GaussianMixtureSpec::equidistant(2, 2, 50.0, 1.0).unwrap();
        let data = gen_gaussian_mixture(&spec, &LabelMarginal::uniform(2).unwrap(), 64, 1).unwrap();
        let cfg = PredictorConfig {
            learning_rate: 1e308,
            zeta: 0.0,
            max_epochs: 5,
            ..PredictorConfig::default()
        };
        assert!(matches!(
            train_predictor(&data, &cfg),
            Err(Error::Diverged { stage: "epoch", .. })
        ));
    }

    #[test]
    fn logit_shift_leaves_probabilities_unchanged() {
        let pred = Predictor::init(Architecture::Linear, 3, 2, 4).unwrap();
        let mut shifted = pred.clone();
        let n = shifted.params.len();
        for b in &mut shifted.params_mut()[n - 3..] {
            *b += 17.5;
        }
        let x = array![[0.2, -1.0], [3.0, 0.5]];
        let a = pred.predict_proba(x.view()).unwrap();
        let b = shifted.predict_proba(x.view()).unwrap();
        assert!((a.rows().to_owned() - b.rows()).iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn binary_and_json_records_round_trip() {
        let pred = Predictor::init(Architecture::Mlp { hidden_units: 7 }, 3, 5, 2).unwrap();
        let back = Predictor::from_bytes(&pred.to_bytes()).unwrap();
        assert_eq!(back, pred);
        let back = Predictor::from_json(&pred.to_json().unwrap()).unwrap();
        assert_eq!(back, pred);
        let mut truncated = pred.to_bytes();
        truncated.pop();
        assert!(Predictor::from_bytes(&truncated).is_err());
    }
}
