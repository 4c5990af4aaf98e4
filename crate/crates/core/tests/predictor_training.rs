//! Predictor gradients against central differences, and training behavior.

use labelshift::data::{gen_gaussian_mixture, posterior_matrix, GaussianMixtureSpec};
use labelshift::predictor::{mean_entropy, train_predictor, Architecture, Classifier, Predictor, PredictorConfig};
use labelshift::seed::rng_from_seed;
use labelshift::LabelMarginal;
use ndarray::Array2;
use rand::Rng;

/// Loss written out independently of the library: log-sum-exp cross
/// entropy plus `zeta * sum p log p`, weighted, divided by the batch size.
fn reference_loss(pred: &Predictor, x: &Array2<f64>, y: &[usize], w: &[f64], zeta: f64) -> f64 {
    let logits = pred.logits(x.view()).unwrap();
    let mut total = 0.0;
    for (i, z) in logits.outer_iter().enumerate() {
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let ce = lse - z[y[i]];
        let neg_ent: f64 = z.iter().map(|v| (v - lse).exp() * (v - lse)).sum();
        total += w[i] * (ce + zeta * neg_ent);
    }
    total / y.len() as f64
}

fn batch(seed: u64, n: usize, d: usize, m: usize) -> (Array2<f64>, Vec<usize>, Vec<f64>) {
    let mut rng = rng_from_seed(seed);
    let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0));
    let y = (0..n).map(|_| rng.random_range(0..m)).collect();
    let w = (0..n).map(|_| rng.random_range(0.2..3.0)).collect();
    (x, y, w)
}

fn check_gradient(arch: Architecture, zeta: f64, seed: u64) -> f64 {
    let (m, d) = (4, 3);
    let (x, y, w) = batch(seed, 8, d, m);
    let pred = Predictor::init(arch, m, d, seed).unwrap();
    let (parts, grad) = pred.loss_and_grad(x.view(), &y, Some(&w), zeta).unwrap();
    assert!((parts.total - reference_loss(&pred, &x, &y, &w, zeta)).abs() < 1e-12);
    let h = 1e-5;
    let mut numeric = Vec::with_capacity(grad.len());
    for i in 0..grad.len() {
        let mut up = pred.params().to_vec();
        let mut down = up.clone();
        up[i] += h;
        down[i] -= h;
        let fu = reference_loss(&Predictor::from_params(arch, m, d, up).unwrap(), &x, &y, &w, zeta);
        let fd = reference_loss(&Predictor::from_params(arch, m, d, down).unwrap(), &x, &y, &w, zeta);
        numeric.push((fu - fd) / (2.0 * h));
    }
    let diff: f64 = grad
        .iter()
        .zip(&numeric)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = grad
        .iter()
        .map(|a| a * a)
        .sum::<f64>()
        .sqrt()
        .max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt());
    diff / scale
}

#[test]
fn linear_gradient_matches_finite_differences() {
    for zeta in [0.0, 0.5, 1.0, 5.0] {
        for seed in 0..3 {
            let rel = check_gradient(Architecture::Linear, zeta, seed);
            assert!(rel < 1e-4, "zeta {zeta} seed {seed}: {rel}");
        }
    }
}

#[test]
fn mlp_gradient_matches_finite_differences() {
    for zeta in [0.0, 0.5, 1.0, 5.0] {
        for seed in 0..3 {
            let rel = check_gradient(Architecture::Mlp { hidden_units: 6 }, zeta, seed);
            assert!(rel < 1e-4, "zeta {zeta} seed {seed}: {rel}");
        }
    }
}

fn mixture(sep: f64) -> GaussianMixtureSpec {
    GaussianMixtureSpec::equidistant(3, 2, sep, 1.0).unwrap()
}

#[test]
fn separable_data_is_learned() {
    let uniform = LabelMarginal::uniform(3).unwrap();
    let train = gen_gaussian_mixture(&mixture(8.0), &uniform, 600, 1).unwrap();
    let test = gen_gaussian_mixture(&mixture(8.0), &uniform, 600, 2).unwrap();
    for arch in [Architecture::Linear, Architecture::Mlp { hidden_units: 16 }] {
        let cfg = PredictorConfig {
            architecture: arch,
            zeta: 0.0,
            ..PredictorConfig::default()
        };
        let pred = train_predictor(&train, &cfg).unwrap();
        let labels = pred.predict_labels(test.features()).unwrap();
        let acc = labels.iter().zip(test.labels()).filter(|(a, b)| a == b).count() as f64 / 600.0;
        assert!(acc > 0.98, "{arch:?}: {acc}");
    }
}

fn trained_entropy(train: &labelshift::LabeledDataset, zeta: f64, seed: u64) -> f64 {
    let cfg = PredictorConfig {
        zeta,
        max_epochs: 50,
        seed,
        ..PredictorConfig::default()
    };
    let pred = train_predictor(train, &cfg).unwrap();
    mean_entropy(&pred.predict_proba(train.features()).unwrap())
}

#[test]
fn stronger_penalty_raises_output_entropy() {
    let uniform = LabelMarginal::uniform(3).unwrap();
    let train = gen_gaussian_mixture(&mixture(3.0), &uniform, 600, 3).unwrap();
    assert!(trained_entropy(&train, 10.0, 0) > trained_entropy(&train, 0.0, 0));
    let mut monotone = 0;
    for seed in 0..3 {
        let h: Vec<f64> = [0.0, 1.0, 10.0]
            .iter()
            .map(|&z| trained_entropy(&train, z, seed))
            .collect();
        if h[0] <= h[1] && h[1] <= h[2] {
            monotone += 1;
        }
    }
    assert!(monotone >= 2, "{monotone} of 3 seeds monotone");
}

#[test]
fn separable_two_class_training_accuracy() {
    let spec = GaussianMixtureSpec::equidistant(2, 2, 8.0, 1.0).unwrap();
    let train = gen_gaussian_mixture(&spec, &LabelMarginal::uniform(2).unwrap(), 500, 7).unwrap();
    let cfg = PredictorConfig {
        zeta: 0.0,
        max_epochs: 200,
        ..PredictorConfig::default()
    };
    let pred = train_predictor(&train, &cfg).unwrap();
    let labels = pred.predict_labels(train.features()).unwrap();
    let acc = labels.iter().zip(train.labels()).filter(|(a, b)| a == b).count() as f64 / 500.0;
    assert!(acc >= 0.99, "{acc}");
}

#[test]
fn training_is_deterministic() {
    let uniform = LabelMarginal::uniform(3).unwrap();
    let train = gen_gaussian_mixture(&mixture(2.0), &uniform, 300, 4).unwrap();
    let cfg = PredictorConfig {
        architecture: Architecture::Mlp { hidden_units: 8 },
        max_epochs: 5,
        ..PredictorConfig::default()
    };
    let a = train_predictor(&train, &cfg).unwrap();
    let b = train_predictor(&train, &cfg).unwrap();
    assert_eq!(a.params(), b.params());
    let other = train_predictor(&train, &PredictorConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a.params(), other.params());
}

#[test]
fn unregularized_linear_model_approaches_the_posterior() {
    let spec = mixture(3.0);
    let tr = LabelMarginal::new(vec![0.5, 0.3, 0.2]).unwrap();
    let train = gen_gaussian_mixture(&spec, &tr, 20_000, 5).unwrap();
    let cfg = PredictorConfig {
        zeta: 0.0,
        max_epochs: 30,
        ..PredictorConfig::default()
    };
    let pred = train_predictor(&train, &cfg).unwrap();
    let probe = gen_gaussian_mixture(&spec, &tr, 2000, 6).unwrap();
    let fitted = pred.predict_proba(probe.features()).unwrap();
    let truth = posterior_matrix(&spec, &tr, probe.features()).unwrap();
    let l1: f64 = (&fitted.rows() - &truth.rows()).mapv(f64::abs).sum() / 2000.0;
    assert!(l1 < 0.1, "mean L1 {l1}");
}
