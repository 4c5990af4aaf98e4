//! Weighted global training with a server optimizer, and evaluation.

use ndarray::Axis;
use rand::seq::index;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::predictor::{Classifier, Predictor};
use crate::seed::{derive_seed, rng_from_seed};
use crate::types::LabeledDataset;

use super::exchange::{cross_node_weights, estimate_node_marginals, true_weights};
use super::{AggregationMode, Federation, ServerOptimizer, Weighting};

/// Per-node top-1 test accuracy and their unweighted mean.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub per_node: Vec<f64>,
    pub average: f64,
}

/// Accuracy of `model` on every node's test set.
pub fn evaluate(model: &impl Classifier, fed: &Federation) -> Result<Evaluation> {
    let per_node = fed
        .nodes
        .iter()
        .map(|node| {
            let predicted = model.predict_labels(node.test.features())?;
            let hits = predicted.iter().zip(node.test.labels()).filter(|(a, b)| a == b).count();
            Ok(hits as f64 / node.test.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let average = per_node.iter().sum::<f64>() / per_node.len() as f64;
    Ok(Evaluation { per_node, average })
}

#[derive(Debug, Clone, Serialize)]
pub struct FederationResult {
    pub weighting: Weighting,
    #[serde(serialize_with = "model_as_record")]
    pub model: Predictor,
    pub per_node_accuracy: Vec<f64>,
    pub average_accuracy: f64,
    /// Weight vector used for each node (all ones without weighting).
    pub node_weights: Vec<Vec<f64>>,
    /// Each node's own ratio estimate, when ratios were estimated.
    pub estimated_ratios: Option<Vec<Vec<f64>>>,
    /// Number of scalars the nodes exchanged before training.
    pub exchanged_values: usize,
    /// Mean weighted batch loss over the sampled nodes, one entry per round.
    pub loss_trace: Vec<f64>,
    /// Average test accuracy after each round.
    pub accuracy_trace: Vec<f64>,
}

fn model_as_record<S: Serializer>(model: &Predictor, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::Error as _;
    let text = model.to_json().map_err(S::Error::custom)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(S::Error::custom)?;
    value.serialize(s)
}

enum ServerState {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        m: Vec<f64>,
        v: Vec<f64>,
        t: i32,
    },
}

impl ServerState {
    fn new(opt: ServerOptimizer, n: usize) -> Self {
        match opt {
            ServerOptimizer::Sgd { lr } => ServerState::Sgd { lr },
            ServerOptimizer::Adam { lr, beta1, beta2, eps } => ServerState::Adam {
                lr,
                beta1,
                beta2,
                eps,
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            },
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        match self {
            ServerState::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= *lr * g;
                }
            }
            ServerState::Adam {
                lr,
                beta1,
                beta2,
                eps,
                m,
                v,
                t,
            } => {
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t);
                let c2 = 1.0 - beta2.powi(*t);
                for i in 0..params.len() {
                    let g = grad[i];
                    m[i] = *beta1 * m[i] + (1.0 - *beta1) * g;
                    v[i] = *beta2 * v[i] + (1.0 - *beta2) * g * g;
                    params[i] -= *lr * (m[i] / c1) / ((v[i] / c2).sqrt() + *eps);
                }
            }
        }
    }
}

/// Trains the global model on the weighted loss.
///
/// Each round samples `nodes_per_round` nodes without replacement. A
/// sampled node draws `local_steps` mini-batches without replacement from
/// its training set and reports the mean of its batch gradients; with more
/// than one local step it moves a local copy of the model between batches
/// using the global model's learning rate. The server averages the node
/// reports in node-index order, adds weight decay and applies its
/// optimizer. `Weighting::None` replaces `weights` by all-ones vectors.
pub fn train_global(fed: &Federation, weights: &[Vec<f64>], weighting: Weighting) -> Result<FederationResult> {
    let cfg = &fed.config;
    let (k_nodes, m) = (fed.num_nodes(), fed.num_classes());
    let weights: Vec<Vec<f64>> = match weighting {
        Weighting::None => vec![vec![1.0; m]; k_nodes],
        _ => weights.to_vec(),
    };
    if weights.len() != k_nodes {
        return Err(Error::DimensionMismatch {
            expected: k_nodes,
            found: weights.len(),
        });
    }
    if let Some(w) = weights.iter().find(|w| w.len() != m) {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: w.len(),
        });
    }
    let gm = &cfg.global_model;
    let mut model = Predictor::init(gm.architecture, m, fed.dim(), derive_seed(gm.seed, &[0]))?;
    let n_params = model.params().len();
    let mut server = ServerState::new(cfg.server_optimizer, n_params);
    let mut node_rng = rng_from_seed(derive_seed(cfg.seed, &[2]));
    let mut loss_trace = Vec::with_capacity(cfg.rounds);
    let mut accuracy_trace = Vec::with_capacity(cfg.rounds);
    let diverged = |round| Error::Diverged {
        what: "loss",
        stage: "round",
        index: round,
    };

    for round in 0..cfg.rounds {
        let mut chosen = index::sample(&mut node_rng, k_nodes, cfg.nodes_per_round).into_vec();
        chosen.sort_unstable();
        let mut update = vec![0.0; n_params];
        let mut loss_sum = 0.0;
        for &k in &chosen {
            let train = &fed.nodes[k].train;
            let mut rng = rng_from_seed(derive_seed(cfg.seed, &[3, round as u64, k as u64]));
            let batch = gm.batch_size.min(train.len());
            let mut local = model.clone();
            let mut report = vec![0.0; n_params];
            for step in 0..cfg.local_steps {
                let idx = index::sample(&mut rng, train.len(), batch).into_vec();
                let x = train.features().select(Axis(0), &idx);
                let labels: Vec<usize> = idx.iter().map(|&i| train.labels()[i]).collect();
                let w: Vec<f64> = labels.iter().map(|&y| weights[k][y]).collect();
                let (parts, grad) = local.loss_and_grad(x.view(), &labels, Some(&w), gm.zeta)?;
                if !parts.total.is_finite() {
                    return Err(diverged(round));
                }
                if step == 0 {
                    loss_sum += parts.total;
                }
                for (r, g) in report.iter_mut().zip(&grad) {
                    *r += g;
                }
                if cfg.local_steps > 1 {
                    for (p, g) in local.params_mut().iter_mut().zip(&grad) {
                        *p -= gm.learning_rate * g;
                    }
                }
            }
            let tau = cfg.local_steps as f64;
            for (u, r) in update.iter_mut().zip(&report) {
                *u += r / tau;
            }
        }
        let s = chosen.len() as f64;
        for (u, p) in update.iter_mut().zip(model.params()) {
            *u = *u / s + gm.weight_decay * p;
        }
        if update.iter().any(|u| !u.is_finite()) {
            return Err(diverged(round));
        }
        server.step(model.params_mut(), &update);
        if model.params().iter().any(|p| !p.is_finite()) {
            return Err(diverged(round));
        }
        loss_trace.push(loss_sum / s);
        accuracy_trace.push(evaluate(&model, fed)?.average);
    }

    let eval = evaluate(&model, fed)?;
    Ok(FederationResult {
        weighting,
        model,
        per_node_accuracy: eval.per_node,
        average_accuracy: eval.average,
        node_weights: weights,
        estimated_ratios: None,
        exchanged_values: 0,
        loss_trace,
        accuracy_trace,
    })
}

/// Computes the weights for `weighting` and trains the global model.
pub fn run_federation(fed: &Federation, weighting: Weighting) -> Result<FederationResult> {
    let m = fed.num_classes();
    match weighting {
        Weighting::None => train_global(fed, &vec![vec![1.0; m]; fed.num_nodes()], weighting),
        Weighting::TrueRatios => train_global(fed, &true_weights(&fed.config)?, weighting),
        Weighting::EstimatedRatios => match fed.config.aggregation {
            AggregationMode::MarginalExchange => {
                let est = estimate_node_marginals(fed)?;
                let mut result = train_global(fed, &est.weights, weighting)?;
                result.estimated_ratios = Some(est.ratios.iter().map(|r| r.ratios().to_vec()).collect());
                result.exchanged_values = est.exchange.values_shared();
                Ok(result)
            }
            AggregationMode::CrossNodeListing => {
                let (weights, ratios) = cross_node_weights(fed)?;
                let mut result = train_global(fed, &weights, weighting)?;
                result.estimated_ratios = Some(
                    ratios
                        .iter()
                        .enumerate()
                        .map(|(k, row)| row[k].ratios().to_vec())
                        .collect(),
                );
                Ok(result)
            }
        },
    }
}

/// `(1/K) sum_k mean_i w_k(y_i) loss(x_i, y_i)` over the nodes' training
/// sets. With the unnormalized weights its expectation is
/// [`aggregated_test_risk`].
pub fn weighted_empirical_risk(model: &Predictor, fed: &Federation, weights: &[Vec<f64>], zeta: f64) -> Result<f64> {
    let mut total = 0.0;
    for (node, w) in fed.nodes.iter().zip(weights) {
        let sample_w: Vec<f64> = node.train.labels().iter().map(|&y| w[y]).collect();
        total += model
            .loss_and_grad(node.train.features(), node.train.labels(), Some(&sample_w), zeta)?
            .0
            .total;
    }
    Ok(total / fed.num_nodes() as f64)
}

/// Sum over test sets of the mean loss.
pub fn aggregated_test_risk(model: &Predictor, test_sets: &[LabeledDataset], zeta: f64) -> Result<f64> {
    test_sets
        .iter()
        .map(|t| Ok(model.loss_and_grad(t.features(), t.labels(), None, zeta)?.0.total))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::GaussianMixtureSpec;
    use crate::federated::{build_federation, FederationConfig, NodeSpec};
    use crate::types::LabelMarginal;

    fn fed(nodes: usize, rounds: usize) -> Federation {
        let mix = GaussianMixtureSpec::equidistant(3, 2, 3.0, 1.0).unwrap();
        let u = LabelMarginal::uniform(3).unwrap();
        let spec = |seed| NodeSpec {
            train_marginal: u.clone(),
            test_marginal: u.clone(),
            n_tr: 100,
            n_te: 100,
            seed,
        };
        let mut cfg: FederationConfig = serde_json::from_value(serde_json::json!({
            "nodes": [], "scenario": "no_ls", "rounds": rounds, "nodes_per_round": 1,
            "weighting": "none", "seed": 5
        }))
        .unwrap();
        cfg.nodes = (0..nodes as u64).map(spec).collect();
        cfg.nodes_per_round = nodes;
        cfg.server_optimizer = ServerOptimizer::Adam {
            lr: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        build_federation(&cfg, &mix).unwrap()
    }

    #[test]
    fn traces_have_one_entry_per_round() {
        let f = fed(2, 7);
        let res = run_federation(&f, Weighting::None).unwrap();
        assert_eq!(res.loss_trace.len(), 7);
        assert_eq!(res.accuracy_trace.len(), 7);
        assert!(res.per_node_accuracy.iter().all(|a| (0.0..=1.0).contains(a)));
    }

    #[test]
    fn none_weighting_ignores_given_weights() {
        let f = fed(2, 5);
        let a = train_global(&f, &[vec![5.0; 3], vec![0.1; 3]], Weighting::None).unwrap();
        let b = train_global(&f, &[vec![1.0; 3], vec![1.0; 3]], Weighting::TrueRatios).unwrap();
        assert_eq!(a.model.params(), b.model.params());
        assert_eq!(a.loss_trace, b.loss_trace);
    }

    #[test]
    fn weight_shape_is_checked() {
        let f = fed(2, 1);
        assert!(train_global(&f, &[vec![1.0; 3]], Weighting::TrueRatios).is_err());
        assert!(train_global(&f, &[vec![1.0; 3], vec![1.0; 2]], Weighting::TrueRatios).is_err());
    }

    #[test]
    fn divergence_names_the_round() {
        let mut f = fed(1, 3);
        f.config.server_optimizer = ServerOptimizer::Sgd { lr: 1e308 };
        let err = train_global(&f, &[vec![1e300; 3]], Weighting::TrueRatios).unwrap_err();
        assert!(matches!(err, Error::Diverged { stage: "round", .. }), "{err}");
    }

    #[test]
    fn sgd_server_with_local_steps_runs() {
        let mut f = fed(3, 4);
        f.config.server_optimizer = ServerOptimizer::Sgd { lr: 0.5 };
        f.config.local_steps = 3;
        f.config.nodes_per_round = 2;
        let a = run_federation(&f, Weighting::TrueRatios).unwrap();
        let b = run_federation(&f, Weighting::TrueRatios).unwrap();
        assert_eq!(a.model.params(), b.model.params());
        assert!(a.average_accuracy > 0.5);
    }

    #[test]
    fn result_serializes_with_model_record() {
        let f = fed(1, 1);
        let res = run_federation(&f, Weighting::None).unwrap();
        let v = serde_json::to_value(&res).unwrap();
        assert_eq!(v["weighting"], "none");
        assert_eq!(v["model"]["format"], "labelshift-predictor");
    }
}
