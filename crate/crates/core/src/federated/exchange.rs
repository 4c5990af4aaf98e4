//! Local marginal estimation, the one-round exchange, and weight aggregation.

use crate::error::{Error, Result};
use crate::estimators::{estimate_mlls_em, estimate_mlls_gd, EstimateReport, EstimatorOptions, FittedEstimate, Method};
use crate::predictor::PredictorConfig;
use crate::seed::derive_seed;
use crate::types::{LabelMarginal, ProbabilityMatrix, RatioVector};

use super::{Federation, FederationConfig, Node};

/// Trains a ratio predictor on the node's training set and estimates the
/// ratio on the node's own test features.
pub fn local_estimate(
    node: &Node,
    pcfg: &PredictorConfig,
    opts: &EstimatorOptions,
) -> Result<(FittedEstimate, EstimateReport)> {
    let fitted = FittedEstimate::fit(&node.train, pcfg, opts)?;
    let report = fitted.estimate(node.test.features(), opts)?;
    Ok((fitted, report))
}

/// The node's estimated test label marginal `r_hat * tr`.
pub fn local_test_marginal(node: &Node, pcfg: &PredictorConfig, opts: &EstimatorOptions) -> Result<LabelMarginal> {
    Ok(local_estimate(node, pcfg, opts)?.1.ratio.implied_test_marginal())
}

/// Test marginal estimated from given test predictions, for example those
/// of the true posterior. Only the likelihood methods are accepted since
/// no labeled holdout is available here.
pub fn local_test_marginal_from_predictions(
    preds_te: &ProbabilityMatrix,
    tr: &LabelMarginal,
    opts: &EstimatorOptions,
) -> Result<LabelMarginal> {
    let report = match opts.method {
        Method::MllsEm => estimate_mlls_em(preds_te, tr, opts)?,
        Method::MllsGd => estimate_mlls_gd(preds_te, tr, opts)?,
        other => {
            return Err(Error::InvalidConfig(format!(
                "{} needs labeled holdout predictions",
                other.name()
            )))
        }
    };
    Ok(report.ratio.implied_test_marginal())
}

/// `w_k(y) = sum_j te_j(y) / tr_k(y)`, left unnormalized.
pub fn aggregate_ratios(test_marginals: &[LabelMarginal], tr_k: &LabelMarginal) -> Result<Vec<f64>> {
    let m = tr_k.num_classes();
    if test_marginals.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    let mut numer = vec![0.0; m];
    for te in test_marginals {
        if te.num_classes() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: te.num_classes(),
            });
        }
        for (n, &p) in numer.iter_mut().zip(te.probs()) {
            *n += p;
        }
    }
    numer
        .iter()
        .zip(tr_k.probs())
        .enumerate()
        .map(|(class, (&n, &t))| match (n > 0.0, t > 0.0) {
            (_, true) => Ok(n / t),
            (false, false) => Ok(0.0),
            (true, false) => Err(Error::UnsupportedClass { class }),
        })
        .collect()
}

fn finish(mut w: Vec<f64>, k_nodes: usize, normalize: bool) -> Vec<f64> {
    if normalize {
        let k = k_nodes as f64;
        w.iter_mut().for_each(|v| *v /= k);
    }
    w
}

/// Weight vectors from the configured train and test marginals.
pub fn true_weights(cfg: &FederationConfig) -> Result<Vec<Vec<f64>>> {
    let tests: Vec<LabelMarginal> = cfg.nodes.iter().map(|n| n.test_marginal.clone()).collect();
    cfg.nodes
        .iter()
        .map(|n| {
            Ok(finish(
                aggregate_ratios(&tests, &n.train_marginal)?,
                tests.len(),
                cfg.normalize_weights,
            ))
        })
        .collect()
}

/// A node's single contribution to the exchange.
#[derive(Debug, Clone, PartialEq)]
pub struct PublishedMarginal {
    pub node: usize,
    pub test_marginal: LabelMarginal,
}

/// Everything that crosses node boundaries before global training: one
/// estimated test marginal per node.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MarginalExchange {
    published: Vec<PublishedMarginal>,
}

impl MarginalExchange {
    pub fn publish(&mut self, node: usize, test_marginal: LabelMarginal) -> Result<()> {
        if self.published.iter().any(|p| p.node == node) {
            return Err(Error::InvalidConfig(format!("node {node} already published")));
        }
        self.published.push(PublishedMarginal { node, test_marginal });
        Ok(())
    }

    pub fn published(&self) -> &[PublishedMarginal] {
        &self.published
    }

    /// Number of scalars shared in total.
    pub fn values_shared(&self) -> usize {
        self.published.iter().map(|p| p.test_marginal.num_classes()).sum()
    }

    pub fn marginals(&self) -> Vec<LabelMarginal> {
        self.published.iter().map(|p| p.test_marginal.clone()).collect()
    }

    /// Weight vector for a node with train marginal `tr_k`.
    pub fn weights_for(&self, tr_k: &LabelMarginal, normalize: bool) -> Result<Vec<f64>> {
        let marginals = self.marginals();
        Ok(finish(aggregate_ratios(&marginals, tr_k)?, marginals.len(), normalize))
    }
}

/// Ratio-predictor settings for node `k`.
fn node_predictor(cfg: &FederationConfig, k: usize) -> PredictorConfig {
    PredictorConfig {
        seed: derive_seed(cfg.ratio_predictor.seed, &[k as u64]),
        ..cfg.ratio_predictor.clone()
    }
}

/// Node estimates shared through a [`MarginalExchange`].
#[derive(Debug, Clone)]
pub struct NodeEstimates {
    pub exchange: MarginalExchange,
    /// Each node's own ratio estimate.
    pub ratios: Vec<RatioVector>,
    /// Weight vector per node.
    pub weights: Vec<Vec<f64>>,
}

/// Runs the local estimation on every node, publishes the marginals and
/// aggregates each node's weights against its own train marginal.
pub fn estimate_node_marginals(fed: &Federation) -> Result<NodeEstimates> {
    let cfg = &fed.config;
    let mut exchange = MarginalExchange::default();
    let mut ratios = Vec::with_capacity(fed.num_nodes());
    for (k, node) in fed.nodes.iter().enumerate() {
        let (_, report) = local_estimate(node, &node_predictor(cfg, k), &cfg.estimator)?;
        exchange.publish(k, report.ratio.implied_test_marginal())?;
        ratios.push(report.ratio);
    }
    let weights = ratios
        .iter()
        .map(|r| exchange.weights_for(r.train_marginal(), cfg.normalize_weights))
        .collect::<Result<Vec<_>>>()?;
    Ok(NodeEstimates {
        exchange,
        ratios,
        weights,
    })
}

/// Per-node weight vectors and the matrix of cross-node ratios `r_kj`.
pub type CrossNodeWeights = (Vec<Vec<f64>>, Vec<Vec<RatioVector>>);

/// Weights following the cross-node listing: node `k`'s estimator is run on
/// every node's test features, giving `r_kj`, and
/// `w_k = sum_j tr_j * r_kj / tr_k`. Returns the weights and the `r_kj`.
pub fn cross_node_weights(fed: &Federation) -> Result<CrossNodeWeights> {
    let cfg = &fed.config;
    let fitted = fed
        .nodes
        .iter()
        .enumerate()
        .map(|(k, node)| FittedEstimate::fit(&node.train, &node_predictor(cfg, k), &cfg.estimator))
        .collect::<Result<Vec<_>>>()?;
    let mut all_ratios = Vec::with_capacity(fitted.len());
    let mut weights = Vec::with_capacity(fitted.len());
    for fit_k in &fitted {
        let row = fed
            .nodes
            .iter()
            .map(|node_j| Ok(fit_k.estimate(node_j.test.features(), &cfg.estimator)?.ratio))
            .collect::<Result<Vec<RatioVector>>>()?;
        let m = fed.num_classes();
        let mut numer = vec![0.0; m];
        for (fit_j, r_kj) in fitted.iter().zip(&row) {
            for (c, n) in numer.iter_mut().enumerate() {
                *n += fit_j.train_marginal.get(c) * r_kj.ratios()[c];
            }
        }
        let tr_k = &fit_k.train_marginal;
        let w = numer
            .iter()
            .enumerate()
            .map(|(c, &n)| {
                let t = tr_k.get(c);
                if t > 0.0 {
                    Ok(n / t)
                } else if n == 0.0 {
                    Ok(0.0)
                } else {
                    Err(Error::UnsupportedClass { class: c })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        weights.push(finish(w, fitted.len(), cfg.normalize_weights));
        all_ratios.push(row);
    }
    Ok((weights, all_ratios))
}
