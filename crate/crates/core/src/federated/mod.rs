//! Multi-node importance-weighted training under label shift.
//!
//! Every node holds a training set and an unlabeled test set drawn from a
//! shared class-conditional mixture but with its own label marginals. The
//! pipeline has three phases:
//!
//! 1. each node estimates its own test label marginal from local data
//!    ([`local_test_marginal`]);
//! 2. the nodes publish those marginals once ([`MarginalExchange`]) and
//!    every node forms its weight vector `w_k(y) = sum_j te_j(y) / tr_k(y)`
//!    ([`aggregate_ratios`]);
//! 3. a global model is trained on the per-sample weighted loss, with
//!    gradients averaged over sampled nodes and applied by a server
//!    optimizer ([`train_global`]).

mod exchange;
mod train;

use serde::{Deserialize, Serialize};

use crate::data::{gen_gaussian_mixture, GaussianMixtureSpec};
use crate::error::{Error, Result};
use crate::estimators::EstimatorOptions;
use crate::predictor::{Architecture, PredictorConfig};
use crate::seed::derive_seed;
use crate::types::{LabelMarginal, LabeledDataset};

pub use exchange::{
    aggregate_ratios, cross_node_weights, estimate_node_marginals, local_estimate, local_test_marginal,
    local_test_marginal_from_predictions, true_weights, CrossNodeWeights, MarginalExchange, NodeEstimates,
    PublishedMarginal,
};
pub use train::{
    aggregated_test_risk, evaluate, run_federation, train_global, weighted_empirical_risk, Evaluation, FederationResult,
};

/// Two marginals count as equal when no entry differs by more than this.
pub const MARGINAL_EQ_TOL: f64 = 1e-9;

/// Which nodes may have different train and test label marginals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// No node is shifted.
    NoLs,
    /// Only node 0 is shifted.
    LsSingle,
    /// Exactly two nodes, both shifted.
    LsBoth,
    /// Every node is shifted.
    LsMulti,
}

impl Scenario {
    /// Checks the node marginals against the scenario, naming the first
    /// violated equality.
    pub fn validate(&self, nodes: &[NodeSpec]) -> Result<()> {
        let shifted = |k: usize| nodes[k].is_shifted();
        let mismatch = |msg: String| Err(Error::ScenarioMismatch(msg));
        match self {
            Scenario::NoLs => {
                if let Some(k) = (0..nodes.len()).find(|&k| shifted(k)) {
                    return mismatch(format!("no_ls requires train marginal == test marginal on node {k}"));
                }
            }
            Scenario::LsSingle => {
                if !shifted(0) {
                    return mismatch("ls_single requires train marginal != test marginal on node 0".into());
                }
                if let Some(k) = (1..nodes.len()).find(|&k| shifted(k)) {
                    return mismatch(format!(
                        "ls_single requires train marginal == test marginal on node {k}"
                    ));
                }
            }
            Scenario::LsBoth => {
                if nodes.len() != 2 {
                    return mismatch(format!("ls_both requires exactly 2 nodes, found {}", nodes.len()));
                }
                if let Some(k) = (0..2).find(|&k| !shifted(k)) {
                    return mismatch(format!("ls_both requires train marginal != test marginal on node {k}"));
                }
            }
            Scenario::LsMulti => {
                if let Some(k) = (0..nodes.len()).find(|&k| !shifted(k)) {
                    return mismatch(format!("ls_multi requires train marginal != test marginal on node {k}"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub train_marginal: LabelMarginal,
    pub test_marginal: LabelMarginal,
    pub n_tr: usize,
    pub n_te: usize,
    pub seed: u64,
}

impl NodeSpec {
    pub fn is_shifted(&self) -> bool {
        self.train_marginal.max_abs_diff(&self.test_marginal) > MARGINAL_EQ_TOL
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ServerOptimizer {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl Default for ServerOptimizer {
    fn default() -> Self {
        ServerOptimizer::Adam {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl ServerOptimizer {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            ServerOptimizer::Sgd { lr } => lr > 0.0 && lr.is_finite(),
            ServerOptimizer::Adam { lr, beta1, beta2, eps } => {
                lr > 0.0 && lr.is_finite() && (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid server optimizer {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Every sample has weight 1.
    None,
    /// Weights from the configured train and test marginals.
    TrueRatios,
    /// Weights from marginals each node estimates on its own test set.
    EstimatedRatios,
}

impl Weighting {
    pub const ALL: [Weighting; 3] = [Weighting::None, Weighting::EstimatedRatios, Weighting::TrueRatios];

    pub fn name(&self) -> &'static str {
        match self {
            Weighting::None => "none",
            Weighting::TrueRatios => "true_ratios",
            Weighting::EstimatedRatios => "estimated_ratios",
        }
    }
}

/// How estimated weights are assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    /// Each node publishes only its estimated test marginal.
    #[default]
    MarginalExchange,
    /// Every node's estimator is applied to every node's test features.
    CrossNodeListing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub nodes: Vec<NodeSpec>,
    pub scenario: Scenario,
    pub rounds: usize,
    #[serde(default = "one")]
    pub local_steps: usize,
    pub nodes_per_round: usize,
    #[serde(default)]
    pub server_optimizer: ServerOptimizer,
    pub weighting: Weighting,
    /// Architecture, batch size, penalty, weight decay and initialization
    /// seed of the global model. Its learning rate is the local step size
    /// used only when `local_steps > 1`.
    #[serde(default = "global_default")]
    pub global_model: PredictorConfig,
    /// Predictor each node trains for its own ratio estimate.
    #[serde(default)]
    pub ratio_predictor: PredictorConfig,
    #[serde(default)]
    pub estimator: EstimatorOptions,
    #[serde(default)]
    pub aggregation: AggregationMode,
    /// Divide every weight vector by the number of nodes, so that its
    /// expectation under the node's train marginal is 1.
    #[serde(default)]
    pub normalize_weights: bool,
    pub seed: u64,
}

fn one() -> usize {
    1
}

fn global_default() -> PredictorConfig {
    PredictorConfig {
        architecture: Architecture::Linear,
        zeta: 0.0,
        ..PredictorConfig::default()
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::InvalidConfig("federation needs at least one node".into()));
        }
        if self.rounds == 0 || self.local_steps == 0 {
            return Err(Error::InvalidConfig("rounds and local_steps must be at least 1".into()));
        }
        if self.nodes_per_round == 0 || self.nodes_per_round > self.nodes.len() {
            return Err(Error::InvalidConfig(format!(
                "nodes_per_round must lie in [1, {}], got {}",
                self.nodes.len(),
                self.nodes_per_round
            )));
        }
        let m = self.nodes[0].train_marginal.num_classes();
        for (k, node) in self.nodes.iter().enumerate() {
            if node.n_tr == 0 || node.n_te == 0 {
                return Err(Error::InvalidConfig(format!("node {k} needs n_tr, n_te >= 1")));
            }
            for marg in [&node.train_marginal, &node.test_marginal] {
                if marg.num_classes() != m {
                    return Err(Error::DimensionMismatch {
                        expected: m,
                        found: marg.num_classes(),
                    });
                }
            }
        }
        self.server_optimizer.validate()?;
        self.global_model.validate()?;
        self.ratio_predictor.validate()?;
        self.estimator.validate()?;
        self.scenario.validate(&self.nodes)
    }

    pub fn num_classes(&self) -> usize {
        self.nodes[0].train_marginal.num_classes()
    }
}

/// One participant with its materialized data.
#[derive(Debug, Clone)]
pub struct Node {
    pub spec: NodeSpec,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

#[derive(Debug, Clone)]
pub struct Federation {
    pub config: FederationConfig,
    pub nodes: Vec<Node>,
}

impl Federation {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes()
    }

    pub fn dim(&self) -> usize {
        self.nodes[0].train.dim()
    }

    /// Builds a federation from already materialized node datasets.
    pub fn from_datasets(config: FederationConfig, data: Vec<(LabeledDataset, LabeledDataset)>) -> Result<Self> {
        config.validate()?;
        if data.len() != config.nodes.len() {
            return Err(Error::DimensionMismatch {
                expected: config.nodes.len(),
                found: data.len(),
            });
        }
        let m = config.num_classes();
        let d = data[0].0.dim();
        for (train, test) in &data {
            for set in [train, test] {
                if set.num_classes() != m || set.dim() != d {
                    return Err(Error::InvalidDataset(
                        "node datasets disagree on classes or dimension".into(),
                    ));
                }
            }
        }
        let nodes = config
            .nodes
            .iter()
            .cloned()
            .zip(data)
            .map(|(spec, (train, test))| Node { spec, train, test })
            .collect();
        Ok(Self { config, nodes })
    }
}

/// Draws every node's train and test sets from the shared mixture.
pub fn build_federation(cfg: &FederationConfig, mix: &GaussianMixtureSpec) -> Result<Federation> {
    cfg.validate()?;
    if mix.num_classes() != cfg.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: cfg.num_classes(),
            found: mix.num_classes(),
        });
    }
    let data = cfg
        .nodes
        .iter()
        .map(|node| {
            let train = gen_gaussian_mixture(mix, &node.train_marginal, node.n_tr, derive_seed(node.seed, &[0]))?;
            let test = gen_gaussian_mixture(mix, &node.test_marginal, node.n_te, derive_seed(node.seed, &[1]))?;
            Ok((train, test))
        })
        .collect::<Result<Vec<_>>>()?;
    Federation::from_datasets(cfg.clone(), data)
}
