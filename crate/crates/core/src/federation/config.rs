use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::AnnealSchedule;
use crate::transform::TransformOptConfig;

/// Which training recipe to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Plain federated averaging.
    #[serde(rename = "fedavg")]
    FedAvg,
    /// Client-adaptive federated training.
    #[serde(rename = "caft")]
    Caft,
    /// Client-adaptive training warm-started from a FedAvg checkpoint.
    #[serde(rename = "caft_pt")]
    CaftPt,
    /// Pooled-data oracle.
    #[serde(rename = "centralized")]
    Centralized,
    /// Pooled-data oracle on per-client canonicalized features.
    #[serde(rename = "cat")]
    Cat,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::FedAvg => "fedavg",
            Mode::Caft => "caft",
            Mode::CaftPt => "caft_pt",
            Mode::Centralized => "centralized",
            Mode::Cat => "cat",
        }
    }

    pub fn is_federated(self) -> bool {
        matches!(self, Mode::FedAvg | Mode::Caft | Mode::CaftPt)
    }

    pub fn uses_transforms(self) -> bool {
        matches!(self, Mode::Caft | Mode::CaftPt | Mode::Cat)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "fedavg" => Mode::FedAvg,
            "caft" => Mode::Caft,
            "caft_pt" => Mode::CaftPt,
            "centralized" => Mode::Centralized,
            "cat" => Mode::Cat,
            other => return Err(Error::Config(format!("unknown mode {other:?}"))),
        })
    }
}

/// How the global risk weights `p_i` are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightStrategy {
    /// `p_i = 1/L`.
    Equal,
    /// `p_i = n_i / n`.
    ProportionalToData,
    /// The favored client gets `weight`; the rest share `1 - weight` equally.
    Preference { client: usize, weight: f64 },
}

impl fmt::Display for WeightStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightStrategy::Equal => f.write_str("equal"),
            WeightStrategy::ProportionalToData => f.write_str("proportional"),
            WeightStrategy::Preference { client, weight } => write!(f, "prefer{client}@{weight}"),
        }
    }
}

/// Weights for clients holding `sizes[i]` samples.
pub fn derive_weights(strategy: &WeightStrategy, sizes: &[usize]) -> Result<Vec<f64>> {
    let l = sizes.len();
    if l == 0 {
        return Err(Error::InvalidInput("no clients to weight".into()));
    }
    match *strategy {
        WeightStrategy::Equal => Ok(vec![1.0 / l as f64; l]),
        WeightStrategy::ProportionalToData => {
            if sizes.contains(&0) {
                return Err(Error::InvalidInput("proportional weighting needs non-empty clients".into()));
            }
            let n = sizes.iter().sum::<usize>() as f64;
            Ok(sizes.iter().map(|&s| s as f64 / n).collect())
        }
        WeightStrategy::Preference { client, weight } => {
            if l < 2 {
                return Err(Error::InvalidInput("preference weighting needs at least two clients".into()));
            }
            if client >= l {
                return Err(Error::InvalidInput(format!("favored client {client} out of range")));
            }
            if !(weight > 0.0 && weight < 1.0) {
                return Err(Error::InvalidInput(format!("favored weight {weight} not in (0, 1)")));
            }
            let rest = (1.0 - weight) / (l - 1) as f64;
            Ok((0..l).map(|i| if i == client { weight } else { rest }).collect())
        }
    }
}

/// Hyper-parameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Number of clients `L`.
    pub clients: usize,
    /// Epochs `M`.
    pub epochs: usize,
    /// Communication rounds per epoch `T`.
    pub rounds: usize,
    /// Local mini-batch size `B`.
    pub batch_size: usize,
    /// Local learning rate `α`.
    pub local_lr: f64,
    /// Global learning rate `η`.
    pub global_lr: f64,
    pub momentum: f64,
    pub weighting: WeightStrategy,
    pub mode: Mode,
    pub anneal: AnnealSchedule,
    pub seed: u64,
    pub init_checkpoint: Option<PathBuf>,
    /// Hidden layer widths of the classifier.
    pub hidden: Vec<usize>,
    pub transform: TransformOptConfig,
    /// Epochs for `caft_pt` runs.
    pub pt_epochs: usize,
    /// Annealing for `caft_pt` runs.
    pub pt_anneal: AnnealSchedule,
    /// Run clients on their own threads within a round.
    pub parallel_clients: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            clients: 5,
            epochs: 20,
            rounds: 20,
            batch_size: 32,
            local_lr: 0.01,
            global_lr: 1.0,
            momentum: 0.9,
            weighting: WeightStrategy::Equal,
            mode: Mode::FedAvg,
            anneal: AnnealSchedule::after(10),
            seed: 0,
            init_checkpoint: None,
            hidden: vec![32],
            transform: TransformOptConfig::default(),
            pt_epochs: 10,
            pt_anneal: AnnealSchedule::after(3),
            parallel_clients: true,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_owned()));
        if self.clients == 0 {
            return fail("clients must be >= 1");
        }
        if self.epochs == 0 || self.pt_epochs == 0 {
            return fail("epochs must be >= 1");
        }
        if self.rounds == 0 {
            return fail("rounds must be >= 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1");
        }
        if !(self.local_lr >= 0.0 && self.local_lr.is_finite()) {
            return fail("local_lr must be a non-negative number");
        }
        if !(self.global_lr > 0.0 && self.global_lr.is_finite()) {
            return fail("global_lr must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail("momentum must be in [0, 1)");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return fail("hidden must list at least one positive width");
        }
        self.transform.validate()?;
        // weights only depend on the client count here, except proportional
        if !matches!(self.weighting, WeightStrategy::ProportionalToData) {
            derive_weights(&self.weighting, &vec![1; self.clients])?;
        }
        Ok(())
    }

    /// Epoch count and annealing actually used by this run's mode.
    pub fn schedule(&self) -> (usize, AnnealSchedule) {
        match self.mode {
            Mode::CaftPt => (self.pt_epochs, self.pt_anneal),
            _ => (self.epochs, self.anneal),
        }
    }
}
