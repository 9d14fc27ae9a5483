//! Small tanh classifier with mean cross-entropy loss, analytic gradients and
//! momentum SGD.

mod mlp;
mod optim;
mod params;

pub use mlp::{accuracy, init_params, loss, loss_and_grad, loss_and_input_grad};
pub use optim::{anneal, sgd_step, AnnealSchedule, OptimizerState};
pub use params::{BlockShape, ParamVector};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Matrix;

/// Layer widths `[input, hidden..., classes]`; hidden layers use tanh.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct ModelSpec {
    layer_sizes: Vec<usize>,
}

impl ModelSpec {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 3 {
            return Err(Error::InvalidInput(
                "model needs an input, at least one hidden layer and an output".into(),
            ));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::InvalidInput("layer width must be positive".into()));
        }
        if layer_sizes[layer_sizes.len() - 1] < 2 {
            return Err(Error::InvalidInput("need at least two classes".into()));
        }
        Ok(Self { layer_sizes })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        self.layer_sizes[self.layer_sizes.len() - 1]
    }

    pub fn manifest(&self) -> Vec<BlockShape> {
        mlp::manifest(self)
    }

    pub fn num_params(&self) -> usize {
        self.manifest().iter().map(BlockShape::len).sum()
    }
}

impl TryFrom<Vec<usize>> for ModelSpec {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ModelSpec> for Vec<usize> {
    fn from(s: ModelSpec) -> Self {
        s.layer_sizes
    }
}

/// Features (`B × d`) with one class index per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl LabeledBatch {
    pub fn new(features: Matrix, labels: Vec<usize>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::DimensionMismatch {
                context: "batch labels",
                expected: features.rows(),
                found: labels.len(),
            });
        }
        if labels.is_empty() {
            return Err(Error::InvalidInput("batch must hold at least one sample".into()));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows `[start, end)` as a new batch.
    pub fn slice(&self, start: usize, end: usize) -> LabeledBatch {
        let idx: Vec<usize> = (start..end).collect();
        LabeledBatch {
            features: self.features.select_rows(&idx),
            labels: self.labels[start..end].to_vec(),
        }
    }
}
