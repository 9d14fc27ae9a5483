use std::f64::consts::FRAC_1_SQRT_2;

use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::ParamVector;

/// Momentum SGD state: `v ← μ·v + g`, `w ← w − α·v`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub velocity: ParamVector,
    pub momentum: f64,
    pub learning_rate: f64,
}

impl OptimizerState {
    pub fn new(like: &ParamVector, learning_rate: f64, momentum: f64) -> Self {
        Self {
            velocity: ParamVector::zeros_like(like),
            momentum,
            learning_rate,
        }
    }

    pub fn reset_velocity(&mut self) {
        self.velocity.as_mut_slice().fill(0.0);
    }
}

pub fn sgd_step(w: &mut ParamVector, grad: &ParamVector, opt: &mut OptimizerState) -> Result<()> {
    w.check_manifest(grad)?;
    w.check_manifest(&opt.velocity)?;
    let (mu, lr) = (opt.momentum, opt.learning_rate);
    for ((wi, vi), gi) in w
        .as_mut_slice()
        .iter_mut()
        .zip(opt.velocity.as_mut_slice().iter_mut())
        .zip(grad.as_slice())
    {
        *vi = mu * *vi + gi;
        *wi -= lr * *vi;
    }
    Ok(())
}

/// Step decay keyed to the epoch counter: the rate is multiplied by
/// `factor` once for every epoch past `start_epoch`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    /// `None` disables annealing.
    pub start_epoch: Option<usize>,
    #[serde(default = "default_factor")]
    pub factor: f64,
}

fn default_factor() -> f64 {
    FRAC_1_SQRT_2
}

impl AnnealSchedule {
    pub fn after(start_epoch: usize) -> Self {
        Self {
            start_epoch: Some(start_epoch),
            factor: FRAC_1_SQRT_2,
        }
    }

    pub fn none() -> Self {
        Self {
            start_epoch: None,
            factor: FRAC_1_SQRT_2,
        }
    }
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self::after(10)
    }
}

/// Learning rate for 1-based `epoch`.
pub fn anneal(alpha: f64, epoch: usize, schedule: &AnnealSchedule) -> f64 {
    match schedule.start_epoch {
        Some(start) if epoch > start => {
            let k = i32::try_from(epoch - start).unwrap_or(i32::MAX);
            alpha * schedule.factor.powi(k)
        }
        _ => alpha,
    }
}
