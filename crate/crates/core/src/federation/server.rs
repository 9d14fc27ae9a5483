use crate::error::{Error, Result};
use crate::model::ParamVector;
use crate::transport::RoundMessage;

/// `w_{t+1} = w_t − η Σ_i p_i (w_t − w_i)`, summed in client order.
///
/// At `η = 1` this is evaluated as the weighted average `Σ_i p_i w_i`, which
/// is the same quantity without the cancellation in `w_t − (w_t − w_i)`.
pub fn fedavg_update(w_t: &ParamVector, locals: &[ParamVector], weights: &[f64], eta: f64) -> Result<ParamVector> {
    if locals.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            context: "fedavg weights",
            expected: locals.len(),
            found: weights.len(),
        });
    }
    if locals.is_empty() {
        return Err(Error::InvalidInput("no local models to aggregate".into()));
    }
    for l in locals {
        w_t.check_manifest(l)?;
    }
    let mut out = w_t.clone();
    let w = w_t.as_slice();
    if eta == 1.0 {
        for (k, o) in out.as_mut_slice().iter_mut().enumerate() {
            *o = locals
                .iter()
                .zip(weights)
                .fold(0.0, |acc, (l, p)| acc + p * l.as_slice()[k]);
        }
    } else {
        for (k, o) in out.as_mut_slice().iter_mut().enumerate() {
            let delta = locals
                .iter()
                .zip(weights)
                .fold(0.0, |acc, (l, p)| acc + p * (w[k] - l.as_slice()[k]));
            *o = w[k] - eta * delta;
        }
    }
    if !out.is_finite() {
        return Err(Error::Numeric("aggregated parameters".into()));
    }
    Ok(out)
}

/// Holds the global model and aggregates local updates. Its inputs are
/// parameter messages only.
#[derive(Debug, Clone)]
pub struct Server {
    global: ParamVector,
    weights: Vec<f64>,
    eta: f64,
}

impl Server {
    pub fn new(global: ParamVector, weights: Vec<f64>, eta: f64) -> Self {
        Self { global, weights, eta }
    }

    pub fn global(&self) -> &ParamVector {
        &self.global
    }

    pub fn into_global(self) -> ParamVector {
        self.global
    }

    /// Applies one FedAvg step from a full set of local updates, in any order.
    pub fn aggregate(&mut self, mut updates: Vec<RoundMessage>) -> Result<()> {
        if updates.len() != self.weights.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} updates, got {}",
                self.weights.len(),
                updates.len()
            )));
        }
        let mut ids = Vec::with_capacity(updates.len());
        for u in &updates {
            let id = u
                .client_id()
                .ok_or_else(|| Error::InvalidInput("global model passed as a local update".into()))?;
            ids.push(id as usize);
        }
        updates.sort_by_key(|u| u.client_id());
        ids.sort_unstable();
        if ids.iter().enumerate().any(|(i, &id)| i != id) {
            return Err(Error::InvalidInput(format!("updates must come from clients 0..{}", self.weights.len())));
        }
        let locals: Vec<ParamVector> = updates.into_iter().map(|u| u.params).collect();
        self.global = fedavg_update(&self.global, &locals, &self.weights, self.eta)?;
        Ok(())
    }
}
