use crate::data::{shard_epoch, ClientDataset, RoundShard};
use crate::error::{Error, Result};
use crate::model::{anneal, loss_and_grad, sgd_step, ModelSpec, OptimizerState, ParamVector};
use crate::transform::{estimate, AffineTransform, TransformOptConfig};

use super::TrainingConfig;

/// Everything a client keeps between rounds. Never leaves the client.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: usize,
    pub dataset: ClientDataset,
    pub weight: f64,
    pub optimizer: OptimizerState,
    pub transform: Option<AffineTransform>,
    pub transform_optimizer: Option<OptimizerState>,
    pub local_params: ParamVector,
    shards: Vec<RoundShard>,
}

/// What a client produces in one round.
#[derive(Debug, Clone)]
pub struct ClientUpdate {
    pub params: ParamVector,
    /// Mean pre-step mini-batch loss over the round.
    pub train_loss: f64,
    pub steps: usize,
}

impl ClientState {
    pub fn new(dataset: ClientDataset, weight: f64, init: &ParamVector, cfg: &TrainingConfig, transform: Option<AffineTransform>) -> Self {
        let transform_optimizer = transform
            .as_ref()
            .map(|f| OptimizerState::new(&f.to_params(), cfg.transform.learning_rate, cfg.transform.momentum));
        Self {
            client_id: dataset.client_id,
            dataset,
            weight,
            optimizer: OptimizerState::new(init, cfg.local_lr, cfg.momentum),
            transform,
            transform_optimizer,
            local_params: init.clone(),
            shards: Vec::new(),
        }
    }

    /// Reshards the local data, resets momentum buffers and sets the annealed
    /// learning rates for `epoch` (1-based).
    pub fn begin_epoch(&mut self, epoch: usize, cfg: &TrainingConfig) -> Result<()> {
        let (_, schedule) = cfg.schedule();
        self.shards = shard_epoch(&self.dataset, cfg.rounds, epoch, cfg.seed)?;
        self.optimizer.reset_velocity();
        self.optimizer.learning_rate = anneal(cfg.local_lr, epoch, &schedule);
        if let Some(opt) = self.transform_optimizer.as_mut() {
            opt.reset_velocity();
            opt.learning_rate = anneal(cfg.transform.learning_rate, epoch, &schedule);
        }
        Ok(())
    }

    pub fn shard(&self, round: usize) -> Result<&RoundShard> {
        self.shards.get(round).ok_or_else(|| {
            Error::InvalidInput(format!("client {}: no shard for round index {round}", self.client_id))
        })
    }

    /// Runs the round with index `round` (0-based within the epoch), choosing
    /// the adaptive variant when the client holds a transform.
    pub fn run_round(&mut self, w_t: &ParamVector, round: usize, spec: &ModelSpec, cfg: &TrainingConfig) -> Result<ClientUpdate> {
        let shard = self.shard(round)?.clone();
        if self.transform.is_some() {
            caft_client_round(self, w_t, &shard, spec, cfg, &cfg.transform)
        } else {
            client_round(self, w_t, &shard, spec, cfg)
        }
    }
}

/// `⌈|S| / B⌉` momentum-SGD steps from `w_t` over the shard, in shard order,
/// on features mapped through the client's transform when it has one.
pub fn client_round(
    state: &mut ClientState,
    w_t: &ParamVector,
    shard: &RoundShard,
    spec: &ModelSpec,
    cfg: &TrainingConfig,
) -> Result<ClientUpdate> {
    if shard.is_empty() {
        return Err(Error::InvalidInput(format!("client {}: empty shard", state.client_id)));
    }
    w_t.check_manifest(&state.optimizer.velocity)?;
    state.local_params = w_t.clone();
    let mut total = 0.0;
    let mut steps = 0;
    for batch in shard.batches(cfg.batch_size) {
        let batch = match &state.transform {
            Some(f) => f.apply_batch(&batch)?,
            None => batch,
        };
        let (loss, grad) = loss_and_grad(&state.local_params, &batch, spec)?;
        sgd_step(&mut state.local_params, &grad, &mut state.optimizer)?;
        total += loss;
        steps += 1;
    }
    if !state.local_params.is_finite() {
        return Err(Error::Numeric(format!("client {} parameters", state.client_id)));
    }
    Ok(ClientUpdate {
        params: state.local_params.clone(),
        train_loss: total / steps as f64,
        steps,
    })
}

/// Estimates the client's transform against the frozen `w_t`, then runs the
/// local steps on transformed features.
pub fn caft_client_round(
    state: &mut ClientState,
    w_t: &ParamVector,
    shard: &RoundShard,
    spec: &ModelSpec,
    cfg: &TrainingConfig,
    tcfg: &TransformOptConfig,
) -> Result<ClientUpdate> {
    if shard.is_empty() {
        return Err(Error::InvalidInput(format!("client {}: empty shard", state.client_id)));
    }
    let (Some(f), Some(topt)) = (state.transform.as_mut(), state.transform_optimizer.as_mut()) else {
        return Err(Error::InvalidInput(format!("client {} has no transform", state.client_id)));
    };
    estimate(f, w_t, &shard.batch, spec, tcfg, topt)?;
    client_round(state, w_t, shard, spec, cfg)
}
