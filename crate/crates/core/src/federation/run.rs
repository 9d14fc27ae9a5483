use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::data::{ClientDataset, EvalSplit};
use crate::error::{Error, Result};
use crate::model::{init_params, loss, LabeledBatch, ModelSpec, ParamVector};
use crate::numkit::Rng;
use crate::transform::AffineTransform;
use crate::transport::{channel, ChannelError, Checkpoint, ClientEndpoint, RoundMessage, TrafficStats};

use super::{derive_weights, ClientState, ClientUpdate, Mode, Server, TrainingConfig};

/// How long the server waits for the slowest client in a round.
pub const ROUND_TIMEOUT: Duration = Duration::from_secs(300);

/// Metrics for one communication round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub epoch: usize,
    /// 1-based round within the epoch.
    pub round: usize,
    pub client_loss: Vec<f64>,
    pub eval_loss: Vec<f64>,
    pub bytes_up: u64,
    pub bytes_down: u64,
    /// Milliseconds spent in the round. Not serialized, so metric files
    /// stay reproducible.
    #[serde(skip)]
    pub wall_time_ms: f64,
}

impl RoundReport {
    pub fn mean_eval_loss(&self) -> f64 {
        mean(&self.eval_loss)
    }
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub params: ParamVector,
    pub transforms: BTreeMap<usize, AffineTransform>,
    pub reports: Vec<RoundReport>,
    /// Evaluation of the initial global model, before any update.
    pub initial_eval: Vec<f64>,
    pub traffic: TrafficStats,
}

impl TrainingOutcome {
    pub fn final_eval(&self) -> &[f64] {
        self.reports.last().map_or(&self.initial_eval, |r| &r.eval_loss)
    }

    pub fn final_client_loss(&self) -> Vec<f64> {
        self.reports.last().map(|r| r.client_loss.clone()).unwrap_or_default()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let (epoch, round) = self
            .reports
            .last()
            .map_or((0, 0), |r| (r.epoch as u32, r.round as u32));
        Checkpoint {
            epoch,
            round,
            params: self.params.clone(),
            transforms: self.transforms.clone(),
        }
    }
}

/// Model shape for the given clients: `[d, hidden..., C]`.
pub fn model_spec_for(clients: &[ClientDataset], hidden: &[usize]) -> Result<ModelSpec> {
    let first = clients
        .first()
        .ok_or_else(|| Error::InvalidInput("no client datasets".into()))?;
    let dim = first.dim();
    let classes = clients.iter().map(|c| c.num_classes).max().unwrap_or(2);
    if let Some(c) = clients.iter().find(|c| c.dim() != dim) {
        return Err(Error::Validation(format!(
            "client {} has feature dim {}, expected {dim}",
            c.client_id,
            c.dim()
        )));
    }
    let mut sizes = Vec::with_capacity(hidden.len() + 2);
    sizes.push(dim);
    sizes.extend_from_slice(hidden);
    sizes.push(classes);
    ModelSpec::new(sizes)
}

/// Initial global model for `seed`.
pub fn initial_params(spec: &ModelSpec, seed: u64) -> ParamVector {
    init_params(spec, &mut Rng::keyed(seed, "init", &[]))
}

/// Mean cross-entropy on each split; a split tied to a client is first mapped
/// through that client's transform, when one exists.
pub fn evaluate(
    params: &ParamVector,
    transforms: &BTreeMap<usize, AffineTransform>,
    splits: &[EvalSplit],
    spec: &ModelSpec,
) -> Result<Vec<f64>> {
    splits
        .iter()
        .map(|s| {
            let batch = LabeledBatch::new(s.features.clone(), s.labels.clone())?;
            match s.client.and_then(|c| transforms.get(&c)) {
                Some(f) => loss(params, &f.apply_batch(&batch)?, spec),
                None => loss(params, &batch, spec),
            }
        })
        .collect()
}

fn check_clients(cfg: &TrainingConfig, clients: &[ClientDataset]) -> Result<()> {
    if clients.len() != cfg.clients {
        return Err(Error::Config(format!(
            "config expects {} clients, data has {}",
            cfg.clients,
            clients.len()
        )));
    }
    for (i, c) in clients.iter().enumerate() {
        if c.client_id != i {
            return Err(Error::Validation(format!("client at position {i} has id {}", c.client_id)));
        }
        if c.len() < cfg.rounds {
            return Err(Error::Validation(format!(
                "client {i} has {} samples, fewer than {} rounds",
                c.len(),
                cfg.rounds
            )));
        }
    }
    Ok(())
}

/// Runs federated training, loading `cfg.init_checkpoint` when set.
pub fn run_training(cfg: &TrainingConfig, clients: &[ClientDataset], eval: &[EvalSplit]) -> Result<TrainingOutcome> {
    let init = match &cfg.init_checkpoint {
        Some(path) => Some(Checkpoint::load(path)?),
        None => None,
    };
    run_training_from(cfg, clients, eval, init)
}

/// Runs federated training from an in-memory starting checkpoint.
pub fn run_training_from(
    cfg: &TrainingConfig,
    clients: &[ClientDataset],
    eval: &[EvalSplit],
    init: Option<Checkpoint>,
) -> Result<TrainingOutcome> {
    cfg.validate()?;
    if !cfg.mode.is_federated() {
        return Err(Error::Config(format!("mode {} is not a federated mode", cfg.mode)));
    }
    if cfg.mode == Mode::CaftPt && init.is_none() {
        return Err(Error::Config("mode caft_pt requires a starting checkpoint".into()));
    }
    check_clients(cfg, clients)?;
    let spec = model_spec_for(clients, &cfg.hidden)?;
    let (epochs, _) = cfg.schedule();

    let (w0, init_transforms) = match init {
        Some(ck) => {
            if ck.params.manifest() != spec.manifest().as_slice() {
                return Err(Error::ManifestMismatch("checkpoint does not match the model spec".into()));
            }
            (ck.params, ck.transforms)
        }
        None => (initial_params(&spec, cfg.seed), BTreeMap::new()),
    };

    let sizes: Vec<usize> = clients.iter().map(ClientDataset::len).collect();
    let weights = derive_weights(&cfg.weighting, &sizes)?;
    let dim = spec.input_dim();
    let mut states: Vec<ClientState> = clients
        .iter()
        .zip(&weights)
        .map(|(ds, &p)| {
            let transform = cfg
                .mode
                .uses_transforms()
                .then(|| init_transforms.get(&ds.client_id).cloned().unwrap_or_else(|| AffineTransform::identity(dim)));
            ClientState::new(ds.clone(), p, &w0, cfg, transform)
        })
        .collect();

    let (mut server_ep, mut client_eps) = channel(states.len(), ROUND_TIMEOUT);
    let initial_eval = evaluate(&w0, &collect_transforms(&states), eval, &spec)?;
    let mut server = Server::new(w0, weights, cfg.global_lr);
    let mut reports = Vec::with_capacity(epochs * cfg.rounds);
    let mut last_traffic = server_ep.traffic();

    for epoch in 1..=epochs {
        for s in states.iter_mut() {
            s.begin_epoch(epoch, cfg)?;
        }
        for t in 0..cfg.rounds {
            let started = clock::now();
            let round = t + 1;
            server_ep.broadcast(&RoundMessage::global(epoch as u32, round as u32, server.global().clone()))?;
            let losses = run_clients(&mut states, &mut client_eps, t, &spec, cfg)?;
            let updates = server_ep.collect(epoch as u32, round as u32)?;
            server.aggregate(updates)?;

            let eval_loss = evaluate(server.global(), &collect_transforms(&states), eval, &spec)?;
            let traffic = server_ep.traffic();
            reports.push(RoundReport {
                epoch,
                round,
                client_loss: losses,
                eval_loss,
                bytes_up: traffic.bytes_up - last_traffic.bytes_up,
                bytes_down: traffic.bytes_down - last_traffic.bytes_down,
                wall_time_ms: clock::elapsed_ms(started),
            });
            last_traffic = traffic;
        }
    }

    Ok(TrainingOutcome {
        transforms: collect_transforms(&states),
        params: server.into_global(),
        reports,
        initial_eval,
        traffic: server_ep.traffic(),
    })
}

fn collect_transforms(states: &[ClientState]) -> BTreeMap<usize, AffineTransform> {
    states
        .iter()
        .filter_map(|s| s.transform.clone().map(|f| (s.client_id, f)))
        .collect()
}

/// One client's side of a round: receive the global model, update locally,
/// send the result back.
fn client_turn(
    state: &mut ClientState,
    endpoint: &mut ClientEndpoint,
    t: usize,
    spec: &ModelSpec,
    cfg: &TrainingConfig,
) -> Result<f64> {
    let msg = endpoint.receive()?;
    let ClientUpdate { params, train_loss, .. } = state.run_round(&msg.params, t, spec, cfg)?;
    endpoint.send(&RoundMessage::local(endpoint.client_id(), msg.epoch, msg.round, params))?;
    Ok(train_loss)
}

fn run_clients(
    states: &mut [ClientState],
    endpoints: &mut [ClientEndpoint],
    t: usize,
    spec: &ModelSpec,
    cfg: &TrainingConfig,
) -> Result<Vec<f64>> {
    let wrap = |id: usize, r: Result<f64>| {
        r.map_err(|e| Error::Client {
            client: id,
            source: Box::new(e),
        })
    };
    let parallel = cfg.parallel_clients && states.len() > 1 && !cfg!(target_arch = "wasm32");
    if !parallel {
        return states
            .iter_mut()
            .zip(endpoints.iter_mut())
            .map(|(s, ep)| {
                let id = s.client_id;
                wrap(id, client_turn(s, ep, t, spec, cfg))
            })
            .collect();
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = states
            .iter_mut()
            .zip(endpoints.iter_mut())
            .map(|(s, ep)| {
                let id = s.client_id;
                (id, scope.spawn(move || client_turn(s, ep, t, spec, cfg)))
            })
            .collect();
        handles
            .into_iter()
            .map(|(id, h)| {
                let r = h
                    .join()
                    .unwrap_or_else(|_| Err(Error::Channel(ChannelError::Protocol(format!("client {id} panicked")))));
                wrap(id, r)
            })
            .collect()
    })
}

mod clock {
    #[cfg(not(target_arch = "wasm32"))]
    pub fn now() -> Option<std::time::Instant> {
        Some(std::time::Instant::now())
    }

    #[cfg(target_arch = "wasm32")]
    pub fn now() -> Option<std::time::Instant> {
        None
    }

    pub fn elapsed_ms(start: Option<std::time::Instant>) -> f64 {
        start.map_or(0.0, |s| s.elapsed().as_secs_f64() * 1e3)
    }
}
