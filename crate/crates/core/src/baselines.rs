//! Pooled-data reference trainers.

use std::collections::BTreeMap;

use crate::data::{shard_epoch, ClientDataset, EvalSplit};
use crate::error::{Error, Result};
use crate::federation::{evaluate, initial_params, model_spec_for, RoundReport, TrainingConfig};
use crate::model::{anneal, loss_and_grad, sgd_step, ModelSpec, OptimizerState, ParamVector};
use crate::numkit::Matrix;
use crate::transform::{estimate, AffineTransform};

/// Result of a pooled run. One report per epoch, with `round` set to the
/// number of shards per epoch and zero traffic.
#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub params: ParamVector,
    pub transforms: BTreeMap<usize, AffineTransform>,
    pub reports: Vec<RoundReport>,
    pub initial_eval: Vec<f64>,
}

impl BaselineOutcome {
    pub fn final_eval(&self) -> &[f64] {
        self.reports.last().map_or(&self.initial_eval, |r| &r.eval_loss)
    }
}

/// Id used to key the shuffle of the pooled stream. A lone client keeps its
/// own id so its order matches a one-client federated run.
fn pooled_id(datasets: &[ClientDataset]) -> usize {
    match datasets {
        [only] => only.client_id,
        _ => datasets.iter().map(|d| d.client_id + 1).max().unwrap_or(0),
    }
}

fn pool(datasets: &[ClientDataset], transforms: &BTreeMap<usize, AffineTransform>) -> Result<ClientDataset> {
    let mut parts = Vec::with_capacity(datasets.len());
    let mut labels = Vec::new();
    for ds in datasets {
        parts.push(match transforms.get(&ds.client_id) {
            Some(f) => f.apply(&ds.features)?,
            None => ds.features.clone(),
        });
        labels.extend_from_slice(&ds.labels);
    }
    let refs: Vec<&Matrix> = parts.iter().collect();
    let features = Matrix::vstack(&refs)?;
    let classes = datasets.iter().map(|d| d.num_classes).max().unwrap_or(2);
    ClientDataset::new(pooled_id(datasets), features, labels, classes, "pooled")
}

/// One epoch of momentum SGD over the pooled stream, laid out in the same
/// `rounds` shards a federated client would see. Returns the mean batch loss.
fn pooled_epoch(
    w: &mut ParamVector,
    opt: &mut OptimizerState,
    pooled: &ClientDataset,
    epoch: usize,
    spec: &ModelSpec,
    cfg: &TrainingConfig,
) -> Result<f64> {
    let (_, schedule) = cfg.schedule();
    opt.reset_velocity();
    opt.learning_rate = anneal(cfg.local_lr, epoch, &schedule);
    let mut total = 0.0;
    let mut steps = 0usize;
    for shard in shard_epoch(pooled, cfg.rounds, epoch, cfg.seed)? {
        for batch in shard.batches(cfg.batch_size) {
            let (loss, grad) = loss_and_grad(w, &batch, spec)?;
            sgd_step(w, &grad, opt)?;
            total += loss;
            steps += 1;
        }
    }
    if !w.is_finite() {
        return Err(Error::Numeric("pooled model parameters".into()));
    }
    Ok(total / steps.max(1) as f64)
}

fn check(datasets: &[ClientDataset], cfg: &TrainingConfig) -> Result<ModelSpec> {
    cfg.validate()?;
    let spec = model_spec_for(datasets, &cfg.hidden)?;
    let n: usize = datasets.iter().map(ClientDataset::len).sum();
    if n < cfg.rounds {
        return Err(Error::Validation(format!("{n} pooled samples, fewer than {} rounds", cfg.rounds)));
    }
    Ok(spec)
}

/// Momentum SGD on the shuffled union of all client data, with the same
/// initial model and epoch schedule as the federated runs.
pub fn centralized_train(datasets: &[ClientDataset], cfg: &TrainingConfig, eval: &[EvalSplit]) -> Result<BaselineOutcome> {
    let spec = check(datasets, cfg)?;
    let pooled = pool(datasets, &BTreeMap::new())?;
    let mut w = initial_params(&spec, cfg.seed);
    let mut opt = OptimizerState::new(&w, cfg.local_lr, cfg.momentum);
    let none = BTreeMap::new();
    let initial_eval = evaluate(&w, &none, eval, &spec)?;
    let mut reports = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let train = pooled_epoch(&mut w, &mut opt, &pooled, epoch, &spec, cfg)?;
        reports.push(epoch_report(epoch, cfg, train, evaluate(&w, &none, eval, &spec)?));
    }
    Ok(BaselineOutcome {
        params: w,
        transforms: none,
        reports,
        initial_eval,
    })
}

/// Each epoch: re-estimate every client's transform against the current
/// model, then train one epoch on the pooled transformed data.
pub fn cat_train(datasets: &[ClientDataset], cfg: &TrainingConfig, eval: &[EvalSplit]) -> Result<BaselineOutcome> {
    let spec = check(datasets, cfg)?;
    let tcfg = &cfg.transform;
    tcfg.validate()?;
    let (_, schedule) = cfg.schedule();
    let dim = spec.input_dim();
    let mut w = initial_params(&spec, cfg.seed);
    let mut opt = OptimizerState::new(&w, cfg.local_lr, cfg.momentum);
    let mut transforms: BTreeMap<usize, AffineTransform> =
        datasets.iter().map(|d| (d.client_id, AffineTransform::identity(dim))).collect();
    let mut topts: BTreeMap<usize, OptimizerState> = transforms
        .iter()
        .map(|(&id, f)| (id, OptimizerState::new(&f.to_params(), tcfg.learning_rate, tcfg.momentum)))
        .collect();
    let initial_eval = evaluate(&w, &transforms, eval, &spec)?;
    let mut reports = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        for ds in datasets {
            let f = transforms.get_mut(&ds.client_id).expect("transform per client");
            let topt = topts.get_mut(&ds.client_id).expect("optimizer per client");
            topt.reset_velocity();
            topt.learning_rate = anneal(tcfg.learning_rate, epoch, &schedule);
            let order = shard_epoch(ds, 1, epoch, cfg.seed)?;
            estimate(f, &w, &order[0].batch, &spec, tcfg, topt).map_err(|e| Error::Client {
                client: ds.client_id,
                source: Box::new(e),
            })?;
        }
        let pooled = pool(datasets, &transforms)?;
        let train = pooled_epoch(&mut w, &mut opt, &pooled, epoch, &spec, cfg)?;
        reports.push(epoch_report(epoch, cfg, train, evaluate(&w, &transforms, eval, &spec)?));
    }
    Ok(BaselineOutcome {
        params: w,
        transforms,
        reports,
        initial_eval,
    })
}

fn epoch_report(epoch: usize, cfg: &TrainingConfig, train: f64, eval_loss: Vec<f64>) -> RoundReport {
    RoundReport {
        epoch,
        round: cfg.rounds,
        client_loss: vec![train],
        eval_loss,
        bytes_up: 0,
        bytes_down: 0,
        wall_time_ms: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_task, EvalSplitSpec, SyntheticSpec};
    use crate::federation::{run_training, Mode};

    fn small_task(seed: u64) -> (Vec<ClientDataset>, Vec<EvalSplit>) {
        let spec = SyntheticSpec {
            client_sizes: vec![120, 90, 60],
            domain_tags: Vec::new(),
            eval_size: 50,
            eval_splits: vec![
                EvalSplitSpec { name: "a".into(), client: 0, variant: None },
                EvalSplitSpec { name: "b".into(), client: 2, variant: None },
            ],
            ..SyntheticSpec::default()
        };
        let task = generate_task(&spec, seed).unwrap();
        (task.clients, task.eval)
    }

    fn small_cfg(clients: usize) -> TrainingConfig {
        TrainingConfig {
            clients,
            epochs: 3,
            rounds: 4,
            batch_size: 16,
            hidden: vec![8],
            ..TrainingConfig::default()
        }
    }

    #[test]
    fn single_client_matches_one_client_federation() {
        let (clients, eval) = small_task(3);
        let one = vec![clients[0].clone()];
        let cfg = small_cfg(1);
        let fed = run_training(&cfg, &one, &eval).unwrap();
        let cen = centralized_train(&one, &cfg, &eval).unwrap();
        assert!(fed.params.bit_eq(&cen.params));
    }

    #[test]
    fn cat_without_transform_steps_is_centralized() {
        let (clients, eval) = small_task(4);
        let mut cfg = small_cfg(3);
        cfg.mode = Mode::Cat;
        cfg.transform.steps_per_round = Some(0);
        let cat = cat_train(&clients, &cfg, &eval).unwrap();
        let cen = centralized_train(&clients, &cfg, &eval).unwrap();
        assert!(cat.params.bit_eq(&cen.params));
        assert_eq!(cat.final_eval(), cen.final_eval());
    }

    #[test]
    fn deterministic_per_seed() {
        let (clients, eval) = small_task(5);
        let cfg = small_cfg(3);
        let a = centralized_train(&clients, &cfg, &eval).unwrap();
        let b = centralized_train(&clients, &cfg, &eval).unwrap();
        assert!(a.params.bit_eq(&b.params));
    }

    #[test]
    fn centralized_learns() {
        let (clients, eval) = small_task(6);
        let cfg = small_cfg(3);
        let out = centralized_train(&clients, &cfg, &eval).unwrap();
        let before: f64 = out.initial_eval.iter().sum();
        let after: f64 = out.final_eval().iter().sum();
        assert!(after < before, "{after} !< {before}");
    }
}
