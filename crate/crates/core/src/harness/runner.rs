use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::baselines::{cat_train, centralized_train};
use crate::data::{write_csv, write_metadata, DatasetMetadata};
use crate::error::{Error, Result};
use crate::federation::{run_training_from, Mode, RoundReport, TrainingConfig};
use crate::model::ParamVector;
use crate::transform::AffineTransform;
use crate::transport::{Checkpoint, TrafficStats};

use super::config::{ExperimentConfig, LoadedData};
use super::summary::{emit_summary, write_metrics, SummaryRow};

/// Everything one `train` produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: TrainingConfig,
    pub params: ParamVector,
    pub transforms: BTreeMap<usize, AffineTransform>,
    /// Per-round reports (per-epoch for the pooled modes). A `caft_pt` run
    /// without a starting checkpoint lists its FedAvg pre-training first.
    pub reports: Vec<RoundReport>,
    pub eval_names: Vec<String>,
    pub traffic: TrafficStats,
}

impl RunOutput {
    pub fn final_eval(&self) -> Vec<f64> {
        self.reports.last().map(|r| r.eval_loss.clone()).unwrap_or_default()
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

    pub fn summary_row(&self) -> SummaryRow {
        let last = self.reports.last();
        SummaryRow {
            mode: self.config.mode.to_string(),
            eta: self.config.global_lr,
            rounds_per_epoch: self.config.rounds,
            weighting: self.config.weighting.to_string(),
            seed: self.config.seed,
            train_loss: last.map(|r| r.client_loss.clone()).unwrap_or_default(),
            eval_loss: self.eval_names.iter().cloned().zip(self.final_eval()).collect(),
            total_bytes: self.traffic.bytes_up + self.traffic.bytes_down,
            total_rounds: self.reports.len(),
        }
    }
}

/// Trains with `cfg.mode` on already loaded data.
pub fn run_mode(cfg: &TrainingConfig, data: &LoadedData) -> Result<RunOutput> {
    cfg.validate()?;
    let eval_names = data.eval.iter().map(|e| e.name.clone()).collect();
    let (clients, eval) = (&data.clients, &data.eval);
    let out = match cfg.mode {
        Mode::Centralized | Mode::Cat => {
            let b = if cfg.mode == Mode::Cat {
                cat_train(clients, cfg, eval)?
            } else {
                centralized_train(clients, cfg, eval)?
            };
            RunOutput {
                config: cfg.clone(),
                params: b.params,
                transforms: b.transforms,
                reports: b.reports,
                eval_names,
                traffic: TrafficStats::default(),
            }
        }
        Mode::CaftPt if cfg.init_checkpoint.is_none() => {
            let pre_cfg = TrainingConfig {
                mode: Mode::FedAvg,
                ..cfg.clone()
            };
            let pre = run_training_from(&pre_cfg, clients, eval, None)?;
            let fine = run_training_from(cfg, clients, eval, Some(pre.checkpoint()))?;
            let mut reports = pre.reports;
            let offset = cfg.epochs;
            reports.extend(fine.reports.into_iter().map(|r| RoundReport {
                epoch: r.epoch + offset,
                ..r
            }));
            let traffic = TrafficStats {
                bytes_up: pre.traffic.bytes_up + fine.traffic.bytes_up,
                bytes_down: pre.traffic.bytes_down + fine.traffic.bytes_down,
                messages_up: pre.traffic.messages_up + fine.traffic.messages_up,
                messages_down: pre.traffic.messages_down + fine.traffic.messages_down,
            };
            RunOutput {
                config: cfg.clone(),
                params: fine.params,
                transforms: fine.transforms,
                reports,
                eval_names,
                traffic,
            }
        }
        _ => {
            let init = match &cfg.init_checkpoint {
                Some(p) => Some(Checkpoint::load(p)?),
                None => None,
            };
            let o = run_training_from(cfg, clients, eval, init)?;
            RunOutput {
                config: cfg.clone(),
                params: o.params,
                transforms: o.transforms,
                reports: o.reports,
                eval_names,
                traffic: o.traffic,
            }
        }
    };
    Ok(out)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `checkpoint.flam`, `metrics.jsonl` and a one-row `summary.csv`.
pub fn write_run(out: &RunOutput, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    out.checkpoint().save(&dir.join("checkpoint.flam"))?;
    write_metrics(&out.reports, &dir.join("metrics.jsonl"))?;
    emit_summary(&[out.summary_row()], &dir.join("summary.csv"))
}

/// One run of the experiment with its own training config.
pub fn train(exp: &ExperimentConfig) -> Result<RunOutput> {
    exp.validate()?;
    let data = exp.load_data(exp.training.seed)?;
    run_mode(&exp.training, &data)
}

/// Training configs for every sweep cell, in a fixed order.
pub fn sweep_cells(exp: &ExperimentConfig) -> Vec<TrainingConfig> {
    let s = &exp.sweep;
    let mut cells = Vec::with_capacity(s.cells());
    for w in &s.weighting {
        for &t in &s.rounds {
            for &eta in &s.global_lr {
                for &seed in &s.seeds {
                    cells.push(TrainingConfig {
                        global_lr: eta,
                        rounds: t,
                        weighting: *w,
                        seed,
                        ..exp.training.clone()
                    });
                }
            }
        }
    }
    cells
}

pub fn cell_name(cfg: &TrainingConfig) -> String {
    format!(
        "{}_eta{}_T{}_{}_s{}",
        cfg.mode, cfg.global_lr, cfg.rounds, cfg.weighting, cfg.seed
    )
    .replace(['@', '.'], "-")
}

/// Maximum concurrent sweep cells: `FEDSILO_THREADS` when set, else the
/// machine's parallelism.
pub fn sweep_threads() -> usize {
    std::env::var("FEDSILO_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs every cell, writing each under `<out>/cells/<name>/` and all rows to
/// `<out>/summary.csv`. Rows keep cell order whatever the thread count.
pub fn sweep(exp: &ExperimentConfig, threads: usize, progress: &(dyn Fn(&str) + Sync)) -> Result<Vec<SummaryRow>> {
    exp.validate()?;
    let cells = sweep_cells(exp);
    let threads = threads.clamp(1, cells.len().max(1));
    let results: Mutex<Vec<Option<Result<SummaryRow>>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(cell) = cells.get(i) else { break };
        let mut cfg = cell.clone();
        if threads > 1 {
            cfg.parallel_clients = false;
        }
        let name = cell_name(&cfg);
        let dir: PathBuf = exp.out_dir.join("cells").join(&name);
        let r = exp
            .load_data(cfg.seed)
            .and_then(|data| run_mode(&cfg, &data))
            .and_then(|out| write_run(&out, &dir).map(|_| out.summary_row()));
        progress(&format!("{name}: {}", if r.is_ok() { "done" } else { "failed" }));
        results.lock().expect("sweep results lock")[i] = Some(r);
    };
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(work);
        }
    });
    let rows = results
        .into_inner()
        .expect("sweep results lock")
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect::<Result<Vec<_>>>()?;
    create_dir(&exp.out_dir)?;
    emit_summary(&rows, &exp.out_dir.join("summary.csv"))?;
    Ok(rows)
}

/// Writes synthetic client CSVs, evaluation CSVs and `metadata.json`.
pub fn gen_data(exp: &ExperimentConfig, seed: u64, dir: &Path) -> Result<DatasetMetadata> {
    exp.validate()?;
    let data = exp.load_data(seed)?;
    let Some(task) = data.task else {
        return Err(Error::Config("gen-data needs a synthetic data source".into()));
    };
    create_dir(dir)?;
    let mut meta = DatasetMetadata {
        seed,
        dim: task.base.means.cols(),
        classes: task.base.means.rows(),
        client_files: Vec::new(),
        client_counts: Vec::new(),
        skews: task.skews.clone(),
        eval_files: Vec::new(),
        eval_clients: Vec::new(),
        eval_counts: Vec::new(),
    };
    for c in &task.clients {
        let plain = format!("client{}", c.client_id);
        let name = if c.domain_tag == plain {
            format!("{plain}.csv")
        } else {
            format!("{plain}_{}.csv", c.domain_tag)
        };
        write_csv(&dir.join(&name), &c.features, &c.labels)?;
        meta.client_files.push(name);
        meta.client_counts.push(c.len());
    }
    for e in &task.eval {
        let name = format!("eval_{}.csv", e.name);
        write_csv(&dir.join(&name), &e.features, &e.labels)?;
        meta.eval_files.push(name);
        meta.eval_clients.push(e.client);
        meta.eval_counts.push(e.labels.len());
    }
    write_metadata(&dir.join("metadata.json"), &meta)?;
    Ok(meta)
}
