//! Experiment configuration, the `fedsilo` command line, metric files and
//! summary tables.

mod config;
mod runner;
mod summary;
mod verify;

pub use config::{CsvEvalSplit, DataSource, ExperimentConfig, LoadedData, SweepAxes};
pub use runner::{cell_name, gen_data, run_mode, sweep, sweep_cells, sweep_threads, train, write_run, RunOutput};
pub use summary::{emit_summary, write_metrics, SummaryRow, SUMMARY_COLUMNS};
pub use verify::{run_checks, Check};

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::federation::{evaluate, model_spec_for, Mode};
use crate::model::{accuracy, LabeledBatch};
use crate::transport::Checkpoint;

/// Exit code for configuration and input validation failures.
pub const EXIT_CONFIG: i32 = 1;
/// Exit code for numerical breakdown and other runtime failures.
pub const EXIT_RUNTIME: i32 = 2;
/// Exit code when `verify` finds a failing check.
pub const EXIT_VERIFY: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "fedsilo", version, about = "Cross-silo federated training simulator")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone, Default)]
struct Common {
    /// Experiment config (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the training mode: fedavg, caft, caft_pt, centralized or cat.
    #[arg(long, global = true)]
    mode: Option<Mode>,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic client and evaluation CSVs plus metadata.json.
    GenData,
    /// Run one training job.
    Train,
    /// Run the sweep grid; one summary row per cell.
    Sweep,
    /// Score a checkpoint on the evaluation splits.
    Eval {
        /// Checkpoint to score; defaults to <out>/checkpoint.flam.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the built-in invariant checks.
    Verify,
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Maps an error to the documented exit code.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numeric() {
        return EXIT_RUNTIME;
    }
    match e {
        Error::Config(_)
        | Error::Validation(_)
        | Error::Parse { .. }
        | Error::Io { .. }
        | Error::Json(_)
        | Error::ManifestMismatch(_)
        | Error::InvalidInput(_) => EXIT_CONFIG,
        Error::Client { source, .. } => exit_code(source),
        _ => EXIT_RUNTIME,
    }
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut exp = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = c.seed {
        exp.training.seed = seed;
        exp.sweep.seeds = vec![seed];
    }
    if let Some(out) = &c.out {
        exp.out_dir = out.clone();
    }
    if let Some(mode) = c.mode {
        exp.training.mode = mode;
    }
    exp.validate()?;
    Ok(exp)
}

fn dispatch(cli: Cli) -> Result<i32> {
    let Cli { command, common } = cli;
    let say = |msg: &str| {
        if !common.quiet {
            println!("{msg}");
        }
    };
    match command {
        Command::Verify => {
            let checks = run_checks(common.seed.unwrap_or(0));
            let mut ok = true;
            for c in &checks {
                ok &= c.passed;
                say(&format!("[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail));
            }
            return Ok(if ok { 0 } else { EXIT_VERIFY });
        }
        Command::GenData => {
            let exp = load_config(&common)?;
            let meta = gen_data(&exp, exp.training.seed, &exp.out_dir)?;
            say(&format!(
                "wrote {} client files and {} eval files to {}",
                meta.client_files.len(),
                meta.eval_files.len(),
                exp.out_dir.display()
            ));
        }
        Command::Train => {
            let exp = load_config(&common)?;
            let out = train(&exp)?;
            write_run(&out, &exp.out_dir)?;
            let row = out.summary_row();
            say(&format!(
                "{} seed {}: {} rounds, mean eval loss {:.6}, {} bytes; wrote {}",
                row.mode,
                row.seed,
                row.total_rounds,
                row.mean_eval_loss(),
                row.total_bytes,
                exp.out_dir.display()
            ));
        }
        Command::Sweep => {
            let exp = load_config(&common)?;
            let quiet = common.quiet;
            let rows = sweep(&exp, sweep_threads(), &|m| {
                if !quiet {
                    println!("{m}");
                }
            })?;
            say(&format!("{} cells; wrote {}", rows.len(), exp.out_dir.join("summary.csv").display()));
        }
        Command::Eval { checkpoint } => {
            let exp = load_config(&common)?;
            let path = checkpoint.unwrap_or_else(|| exp.out_dir.join("checkpoint.flam"));
            let ck = Checkpoint::load(&path)?;
            let data = exp.load_data(exp.training.seed)?;
            let spec = model_spec_for(&data.clients, &exp.training.hidden)?;
            if ck.params.manifest() != spec.manifest().as_slice() {
                return Err(Error::ManifestMismatch(format!("{} does not match the configured model", path.display())));
            }
            let losses = evaluate(&ck.params, &ck.transforms, &data.eval, &spec)?;
            let mut report = serde_json::Map::new();
            for (split, l) in data.eval.iter().zip(&losses) {
                let batch = LabeledBatch::new(split.features.clone(), split.labels.clone())?;
                let batch = match split.client.and_then(|c| ck.transforms.get(&c)) {
                    Some(f) => f.apply_batch(&batch)?,
                    None => batch,
                };
                let acc = accuracy(&ck.params, &batch, &spec)?;
                say(&format!("{}: loss {l:.6} accuracy {acc:.4}", split.name));
                report.insert(split.name.clone(), serde_json::json!({ "loss": l, "accuracy": acc }));
            }
            std::fs::create_dir_all(&exp.out_dir).map_err(|e| Error::io(&exp.out_dir, e))?;
            let p = exp.out_dir.join("eval.json");
            std::fs::write(&p, serde_json::to_string_pretty(&report)? + "\n").map_err(|e| Error::io(&p, e))?;
        }
    }
    Ok(0)
}
