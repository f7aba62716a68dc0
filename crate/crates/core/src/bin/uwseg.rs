use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use uwseg::data::{generate_dataset, GenerateConfig, Split};
use uwseg::harness::{self, EvalOptions, LossMode, RunConfig};
use uwseg::metrics::write_eval_csv;
use uwseg::{Error, Result};

#[derive(Parser)]
#[command(name = "uwseg", version, about = "Uncertainty-weighted segmentation training on synthetic data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset and its manifest.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Train a model and write the best checkpoint and the epoch log.
    Train {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score a checkpoint on one split and write per-case metrics.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "val")]
        split: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long, default_value_t = 2.0)]
        tolerance: f64,
        /// Record per-case wall-clock seconds instead of zeros.
        #[arg(long)]
        timing: bool,
    },
    /// Train the four ablation arms and write mean DSC/NSD per arm.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Per-seed rows are written here when given.
        #[arg(long)]
        runs_out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Distill a teacher checkpoint into a fresh student.
    Distill {
        #[arg(long)]
        teacher: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Finite-difference gradient checks on random instances.
    Gradcheck {
        /// Also check the model objective and distillation loss.
        #[arg(long)]
        full: bool,
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// single:<loss>, fixed_equal or uncertainty.
    #[arg(long)]
    loss_mode: Option<LossMode>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    sharpmin: Option<bool>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    distill: Option<bool>,
    #[arg(long)]
    train_limit: Option<usize>,
    #[arg(long)]
    val_limit: Option<usize>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_json_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    cfg.$field = v.clone().into();
                }
            )*};
        }
        set!(data, out, loss_mode, epochs, lr, batch_size, seed, width, train_limit, val_limit);
        if let Some(on) = self.sharpmin {
            cfg.sharpmin.enabled = on;
        }
        if let Some(rho) = self.rho {
            cfg.sharpmin.rho = rho;
        }
        if let Some(on) = self.distill {
            cfg.distill.enabled = on;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn print_outcome(outcome: &harness::TrainOutcome) {
    let last = outcome.log.rows.last();
    println!(
        "{}",
        json!({
            "best_epoch": outcome.best_epoch,
            "best_val_loss": outcome.best_val_loss,
            "final_train_loss": last.map(|r| r.train_loss),
            "grad_evals": outcome.log.total_grad_evals(),
            "sigma2": outcome.uncertainty.as_ref().map(|u| u.sigma2()),
        })
    );
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, out, seed } => {
            let cfg = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| Error::Io { path, source: e })?;
                    serde_json::from_str(&text)?
                }
                None => GenerateConfig::default(),
            };
            let manifest = generate_dataset(&cfg, seed, &out)?;
            println!("{}", json!({ "cases": manifest.cases.len(), "out": out }));
        }
        Command::Train { run } => {
            let outcome = harness::train(&run.resolve()?)?;
            print_outcome(&outcome);
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            out,
            threshold,
            tolerance,
            timing,
        } => {
            let opts = EvalOptions {
                threshold,
                nsd_tolerance: tolerance,
                timed: timing,
            };
            let (records, summary) = harness::evaluate_checkpoint(&checkpoint, &data, Split::parse(&split)?, opts)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::Io {
                    path: dir.to_path_buf(),
                    source: e,
                })?;
            }
            write_eval_csv(&records, &out)?;
            println!(
                "{}",
                json!({ "cases": summary.cases, "mean_dsc": summary.mean_dsc, "mean_nsd": summary.mean_nsd })
            );
        }
        Command::Ablate { run, runs_out, seeds } => {
            let mut cfg = run.resolve()?;
            if let Some(seeds) = seeds {
                cfg.seeds = seeds;
            }
            let out = cfg.out.take().ok_or_else(|| Error::Config("ablate needs --out".into()))?;
            let report = harness::ablate(&cfg)?;
            write(&out, &report.to_csv())?;
            if let Some(path) = runs_out {
                write(&path, &report.runs_csv())?;
            }
            print!("{}", report.to_csv());
        }
        Command::Distill { teacher, run } => {
            let outcome = harness::distill(&teacher, &run.resolve()?)?;
            print_outcome(&outcome);
        }
        Command::Gradcheck { full, instances, seed } => {
            let report = harness::gradcheck_suite(seed, instances, full)?;
            for e in report.failing() {
                eprintln!(
                    "FAIL instance {} {}: relative error {:.3e} at {}",
                    e.instance, e.target, e.rel_error, e.worst_leaf
                );
            }
            println!(
                "{}",
                json!({ "checks": report.entries.len(), "passed": report.passed(), "rel_error": report.rel_error(), "max_elem_error": report.entries.iter().map(|e| e.max_elem_error).fold(0.0, f64::max) })
            );
            if !report.passed() {
                return Err(Error::InvalidArgument("gradient check failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", json!({ "error": "usage", "message": first }));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
