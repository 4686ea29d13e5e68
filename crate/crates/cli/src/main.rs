use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use gip_lab::{cmd_lemma_check, cmd_probe, cmd_pretrain, cmd_sweep, load_config, Overrides};
use giplab::DatasetSource;

#[derive(Parser)]
#[command(name = "gip-lab", version, about = "Graph self-supervised pretraining with inter-graph edges")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone, Debug)]
struct Common {
    /// `key = value` run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// `synth-2M` or `tud:PATH:NAME`.
    #[arg(long)]
    dataset: Option<DatasetSource>,
    #[arg(long)]
    p1: Option<f64>,
    #[arg(long)]
    p2: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            dataset: self.dataset.clone(),
            p1: self.p1,
            p2: self.p2,
            epochs: self.epochs,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train an encoder and write a checkpoint plus loss trace.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "runs/pretrain")]
        out: PathBuf,
    },
    /// Score a frozen checkpoint with a linear probe and CMSP.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: Option<DatasetSource>,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        /// Fold seed; the checkpoint's training seed by default.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "runs/probe")]
        out: PathBuf,
    },
    /// Pretrain and probe every (p1, p2, seed) cell.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Values used for both p1 and p2 unless those grids are given.
        #[arg(long, value_delimiter = ',', default_value = "0.05,0.5,0.9")]
        grid: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        p1_grid: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        p2_grid: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value = "runs/sweep")]
        out: PathBuf,
    },
    /// Check the ReLU-difference decomposition on one batch and print JSON.
    LemmaCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.5)]
        p: f64,
        #[arg(long, default_value_t = 1e-10)]
        tolerance: f64,
        /// Use trained parameters instead of a fresh initialization.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

/// Writes one line to stdout; a closed pipe (`| head`) is not an error.
fn emit(line: impl std::fmt::Display) -> Result<()> {
    match writeln!(std::io::stdout().lock(), "{line}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Pretrain { common, out } => {
            let cfg = load_config(common.config.as_deref(), &common.overrides())?;
            let run = cmd_pretrain(&cfg, &out)?;
            emit(run.checkpoint.display())?;
        }
        Command::Probe {
            checkpoint,
            dataset,
            folds,
            seed,
            out,
        } => {
            let run = cmd_probe(&checkpoint, dataset, folds, seed, &out)?;
            emit(gip_lab::METRICS_HEADER)?;
            emit(run.row.to_csv())?;
        }
        Command::Sweep {
            common,
            grid,
            p1_grid,
            p2_grid,
            seeds,
            folds,
            out,
        } => {
            let cfg = load_config(common.config.as_deref(), &common.overrides())?;
            let p1 = p1_grid.unwrap_or_else(|| grid.clone());
            let p2 = p2_grid.unwrap_or(grid);
            let rows = cmd_sweep(&cfg, &p1, &p2, &seeds, folds, &out)?;
            let failed = rows.iter().filter(|r| r.result.is_err()).count();
            emit(format_args!(
                "{} cells, {failed} failed -> {}",
                rows.len(),
                out.join(gip_lab::SWEEP_FILE).display()
            ))?;
        }
        Command::LemmaCheck {
            common,
            p,
            tolerance,
            checkpoint,
        } => {
            let cfg = load_config(common.config.as_deref(), &common.overrides())?;
            let report = cmd_lemma_check(&cfg, p, tolerance, checkpoint.as_deref())?;
            emit(serde_json::to_string_pretty(&report)?)?;
            if !report.pass {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
