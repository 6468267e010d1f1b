use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use zsil_core::experiment::{evaluate_checkpoint, recover_from_checkpoint, SweepParam};
use zsil_core::{run_experiment, run_sweep, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "zsil",
    version,
    about = "Zero-shot incremental learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's `output` directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key=value`, applied after the file; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its report directory.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Repeat a run for several values of one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// transfer_size, lambda or eta.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Recover a transfer set from a checkpoint and export it.
    Recover {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Evaluate a checkpoint on the test split of the configured stream.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { common } => {
            let cfg = common.load()?;
            let report = run_experiment(&cfg)?;
            for (k, (classes, a)) in report.averages.iter().enumerate() {
                println!("A_{} ({classes} classes) = {a:.2}", k + 1);
            }
            println!("report written to {}", report.run_dir.display());
        }
        Command::Sweep {
            common,
            param,
            values,
        } => {
            let cfg = common.load()?;
            let param: SweepParam = param.parse()?;
            let report = run_sweep(&cfg, param, &values)?;
            for (value, run) in &report.runs {
                println!("{param}={value}: final A = {:.2}", run.final_average());
            }
            println!("sweep written to {}", report.run_dir.display());
        }
        Command::Recover { common, checkpoint } => {
            let cfg = common.load()?;
            let (_, rcfg) = cfg.stage_configs();
            let dir = cfg.run_dir().join("transfer_set");
            let set = recover_from_checkpoint(&checkpoint, &rcfg, &dir)
                .with_context(|| format!("recovering from {}", checkpoint.display()))?;
            println!(
                "{} samples ({} fallbacks, {} aborted) written to {}",
                set.len(),
                set.stats.fallbacks,
                set.aborted,
                dir.display()
            );
        }
        Command::Eval { common, checkpoint } => {
            let cfg = common.load()?;
            let (_, acc) = evaluate_checkpoint(&cfg, &checkpoint)
                .with_context(|| format!("evaluating {}", checkpoint.display()))?;
            for (j, a) in acc.iter().enumerate() {
                println!("task_{}: {a:.2}", j + 1);
            }
            println!("average: {:.2}", acc.iter().sum::<f64>() / acc.len() as f64);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
