//! `merit`: train, compare, evaluate and inspect runs from the command line.
//!
//! Exit codes: 0 on success, 1 on usage, config or format errors, 2 when a
//! training run diverged. Set `MERIT_LOG=debug|info` for progress logs.

mod commands;
mod export;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "merit", version, about = "MERIT optimizer testbed")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Which {
    NormGap,
    Similarity,
    Curvature,
    BoundCheck,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Fixture {
    Quadratic,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one config; writes metrics.jsonl and final.ckpt.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train several configs on the same data and write one comparison CSV.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        configs: Vec<PathBuf>,
        #[arg(long, default_value = "compare.csv")]
        out: PathBuf,
    },
    /// Mean loss of a checkpoint on the config's train or val split.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "val")]
        split: SplitArg,
    },
    /// Compare analytic gradients with central differences at random
    /// coordinates of the config's freshly initialized model.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
        coords: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Perturb the analytic gradient (negative control).
        #[arg(long, hide = true)]
        corrupt_grad: bool,
    },
    /// Run one diagnostic over a checkpoint and write its CSV.
    Diagnose {
        #[arg(long, required_unless_present = "fixture")]
        ckpt: Option<PathBuf>,
        #[arg(long, value_enum)]
        which: Which,
        /// Data source for curvature and bound-check batches.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Use a built-in fixture instead of a checkpoint (curvature only).
        #[arg(long, value_enum, conflicts_with = "ckpt")]
        fixture: Option<Fixture>,
        #[arg(long, default_value_t = 100)]
        probes: usize,
        #[arg(long, default_value_t = 200)]
        iters: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train briefly at each learning rate and record the max attention logit.
    LrSweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        lrs: Vec<f64>,
        #[arg(long)]
        steps: u64,
        /// Defaults to the config's optimizer.
        #[arg(long)]
        optimizer: Option<String>,
        #[arg(long, default_value = "lr_sweep.csv")]
        out: PathBuf,
    },
    /// Turn metrics.jsonl files into tidy CSVs for plotting.
    ExportPlots {
        #[arg(long, num_args = 1.., required = true)]
        metrics: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Outcome of a command that ran to completion.
pub enum Status {
    Ok,
    Diverged,
    /// The command ran but its check failed (gradcheck above tolerance).
    CheckFailed,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MERIT_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Diverged) => ExitCode::from(2),
        Ok(Status::CheckFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cmd: Command) -> anyhow::Result<Status> {
    use merit_core::harness::Split;
    match cmd {
        Command::Train { config, seed, out } => commands::train(&config, seed, out),
        Command::Compare { configs, out } => commands::compare(&configs, &out),
        Command::Evaluate { ckpt, config, split } => {
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Val => Split::Val,
            };
            commands::evaluate(&ckpt, &config, split)
        }
        Command::Gradcheck {
            config,
            coords,
            seed,
            corrupt_grad,
        } => commands::gradcheck(&config, coords as usize, seed, corrupt_grad),
        Command::Diagnose {
            ckpt,
            which,
            config,
            fixture,
            probes,
            iters,
            out,
        } => {
            let which_name = which
                .to_possible_value()
                .map(|v| v.get_name().to_string())
                .unwrap_or_default();
            let out = out.unwrap_or_else(|| PathBuf::from(format!("{which_name}.csv")));
            let opts = commands::DiagnoseOpts {
                probes,
                iters,
                out: &out,
            };
            match (which, fixture) {
                (Which::Curvature, Some(Fixture::Quadratic)) => commands::curvature_fixture(&opts),
                (_, Some(_)) => anyhow::bail!("--fixture is only available with --which curvature"),
                (_, None) => {
                    let ckpt = ckpt.ok_or_else(|| anyhow::anyhow!("--ckpt is required"))?;
                    match which {
                        Which::NormGap => commands::norm_gap(&ckpt, &opts),
                        Which::Similarity => commands::similarity(&ckpt, &opts),
                        Which::Curvature => commands::curvature(&ckpt, config.as_deref(), &opts),
                        Which::BoundCheck => commands::bound_check(&ckpt, config.as_deref(), &opts),
                    }
                }
            }
        }
        Command::LrSweep {
            config,
            lrs,
            steps,
            optimizer,
            out,
        } => commands::lr_sweep(&config, &lrs, steps, optimizer.as_deref(), &out),
        Command::ExportPlots { metrics, out } => export::export_plots(&metrics, &out),
    }
}
