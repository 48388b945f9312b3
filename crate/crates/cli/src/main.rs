use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fplab_cli::config::RunKind;
use fplab_cli::pipeline::execute;
use fplab_cli::plotdata::{emit_plotdata, PlotKind};

/// Spectral-Galerkin SPDE ensembles and Fokker-Planck verification runs.
///
/// Exit codes: 0 all checks pass, 2 a check failed, 3 checks inconclusive,
/// 1 error (bad config, I/O, ...).
#[derive(Parser)]
#[command(name = "fplab", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Output directory for report.json, manifest.json and artifacts
    #[arg(long)]
    out: PathBuf,
    /// Override the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for ensemble simulation (0 = automatic)
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Validate the coefficient hypotheses and drift conditions
    Validate(RunArgs),
    /// Stochastic-convolution moment bound check
    Convolution(RunArgs),
    /// Simulate an ensemble and persist it
    Simulate(RunArgs),
    /// Fokker-Planck residual checks over the test-function catalog
    FpResidual(RunArgs),
    /// Chapman-Kolmogorov composition check
    CkCheck(RunArgs),
    /// Convergence study over a descending regularization sequence
    AlphaSweep(RunArgs),
    /// Moment bound sweep over initial states and regularizations
    MomentBound(RunArgs),
    /// Flatten reports into plot-ready CSV
    PlotData {
        /// residual_vs_t | ck_gaps | alpha_gaps | moment_ratio
        #[arg(long)]
        kind: String,
        #[arg(long)]
        out: PathBuf,
        /// report.json files to flatten
        reports: Vec<PathBuf>,
    },
}

fn run(args: &RunArgs, kind: RunKind) -> anyhow::Result<i32> {
    let outcome = execute(&args.config, &args.out, kind, args.seed, args.workers)?;
    Ok(outcome.exit_code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Validate(a) => run(a, RunKind::Validate),
        Cmd::Convolution(a) => run(a, RunKind::Convolution),
        Cmd::Simulate(a) => run(a, RunKind::Simulate),
        Cmd::FpResidual(a) => run(a, RunKind::FpResidual),
        Cmd::CkCheck(a) => run(a, RunKind::Ck),
        Cmd::AlphaSweep(a) => run(a, RunKind::AlphaSweep),
        Cmd::MomentBound(a) => run(a, RunKind::MomentBound),
        Cmd::PlotData { kind, out, reports } => PlotKind::parse(kind)
            .and_then(|k| emit_plotdata(k, reports, out))
            .map(|path| {
                println!("wrote {}", path.display());
                0
            }),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
