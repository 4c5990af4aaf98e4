use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use labelshift_cli::{resolve_out_dir, run, ExperimentConfig, ExperimentKind, OUT_ENV};

#[derive(Parser)]
#[command(
    name = "labelshift",
    version,
    about = "Label-shift estimation and weighted multi-node training experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run whatever kind the config names.
    Run(Common),
    /// Ratio MSE across a grid of Dirichlet alphas.
    SweepAlpha(Common),
    /// Ratio MSE across a grid of test sizes at a fixed alpha.
    SweepSize(Common),
    /// Size sweep plus the log-log slope of mean MSE.
    RateCheck(Common),
    /// One shifted draw, every estimator, full reports.
    EstimateOnce(Common),
    /// Multi-node training under the three weightings.
    Federate(Common),
    /// Alpha sweep with relaxed feature perturbations on the test set.
    RelaxedSweep(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, env = OUT_ENV)]
    out: Option<PathBuf>,
    /// Replaces the master seed (and the federation seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let (expected, args) = match cli.command {
        Command::Run(a) => (None, a),
        Command::SweepAlpha(a) => (Some(ExperimentKind::SweepAlpha), a),
        Command::SweepSize(a) => (Some(ExperimentKind::SweepSize), a),
        Command::RateCheck(a) => (Some(ExperimentKind::RateCheck), a),
        Command::EstimateOnce(a) => (Some(ExperimentKind::EstimateOnce), a),
        Command::Federate(a) => (Some(ExperimentKind::Federate), a),
        Command::RelaxedSweep(a) => (Some(ExperimentKind::RelaxedSweep), a),
    };
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(kind) = expected {
        if kind != cfg.kind {
            bail!(
                "subcommand {} does not match config kind {}",
                kind.name(),
                cfg.kind.name()
            );
        }
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
        if let Some(f) = cfg.federation.as_mut() {
            f.seed = seed;
        }
    }
    let out = resolve_out_dir(args.out, &cfg);
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().context("building worker pool")?;
    pool.install(|| run(&cfg, &out))
        .with_context(|| format!("{} failed", cfg.kind.name()))?;
    eprintln!("wrote {} results to {}", cfg.kind.name(), out.display());
    Ok(())
}
