use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gradual_cli::config::ChannelName;
use gradual_cli::{commands, CliError, Command, ExperimentConfig, RunDir};

#[derive(Debug, Parser)]
#[command(name = "gradual", version, about = "Gradual convergence and cut-off diagnostics for degenerate Langevin diffusions")]
struct Args {
    /// TOML experiment configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Root directory for run outputs (overrides `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads (default: machine parallelism).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Which estimator channels to run.
    #[arg(long, global = true, value_enum)]
    channel: Option<ChannelArg>,

    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ChannelArg {
    Fp,
    Mc,
    Both,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Check regularity, local behaviour and growth of the potential.
    Hypotheses,
    /// Simulate ensembles for each eps and for the limit process.
    Simulate,
    /// Invariant densities, normalizing constants and the eps-convergence table.
    Invariant,
    /// Distance-to-equilibrium profiles per channel.
    Profile,
    /// Mixing times and their rescaled limits.
    Mixing,
    /// Finite-eps cut-off verdict with the OU contrast.
    Cutoff,
    /// Descent-from-infinity tables.
    Descend,
    /// Run the full acceptance suite.
    ReproduceAll,
}

impl From<&Sub> for Command {
    fn from(s: &Sub) -> Self {
        match s {
            Sub::Hypotheses => Command::Hypotheses,
            Sub::Simulate => Command::Simulate,
            Sub::Invariant => Command::Invariant,
            Sub::Profile => Command::Profile,
            Sub::Mixing => Command::Mixing,
            Sub::Cutoff => Command::Cutoff,
            Sub::Descend => Command::Descend,
            Sub::ReproduceAll => Command::ReproduceAll,
        }
    }
}

fn load(args: &Args) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.output_dir = o.clone();
    }
    if let Some(c) = args.channel {
        cfg.channels = match c {
            ChannelArg::Fp => vec![ChannelName::Fp],
            ChannelArg::Mc => vec![ChannelName::Mc],
            ChannelArg::Both => vec![ChannelName::Fp, ChannelName::Mc],
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: &Args) -> Result<(), CliError> {
    if let Some(n) = args.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Config(format!("--jobs: {e}")))?;
    }
    let cfg = load(args)?;
    let cmd = Command::from(&args.command);
    let dir = RunDir::create(&cfg.output_dir, cmd.name(), &cfg)?;
    let outcome = commands::run(cmd, &cfg, &dir)?;
    for line in &outcome.summary {
        println!("{line}");
    }
    println!("artifacts: {}", dir.path.display());
    if outcome.failed_criteria > 0 {
        return Err(CliError::AcceptanceFailed {
            failed: outcome.failed_criteria,
        });
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gradual: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
