mod commands;
mod config;
mod inputs;
mod manifest;
mod model_io;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::{FeaturizeArgs, FitArgs, LatentArgs, ScoreArgs, SynthArgs};
use config::RunConfig;

/// Unsupervised anomaly detection over per-app behavior histograms.
#[derive(Debug, Parser)]
#[command(name = "spotcheck", version)]
struct Cli {
    /// JSON run configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for outputs and manifests.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Print the effective configuration as JSON and exit.
    #[arg(long, global = true)]
    print_config: bool,
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build an L1-scaled dataset CSV from trace logs or heap dumps.
    Featurize(FeaturizeArgs),
    /// Generate a Dirichlet synthetic dataset.
    Synth(SynthArgs),
    /// Train a detector on the dataset's train rows.
    Fit(FitArgs),
    /// Score rows and write per-row verdicts.
    Score(ScoreArgs),
    /// Score rows, then write ROC AUC, F1 and confusion counts.
    Eval(ScoreArgs),
    /// Write 2-D latent coordinates for plotting.
    LatentExport(LatentArgs),
}

/// 3 for numerical failures, 2 for everything else the user can fix.
fn exit_code(err: &anyhow::Error) -> u8 {
    use spotcheck::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Singular { .. }
                | E::RankDeficient { .. }
                | E::NoCandidates { .. }
                | E::Divergence { .. }
                | E::NonFinite(_) => 3,
                _ => 2,
            };
        }
    }
    2
}

fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.out_dir {
        cfg.out_dir = d.clone();
    }
    match &cli.command {
        Command::Featurize(a) => a.apply(&mut cfg),
        Command::Synth(_) => {}
        Command::Fit(a) => a.apply(&mut cfg),
        Command::Score(a) | Command::Eval(a) => a.apply(&mut cfg),
        Command::LatentExport(a) => a.apply(&mut cfg),
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = effective_config(&cli)?;
    if cli.print_config {
        let mut out = std::io::stdout().lock();
        return match writeln!(out, "{}", serde_json::to_string_pretty(&cfg)?) {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
            _ => Ok(()),
        };
    }
    match &cli.command {
        Command::Featurize(a) => commands::featurize(a, &cfg),
        Command::Synth(a) => commands::synth(a, &cfg),
        Command::Fit(a) => commands::fit(a, &cfg),
        Command::Score(a) => commands::score(a, &cfg),
        Command::Eval(a) => commands::eval(a, &cfg),
        Command::LatentExport(a) => commands::latent_export(a, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
