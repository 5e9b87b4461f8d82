//! `curate` — demonstration-dataset curation pipeline.

mod config;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use config::RunConfig;
use pipeline::{Ctx, StageError};

#[derive(Parser, Debug)]
#[command(
    name = "curate",
    version,
    about = "Curate cross-embodiment demonstration datasets: generate, pair, select, compose, evaluate"
)]
struct Cli {
    /// TOML config file. Defaults to $CURATE_CONFIG when set, else
    /// built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Artifact directory (overrides the config's out_dir).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Master seed (overrides the config's seed).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Cap worker threads for parallel sections.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Allow consuming artifacts produced by a different config hash.
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic multi-embodiment pools with ground truth.
    Gen,
    /// Compute and cache feature tracks for every pool.
    Featurize,
    /// Pair target trajectories with DTW-nearest sources.
    Pair,
    /// Report coverage histograms and gaps per axis.
    Coverage,
    /// Select source demonstrations under a budget.
    Select {
        /// uniform | targeted | task-paired | trajectory-paired
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Compose the mixture manifest and batch schedule.
    Compose,
    /// Compare selection strategies with the retrieval surrogate.
    Eval,
    /// Run every stage in order.
    Pipeline,
}

fn load_config(cli: &Cli) -> Result<RunConfig, StageError> {
    let path = cli
        .config
        .clone()
        .or_else(|| std::env::var_os("CURATE_CONFIG").map(PathBuf::from));
    let mut cfg = match path {
        Some(p) => RunConfig::load(&p).map_err(|e| StageError::Usage(format!("{e:#}")))?,
        None => RunConfig::default(),
    };
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = dir.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()
        .map_err(|e| StageError::Usage(format!("{e:#}")))?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), StageError> {
    let cfg = load_config(cli)?;
    if let Some(n) = cli.threads {
        curate_core::configure_threads(n);
    }
    let ctx = Ctx::new(cfg, cli.force);
    match &cli.command {
        Command::Gen => pipeline::cmd_gen(&ctx),
        Command::Featurize => pipeline::cmd_featurize(&ctx),
        Command::Pair => pipeline::cmd_pair(&ctx),
        Command::Coverage => pipeline::cmd_coverage(&ctx),
        Command::Select { strategy } => pipeline::cmd_select(&ctx, strategy.as_deref()),
        Command::Compose => pipeline::cmd_compose(&ctx),
        Command::Eval => pipeline::cmd_eval(&ctx),
        Command::Pipeline => pipeline::cmd_pipeline(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
