use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use descrec::pipeline::{Pipeline, PipelineConfig, PipelineError, RunOptions, Stage, StageOutcome, Status, Variant, CONFIG_KEYS};

/// Multimodal recommender pipeline driven by generated item and user descriptions.
#[derive(Debug, Parser)]
#[command(name = "descrec", version, after_help = CONFIG_KEYS)]
struct Cli {
    /// Pipeline config file (TOML).
    #[arg(long, global = true, env = "DESCREC_CONFIG", default_value = "descrec.toml")]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Use the offline description provider.
    #[arg(long, global = true)]
    stub: bool,
    /// Rebuild a stage that already exists.
    #[arg(long, global = true)]
    force: bool,
    /// Grid-search the similarity threshold and co-occurrence width during `train`.
    #[arg(long, global = true)]
    grid: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// 5-core filter, index and split the interactions.
    Prepare,
    /// Generate item descriptions and user preference texts.
    Describe,
    /// Embed item and user texts.
    Encode,
    /// Build the refined item-item graph and propagate item features.
    BuildGraph,
    /// Train the user and item projections.
    Train,
    /// Full-ranking Recall/NDCG on the test split.
    Evaluate,
    /// Write the refined graph in a portable form.
    ExportGraph,
    /// Train and evaluate graph variants side by side.
    Ablate {
        /// Variant to run (full, no_gd, no_te, no_gcn); repeatable, defaults to all.
        #[arg(long = "variant", value_parser = parse_variant)]
        variants: Vec<Variant>,
    },
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse()
}

impl Command {
    fn stage(&self) -> Stage {
        match self {
            Command::Prepare => Stage::Prepare,
            Command::Describe => Stage::Describe,
            Command::Encode => Stage::Encode,
            Command::BuildGraph => Stage::BuildGraph,
            Command::Train => Stage::Train,
            Command::Evaluate => Stage::Evaluate,
            Command::ExportGraph => Stage::ExportGraph,
            Command::Ablate { .. } => Stage::Ablate,
        }
    }
}

fn run(cli: &Cli) -> Result<StageOutcome, PipelineError> {
    let mut cfg = PipelineConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let opts = RunOptions {
        force: cli.force,
        stub: cli.stub,
        grid: cli.grid,
    };
    let mut pipeline = Pipeline::open(cfg, opts)?;
    match &cli.command {
        Command::Ablate { variants } if !variants.is_empty() => pipeline.ablate(variants),
        cmd => pipeline.run(cmd.stage()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 4 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(out) => {
            if let Some(report) = &out.report {
                print!("{report}");
            }
            println!("{}", out.summary);
            match out.status {
                Status::Completed => log::info!("{}: done", out.stage),
                Status::UpToDate => log::info!("{}: up to date", out.stage),
                Status::Partial { failures } => {
                    log::warn!("{}: finished with {failures} failures; rerun to retry them", out.stage);
                    return ExitCode::from(2);
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
