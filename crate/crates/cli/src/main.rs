use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sentrend::config::parse_list;
use sentrend::{Overrides, PipelineConfig, Stage};

// Aliases keep clap from treating the parsed lists as repeated flags.
type YearList = Vec<i32>;
type MonthList = Vec<u32>;

#[derive(Debug, Parser)]
#[command(name = "sentrend", version, about = "Campus sentiment trend pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Years to keep, e.g. "2019-2022" or "2019,2021".
    #[arg(long, global = true, value_parser = parse_list::<i32>)]
    years: Option<YearList>,
    /// Calendar months to keep, e.g. "8-11".
    #[arg(long, global = true, value_parser = parse_list::<u32>)]
    months: Option<MonthList>,
    /// Node cap per school subgraph.
    #[arg(long, global = true)]
    cap: Option<usize>,
    /// Nodes drawn per sampling seed batch.
    #[arg(long, global = true)]
    seed_batch: Option<usize>,
    #[arg(long, global = true)]
    rng_seed: Option<u64>,
    /// Worker threads for per-school work.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Parse comments, apply the window, validate covariates.
    Ingest,
    /// Build per-school reply graphs.
    Graph,
    /// Draw capped subgraphs.
    Sample,
    /// Train or load the GAT and score every message.
    Score,
    /// Combine GAT and upstream probabilities.
    Stack,
    /// Fit the random-intercept model and Wald table.
    Glmm,
    /// Shares, adjusted p-values, tables and figures.
    Report,
    /// Every stage in order.
    All,
}

impl From<Command> for Stage {
    fn from(c: Command) -> Self {
        match c {
            Command::Ingest => Stage::Ingest,
            Command::Graph => Stage::Graph,
            Command::Sample => Stage::Sample,
            Command::Score => Stage::Score,
            Command::Stack => Stage::Stack,
            Command::Glmm => Stage::Glmm,
            Command::Report => Stage::Report,
            Command::All => Stage::All,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let overrides = Overrides {
        years: cli.years,
        months: cli.months,
        cap: cli.cap,
        seed_batch: cli.seed_batch,
        rng_seed: cli.rng_seed,
        jobs: cli.jobs,
        out: cli.out,
    };
    let result = PipelineConfig::load(cli.config.as_deref(), &overrides)
        .and_then(|cfg| sentrend::run(cli.command.into(), &cfg));
    match result {
        Ok(()) => ExitCode::from(sentrend::EXIT_OK as u8),
        Err(e) => {
            eprintln!("sentrend: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
