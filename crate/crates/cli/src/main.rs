mod commands;
mod config;
mod outputs;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use narrative_service::ServiceConfig;

use config::{ExperimentConfig, Overrides};
use outputs::Outputs;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}: {}", .0.display(), .1)]
    Io(PathBuf, #[source] std::io::Error),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] narrative_core::Error),
    #[error(transparent)]
    Service(#[from] narrative_service::ServiceError),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(path.to_path_buf(), e)
    }
}

#[derive(Parser)]
#[command(name = "narrative", version, about = "Narrative-space embeddings from human and simulated triplets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-supercategory corpus statistics.
    Stats(Overrides),
    /// Fit an embedding (optionally on a triplet CSV); writes embedding.txt and curve.csv.
    Fit {
        #[command(flatten)]
        o: Overrides,
        /// Triplet CSV (`anchor,positive,negative,source`).
        #[arg(long)]
        triplets: Option<PathBuf>,
    },
    /// Playback simulation with the synthetic worker; writes embedding.txt,
    /// metrics.json, curve.csv, triplets.csv and responses.jsonl.
    Simulate {
        #[command(flatten)]
        o: Overrides,
        /// Also sweep every (n, k) pair at a fixed grid budget into nk.csv.
        #[arg(long)]
        sweep_nk: bool,
    },
    /// Metrics for an embedding snapshot; writes metrics.json.
    Evaluate {
        #[command(flatten)]
        o: Overrides,
        #[arg(long)]
        snapshot: Option<PathBuf>,
        #[arg(long)]
        responses: Option<PathBuf>,
    },
    /// TGR over λ × γ and over pool sizes; writes weights.csv and pools.csv.
    Gridsearch {
        #[command(flatten)]
        o: Overrides,
        #[arg(long)]
        triplets: Option<PathBuf>,
    },
    /// Visualization CSVs: viz.csv and the co-annotation edge list edges.csv.
    ExportViz {
        #[command(flatten)]
        o: Overrides,
        #[arg(long)]
        snapshot: Option<PathBuf>,
        #[arg(long)]
        responses: Option<PathBuf>,
    },
    /// Run the annotation service.
    Serve {
        /// Service configuration (TOML); NARRATIVE_* variables override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        port: Option<u16>,
    },
}

fn run_experiment(
    o: &Overrides,
    tweak: impl FnOnce(&mut ExperimentConfig),
    body: impl FnOnce(&ExperimentConfig, &mut Outputs) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load(o)?;
    tweak(&mut cfg);
    cfg.validate()?;
    let mut out = Outputs::new(&cfg.out)?;
    match body(&cfg, &mut out) {
        Ok(()) => Ok(()),
        Err(e) => {
            out.discard();
            Err(e)
        }
    }
}

fn serve(config: Option<PathBuf>, port: Option<u16>) -> Result<(), CliError> {
    let mut cfg = ServiceConfig::load(config.as_deref())?;
    if let Some(p) = port {
        cfg.port = p;
    }
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::io(Path::new("tokio runtime"), e))?;
    rt.block_on(narrative_service::serve(cfg))?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Stats(o) => ExperimentConfig::load(&o).and_then(|c| commands::stats(&c)),
        Command::Fit { o, triplets } => run_experiment(
            &o,
            |c| c.triplets = triplets.or(c.triplets.take()),
            commands::fit_cmd,
        ),
        Command::Simulate { o, sweep_nk } => run_experiment(&o, |_| {}, |c, out| commands::simulate(c, out, sweep_nk)),
        Command::Evaluate { o, snapshot, responses } => run_experiment(
            &o,
            |c| {
                c.snapshot = snapshot.or(c.snapshot.take());
                c.responses = responses.or(c.responses.take());
            },
            commands::evaluate,
        ),
        Command::Gridsearch { o, triplets } => run_experiment(
            &o,
            |c| c.triplets = triplets.or(c.triplets.take()),
            commands::gridsearch,
        ),
        Command::ExportViz { o, snapshot, responses } => run_experiment(
            &o,
            |c| {
                c.snapshot = snapshot.or(c.snapshot.take());
                c.responses = responses.or(c.responses.take());
            },
            commands::export_viz,
        ),
        Command::Serve { config, port } => serve(config, port),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
