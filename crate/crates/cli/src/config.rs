//! Experiment configuration: a TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use clap::Args;
use narrative_core::corpus::{load_corpus, load_embeddings, Corpus, InputEmbeddings};
use narrative_core::metrics::MetricsConfig;
use narrative_core::optimizer::{Preset, SnackConfig};
use narrative_core::playback::{Budget, PlaybackConfig, DEFAULT_REFIT_EVERY, DEFAULT_SIMULATION_ITERS};
use narrative_core::sampling::{SamplingStrategy, DEFAULT_CANDIDATES, DEFAULT_POOL_SIZE};
use narrative_core::synthetic::{generate, SyntheticConfig};
use narrative_core::worker::DEFAULT_SELECTIONS;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Corpus files; when all three are unset the synthetic corpus is used.
    pub excerpts: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub synthetic: SyntheticConfig,
    /// Human triplets (CSV) to fit against.
    pub triplets: Option<PathBuf>,
    /// Embedding snapshot read by `evaluate` and `export-viz`.
    pub snapshot: Option<PathBuf>,
    /// Response log read by `evaluate` and `export-viz`.
    pub responses: Option<PathBuf>,
    pub out: PathBuf,
    pub preset: Preset,
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub perplexity: f64,
    pub iters: usize,
    pub strategy: String,
    pub pool_size: usize,
    pub n: usize,
    pub k: usize,
    /// Triplet budget for `simulate`.
    pub budget: usize,
    pub refit_every: usize,
    pub repeats: usize,
    pub seed: u64,
    pub gridsearch: GridSearch,
}

/// Both published weight ranges merged; each axis sweeps all of them.
pub const WEIGHT_RANGE: [f64; 9] = [0.0, 0.025, 0.1, 0.25, 0.5, 2.5, 5.0, 10.0, 25.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSearch {
    pub lambdas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub pool_sizes: Vec<usize>,
    /// Largest `n` in the `(n, k)` sweep of `simulate --sweep-nk`.
    pub max_n: usize,
    /// Grid budget per `(n, k)` pair.
    pub nk_grids: usize,
}

impl Default for GridSearch {
    fn default() -> Self {
        GridSearch {
            lambdas: WEIGHT_RANGE.to_vec(),
            gammas: WEIGHT_RANGE.to_vec(),
            pool_sizes: vec![5, 10, 15, 20, 25, 30],
            max_n: DEFAULT_CANDIDATES,
            nk_grids: 500,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            excerpts: None,
            taxonomy: None,
            embeddings: None,
            synthetic: SyntheticConfig::default(),
            triplets: None,
            snapshot: None,
            responses: None,
            out: PathBuf::from("out"),
            preset: Preset::MainText,
            lambda: None,
            gamma: None,
            perplexity: SnackConfig::default().perplexity,
            iters: DEFAULT_SIMULATION_ITERS,
            strategy: "distance-rnd".into(),
            pool_size: DEFAULT_POOL_SIZE,
            n: DEFAULT_CANDIDATES,
            k: DEFAULT_SELECTIONS,
            budget: 4000,
            refit_every: DEFAULT_REFIT_EVERY,
            repeats: MetricsConfig::default().repeats,
            seed: 0,
            gridsearch: GridSearch::default(),
        }
    }
}

/// Flags shared by every experiment command; each overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML experiment configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// random, top-k, distance, distance-rnd or oracle.
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub pool_size: Option<usize>,
    /// Candidates per grid (at most 5).
    #[arg(long)]
    pub n: Option<usize>,
    /// Selections per grid.
    #[arg(long)]
    pub k: Option<usize>,
    /// Triplet budget.
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// main-text or appendix.
    #[arg(long)]
    pub preset: Option<Preset>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(o: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match &o.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
            None => ExperimentConfig::default(),
        };
        cfg.apply(o);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(p) = o.preset {
            self.preset = p;
            // A preset on the command line replaces file-level weights.
            self.lambda = None;
            self.gamma = None;
        }
        self.lambda = o.lambda.or(self.lambda);
        self.gamma = o.gamma.or(self.gamma);
        if let Some(s) = &o.strategy {
            self.strategy = s.clone();
        }
        self.pool_size = o.pool_size.unwrap_or(self.pool_size);
        self.n = o.n.unwrap_or(self.n);
        self.k = o.k.unwrap_or(self.k);
        self.budget = o.budget.unwrap_or(self.budget);
        self.iters = o.iters.unwrap_or(self.iters);
        self.seed = o.seed.unwrap_or(self.seed);
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.n > DEFAULT_CANDIDATES {
            return Err(CliError::Config(format!(
                "n = {} exceeds the reading-load cap of {DEFAULT_CANDIDATES}",
                self.n
            )));
        }
        if self.k == 0 || self.k >= self.n {
            return Err(CliError::Config(format!("need 0 < k < n, got k = {}, n = {}", self.k, self.n)));
        }
        if self.gridsearch.max_n > DEFAULT_CANDIDATES {
            return Err(CliError::Config(format!("gridsearch.max_n may not exceed {DEFAULT_CANDIDATES}")));
        }
        let given = [&self.excerpts, &self.taxonomy, &self.embeddings].iter().filter(|p| p.is_some()).count();
        if given != 0 && given != 3 {
            return Err(CliError::Config("excerpts, taxonomy and embeddings must be given together".into()));
        }
        for path in [&self.excerpts, &self.taxonomy, &self.embeddings, &self.triplets].into_iter().flatten() {
            if !path.exists() {
                return Err(CliError::Config(format!("{} does not exist", path.display())));
            }
        }
        self.strategy()?;
        self.snack().validate()?;
        Ok(())
    }

    pub fn strategy(&self) -> Result<SamplingStrategy, CliError> {
        Ok(self.strategy.parse::<SamplingStrategy>()?.with_pool_size(self.pool_size))
    }

    pub fn snack(&self) -> SnackConfig {
        let mut cfg = SnackConfig {
            perplexity: self.perplexity,
            iters: self.iters,
            seed: self.seed,
            ..SnackConfig::default()
        }
        .with_preset(self.preset);
        cfg.lambda = self.lambda.unwrap_or(cfg.lambda);
        cfg.gamma = self.gamma.unwrap_or(cfg.gamma);
        cfg
    }

    pub fn metrics(&self) -> MetricsConfig {
        MetricsConfig {
            repeats: self.repeats,
            seed: self.seed,
            ..MetricsConfig::default()
        }
    }

    pub fn playback(&self) -> Result<PlaybackConfig, CliError> {
        Ok(PlaybackConfig {
            strategy: self.strategy()?,
            n: self.n,
            k: self.k,
            budget: Budget::Triplets(self.budget),
            refit_every: self.refit_every,
            snack: self.snack(),
            metrics: self.metrics(),
            seed: self.seed,
        })
    }

    pub fn load_corpus(&self) -> Result<(Corpus, InputEmbeddings), CliError> {
        match (&self.excerpts, &self.taxonomy, &self.embeddings) {
            (Some(e), Some(t), Some(x)) => {
                let corpus = load_corpus(e, t)?;
                let inputs = load_embeddings(x, &corpus)?;
                Ok((corpus, inputs))
            }
            _ => {
                let s = generate(&self.synthetic)?;
                Ok((s.corpus, s.embeddings))
            }
        }
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Snapshot to read, defaulting to the output directory's embedding.
    pub fn snapshot_path(&self) -> PathBuf {
        self.snapshot.clone().unwrap_or_else(|| self.out_path(crate::outputs::EMBEDDING))
    }
}

pub fn exists(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{} does not exist", path.display())))
    }
}
