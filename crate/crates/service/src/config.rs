//! Service configuration: one TOML file, then `NARRATIVE_*` environment
//! overrides.

use std::path::{Path, PathBuf};

use narrative_core::campaign::DEFAULT_SENTINEL_RATE;
use narrative_core::optimizer::{Preset, SnackConfig};
use narrative_core::sampling::{SamplingStrategy, DEFAULT_CANDIDATES};
use narrative_core::synthetic::SyntheticConfig;
use serde::{Deserialize, Serialize};

use crate::{Result, ServiceError};

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_REFIT_ITERS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    /// Holds the logs and embedding snapshots.
    pub data_dir: PathBuf,
    /// Corpus files. When all three are unset the built-in synthetic corpus is used.
    pub excerpts: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub synthetic: SyntheticConfig,
    /// JSON list of `{probe, options, correct}`.
    pub pretest: Option<PathBuf>,
    pub sentinel_rate: f64,
    pub strategy: SamplingStrategy,
    pub n: usize,
    pub preset: Preset,
    pub iters: usize,
    pub perplexity: f64,
    /// Seeds HIT assembly and every fit.
    pub seed: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            host: "127.0.0.1".into(),
            port: DEFAULT_PORT,
            data_dir: PathBuf::from("narrative-data"),
            excerpts: None,
            taxonomy: None,
            embeddings: None,
            synthetic: SyntheticConfig::default(),
            pretest: None,
            sentinel_rate: DEFAULT_SENTINEL_RATE,
            strategy: SamplingStrategy::Random,
            n: DEFAULT_CANDIDATES,
            preset: Preset::MainText,
            iters: DEFAULT_REFIT_ITERS,
            perplexity: SnackConfig::default().perplexity,
            seed: 0,
        }
    }
}

impl ServiceConfig {
    /// Reads `path` (if given), then applies environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ServiceError::Io(p.to_path_buf(), e))?;
                toml::from_str(&text).map_err(|e| ServiceError::Config(format!("{}: {e}", p.display())))?
            }
            None => ServiceConfig::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `NARRATIVE_PORT`, `NARRATIVE_DATA_DIR`, `NARRATIVE_EXCERPTS`,
    /// `NARRATIVE_TAXONOMY`, `NARRATIVE_EMBEDDINGS`, `NARRATIVE_PRETEST`,
    /// `NARRATIVE_SENTINEL_RATE` and `NARRATIVE_PRESET` from `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            v.parse().map_err(|e| ServiceError::Config(format!("{key}={v}: {e}")))
        }
        if let Some(v) = lookup("NARRATIVE_PORT") {
            self.port = parse("NARRATIVE_PORT", &v)?;
        }
        if let Some(v) = lookup("NARRATIVE_DATA_DIR") {
            self.data_dir = v.into();
        }
        if let Some(v) = lookup("NARRATIVE_EXCERPTS") {
            self.excerpts = Some(v.into());
        }
        if let Some(v) = lookup("NARRATIVE_TAXONOMY") {
            self.taxonomy = Some(v.into());
        }
        if let Some(v) = lookup("NARRATIVE_EMBEDDINGS") {
            self.embeddings = Some(v.into());
        }
        if let Some(v) = lookup("NARRATIVE_PRETEST") {
            self.pretest = Some(v.into());
        }
        if let Some(v) = lookup("NARRATIVE_SENTINEL_RATE") {
            self.sentinel_rate = parse("NARRATIVE_SENTINEL_RATE", &v)?;
        }
        if let Some(v) = lookup("NARRATIVE_PRESET") {
            self.preset = parse("NARRATIVE_PRESET", &v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.sentinel_rate) {
            return Err(ServiceError::Config(format!("sentinel_rate {} outside [0, 1]", self.sentinel_rate)));
        }
        if !(2..=DEFAULT_CANDIDATES).contains(&self.n) {
            return Err(ServiceError::Config(format!("n must be in 2..={DEFAULT_CANDIDATES}, got {}", self.n)));
        }
        let given = [&self.excerpts, &self.taxonomy, &self.embeddings].iter().filter(|p| p.is_some()).count();
        if given != 0 && given != 3 {
            return Err(ServiceError::Config(
                "excerpts, taxonomy and embeddings must be given together".into(),
            ));
        }
        if self.pretest.is_none() {
            return Err(ServiceError::Config("a pretest file is required".into()));
        }
        self.snack().validate().map_err(|e| ServiceError::Config(e.to_string()))
    }

    /// Base optimizer settings for every fit the service runs.
    pub fn snack(&self) -> SnackConfig {
        SnackConfig {
            iters: self.iters,
            perplexity: self.perplexity,
            seed: self.seed,
            ..SnackConfig::default()
        }
        .with_preset(self.preset)
    }
}
