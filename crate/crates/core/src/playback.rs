//! Playback simulation: a label-aware synthetic worker answers grids drawn
//! from the current embedding, and the embedding is refit as triplets
//! accumulate.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::kdtree::NeighborIndex;
use crate::metrics::{knn_generalization_ratio, triplet_generalization_ratio, MeanStd, MetricsConfig, MetricsReport};
use crate::optimizer::{fit, tsne_fit, FitOptions, SnackConfig};
use crate::sampling::{sample_grid, SamplingStrategy, DEFAULT_CANDIDATES};
use crate::tsne::AffinityMatrix;
use crate::tste::{Triplet, TripletSource};
use crate::worker::{selections_to_triplets, synthetic_select, Response, DEFAULT_SELECTIONS};
use crate::{Error, LowDimEmbedding, Result};

pub const DEFAULT_REFIT_EVERY: usize = 1000;
pub const DEFAULT_SIMULATION_ITERS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    Triplets(usize),
    Grids(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlaybackConfig {
    pub strategy: SamplingStrategy,
    pub n: usize,
    pub k: usize,
    pub budget: Budget,
    /// Refit after this many new triplets (and once more when the budget is spent).
    pub refit_every: usize,
    pub snack: SnackConfig,
    pub metrics: MetricsConfig,
    /// Seed for anchors, grids and worker choices.
    pub seed: u64,
}

impl Default for PlaybackConfig {
    fn default() -> Self {
        PlaybackConfig {
            strategy: SamplingStrategy::distance_rnd(crate::sampling::DEFAULT_POOL_SIZE),
            n: DEFAULT_CANDIDATES,
            k: DEFAULT_SELECTIONS,
            budget: Budget::Triplets(4000),
            refit_every: DEFAULT_REFIT_EVERY,
            snack: SnackConfig {
                iters: DEFAULT_SIMULATION_ITERS,
                ..SnackConfig::default()
            },
            metrics: MetricsConfig::default(),
            seed: 0,
        }
    }
}

impl PlaybackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k >= self.n {
            return Err(Error::InvalidConfig(format!(
                "need 0 < k < n to produce triplets, got n={} k={}",
                self.n, self.k
            )));
        }
        if self.refit_every == 0 {
            return Err(Error::InvalidConfig("refit_every must be positive".into()));
        }
        self.snack.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub triplets: usize,
    pub grids: usize,
    pub tgr: MeanStd,
    pub knngr: MeanStd,
}

#[derive(Debug, Clone)]
pub struct PlaybackResult {
    pub curve: Vec<CurvePoint>,
    pub embedding: LowDimEmbedding,
    pub triplets: Vec<Triplet>,
    pub responses: Vec<Response>,
    pub report: MetricsReport,
}

/// t-SNE-only starting embedding, shared by runs that differ only in strategy.
pub fn initial_embedding(p: &AffinityMatrix, snack: &SnackConfig) -> Result<LowDimEmbedding> {
    Ok(tsne_fit(p, snack, FitOptions::default())?.embedding)
}

fn curve_point(y: &LowDimEmbedding, labels: &[u32], m: &MetricsConfig, triplets: usize, grids: usize) -> Result<CurvePoint> {
    Ok(CurvePoint {
        triplets,
        grids,
        tgr: triplet_generalization_ratio(y, labels, m.tgr_samples, m.repeats, m.seed)?,
        knngr: knn_generalization_ratio(y, labels, m.train_frac, m.repeats, m.knn_k, m.seed)?,
    })
}

/// Runs the sample → answer → refit loop until the budget is spent.
/// `initial` skips the starting t-SNE fit when given.
pub fn run_playback(
    p: &AffinityMatrix,
    labels: &[u32],
    cfg: &PlaybackConfig,
    initial: Option<&LowDimEmbedding>,
) -> Result<PlaybackResult> {
    cfg.validate()?;
    let n_points = p.n();
    if labels.len() != n_points {
        return Err(Error::RowCountMismatch {
            expected: n_points,
            found: labels.len(),
        });
    }
    let mut y = match initial {
        Some(y) => y.clone(),
        None => initial_embedding(p, &cfg.snack)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut triplets: Vec<Triplet> = Vec::new();
    let mut responses = Vec::new();
    let mut curve = vec![curve_point(&y, labels, &cfg.metrics, 0, 0)?];
    let mut index = NeighborIndex::build(&y)?;
    let mut since_refit = 0;
    let spent = |t: usize, g: usize| match cfg.budget {
        Budget::Triplets(b) => t >= b,
        Budget::Grids(b) => g >= b,
    };
    while !spent(triplets.len(), responses.len()) {
        let anchor = rng.random_range(0..n_points);
        let grid = sample_grid(cfg.strategy, anchor, &index, Some(labels), cfg.n, &mut rng)?;
        let response = synthetic_select(&grid, labels, &y, cfg.k, &mut rng)?;
        let new = selections_to_triplets(&response, TripletSource::Synthetic);
        since_refit += new.len();
        triplets.extend(new);
        responses.push(response);
        if since_refit >= cfg.refit_every || spent(triplets.len(), responses.len()) {
            log::info!("refit with {} triplets ({} grids)", triplets.len(), responses.len());
            y = fit(p, &triplets, &cfg.snack, FitOptions::default())?.embedding;
            index = NeighborIndex::build(&y)?;
            since_refit = 0;
            curve.push(curve_point(&y, labels, &cfg.metrics, triplets.len(), responses.len())?);
        }
    }
    let report = MetricsReport::compute(&y, labels, &responses, &cfg.metrics)?;
    Ok(PlaybackResult {
        curve,
        embedding: y,
        triplets,
        responses,
        report,
    })
}

pub fn write_curve_csv<W: Write>(curve: &[CurvePoint], mut w: W) -> std::io::Result<()> {
    writeln!(w, "triplets,grids,tgr_mean,tgr_std,knngr_mean,knngr_std")?;
    for c in curve {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            c.triplets, c.grids, c.tgr.mean, c.tgr.std, c.knngr.mean, c.knngr.std
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NkPoint {
    pub n: usize,
    pub k: usize,
    pub triplets: usize,
    pub tgr: MeanStd,
    pub knngr: MeanStd,
}

/// All `(n, k)` with `2 <= n <= max_n` and `1 <= k < n`.
pub fn nk_pairs(max_n: usize) -> Vec<(usize, usize)> {
    (2..=max_n).flat_map(|n| (1..n).map(move |k| (n, k))).collect()
}

/// Runs one playback per `(n, k)` at the same grid budget, each ending in a
/// single refit.
pub fn nk_sweep(
    p: &AffinityMatrix,
    labels: &[u32],
    base: &PlaybackConfig,
    pairs: &[(usize, usize)],
    grids: usize,
    initial: Option<&LowDimEmbedding>,
) -> Result<Vec<NkPoint>> {
    let start;
    let initial = match initial {
        Some(y) => y,
        None => {
            start = initial_embedding(p, &base.snack)?;
            &start
        }
    };
    pairs
        .iter()
        .map(|&(n, k)| {
            let cfg = PlaybackConfig {
                n,
                k,
                budget: Budget::Grids(grids),
                refit_every: usize::MAX,
                ..base.clone()
            };
            let r = run_playback(p, labels, &cfg, Some(initial))?;
            let last = r.curve.last().expect("curve has the final refit");
            Ok(NkPoint {
                n,
                k,
                triplets: r.triplets.len(),
                tgr: last.tgr,
                knngr: last.knngr,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightPoint {
    pub lambda: f64,
    pub gamma: f64,
    pub tgr: MeanStd,
}

/// TGR of a fit on a fixed triplet set for every `(λ, γ)` combination
/// except `(0, 0)`.
pub fn weight_grid(
    p: &AffinityMatrix,
    labels: &[u32],
    triplets: &[Triplet],
    base: &SnackConfig,
    metrics: &MetricsConfig,
    lambdas: &[f64],
    gammas: &[f64],
) -> Result<Vec<WeightPoint>> {
    let mut out = Vec::with_capacity(lambdas.len() * gammas.len());
    for &lambda in lambdas {
        for &gamma in gammas {
            if lambda == 0.0 && gamma == 0.0 {
                log::info!("skipping lambda = gamma = 0: empty objective");
                continue;
            }
            let cfg = SnackConfig {
                lambda,
                gamma,
                ..base.clone()
            };
            let y = fit(p, triplets, &cfg, FitOptions::default())?.embedding;
            let tgr = triplet_generalization_ratio(&y, labels, metrics.tgr_samples, metrics.repeats, metrics.seed)?;
            out.push(WeightPoint { lambda, gamma, tgr });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolPoint {
    pub pool_size: usize,
    pub tgr: MeanStd,
    pub knngr: MeanStd,
}

/// One playback per pool size with the base strategy's pool replaced.
pub fn pool_size_grid(
    p: &AffinityMatrix,
    labels: &[u32],
    base: &PlaybackConfig,
    sizes: &[usize],
    initial: Option<&LowDimEmbedding>,
) -> Result<Vec<PoolPoint>> {
    let start;
    let initial = match initial {
        Some(y) => y,
        None => {
            start = initial_embedding(p, &base.snack)?;
            &start
        }
    };
    sizes
        .iter()
        .map(|&pool_size| {
            let cfg = PlaybackConfig {
                strategy: base.strategy.with_pool_size(pool_size),
                ..base.clone()
            };
            let r = run_playback(p, labels, &cfg, Some(initial))?;
            Ok(PoolPoint {
                pool_size,
                tgr: r.report.tgr,
                knngr: r.report.knngr,
            })
        })
        .collect()
}
