//! Annotation grids: an anchor plus `n` candidates chosen by a sampling
//! strategy over the current embedding.

use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::kdtree::{Neighbor, NeighborIndex};
use crate::{Error, Result};

pub const DEFAULT_CANDIDATES: usize = 5;
pub const DEFAULT_POOL_SIZE: usize = 20;

/// How pool members are weighted by their distance to the anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceWeighting {
    /// Probability proportional to distance (farther is likelier).
    #[default]
    Proportional,
    /// Probability proportional to `1 / distance`.
    Inverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplingStrategy {
    Random,
    TopK,
    Distance {
        pool_size: usize,
        weighting: DistanceWeighting,
    },
    DistanceRnd {
        pool_size: usize,
        weighting: DistanceWeighting,
    },
    Oracle,
}

impl SamplingStrategy {
    pub fn distance(pool_size: usize) -> Self {
        SamplingStrategy::Distance {
            pool_size,
            weighting: DistanceWeighting::Proportional,
        }
    }

    pub fn distance_rnd(pool_size: usize) -> Self {
        SamplingStrategy::DistanceRnd {
            pool_size,
            weighting: DistanceWeighting::Proportional,
        }
    }

    pub fn needs_labels(&self) -> bool {
        matches!(self, SamplingStrategy::Oracle)
    }

    /// Returns a copy with the pool size replaced (no-op for pool-free strategies).
    pub fn with_pool_size(self, size: usize) -> Self {
        match self {
            SamplingStrategy::Distance { weighting, .. } => SamplingStrategy::Distance { pool_size: size, weighting },
            SamplingStrategy::DistanceRnd { weighting, .. } => SamplingStrategy::DistanceRnd { pool_size: size, weighting },
            other => other,
        }
    }
}

impl fmt::Display for SamplingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamplingStrategy::Random => f.write_str("random"),
            SamplingStrategy::TopK => f.write_str("top-k"),
            SamplingStrategy::Distance { .. } => f.write_str("distance"),
            SamplingStrategy::DistanceRnd { .. } => f.write_str("distance-rnd"),
            SamplingStrategy::Oracle => f.write_str("oracle"),
        }
    }
}

impl FromStr for SamplingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(SamplingStrategy::Random),
            "top-k" | "topk" => Ok(SamplingStrategy::TopK),
            "distance" => Ok(SamplingStrategy::distance(DEFAULT_POOL_SIZE)),
            "distance-rnd" | "distance_rnd" => Ok(SamplingStrategy::distance_rnd(DEFAULT_POOL_SIZE)),
            "oracle" => Ok(SamplingStrategy::Oracle),
            _ => Err(Error::InvalidConfig(format!("unknown strategy {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    #[default]
    Normal,
    Catch,
    Sentinel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub anchor: usize,
    pub candidates: Vec<usize>,
    pub kind: GridKind,
    /// Candidate position replaced by the sentinel text, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentinel_slot: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentinel_text: Option<String>,
}

impl Grid {
    pub fn normal(anchor: usize, candidates: Vec<usize>) -> Self {
        Grid {
            anchor,
            candidates,
            kind: GridKind::Normal,
            sentinel_slot: None,
            sentinel_text: None,
        }
    }

    pub fn n(&self) -> usize {
        self.candidates.len()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for &c in &self.candidates {
            if c == self.anchor || !seen.insert(c) {
                return Err(Error::Invalid(format!("grid candidates for anchor {} are not distinct", self.anchor)));
            }
        }
        if let Some(slot) = self.sentinel_slot {
            if slot >= self.candidates.len() {
                return Err(Error::Invalid("sentinel slot out of range".into()));
            }
        }
        Ok(())
    }
}

/// Number of same-class candidates an oracle grid of size `n` carries
/// (2 of 5, scaled for other sizes, at least 1).
pub fn oracle_positive_count(n: usize) -> usize {
    ((2.0 * n as f64 / 5.0).round() as usize).clamp(1, n.saturating_sub(1).max(1))
}

/// Draws one grid of `n` candidates around `anchor`.
pub fn sample_grid<R: Rng + ?Sized>(
    strategy: SamplingStrategy,
    anchor: usize,
    index: &NeighborIndex,
    labels: Option<&[u32]>,
    n: usize,
    rng: &mut R,
) -> Result<Grid> {
    let total = index.len();
    if anchor >= total {
        return Err(Error::Invalid(format!("anchor {anchor} out of range")));
    }
    if n == 0 || total - 1 < n {
        return Err(Error::PoolTooSmall(format!("{n} candidates need at least {} points, have {total}", n + 1)));
    }
    let candidates = match strategy {
        SamplingStrategy::Random => {
            rand::seq::index::sample(rng, total - 1, n)
                .into_iter()
                .map(|c| if c >= anchor { c + 1 } else { c })
                .collect()
        }
        SamplingStrategy::TopK => index.query(anchor, n).iter().map(|nb| nb.index).collect(),
        SamplingStrategy::Distance { pool_size, weighting } => {
            let pool = distance_pool(index, anchor, pool_size, n, 0)?;
            weighted_without_replacement(&pool, n, weighting, rng)
        }
        SamplingStrategy::DistanceRnd { pool_size, weighting } => {
            let pool = distance_pool(index, anchor, pool_size, n, 1)?;
            let mut picked = weighted_without_replacement(&pool, n - 1, weighting, rng);
            let outside: Vec<usize> = (0..total)
                .filter(|&j| j != anchor && !pool.iter().any(|nb| nb.index == j))
                .collect();
            picked.push(*outside.choose(rng).expect("checked by distance_pool"));
            picked.shuffle(rng);
            picked
        }
        SamplingStrategy::Oracle => {
            let labels = labels.ok_or_else(|| Error::InvalidConfig("oracle sampling needs labels".into()))?;
            oracle_candidates(anchor, index, labels, n, rng)?
        }
    };
    let grid = Grid::normal(anchor, candidates);
    debug_assert!(grid.validate().is_ok());
    Ok(grid)
}

fn distance_pool(index: &NeighborIndex, anchor: usize, pool_size: usize, n: usize, outside: usize) -> Result<Vec<Neighbor>> {
    let draws = n - outside;
    if pool_size < draws.max(1) {
        return Err(Error::InvalidConfig(format!("pool size {pool_size} is smaller than {draws} draws")));
    }
    let others = index.len() - 1;
    if others < pool_size + outside {
        return Err(Error::PoolTooSmall(format!(
            "pool of {pool_size} plus {outside} outside draws needs {} other points, have {others}",
            pool_size + outside
        )));
    }
    Ok(index.query(anchor, pool_size))
}

/// Sequential draws without replacement, renormalizing after each pick. Pool
/// order (distance, then index) fixes the scan order.
fn weighted_without_replacement<R: Rng + ?Sized>(
    pool: &[Neighbor],
    count: usize,
    weighting: DistanceWeighting,
    rng: &mut R,
) -> Vec<usize> {
    let mut weights: Vec<f64> = pool
        .iter()
        .map(|nb| match weighting {
            DistanceWeighting::Proportional => nb.dist(),
            DistanceWeighting::Inverse => 1.0 / nb.dist().max(1e-12),
        })
        .collect();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let total: f64 = weights.iter().sum();
        let pos = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = None;
            for (p, &w) in weights.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                chosen = Some(p);
                if target < w {
                    break;
                }
                target -= w;
            }
            chosen.expect("positive total weight")
        } else {
            // All remaining members coincide with the anchor: uniform.
            let free: Vec<usize> = (0..pool.len()).filter(|&p| !out.contains(&pool[p].index)).collect();
            *free.choose(rng).expect("pool larger than draw count")
        };
        out.push(pool[pos].index);
        weights[pos] = 0.0;
    }
    out
}

fn oracle_candidates<R: Rng + ?Sized>(
    anchor: usize,
    index: &NeighborIndex,
    labels: &[u32],
    n: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let label = labels[anchor];
    let same: Vec<usize> = (0..labels.len()).filter(|&j| j != anchor && labels[j] == label).collect();
    let diff: Vec<usize> = (0..labels.len()).filter(|&j| labels[j] != label).collect();
    let n_pos = oracle_positive_count(n);
    let n_neg = n - n_pos;
    if diff.len() < n_neg {
        return Err(Error::PoolTooSmall(format!(
            "oracle grid needs {n_neg} excerpts outside class {label}, have {}",
            diff.len()
        )));
    }
    let mut picked: Vec<usize> = same.choose_multiple(rng, n_pos.min(same.len())).copied().collect();
    if picked.len() < n_pos {
        // Small class: fill the positive slots with the anchor's nearest neighbors.
        for nb in index.query(anchor, index.len() - 1) {
            if picked.len() == n_pos {
                break;
            }
            if !picked.contains(&nb.index) {
                picked.push(nb.index);
            }
        }
    }
    let negatives: Vec<usize> = diff.iter().copied().filter(|j| !picked.contains(j)).collect();
    if negatives.len() < n_neg {
        return Err(Error::PoolTooSmall("not enough distinct negatives for oracle grid".into()));
    }
    picked.extend(negatives.choose_multiple(rng, n_neg).copied());
    picked.shuffle(rng);
    Ok(picked)
}
