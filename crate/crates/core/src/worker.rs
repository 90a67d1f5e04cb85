//! Annotator responses: the label-aware synthetic worker, a uniformly random
//! worker, and conversion of k-of-n selections into triplets.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::matrix::sq_dist;
use crate::sampling::{Grid, GridKind};
use crate::tste::{Triplet, TripletSource};
use crate::{Error, LowDimEmbedding, Result};

pub const DEFAULT_SELECTIONS: usize = 2;
pub const SYNTHETIC_WORKER: &str = "synthetic";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub grid: Grid,
    /// Selected candidate positions, ascending.
    pub selected: Vec<usize>,
    pub worker_id: String,
}

impl Response {
    pub fn new(grid: Grid, mut selected: Vec<usize>, worker_id: impl Into<String>) -> Result<Self> {
        selected.sort_unstable();
        if selected.windows(2).any(|w| w[0] == w[1]) || selected.iter().any(|&p| p >= grid.n()) {
            return Err(Error::Invalid(format!(
                "selections {selected:?} must be distinct positions below {}",
                grid.n()
            )));
        }
        Ok(Response {
            grid,
            selected,
            worker_id: worker_id.into(),
        })
    }

    pub fn kind(&self) -> GridKind {
        self.grid.kind
    }

    pub fn is_selected(&self, pos: usize) -> bool {
        self.selected.binary_search(&pos).is_ok()
    }

    pub fn selected_excerpts(&self) -> impl Iterator<Item = usize> + '_ {
        self.selected.iter().map(|&p| self.grid.candidates[p])
    }
}

/// Class of the candidate at `pos`; a sentinel slot carries the anchor's class.
pub fn candidate_label(grid: &Grid, pos: usize, labels: &[u32]) -> u32 {
    if grid.sentinel_slot == Some(pos) {
        labels[grid.anchor]
    } else {
        labels[grid.candidates[pos]]
    }
}

/// Picks up to `k` candidates sharing the anchor's class (uniformly when
/// there are more than `k`), then fills the remaining slots with the
/// candidates nearest to the anchor in `y`.
pub fn synthetic_select<R: Rng + ?Sized>(
    grid: &Grid,
    labels: &[u32],
    y: &LowDimEmbedding,
    k: usize,
    rng: &mut R,
) -> Result<Response> {
    let n = grid.n();
    if k > n {
        return Err(Error::KExceedsN { k, n });
    }
    let anchor_label = labels[grid.anchor];
    let same: Vec<usize> = (0..n).filter(|&p| candidate_label(grid, p, labels) == anchor_label).collect();
    let mut selected: Vec<usize> = if same.len() > k {
        same.choose_multiple(rng, k).copied().collect()
    } else {
        same
    };
    if selected.len() < k {
        let anchor = y.point(grid.anchor);
        let mut rest: Vec<(f64, usize)> = (0..n)
            .filter(|p| !selected.contains(p))
            .map(|p| {
                // The sentinel text stands for the anchor's own narrative.
                let d = if grid.sentinel_slot == Some(p) {
                    0.0
                } else {
                    sq_dist(anchor, y.point(grid.candidates[p]))
                };
                (d, p)
            })
            .collect();
        rest.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        selected.extend(rest.iter().take(k - selected.len()).map(|&(_, p)| p));
    }
    Response::new(grid.clone(), selected, SYNTHETIC_WORKER)
}

/// `k` uniformly random distinct positions.
pub fn random_select<R: Rng + ?Sized>(grid: &Grid, k: usize, rng: &mut R) -> Result<Response> {
    let n = grid.n();
    if k > n {
        return Err(Error::KExceedsN { k, n });
    }
    let mut positions: Vec<usize> = (0..n).collect();
    positions.shuffle(rng);
    positions.truncate(k);
    Response::new(grid.clone(), positions, "random")
}

/// One `(anchor, selected, unselected)` triplet per selected/unselected pair of
/// a normal grid; catch and sentinel grids yield nothing.
pub fn selections_to_triplets(response: &Response, source: TripletSource) -> Vec<Triplet> {
    if response.grid.kind != GridKind::Normal {
        return Vec::new();
    }
    let g = &response.grid;
    let unselected: Vec<usize> = (0..g.n()).filter(|&p| !response.is_selected(p)).collect();
    let mut out = Vec::with_capacity(response.selected.len() * unselected.len());
    for &s in &response.selected {
        for &u in &unselected {
            out.push(Triplet::new(g.anchor, g.candidates[s], g.candidates[u], source));
        }
    }
    out
}

/// One line of the JSON-lines response log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub worker_id: String,
    pub hit_id: String,
    pub grid: LoggedGrid,
    pub selected: Vec<usize>,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoggedGrid {
    pub anchor: usize,
    pub candidates: Vec<usize>,
    pub kind: GridKind,
    pub sentinel_slot: Option<usize>,
}

impl ResponseRecord {
    pub fn from_response(r: &Response, hit_id: impl Into<String>, timestamp: u64) -> Self {
        ResponseRecord {
            worker_id: r.worker_id.clone(),
            hit_id: hit_id.into(),
            grid: LoggedGrid {
                anchor: r.grid.anchor,
                candidates: r.grid.candidates.clone(),
                kind: r.grid.kind,
                sentinel_slot: r.grid.sentinel_slot,
            },
            selected: r.selected.clone(),
            timestamp,
        }
    }

    /// Rebuilds the response; sentinel text is not logged and comes back empty.
    pub fn to_response(&self) -> Result<Response> {
        let grid = Grid {
            anchor: self.grid.anchor,
            candidates: self.grid.candidates.clone(),
            kind: self.grid.kind,
            sentinel_slot: self.grid.sentinel_slot,
            sentinel_text: None,
        };
        Response::new(grid, self.selected.clone(), self.worker_id.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Excerpts 0..=5 on a line; anchor 0.
    fn setup(labels: Vec<u32>) -> (Grid, Vec<u32>, LowDimEmbedding) {
        let y = LowDimEmbedding(Matrix::from_rows(&(0..6).map(|i| vec![i as f64]).collect::<Vec<_>>()));
        (Grid::normal(0, vec![5, 4, 3, 2, 1]), labels, y)
    }

    #[test]
    fn three_same_class_picks_two_of_them() {
        let (g, labels, y) = setup(vec![1, 2, 1, 2, 1, 1]);
        for seed in 0..20 {
            let r = synthetic_select(&g, &labels, &y, 2, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert!(r.selected_excerpts().all(|e| labels[e] == 1));
        }
    }

    #[test]
    fn one_same_class_plus_nearest() {
        let (g, labels, y) = setup(vec![1, 2, 2, 2, 2, 1]);
        let r = synthetic_select(&g, &labels, &y, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut picked: Vec<usize> = r.selected_excerpts().collect();
        picked.sort();
        assert_eq!(picked, vec![1, 5]);
    }

    #[test]
    fn no_same_class_gives_two_nearest() {
        let (g, labels, y) = setup(vec![1, 2, 2, 2, 2, 2]);
        let r = synthetic_select(&g, &labels, &y, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut picked: Vec<usize> = r.selected_excerpts().collect();
        picked.sort();
        assert_eq!(picked, vec![1, 2]);
        assert!(matches!(synthetic_select(&g, &labels, &y, 6, &mut ChaCha8Rng::seed_from_u64(0)), Err(Error::KExceedsN { .. })));
    }

    #[test]
    fn sentinel_slot_counts_as_same_class() {
        let (mut g, labels, y) = setup(vec![1, 2, 2, 2, 2, 2]);
        g.kind = GridKind::Sentinel;
        g.sentinel_slot = Some(0);
        let r = synthetic_select(&g, &labels, &y, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(r.is_selected(0));
    }

    #[test]
    fn random_select_pairs_are_uniform() {
        let g = Grid::normal(0, vec![1, 2, 3, 4, 5]);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let draws = 100_000;
        let mut counts = std::collections::HashMap::new();
        for _ in 0..draws {
            let r = random_select(&g, 2, &mut rng).unwrap();
            *counts.entry(r.selected.clone()).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 10);
        let expect = draws as f64 / 10.0;
        let chi2: f64 = counts.values().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
        // 9 degrees of freedom, 99.9th percentile.
        assert!(chi2 < 27.88, "chi2 = {chi2}");
        let all = random_select(&g, 5, &mut rng).unwrap();
        assert_eq!(all.selected, vec![0, 1, 2, 3, 4]);
        let a = random_select(&g, 2, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = random_select(&g, 2, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn triplet_counts() {
        let g = Grid::normal(0, vec![1, 2, 3, 4, 5]);
        let r = Response::new(g.clone(), vec![3, 1], "w").unwrap();
        let ts = selections_to_triplets(&r, TripletSource::Human);
        assert_eq!(ts.len(), 6);
        assert!(ts.iter().all(|t| t.anchor == 0 && (t.positive == 2 || t.positive == 4)));
        let all = Response::new(g.clone(), vec![0, 1, 2, 3, 4], "w").unwrap();
        assert!(selections_to_triplets(&all, TripletSource::Human).is_empty());
        let mut catch = g;
        catch.kind = GridKind::Catch;
        let r = Response::new(catch, vec![0, 1], "w").unwrap();
        assert!(selections_to_triplets(&r, TripletSource::Human).is_empty());
    }

    #[test]
    fn bad_selection_rejected() {
        let g = Grid::normal(0, vec![1, 2, 3]);
        assert!(Response::new(g.clone(), vec![1, 1], "w").is_err());
        assert!(Response::new(g, vec![3], "w").is_err());
    }

    #[test]
    fn record_round_trip() {
        let mut g = Grid::normal(4, vec![1, 2, 3, 5, 6]);
        g.kind = GridKind::Sentinel;
        g.sentinel_slot = Some(2);
        let r = Response::new(g, vec![2, 0], "w1").unwrap();
        let rec = ResponseRecord::from_response(&r, "hit-1", 42);
        let line = serde_json::to_string(&rec).unwrap();
        let back: ResponseRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, rec);
        assert_eq!(back.to_response().unwrap(), r);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn triplet_count_is_k_times_n_minus_k(n in 1usize..8, k_frac in 0.0f64..1.0, seed in any::<u64>()) {
                let k = ((n as f64) * k_frac) as usize;
                let g = Grid::normal(0, (1..=n).collect());
                let r = random_select(&g, k, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
                prop_assert_eq!(selections_to_triplets(&r, TripletSource::Synthetic).len(), k * (n - k));
            }
        }
    }
}
