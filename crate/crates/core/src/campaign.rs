//! HIT assembly with catch trials and sentinels, pretest grading, and
//! response filtering.

use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Supercategory};
use crate::kdtree::NeighborIndex;
use crate::sampling::{sample_grid, Grid, GridKind, SamplingStrategy, DEFAULT_CANDIDATES};
use crate::tste::{Triplet, TripletSource};
use crate::worker::{selections_to_triplets, Response};
use crate::{Error, Result};

pub const GRIDS_PER_HIT: usize = 12;
pub const DEFAULT_SENTINEL_RATE: f64 = 0.02;
pub const PRETEST_PASS: usize = 4;
pub const PRETEST_QUESTIONS: usize = 5;
const CATCH_PLANTS: usize = 2;
const MAX_ANCHOR_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hit {
    pub id: String,
    pub grids: Vec<Grid>,
    pub catch_position: usize,
}

impl Hit {
    pub fn validate(&self) -> Result<()> {
        if self.grids.len() != GRIDS_PER_HIT {
            return Err(Error::Invalid(format!("HIT {} has {} grids", self.id, self.grids.len())));
        }
        let catches: Vec<usize> = (0..self.grids.len()).filter(|&i| self.grids[i].kind == GridKind::Catch).collect();
        if catches != [self.catch_position] {
            return Err(Error::Invalid(format!("HIT {} must have exactly one catch grid", self.id)));
        }
        self.grids.iter().try_for_each(Grid::validate)
    }

    pub fn sentinel_count(&self) -> usize {
        self.grids.iter().filter(|g| g.kind == GridKind::Sentinel).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HitConfig {
    pub strategy: SamplingStrategy,
    pub n: usize,
    pub sentinel_rate: f64,
}

impl Default for HitConfig {
    fn default() -> Self {
        HitConfig {
            strategy: SamplingStrategy::Random,
            n: DEFAULT_CANDIDATES,
            sentinel_rate: DEFAULT_SENTINEL_RATE,
        }
    }
}

/// A catch grid: two members of the anchor's class plus `n - 2` excerpts
/// from the Irrelevant supercategory (outside the anchor's class), shuffled.
pub fn make_catch_trial<R: Rng + ?Sized>(anchor: usize, corpus: &Corpus, n: usize, rng: &mut R) -> Result<Grid> {
    let labels = corpus.labels();
    let label = labels[anchor];
    if n <= CATCH_PLANTS {
        return Err(Error::InvalidConfig(format!("catch grid needs more than {CATCH_PLANTS} candidates")));
    }
    let same: Vec<usize> = (0..labels.len()).filter(|&j| j != anchor && labels[j] == label).collect();
    if same.len() < CATCH_PLANTS {
        return Err(Error::InsufficientMembers(format!("class {label} has {} other members", same.len())));
    }
    let fillers: Vec<usize> = (0..labels.len())
        .filter(|&j| labels[j] != label && corpus.supercategory_of(j) == Supercategory::Irrelevant)
        .collect();
    if fillers.len() < n - CATCH_PLANTS {
        return Err(Error::InsufficientMembers(format!(
            "{} irrelevant excerpts outside class {label}, need {}",
            fillers.len(),
            n - CATCH_PLANTS
        )));
    }
    let mut candidates: Vec<usize> = same.choose_multiple(rng, CATCH_PLANTS).copied().collect();
    candidates.extend(fillers.choose_multiple(rng, n - CATCH_PLANTS).copied());
    candidates.shuffle(rng);
    Ok(Grid {
        anchor,
        candidates,
        kind: GridKind::Catch,
        sentinel_slot: None,
        sentinel_text: None,
    })
}

/// Twelve grids: eleven drawn by `cfg.strategy` around uniform anchors and one
/// catch trial at a uniform position. Each non-catch grid independently
/// becomes a sentinel grid with probability `cfg.sentinel_rate`.
pub fn assemble_hit<R: Rng + ?Sized>(
    id: impl Into<String>,
    corpus: &Corpus,
    index: &NeighborIndex,
    cfg: &HitConfig,
    rng: &mut R,
) -> Result<Hit> {
    if !(0.0..=1.0).contains(&cfg.sentinel_rate) {
        return Err(Error::InvalidConfig(format!("sentinel rate {} outside [0, 1]", cfg.sentinel_rate)));
    }
    let labels = corpus.labels();
    let n_points = corpus.len();
    if index.len() != n_points {
        return Err(Error::RowCountMismatch {
            expected: n_points,
            found: index.len(),
        });
    }
    let catch_position = rng.random_range(0..GRIDS_PER_HIT);
    let mut grids = Vec::with_capacity(GRIDS_PER_HIT);
    for pos in 0..GRIDS_PER_HIT {
        if pos == catch_position {
            grids.push(retry_anchor(n_points, rng, |a, rng| make_catch_trial(a, corpus, cfg.n, rng))?);
            continue;
        }
        let anchor = rng.random_range(0..n_points);
        let mut grid = sample_grid(cfg.strategy, anchor, index, Some(&labels), cfg.n, rng)?;
        if rng.random_bool(cfg.sentinel_rate) {
            let slot = rng.random_range(0..grid.n());
            let description = corpus
                .taxonomy()
                .get(labels[anchor])
                .map(|c| c.description.clone())
                .unwrap_or_default();
            grid.kind = GridKind::Sentinel;
            grid.sentinel_slot = Some(slot);
            grid.sentinel_text = Some(description);
        }
        grids.push(grid);
    }
    let hit = Hit {
        id: id.into(),
        grids,
        catch_position,
    };
    debug_assert!(hit.validate().is_ok());
    Ok(hit)
}

fn retry_anchor<R: Rng + ?Sized>(
    n_points: usize,
    rng: &mut R,
    mut make: impl FnMut(usize, &mut R) -> Result<Grid>,
) -> Result<Grid> {
    let mut last = None;
    for _ in 0..MAX_ANCHOR_ATTEMPTS {
        match make(rng.random_range(0..n_points), rng) {
            Ok(g) => return Ok(g),
            Err(e @ Error::InsufficientMembers(_)) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::InsufficientMembers("no eligible catch anchor".into())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CatchGrade {
    Both,
    One,
    None,
}

impl CatchGrade {
    pub fn passes(self) -> bool {
        self != CatchGrade::None
    }
}

/// How many of the two same-class plants were selected.
pub fn grade_catch(response: &Response, labels: &[u32]) -> Result<CatchGrade> {
    if response.grid.kind != GridKind::Catch {
        return Err(Error::NotCatch);
    }
    let label = labels[response.grid.anchor];
    let hits = response.selected_excerpts().filter(|&e| labels[e] == label).count();
    Ok(match hits {
        0 => CatchGrade::None,
        1 => CatchGrade::One,
        _ => CatchGrade::Both,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterOutcome {
    pub accepted: Vec<Response>,
    /// Catch grade per HIT; `None` for incomplete HITs.
    pub grades: Vec<Option<CatchGrade>>,
    pub incomplete: usize,
}

impl FilterOutcome {
    pub fn triplets(&self, source: TripletSource) -> Vec<Triplet> {
        self.accepted.iter().flat_map(|r| selections_to_triplets(r, source)).collect()
    }
}

/// Per-HIT filter: a HIT's normal responses are accepted iff its catch trial
/// grades `both` or `one`. Catch and sentinel responses are never accepted.
/// `responses[i]` answers `hit.grids[i]`.
pub fn filter_responses(hits: &[(Hit, Vec<Response>)], labels: &[u32]) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    for (hit, responses) in hits {
        let complete = responses.len() == hit.grids.len()
            && hit.grids.len() == GRIDS_PER_HIT
            && responses.iter().zip(&hit.grids).all(|(r, g)| r.grid.anchor == g.anchor && r.grid.kind == g.kind);
        if !complete {
            log::warn!("HIT {} is incomplete ({} responses); excluded", hit.id, responses.len());
            out.grades.push(None);
            out.incomplete += 1;
            continue;
        }
        let grade = match grade_catch(&responses[hit.catch_position], labels) {
            Ok(g) => g,
            Err(_) => {
                out.grades.push(None);
                out.incomplete += 1;
                continue;
            }
        };
        out.grades.push(Some(grade));
        if grade.passes() {
            out.accepted
                .extend(responses.iter().filter(|r| r.grid.kind == GridKind::Normal).cloned());
        }
    }
    out
}

/// Fraction of sentinel responses that selected the sentinel slot.
pub fn sentinel_stats(responses: &[Response]) -> Option<f64> {
    let sentinel: Vec<&Response> = responses.iter().filter(|r| r.grid.kind == GridKind::Sentinel).collect();
    if sentinel.is_empty() {
        return None;
    }
    let hit = sentinel
        .iter()
        .filter(|r| r.grid.sentinel_slot.is_some_and(|s| r.is_selected(s)))
        .count();
    Some(hit as f64 / sentinel.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PretestQuestion {
    pub probe: String,
    pub options: [String; 2],
    pub correct: usize,
}

impl PretestQuestion {
    pub fn validate(&self) -> Result<()> {
        if self.correct >= self.options.len() {
            return Err(Error::Invalid(format!("correct option {} out of range", self.correct)));
        }
        if self.options.contains(&self.probe) {
            return Err(Error::Invalid("pretest option repeats the probe".into()));
        }
        Ok(())
    }

    /// The question as shown to workers, without the answer.
    pub fn public(&self) -> PublicQuestion {
        PublicQuestion {
            probe: self.probe.clone(),
            options: self.options.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicQuestion {
    pub probe: String,
    pub options: [String; 2],
}

pub fn load_pretest(path: impl AsRef<Path>) -> Result<Vec<PretestQuestion>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let questions: Vec<PretestQuestion> = serde_json::from_str(&text)?;
    questions.iter().try_for_each(PretestQuestion::validate)?;
    Ok(questions)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PretestResult {
    pub score: usize,
    pub qualified: bool,
}

pub fn grade_pretest(answers: &[usize], questions: &[PretestQuestion]) -> Result<PretestResult> {
    if answers.len() != questions.len() {
        return Err(Error::AnswerCount {
            expected: questions.len(),
            got: answers.len(),
        });
    }
    let score = answers.iter().zip(questions).filter(|(a, q)| **a == q.correct).count();
    Ok(PretestResult {
        score,
        qualified: score >= PRETEST_PASS,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerRecord {
    pub worker_id: String,
    pub qualified: bool,
    pub pretest_score: Option<usize>,
    pub hits_completed: usize,
    pub catch_pass_history: Vec<CatchGrade>,
}

impl WorkerRecord {
    pub fn new(worker_id: impl Into<String>) -> Self {
        WorkerRecord {
            worker_id: worker_id.into(),
            qualified: false,
            pretest_score: None,
            hits_completed: 0,
            catch_pass_history: Vec::new(),
        }
    }

    pub fn record_pretest(&mut self, result: PretestResult) {
        self.pretest_score = Some(result.score);
        self.qualified = result.qualified;
    }
}
