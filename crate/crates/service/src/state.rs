//! Campaign state and every mutation on it. All writes go through
//! `&mut Campaign`, so whoever holds it is the single writer; each mutation
//! is appended to a journal before the in-memory state changes.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use narrative_core::campaign::{
    assemble_hit, filter_responses, grade_pretest, load_pretest, CatchGrade, Hit, HitConfig, PretestQuestion,
    PublicQuestion, WorkerRecord, GRIDS_PER_HIT, PRETEST_QUESTIONS,
};
use narrative_core::corpus::{load_corpus, load_embeddings, Corpus, InputEmbeddings};
use narrative_core::kdtree::NeighborIndex;
use narrative_core::metrics::{MetricsConfig, MetricsReport};
use narrative_core::optimizer::{fit, tsne_fit, FitOptions, Preset, SnackConfig};
use narrative_core::sampling::GridKind;
use narrative_core::synthetic::generate;
use narrative_core::tsne::{affinities_from_distances, pairwise_distances, AffinityMatrix};
use narrative_core::tste::{Triplet, TripletSource};
use narrative_core::worker::{Response, ResponseRecord, DEFAULT_SELECTIONS};
use narrative_core::{LowDimEmbedding, Matrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ServiceConfig;
use crate::journal::Journal;
use crate::{Result, ServiceError};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const RESPONSES_FILE: &str = "responses.jsonl";
pub const SNAPSHOT_DIR: &str = "snapshots";

/// Non-response mutations, one JSON object per line of the events journal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    WorkerCreated {
        worker_id: String,
    },
    Pretest {
        worker_id: String,
        answers: Vec<usize>,
    },
    HitIssued {
        worker_id: String,
        hit: Hit,
    },
    Refit {
        version: u64,
        snapshot: String,
        triplets: usize,
        lambda: f64,
        gamma: f64,
        iters: usize,
        seed: u64,
    },
}

/// An embedding version as served to readers.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub version: u64,
    pub embedding: LowDimEmbedding,
}

/// Grading returned for a submitted HIT.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitResult {
    pub hit_id: String,
    pub accepted_grid_count: usize,
    pub catch_grade: CatchGrade,
    pub triplets_added: usize,
    /// Position of this submission in the response log.
    pub sequence: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Submitted {
    pub result: SubmitResult,
    /// True when this hit was already submitted; `result` is the original.
    pub duplicate: bool,
}

/// Per-request optimizer overrides for a refit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefitRequest {
    pub preset: Option<Preset>,
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub iters: Option<usize>,
    pub seed: Option<u64>,
}

/// Worker-facing HIT: texts only, no excerpt ids or grid kinds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HitPayload {
    pub hit_id: String,
    pub selections_per_grid: usize,
    pub grids: Vec<GridPayload>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPayload {
    pub anchor: String,
    /// In display order; submissions refer to positions in this list.
    pub candidates: Vec<String>,
}

#[derive(Debug, Clone)]
struct IssuedHit {
    worker_id: String,
    hit: Hit,
}

pub struct Campaign {
    cfg: ServiceConfig,
    corpus: Corpus,
    labels: Vec<u32>,
    p: AffinityMatrix,
    questions: Vec<PretestQuestion>,
    workers: BTreeMap<String, WorkerRecord>,
    hits: HashMap<String, IssuedHit>,
    /// Issued but unanswered HIT per worker.
    open_hits: HashMap<String, String>,
    submissions: HashMap<String, SubmitResult>,
    submission_order: Vec<String>,
    responses: Vec<Response>,
    accepted: Vec<Response>,
    triplets: Vec<Triplet>,
    snapshot: Arc<Snapshot>,
    published: Arc<RwLock<Arc<Snapshot>>>,
    index: NeighborIndex,
    events: Journal,
    log: Journal,
    issued: u64,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn snapshot_name(version: u64) -> String {
    format!("embedding-v{version:04}.txt")
}

impl Campaign {
    /// Loads the corpus and pretest, then replays both journals under
    /// `cfg.data_dir` (creating them on first start).
    pub fn open(cfg: ServiceConfig) -> Result<Campaign> {
        cfg.validate()?;
        let (corpus, inputs) = load_inputs(&cfg)?;
        let labels = corpus.labels();
        let questions = load_pretest(cfg.pretest.as_ref().expect("validated"))?;
        if questions.len() != PRETEST_QUESTIONS {
            return Err(ServiceError::Config(format!(
                "pretest must have {PRETEST_QUESTIONS} questions, found {}",
                questions.len()
            )));
        }
        let p = affinities_from_distances(&pairwise_distances(inputs.matrix())?, cfg.perplexity)?;

        let dir = &cfg.data_dir;
        let snapshots = dir.join(SNAPSHOT_DIR);
        std::fs::create_dir_all(&snapshots).map_err(|e| ServiceError::Io(snapshots.clone(), e))?;
        let base = snapshots.join(snapshot_name(0));
        let y0 = if base.exists() {
            read_snapshot(&base, corpus.len())?
        } else {
            let y = tsne_fit(&p, &cfg.snack(), FitOptions::default())?.embedding;
            y.matrix().save_text(&base)?;
            y
        };

        let (events, event_replay) = Journal::open::<Event>(dir.join(EVENTS_FILE))?;
        let (log, record_replay) = Journal::open::<ResponseRecord>(dir.join(RESPONSES_FILE))?;
        let snapshot = Arc::new(Snapshot {
            version: 0,
            embedding: y0,
        });
        let mut c = Campaign {
            index: NeighborIndex::build(&snapshot.embedding)?,
            published: Arc::new(RwLock::new(snapshot.clone())),
            snapshot,
            cfg,
            corpus,
            labels,
            p,
            questions,
            workers: BTreeMap::new(),
            hits: HashMap::new(),
            open_hits: HashMap::new(),
            submissions: HashMap::new(),
            submission_order: Vec::new(),
            responses: Vec::new(),
            accepted: Vec::new(),
            triplets: Vec::new(),
            events,
            log,
            issued: 0,
        };
        for event in event_replay.entries {
            c.apply_event(event)?;
        }
        c.replay_responses(record_replay.entries, record_replay.offsets)?;
        log::info!(
            "campaign ready: {} workers, {} submissions, {} triplets, embedding v{}",
            c.workers.len(),
            c.submissions.len(),
            c.triplets.len(),
            c.snapshot.version
        );
        Ok(c)
    }

    fn apply_event(&mut self, event: Event) -> Result<()> {
        match event {
            Event::WorkerCreated { worker_id } => {
                self.workers.insert(worker_id.clone(), WorkerRecord::new(worker_id));
            }
            Event::Pretest { worker_id, answers } => {
                let result = grade_pretest(&answers, &self.questions).map_err(bad_request)?;
                self.worker_mut(&worker_id)?.record_pretest(result);
            }
            Event::HitIssued { worker_id, hit } => {
                self.issued += 1;
                self.open_hits.insert(worker_id.clone(), hit.id.clone());
                self.hits.insert(hit.id.clone(), IssuedHit { worker_id, hit });
            }
            Event::Refit { version, snapshot, .. } => {
                let path = self.cfg.data_dir.join(SNAPSHOT_DIR).join(&snapshot);
                let y = read_snapshot(&path, self.corpus.len())?;
                self.install(Snapshot { version, embedding: y })?;
            }
        }
        Ok(())
    }

    /// Records come in groups of one HIT each. A short final group is an
    /// interrupted submission and is cut from the log.
    fn replay_responses(&mut self, records: Vec<ResponseRecord>, offsets: Vec<u64>) -> Result<()> {
        let mut start = 0;
        while start < records.len() {
            let hit_id = &records[start].hit_id;
            let len = records[start..].iter().take_while(|r| &r.hit_id == hit_id).count();
            if len < GRIDS_PER_HIT && start + len == records.len() {
                log::warn!("dropping {len} records of an interrupted submission for {hit_id}");
                self.log.truncate_to(offsets[start], len)?;
                break;
            }
            if len != GRIDS_PER_HIT {
                return Err(ServiceError::CorruptLog {
                    path: self.log.path().to_path_buf(),
                    line: start + 1,
                    msg: format!("HIT {hit_id} has {len} records, expected {GRIDS_PER_HIT}"),
                });
            }
            let group = &records[start..start + len];
            let responses = group
                .iter()
                .map(|r| r.to_response())
                .collect::<narrative_core::Result<Vec<_>>>()?;
            let hit = match self.hits.get(hit_id) {
                Some(issued) => issued.hit.clone(),
                None => hit_from_responses(hit_id, &responses)?,
            };
            self.apply_submission(&group[0].worker_id, hit, responses)?;
            start += len;
        }
        Ok(())
    }

    /// Updates in-memory state for an already-logged submission.
    fn apply_submission(&mut self, worker_id: &str, hit: Hit, responses: Vec<Response>) -> Result<SubmitResult> {
        let outcome = filter_responses(&[(hit.clone(), responses.clone())], &self.labels);
        let grade = outcome.grades[0].ok_or_else(|| ServiceError::Internal(format!("HIT {} not gradable", hit.id)))?;
        let new = outcome.triplets(TripletSource::Human);
        let result = SubmitResult {
            hit_id: hit.id.clone(),
            accepted_grid_count: outcome.accepted.len(),
            catch_grade: grade,
            triplets_added: new.len(),
            sequence: self.submission_order.len(),
        };
        let worker = self.worker_mut(worker_id)?;
        worker.hits_completed += 1;
        worker.catch_pass_history.push(grade);
        if self.open_hits.get(worker_id) == Some(&hit.id) {
            self.open_hits.remove(worker_id);
        }
        self.triplets.extend(new);
        self.accepted.extend(outcome.accepted);
        self.responses.extend(responses);
        self.submissions.insert(hit.id.clone(), result.clone());
        self.submission_order.push(hit.id);
        Ok(result)
    }

    fn worker_mut(&mut self, worker_id: &str) -> Result<&mut WorkerRecord> {
        self.workers
            .get_mut(worker_id)
            .ok_or_else(|| ServiceError::NotFound(format!("unknown worker {worker_id}")))
    }

    fn worker(&self, worker_id: &str) -> Result<&WorkerRecord> {
        self.workers
            .get(worker_id)
            .ok_or_else(|| ServiceError::NotFound(format!("unknown worker {worker_id}")))
    }

    fn install(&mut self, snapshot: Snapshot) -> Result<()> {
        self.index = NeighborIndex::build(&snapshot.embedding)?;
        self.snapshot = Arc::new(snapshot);
        *self.published.write().unwrap_or_else(|e| e.into_inner()) = self.snapshot.clone();
        Ok(())
    }

    pub fn register_worker(&mut self) -> Result<String> {
        let worker_id = format!("worker-{:06}", self.workers.len() + 1);
        let event = Event::WorkerCreated {
            worker_id: worker_id.clone(),
        };
        self.events.append(std::slice::from_ref(&event))?;
        self.apply_event(event)?;
        Ok(worker_id)
    }

    pub fn pretest_questions(&self, worker_id: &str) -> Result<Vec<PublicQuestion>> {
        self.worker(worker_id)?;
        Ok(self.questions.iter().map(PretestQuestion::public).collect())
    }

    /// Grades and records a pretest attempt; the latest attempt counts.
    pub fn submit_pretest(&mut self, worker_id: &str, answers: Vec<usize>) -> Result<WorkerRecord> {
        self.worker(worker_id)?;
        grade_pretest(&answers, &self.questions).map_err(bad_request)?;
        if let Some(bad) = answers.iter().find(|&&a| a >= 2) {
            return Err(ServiceError::BadRequest(format!("answer {bad} is not an option index")));
        }
        let event = Event::Pretest {
            worker_id: worker_id.to_string(),
            answers,
        };
        self.events.append(std::slice::from_ref(&event))?;
        self.apply_event(event)?;
        Ok(self.worker(worker_id)?.clone())
    }

    /// The worker's open HIT, or a fresh one assembled against the current
    /// embedding.
    pub fn next_hit(&mut self, worker_id: &str) -> Result<HitPayload> {
        if !self.worker(worker_id)?.qualified {
            return Err(ServiceError::Forbidden(format!("worker {worker_id} has not passed the pretest")));
        }
        if let Some(id) = self.open_hits.get(worker_id) {
            return Ok(self.payload(&self.hits[id].hit));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(self.issued);
        let hit_cfg = HitConfig {
            strategy: self.cfg.strategy,
            n: self.cfg.n,
            sentinel_rate: self.cfg.sentinel_rate,
        };
        let id = format!("hit-{:06}", self.issued + 1);
        let hit = assemble_hit(id, &self.corpus, &self.index, &hit_cfg, &mut rng)?;
        let event = Event::HitIssued {
            worker_id: worker_id.to_string(),
            hit: hit.clone(),
        };
        self.events.append(std::slice::from_ref(&event))?;
        self.apply_event(event)?;
        Ok(self.payload(&hit))
    }

    fn payload(&self, hit: &Hit) -> HitPayload {
        let text = |i: usize| self.corpus.excerpts()[i].text.clone();
        HitPayload {
            hit_id: hit.id.clone(),
            selections_per_grid: DEFAULT_SELECTIONS,
            grids: hit
                .grids
                .iter()
                .map(|g| GridPayload {
                    anchor: text(g.anchor),
                    candidates: g
                        .candidates
                        .iter()
                        .enumerate()
                        .map(|(pos, &c)| match (g.sentinel_slot, &g.sentinel_text) {
                            (Some(s), Some(t)) if s == pos => t.clone(),
                            _ => text(c),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    /// Validates, logs and grades a HIT submission. `selections[g]` holds
    /// the candidate positions chosen in grid `g`.
    pub fn submit(&mut self, hit_id: &str, worker_id: &str, selections: Vec<Vec<usize>>) -> Result<Submitted> {
        self.worker(worker_id)?;
        let issued = match self.hits.get(hit_id) {
            Some(h) if h.worker_id == worker_id => h.clone(),
            _ => return Err(ServiceError::NotFound(format!("no HIT {hit_id} for worker {worker_id}"))),
        };
        if let Some(result) = self.submissions.get(hit_id) {
            return Ok(Submitted {
                result: result.clone(),
                duplicate: true,
            });
        }
        if !self.worker(worker_id)?.qualified {
            return Err(ServiceError::Forbidden(format!("worker {worker_id} has not passed the pretest")));
        }
        let hit = issued.hit;
        if selections.len() != hit.grids.len() {
            return Err(ServiceError::BadRequest(format!(
                "expected selections for {} grids, got {}",
                hit.grids.len(),
                selections.len()
            )));
        }
        let mut responses = Vec::with_capacity(hit.grids.len());
        for (g, (grid, sel)) in hit.grids.iter().zip(selections).enumerate() {
            if sel.len() != DEFAULT_SELECTIONS {
                return Err(ServiceError::BadRequest(format!(
                    "grid {g}: select exactly {DEFAULT_SELECTIONS} candidates, got {}",
                    sel.len()
                )));
            }
            let r = Response::new(grid.clone(), sel, worker_id).map_err(|e| bad_request(format!("grid {g}: {e}")))?;
            responses.push(r);
        }
        let ts = now_ms();
        let records: Vec<ResponseRecord> =
            responses.iter().map(|r| ResponseRecord::from_response(r, hit_id, ts)).collect();
        self.log.append(&records)?;
        let result = self.apply_submission(worker_id, hit, responses)?;
        Ok(Submitted {
            result,
            duplicate: false,
        })
    }

    /// Refits on all accepted triplets from scratch and publishes a new
    /// embedding version.
    pub fn refit(&mut self, req: RefitRequest) -> Result<u64> {
        let cfg = self.refit_config(req)?;
        let y = fit(&self.p, &self.triplets, &cfg, FitOptions::default())?.embedding;
        let version = self.snapshot.version + 1;
        let name = snapshot_name(version);
        y.matrix().save_text(self.cfg.data_dir.join(SNAPSHOT_DIR).join(&name))?;
        let event = Event::Refit {
            version,
            snapshot: name,
            triplets: self.triplets.len(),
            lambda: cfg.lambda,
            gamma: cfg.gamma,
            iters: cfg.iters,
            seed: cfg.seed,
        };
        self.events.append(std::slice::from_ref(&event))?;
        self.install(Snapshot { version, embedding: y })?;
        Ok(version)
    }

    fn refit_config(&self, req: RefitRequest) -> Result<SnackConfig> {
        let mut cfg = self.cfg.snack();
        if let Some(p) = req.preset {
            cfg = cfg.with_preset(p);
        }
        cfg.lambda = req.lambda.unwrap_or(cfg.lambda);
        cfg.gamma = req.gamma.unwrap_or(cfg.gamma);
        cfg.iters = req.iters.unwrap_or(cfg.iters);
        cfg.seed = req.seed.unwrap_or(cfg.seed);
        cfg.validate().map_err(bad_request)?;
        Ok(cfg)
    }

    pub fn metrics(&self) -> Result<MetricsReport> {
        let mut report = MetricsReport::compute(
            &self.snapshot.embedding,
            &self.labels,
            &self.accepted,
            &MetricsConfig::default(),
        )?;
        report.notes.insert("embedding_version".into(), self.snapshot.version.to_string());
        report.notes.insert("submissions".into(), self.submissions.len().to_string());
        report.notes.insert("triplets".into(), self.triplets.len().to_string());
        Ok(report)
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.clone()
    }

    /// Shared handle that always holds the latest published snapshot.
    pub fn published(&self) -> Arc<RwLock<Arc<Snapshot>>> {
        self.published.clone()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn triplets(&self) -> &[Triplet] {
        &self.triplets
    }

    pub fn workers(&self) -> &BTreeMap<String, WorkerRecord> {
        &self.workers
    }

    /// Hit ids in submission (and log) order.
    pub fn submission_order(&self) -> &[String] {
        &self.submission_order
    }

    pub fn responses(&self) -> &[Response] {
        &self.responses
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.cfg
    }

    /// Unredacted HIT, for operators and tests.
    pub fn hit(&self, hit_id: &str) -> Option<&Hit> {
        self.hits.get(hit_id).map(|h| &h.hit)
    }
}

fn bad_request(e: impl ToString) -> ServiceError {
    ServiceError::BadRequest(e.to_string())
}

fn read_snapshot(path: &PathBuf, n: usize) -> Result<LowDimEmbedding> {
    let m = Matrix::load_text(path)?;
    if m.rows() != n {
        return Err(ServiceError::Config(format!(
            "{} has {} rows, corpus has {n}",
            path.display(),
            m.rows()
        )));
    }
    Ok(LowDimEmbedding(m))
}

fn load_inputs(cfg: &ServiceConfig) -> Result<(Corpus, InputEmbeddings)> {
    match (&cfg.excerpts, &cfg.taxonomy, &cfg.embeddings) {
        (Some(e), Some(t), Some(x)) => {
            let corpus = load_corpus(e, t)?;
            let inputs = load_embeddings(x, &corpus)?;
            Ok((corpus, inputs))
        }
        _ => {
            let s = generate(&cfg.synthetic)?;
            Ok((s.corpus, s.embeddings))
        }
    }
}

fn hit_from_responses(hit_id: &str, responses: &[Response]) -> Result<Hit> {
    let catch_position = responses
        .iter()
        .position(|r| r.grid.kind == GridKind::Catch)
        .ok_or_else(|| ServiceError::Internal(format!("logged HIT {hit_id} has no catch grid")))?;
    Ok(Hit {
        id: hit_id.to_string(),
        grids: responses.iter().map(|r| r.grid.clone()).collect(),
        catch_position,
    })
}
