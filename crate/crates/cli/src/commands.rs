use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use narrative_core::corpus::corpus_stats;
use narrative_core::metrics::MetricsReport;
use narrative_core::optimizer::{fit, FitOptions};
use narrative_core::playback::{
    initial_embedding, nk_pairs, nk_sweep, pool_size_grid, run_playback, weight_grid, write_curve_csv,
};
use narrative_core::sampling::{SamplingStrategy, DEFAULT_POOL_SIZE};
use narrative_core::tsne::{affinities_from_distances, pairwise_distances, AffinityMatrix};
use narrative_core::tste::{Triplet, TripletSet};
use narrative_core::worker::{Response, ResponseRecord};
use narrative_core::{LowDimEmbedding, Matrix};

use crate::config::{exists, ExperimentConfig};
use crate::outputs::{self, Outputs};
use crate::CliError;

const TRACE_EVERY: usize = 100;

struct Inputs {
    labels: Vec<u32>,
    p: AffinityMatrix,
}

fn inputs(cfg: &ExperimentConfig) -> Result<Inputs, CliError> {
    let (corpus, x) = cfg.load_corpus()?;
    let p = affinities_from_distances(&pairwise_distances(x.matrix())?, cfg.perplexity)?;
    Ok(Inputs {
        labels: corpus.labels(),
        p,
    })
}

fn save_embedding(out: &mut Outputs, y: &LowDimEmbedding) -> Result<(), CliError> {
    out.write(outputs::EMBEDDING, |w| y.matrix().write_text(w))?;
    Ok(())
}

fn save_metrics(out: &mut Outputs, report: &MetricsReport) -> Result<(), CliError> {
    let json = report.to_json()?;
    out.write(outputs::METRICS, |w| writeln!(w, "{json}"))?;
    Ok(())
}

fn read_snapshot(cfg: &ExperimentConfig, n: usize) -> Result<LowDimEmbedding, CliError> {
    let path = cfg.snapshot_path();
    exists(&path)?;
    let m = Matrix::load_text(&path)?;
    if m.rows() != n {
        return Err(CliError::Config(format!("{} has {} rows, corpus has {n}", path.display(), m.rows())));
    }
    Ok(LowDimEmbedding(m))
}

fn read_responses(path: &Path, n: usize) -> Result<Vec<Response>, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ResponseRecord = serde_json::from_str(&line)
            .map_err(|e| CliError::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
        let r = rec.to_response()?;
        if r.grid.anchor >= n || r.grid.candidates.iter().any(|&c| c >= n) {
            return Err(CliError::Config(format!("{}:{}: index out of range", path.display(), i + 1)));
        }
        out.push(r);
    }
    Ok(out)
}

/// Responses named by the config, else the output directory's log if present.
fn responses(cfg: &ExperimentConfig, n: usize) -> Result<Option<Vec<Response>>, CliError> {
    let path = match &cfg.responses {
        Some(p) => {
            exists(p)?;
            p.clone()
        }
        None => cfg.out_path(outputs::RESPONSES),
    };
    if path.exists() {
        read_responses(&path, n).map(Some)
    } else {
        Ok(None)
    }
}

pub fn stats(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let (corpus, _) = cfg.load_corpus()?;
    let stats = corpus_stats(&corpus);
    print!("{}", stats.to_table());
    println!("total\t{}", stats.total_examples());
    Ok(())
}

pub fn fit_cmd(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(), CliError> {
    let inp = inputs(cfg)?;
    let triplets = match &cfg.triplets {
        Some(path) => {
            let set = TripletSet::load_csv(path)?;
            set.validate(inp.labels.len())?;
            set.into_vec()
        }
        None => Vec::new(),
    };
    let opts = FitOptions {
        trace_every: TRACE_EVERY,
        ..FitOptions::default()
    };
    let result = fit(&inp.p, &triplets, &cfg.snack(), opts)?;
    save_embedding(out, &result.embedding)?;
    out.write(outputs::CURVE, |w| {
        writeln!(w, "iter,total,tsne,tste")?;
        for t in &result.trace {
            writeln!(w, "{},{},{},{}", t.iter, t.loss.total, t.loss.tsne_part, t.loss.tste_part)?;
        }
        Ok(())
    })?;
    eprintln!("fit {} points on {} triplets", inp.labels.len(), triplets.len());
    Ok(())
}

pub fn simulate(cfg: &ExperimentConfig, out: &mut Outputs, sweep_nk: bool) -> Result<(), CliError> {
    let inp = inputs(cfg)?;
    let pb = cfg.playback()?;
    let y0 = initial_embedding(&inp.p, &pb.snack)?;
    let result = run_playback(&inp.p, &inp.labels, &pb, Some(&y0))?;
    save_embedding(out, &result.embedding)?;
    save_metrics(out, &result.report)?;
    out.write(outputs::CURVE, |w| write_curve_csv(&result.curve, w))?;
    let triplets = TripletSet::from(result.triplets.clone());
    out.write(outputs::TRIPLETS, |w| {
        writeln!(w, "anchor,positive,negative,source")?;
        triplets.write_csv(w)
    })?;
    out.write(outputs::RESPONSES, |w| {
        for (i, r) in result.responses.iter().enumerate() {
            // Simulated responses carry a zero timestamp so reruns are byte-identical.
            let rec = ResponseRecord::from_response(r, format!("sim-{:06}", i + 1), 0);
            serde_json::to_writer(&mut *w, &rec)?;
            writeln!(w)?;
        }
        Ok(())
    })?;
    if sweep_nk {
        let pairs = nk_pairs(cfg.gridsearch.max_n);
        let points = nk_sweep(&inp.p, &inp.labels, &pb, &pairs, cfg.gridsearch.nk_grids, Some(&y0))?;
        out.write(outputs::NK, |w| {
            writeln!(w, "n,k,triplets,tgr_mean,tgr_std,knngr_mean,knngr_std")?;
            for p in &points {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{}",
                    p.n, p.k, p.triplets, p.tgr.mean, p.tgr.std, p.knngr.mean, p.knngr.std
                )?;
            }
            Ok(())
        })?;
    }
    println!("{}", result.report.to_flat_text());
    Ok(())
}

pub fn evaluate(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(), CliError> {
    let (corpus, _) = cfg.load_corpus()?;
    let labels = corpus.labels();
    let y = read_snapshot(cfg, labels.len())?;
    let responses = responses(cfg, labels.len())?.unwrap_or_default();
    let report = MetricsReport::compute(&y, &labels, &responses, &cfg.metrics())?;
    save_metrics(out, &report)?;
    println!("{}", report.to_flat_text());
    Ok(())
}

pub fn gridsearch(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(), CliError> {
    let inp = inputs(cfg)?;
    let pb = cfg.playback()?;
    let y0 = initial_embedding(&inp.p, &pb.snack)?;
    let triplets: Vec<Triplet> = match &cfg.triplets {
        Some(path) => TripletSet::load_csv(path)?.into_vec(),
        None => run_playback(&inp.p, &inp.labels, &pb, Some(&y0))?.triplets,
    };
    let g = &cfg.gridsearch;
    let weights = weight_grid(&inp.p, &inp.labels, &triplets, &pb.snack, &pb.metrics, &g.lambdas, &g.gammas)?;
    out.write(outputs::WEIGHTS, |w| {
        writeln!(w, "lambda,gamma,tgr_mean,tgr_std")?;
        for p in &weights {
            writeln!(w, "{},{},{},{}", p.lambda, p.gamma, p.tgr.mean, p.tgr.std)?;
        }
        Ok(())
    })?;

    let mut pool_base = pb.clone();
    if !matches!(pool_base.strategy, SamplingStrategy::Distance { .. } | SamplingStrategy::DistanceRnd { .. }) {
        log::info!("strategy {} has no pool; sweeping pool sizes with distance-rnd", pool_base.strategy);
        pool_base.strategy = SamplingStrategy::distance_rnd(DEFAULT_POOL_SIZE);
    }
    let pools = pool_size_grid(&inp.p, &inp.labels, &pool_base, &g.pool_sizes, Some(&y0))?;
    out.write(outputs::POOLS, |w| {
        writeln!(w, "pool_size,tgr_mean,tgr_std,knngr_mean,knngr_std")?;
        for p in &pools {
            writeln!(w, "{},{},{},{},{}", p.pool_size, p.tgr.mean, p.tgr.std, p.knngr.mean, p.knngr.std)?;
        }
        Ok(())
    })?;
    Ok(())
}

pub fn export_viz(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(), CliError> {
    let (corpus, _) = cfg.load_corpus()?;
    let n = corpus.len();
    let y = read_snapshot(cfg, n)?;
    if y.dim() != 2 {
        return Err(CliError::Config(format!("export-viz needs a 2-d embedding, got d = {}", y.dim())));
    }
    out.write(outputs::VIZ, |w| {
        writeln!(w, "index,x,y,class_id,supercategory")?;
        for (i, e) in corpus.excerpts().iter().enumerate() {
            let p = y.point(i);
            writeln!(w, "{i},{},{},{},{}", p[0], p[1], e.class_id, corpus.supercategory_of(i).code())?;
        }
        Ok(())
    })?;

    let mut edges: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    match responses(cfg, n)? {
        Some(rs) => {
            for r in &rs {
                for &pos in &r.selected {
                    // A sentinel slot shows a description, not its excerpt.
                    if r.grid.sentinel_slot != Some(pos) {
                        *edges.entry((r.grid.anchor, r.grid.candidates[pos])).or_default() += 1;
                    }
                }
            }
        }
        None => log::warn!("no response log found; edges.csv will be empty"),
    }
    out.write(outputs::EDGES, |w| {
        writeln!(w, "anchor,selected,count")?;
        for ((a, s), c) in &edges {
            writeln!(w, "{a},{s},{c}")?;
        }
        Ok(())
    })?;
    Ok(())
}
