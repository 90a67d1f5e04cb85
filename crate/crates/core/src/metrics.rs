//! Embedding and annotation quality metrics.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::matrix::sq_dist;
use crate::worker::{candidate_label, Response};
use crate::{Error, LowDimEmbedding, Result};

pub const TGR_SAMPLES: usize = 1000;
pub const DEFAULT_REPEATS: usize = 10;
pub const KNN_K: usize = 5;
pub const KNN_TRAIN_FRAC: f64 = 0.7;
const KNN_MAX_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation (zero for a single value).
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return MeanStd::default();
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.std)
    }
}

fn repeat_rng(seed: u64, repeat: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(repeat as u64 + 1);
    rng
}

fn class_members(labels: &[u32]) -> BTreeMap<u32, Vec<usize>> {
    let mut m: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        m.entry(l).or_default().push(i);
    }
    m
}

/// Fraction of uniformly sampled ground-truth triplets
/// `label(i) = label(j) != label(k)` that the embedding orders correctly
/// (`|y_i - y_j| < |y_i - y_k|`), as mean ± std over repeats.
pub fn triplet_generalization_ratio(
    y: &LowDimEmbedding,
    labels: &[u32],
    n_samples: usize,
    repeats: usize,
    seed: u64,
) -> Result<MeanStd> {
    check_labels(y, labels)?;
    let classes = class_members(labels);
    let n = labels.len();
    // Anchor i has (|C_i| - 1)(N - |C_i|) ground-truth triplets.
    let weights: Vec<f64> = labels
        .iter()
        .map(|l| {
            let c = classes[l].len();
            ((c - 1) * (n - c)) as f64
        })
        .collect();
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        return Err(Error::NoGroundTruth);
    }
    let cumulative: Vec<f64> = weights
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w;
            Some(*acc)
        })
        .collect();
    let ratios: Vec<f64> = (0..repeats)
        .map(|r| {
            let mut rng = repeat_rng(seed, r);
            let mut hits = 0usize;
            for _ in 0..n_samples {
                let t = rng.random::<f64>() * total;
                let i = cumulative.partition_point(|&c| c <= t).min(n - 1);
                let same = &classes[&labels[i]];
                let j = loop {
                    let j = same[rng.random_range(0..same.len())];
                    if j != i {
                        break j;
                    }
                };
                let k = loop {
                    let k = rng.random_range(0..n);
                    if labels[k] != labels[i] {
                        break k;
                    }
                };
                if sq_dist(y.point(i), y.point(j)) < sq_dist(y.point(i), y.point(k)) {
                    hits += 1;
                }
            }
            hits as f64 / n_samples as f64
        })
        .collect();
    Ok(MeanStd::from_values(&ratios))
}

/// Held-out accuracy of a `k`-nearest-neighbor majority vote trained on a
/// random `train_frac` split, as mean ± std over repeats. Vote ties go to the
/// label of the nearest tied neighbor.
pub fn knn_generalization_ratio(
    y: &LowDimEmbedding,
    labels: &[u32],
    train_frac: f64,
    repeats: usize,
    k: usize,
    seed: u64,
) -> Result<MeanStd> {
    check_labels(y, labels)?;
    if !(0.0..1.0).contains(&train_frac) || train_frac == 0.0 || k == 0 {
        return Err(Error::InvalidConfig(format!("train_frac {train_frac} and k {k} must be in (0,1) and >= 1")));
    }
    let n = labels.len();
    let n_classes = class_members(labels).len();
    if n_classes == 1 {
        return Ok(MeanStd { mean: 1.0, std: 0.0 });
    }
    let n_train = ((n as f64) * train_frac).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::TooFewPoints { needed: 2, got: n });
    }
    let accs: Vec<f64> = (0..repeats)
        .map(|r| {
            let mut rng = repeat_rng(seed, r);
            let mut order: Vec<usize> = (0..n).collect();
            for attempt in 0..KNN_MAX_ATTEMPTS {
                order.shuffle(&mut rng);
                let covered = class_members(&order[..n_train].iter().map(|&i| labels[i]).collect::<Vec<_>>()).len();
                if covered == n_classes {
                    break;
                }
                if attempt + 1 == KNN_MAX_ATTEMPTS {
                    log::warn!("knn repeat {r}: no split covers every class after {KNN_MAX_ATTEMPTS} attempts");
                }
            }
            let (train, test) = order.split_at(n_train);
            let correct = test
                .iter()
                .filter(|&&t| knn_vote(y, labels, train, t, k) == labels[t])
                .count();
            correct as f64 / test.len() as f64
        })
        .collect();
    Ok(MeanStd::from_values(&accs))
}

fn knn_vote(y: &LowDimEmbedding, labels: &[u32], train: &[usize], q: usize, k: usize) -> u32 {
    let mut near: Vec<(f64, usize)> = train.iter().map(|&i| (sq_dist(y.point(q), y.point(i)), i)).collect();
    let k = k.min(near.len());
    near.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    near.truncate(k);
    near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut votes: BTreeMap<u32, usize> = BTreeMap::new();
    for &(_, i) in &near {
        *votes.entry(labels[i]).or_default() += 1;
    }
    let best = *votes.values().max().expect("k >= 1");
    near.iter()
        .map(|&(_, i)| labels[i])
        .find(|l| votes[l] == best)
        .expect("some label has the top count")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrResult {
    pub value: f64,
    /// Same-class pairs skipped because the anchor's coordinates have zero variance.
    pub skipped: usize,
    pub pairs: usize,
}

fn coord_var(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    v.map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

/// Mean over ordered same-class pairs `(i, j)`, `i != j`, of
/// `var(y_i - y_j) / var(y_i)`, variances taken across coordinates.
pub fn snr_distance(y: &LowDimEmbedding, labels: &[u32]) -> Result<SnrResult> {
    check_labels(y, labels)?;
    if y.dim() < 2 {
        return Err(Error::InvalidConfig("SNR needs at least 2 dimensions".into()));
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    let mut skipped = 0usize;
    for members in class_members(labels).values() {
        for &i in members {
            let yi = y.point(i);
            let vi = coord_var(yi.iter().copied());
            for &j in members {
                if i == j {
                    continue;
                }
                if vi == 0.0 {
                    skipped += 1;
                    continue;
                }
                let yj = y.point(j);
                sum += coord_var(yi.iter().zip(yj).map(|(a, b)| a - b)) / vi;
                pairs += 1;
            }
        }
    }
    if pairs == 0 && skipped == 0 {
        return Err(Error::NoGroundTruth);
    }
    if skipped > 0 {
        log::warn!("SNR skipped {skipped} pairs with zero-variance anchors");
    }
    let value = if pairs == 0 { 0.0 } else { sum / pairs as f64 };
    Ok(SnrResult { value, skipped, pairs })
}

fn check_labels(y: &LowDimEmbedding, labels: &[u32]) -> Result<()> {
    if y.n() != labels.len() {
        return Err(Error::RowCountMismatch {
            expected: labels.len(),
            found: y.n(),
        });
    }
    if labels.is_empty() {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class_id: u32,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AnnotationStats {
    pub agreements: usize,
    pub disagreements: usize,
    /// Percentages in [0, 100].
    pub precision: f64,
    pub recall: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    /// Per-class fractions in [0, 1].
    pub per_class: Vec<ClassScore>,
}

#[derive(Default)]
struct Confusion {
    tp: usize,
    fp: usize,
    fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Agreement counts and per-class precision/recall of the selections, where
/// a candidate is relevant when it shares the anchor's class.
pub fn annotation_stats(responses: &[Response], labels: &[u32]) -> AnnotationStats {
    let mut confusion: BTreeMap<u32, Confusion> = BTreeMap::new();
    let mut agreements = 0;
    let mut disagreements = 0;
    for r in responses {
        let anchor_label = labels[r.grid.anchor];
        let c = confusion.entry(anchor_label).or_default();
        for pos in 0..r.grid.n() {
            let same = candidate_label(&r.grid, pos, labels) == anchor_label;
            match (r.is_selected(pos), same) {
                (true, true) => {
                    c.tp += 1;
                    agreements += 1;
                }
                (true, false) => {
                    c.fp += 1;
                    disagreements += 1;
                }
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    let sizes = class_members(labels);
    let per_class: Vec<ClassScore> = confusion
        .iter()
        .map(|(&class_id, c)| ClassScore {
            class_id,
            precision: ratio(c.tp, c.tp + c.fp),
            recall: ratio(c.tp, c.tp + c.fn_),
        })
        .collect();
    let m = per_class.len().max(1) as f64;
    let total_w: f64 = per_class.iter().map(|s| sizes[&s.class_id].len() as f64).sum();
    let weighted = |f: fn(&ClassScore) -> f64| {
        if total_w == 0.0 {
            0.0
        } else {
            100.0 * per_class.iter().map(|s| f(s) * sizes[&s.class_id].len() as f64).sum::<f64>() / total_w
        }
    };
    AnnotationStats {
        agreements,
        disagreements,
        precision: 100.0 * per_class.iter().map(|s| s.precision).sum::<f64>() / m,
        recall: 100.0 * per_class.iter().map(|s| s.recall).sum::<f64>() / m,
        weighted_precision: weighted(|s| s.precision),
        weighted_recall: weighted(|s| s.recall),
        per_class,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub tgr_samples: usize,
    pub repeats: usize,
    pub knn_k: usize,
    pub train_frac: f64,
    pub seed: u64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            tgr_samples: TGR_SAMPLES,
            repeats: DEFAULT_REPEATS,
            knn_k: KNN_K,
            train_frac: KNN_TRAIN_FRAC,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tgr: MeanStd,
    pub knngr: MeanStd,
    pub snr: f64,
    pub snr_skipped: usize,
    #[serde(flatten)]
    pub annotations: AnnotationStats,
    /// Conventions behind the numbers, echoed for readers of the report.
    pub notes: BTreeMap<String, String>,
}

impl MetricsReport {
    pub fn compute(y: &LowDimEmbedding, labels: &[u32], responses: &[Response], cfg: &MetricsConfig) -> Result<Self> {
        let tgr = triplet_generalization_ratio(y, labels, cfg.tgr_samples, cfg.repeats, cfg.seed)?;
        let knngr = knn_generalization_ratio(y, labels, cfg.train_frac, cfg.repeats, cfg.knn_k, cfg.seed)?;
        let snr = snr_distance(y, labels)?;
        let mut notes = BTreeMap::new();
        notes.insert("snr_pairs".into(), "ordered same-class pairs, i != j".into());
        notes.insert("knn_k".into(), cfg.knn_k.to_string());
        notes.insert("response_filter".into(), "per-HIT catch gate".into());
        Ok(MetricsReport {
            tgr,
            knngr,
            snr: snr.value,
            snr_skipped: snr.skipped,
            annotations: annotation_stats(responses, labels),
            notes,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `key=value` lines, one per scalar.
    pub fn to_flat_text(&self) -> String {
        let a = &self.annotations;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        };
        kv("tgr_mean", self.tgr.mean.to_string());
        kv("tgr_std", self.tgr.std.to_string());
        kv("knngr_mean", self.knngr.mean.to_string());
        kv("knngr_std", self.knngr.std.to_string());
        kv("snr", self.snr.to_string());
        kv("snr_skipped", self.snr_skipped.to_string());
        kv("agreements", a.agreements.to_string());
        kv("disagreements", a.disagreements.to_string());
        kv("precision", a.precision.to_string());
        kv("recall", a.recall.to_string());
        kv("weighted_precision", a.weighted_precision.to_string());
        kv("weighted_recall", a.weighted_recall.to_string());
        for (k, v) in &self.notes {
            kv(&format!("note.{k}"), v.clone());
        }
        s
    }

    pub fn write_per_class_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "class_id,precision,recall")?;
        for c in &self.annotations.per_class {
            writeln!(w, "{},{},{}", c.class_id, c.precision, c.recall)?;
        }
        Ok(())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{Grid, GridKind};
    use crate::Matrix;
    use rand_distr::{Distribution, StandardNormal};

    fn two_clusters(n_per: usize) -> (LowDimEmbedding, Vec<u32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..2 {
            for _ in 0..n_per {
                let off = if c == 0 { -100.0 } else { 100.0 };
                rows.push(vec![off + rng.random::<f64>(), rng.random::<f64>()]);
                labels.push(c + 1);
            }
        }
        (LowDimEmbedding(Matrix::from_rows(&rows)), labels)
    }

    fn iid(n: usize, d: usize, seed: u64) -> LowDimEmbedding {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LowDimEmbedding(Matrix::from_vec(n, d, (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect()))
    }

    #[test]
    fn separated_clusters_score_high() {
        let (y, labels) = two_clusters(30);
        assert!(triplet_generalization_ratio(&y, &labels, 1000, 10, 0).unwrap().mean >= 0.99);
        assert!(knn_generalization_ratio(&y, &labels, 0.7, 10, 5, 0).unwrap().mean >= 0.99);
    }

    #[test]
    fn random_embedding_tgr_is_half() {
        let y = iid(400, 2, 5);
        let labels: Vec<u32> = (0..400).map(|i| (i % 4) as u32).collect();
        let tgr = triplet_generalization_ratio(&y, &labels, 1000, 10, 3).unwrap();
        assert!((tgr.mean - 0.5).abs() <= 0.05, "{tgr}");
    }

    #[test]
    fn shuffled_labels_knn_is_chance() {
        let c = 4;
        let y = iid(400, 2, 8);
        let mut labels: Vec<u32> = (0..400).map(|i| (i % c) as u32).collect();
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(2));
        let k = knn_generalization_ratio(&y, &labels, 0.7, 10, 5, 4).unwrap();
        let p = 1.0 / c as f64;
        let se = (p * (1.0 - p) / (120.0 * 10.0)).sqrt();
        assert!((k.mean - p).abs() <= 3.0 * se, "{k} vs {p} ± {se}");
    }

    #[test]
    fn degenerate_cases() {
        let y = iid(10, 2, 0);
        let one = vec![7u32; 10];
        assert_eq!(knn_generalization_ratio(&y, &one, 0.7, 3, 5, 0).unwrap().mean, 1.0);
        assert!(matches!(triplet_generalization_ratio(&y, &one, 10, 1, 0), Err(Error::NoGroundTruth)));
        let singletons: Vec<u32> = (0..10).collect();
        assert!(matches!(triplet_generalization_ratio(&y, &singletons, 10, 1, 0), Err(Error::NoGroundTruth)));
        assert!(matches!(snr_distance(&y, &singletons), Err(Error::NoGroundTruth)));
    }

    #[test]
    fn knn_tie_goes_to_nearest_label() {
        // k=2 with one vote each: the nearer neighbor's label wins.
        let y = LowDimEmbedding(Matrix::from_rows(&[vec![0.0], vec![1.0], vec![-2.0]]));
        assert_eq!(knn_vote(&y, &[0, 5, 9], &[1, 2], 0, 2), 5);
        let y = LowDimEmbedding(Matrix::from_rows(&[vec![0.0], vec![3.0], vec![-2.0]]));
        assert_eq!(knn_vote(&y, &[0, 5, 9], &[1, 2], 0, 2), 9);
    }

    #[test]
    fn tgr_is_rigid_invariant_and_mirrors() {
        let y = iid(60, 2, 11);
        let labels: Vec<u32> = (0..60).map(|i| (i % 3) as u32).collect();
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|i| {
                let p = y.point(i);
                vec![c * p[0] - s * p[1] + 5.0, s * p[0] + c * p[1] - 2.0]
            })
            .collect();
        let moved = LowDimEmbedding(Matrix::from_rows(&rows));
        let a = triplet_generalization_ratio(&y, &labels, 500, 3, 9).unwrap();
        let b = triplet_generalization_ratio(&moved, &labels, 500, 3, 9).unwrap();
        assert!((a.mean - b.mean).abs() < 1e-12);
        let ka = knn_generalization_ratio(&y, &labels, 0.7, 3, 5, 9).unwrap();
        let kb = knn_generalization_ratio(&moved, &labels, 0.7, 3, 5, 9).unwrap();
        assert!((ka.mean - kb.mean).abs() < 1e-12);
    }

    #[test]
    fn tgr_mirror_on_two_point_classes() {
        // A 1x3 rectangle. Pairing the short sides gives TGR 1; pairing the
        // diagonals reverses every ground-truth triplet.
        let y = LowDimEmbedding(Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 3.0], vec![0.0, 3.0]]));
        let good = triplet_generalization_ratio(&y, &[1, 1, 2, 2], 200, 2, 0).unwrap();
        let bad = triplet_generalization_ratio(&y, &[1, 2, 1, 2], 200, 2, 0).unwrap();
        assert_eq!(good.mean, 1.0);
        assert!((good.mean - (1.0 - bad.mean)).abs() < 1e-12);
    }

    #[test]
    fn snr_cases() {
        let y = LowDimEmbedding(Matrix::from_rows(&[vec![1.0, 2.0, 5.0], vec![1.0, 2.0, 5.0], vec![0.0, 3.0, 1.0]]));
        let r = snr_distance(&y, &[1, 1, 2]).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.pairs, 2);

        let y = iid(20, 3, 4);
        let labels: Vec<u32> = (0..20).map(|i| (i % 3) as u32).collect();
        let got = snr_distance(&y, &labels).unwrap().value;
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
        };
        let (mut sum, mut cnt) = (0.0, 0);
        for i in 0..20 {
            for j in 0..20 {
                if i != j && labels[i] == labels[j] {
                    let d: Vec<f64> = (0..3).map(|c| y.point(i)[c] - y.point(j)[c]).collect();
                    sum += var(&d) / var(y.point(i));
                    cnt += 1;
                }
            }
        }
        assert!((got - sum / cnt as f64).abs() < 1e-12);
        let scaled = LowDimEmbedding(Matrix::from_vec(20, 3, y.matrix().as_slice().iter().map(|v| v * 3.7).collect()));
        assert!((snr_distance(&scaled, &labels).unwrap().value - got).abs() < 1e-10);
    }

    #[test]
    fn snr_skips_flat_anchor() {
        let y = LowDimEmbedding(Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 2.0]]));
        let r = snr_distance(&y, &[1, 1]).unwrap();
        assert_eq!(r.skipped, 1);
        assert_eq!(r.pairs, 1);
    }

    fn resp(selected: Vec<usize>) -> (Response, Vec<u32>) {
        // Anchor 0 in class A=1; candidates 1,2 in A, 3,4,5 in B=2.
        let labels = vec![1, 1, 1, 2, 2, 2];
        let g = Grid::normal(0, vec![1, 2, 3, 4, 5]);
        (Response::new(g, selected, "w").unwrap(), labels)
    }

    #[test]
    fn annotation_examples() {
        let (r, labels) = resp(vec![0, 1]);
        let s = annotation_stats(&[r], &labels);
        assert_eq!((s.agreements, s.disagreements), (2, 0));
        assert_eq!(s.per_class, vec![ClassScore { class_id: 1, precision: 1.0, recall: 1.0 }]);
        assert_eq!((s.precision, s.recall), (100.0, 100.0));

        let (r, labels) = resp(vec![0, 2]);
        let s = annotation_stats(&[r], &labels);
        assert_eq!((s.agreements, s.disagreements), (1, 1));
        assert_eq!(s.per_class[0].precision, 0.5);
        assert_eq!(s.per_class[0].recall, 0.5);
    }

    #[test]
    fn zero_denominators_report_zero() {
        // Anchor class has no other members in the grid and nothing is selected.
        let labels = vec![1, 2, 2];
        let g = Grid::normal(0, vec![1, 2]);
        let r = Response::new(g, vec![], "w").unwrap();
        let s = annotation_stats(&[r], &labels);
        assert_eq!(s.per_class[0].precision, 0.0);
        assert_eq!(s.per_class[0].recall, 0.0);
    }

    #[test]
    fn weighted_equals_macro_for_equal_class_sizes() {
        let labels = vec![1, 1, 1, 2, 2, 2];
        let r1 = Response::new(Grid::normal(0, vec![1, 3, 4]), vec![0], "w").unwrap();
        let r2 = Response::new(Grid::normal(3, vec![0, 1, 4]), vec![0], "w").unwrap();
        let s = annotation_stats(&[r1, r2], &labels);
        assert!((s.precision - s.weighted_precision).abs() < 1e-12);
        assert!((s.recall - s.weighted_recall).abs() < 1e-12);
        assert_eq!(s.precision, 50.0);
    }

    #[test]
    fn sentinel_slot_uses_anchor_label() {
        let labels = vec![1, 2, 2, 2, 2, 2];
        let mut g = Grid::normal(0, vec![1, 2, 3, 4, 5]);
        g.kind = GridKind::Sentinel;
        g.sentinel_slot = Some(3);
        let r = Response::new(g, vec![3, 0], "w").unwrap();
        let s = annotation_stats(&[r], &labels);
        assert_eq!((s.agreements, s.disagreements), (1, 1));
    }

    #[test]
    fn report_serializations() {
        let (y, labels) = two_clusters(10);
        let (r, _) = resp(vec![0, 1]);
        let report = MetricsReport::compute(&y, &labels, &[r], &MetricsConfig::default()).unwrap();
        let json = report.to_json().unwrap();
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        let text = report.to_flat_text();
        assert!(text.contains("agreements=2\n"));
        assert!(text.lines().all(|l| l.contains('=')));
        let mut csv = Vec::new();
        report.write_per_class_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap(), "class_id,precision,recall\n1,1,0.4\n");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn agreement_totals(seed in any::<u64>(), k in 0usize..=5) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let labels: Vec<u32> = (0..20).map(|_| rand::Rng::random_range(&mut rng, 1..4)).collect();
                let responses: Vec<Response> = (0..10).map(|_| {
                    let picks = rand::seq::index::sample(&mut rng, 20, 6).into_vec();
                    let g = Grid::normal(picks[0], picks[1..].to_vec());
                    crate::worker::random_select(&g, k, &mut rng).unwrap()
                }).collect();
                let s = annotation_stats(&responses, &labels);
                prop_assert_eq!(s.agreements + s.disagreements, 10 * k);
                for c in &s.per_class {
                    prop_assert!((0.0..=1.0).contains(&c.precision) && (0.0..=1.0).contains(&c.recall));
                }
            }

            #[test]
            fn ratios_in_unit_interval(seed in any::<u64>()) {
                let y = iid(30, 2, seed);
                let labels: Vec<u32> = (0..30).map(|i| (i % 3) as u32).collect();
                let t = triplet_generalization_ratio(&y, &labels, 100, 2, seed).unwrap();
                let k = knn_generalization_ratio(&y, &labels, 0.7, 2, 5, seed).unwrap();
                prop_assert!((0.0..=1.0).contains(&t.mean) && (0.0..=1.0).contains(&k.mean));
            }
        }
    }
}
