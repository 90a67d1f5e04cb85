//! t-distributed stochastic triplet embedding: triplet probabilities under a
//! Student-t kernel, the triplet log-likelihood and its gradient.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::ops::Deref;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::exec::{self, ExecPolicy};
use crate::matrix::sq_dist;
use crate::{Error, LowDimEmbedding, Matrix, Result};

/// Floor applied to triplet probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TripletSource {
    Human,
    Synthetic,
    Oracle,
}

impl fmt::Display for TripletSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TripletSource::Human => "human",
            TripletSource::Synthetic => "synthetic",
            TripletSource::Oracle => "oracle",
        })
    }
}

impl FromStr for TripletSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "human" => Ok(TripletSource::Human),
            "synthetic" => Ok(TripletSource::Synthetic),
            "oracle" => Ok(TripletSource::Oracle),
            other => Err(Error::Invalid(format!("unknown triplet source {other:?}"))),
        }
    }
}

/// "`anchor` is closer to `positive` than to `negative`".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    pub source: TripletSource,
}

impl Triplet {
    pub fn new(anchor: usize, positive: usize, negative: usize, source: TripletSource) -> Self {
        Triplet {
            anchor,
            positive,
            negative,
            source,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let (i, j, k) = (self.anchor, self.positive, self.negative);
        if i >= n || j >= n || k >= n || i == j || i == k || j == k {
            return Err(Error::InvalidTriplet {
                anchor: i,
                positive: j,
                negative: k,
                n,
            });
        }
        Ok(())
    }

    /// Same judgment with positive and negative swapped.
    pub fn flipped(&self) -> Self {
        Triplet {
            positive: self.negative,
            negative: self.positive,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TripletSet(Vec<Triplet>);

impl TripletSet {
    pub fn new() -> Self {
        TripletSet(Vec::new())
    }

    pub fn push(&mut self, t: Triplet) {
        self.0.push(t);
    }

    pub fn into_vec(self) -> Vec<Triplet> {
        self.0
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        self.0.iter().try_for_each(|t| t.validate(n))
    }

    /// One `anchor,positive,negative,source` line per triplet.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for t in &self.0 {
            writeln!(w, "{},{},{},{}", t.anchor, t.positive, t.negative, t.source)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads the CSV format; a leading `anchor,...` header line is tolerated.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut out = TripletSet::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.starts_with("anchor")) {
                continue;
            }
            out.push(parse_csv_line(line).map_err(|msg| Error::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            })?);
        }
        Ok(out)
    }
}

fn parse_csv_line(line: &str) -> std::result::Result<Triplet, String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    let [a, p, n, s] = fields[..] else {
        return Err("expected `anchor,positive,negative,source`".into());
    };
    let idx = |v: &str| v.parse::<usize>().map_err(|_| format!("bad index {v:?}"));
    Ok(Triplet::new(
        idx(a)?,
        idx(p)?,
        idx(n)?,
        s.parse().map_err(|e: Error| e.to_string())?,
    ))
}

impl Deref for TripletSet {
    type Target = [Triplet];

    fn deref(&self) -> &[Triplet] {
        &self.0
    }
}

impl From<Vec<Triplet>> for TripletSet {
    fn from(v: Vec<Triplet>) -> Self {
        TripletSet(v)
    }
}

impl FromIterator<Triplet> for TripletSet {
    fn from_iter<I: IntoIterator<Item = Triplet>>(iter: I) -> Self {
        TripletSet(iter.into_iter().collect())
    }
}

impl Extend<Triplet> for TripletSet {
    fn extend<I: IntoIterator<Item = Triplet>>(&mut self, iter: I) {
        self.0.extend(iter)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsteConfig {
    /// Degrees of freedom of the Student-t kernel.
    pub alpha: f64,
}

impl TsteConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!("alpha must be positive, got {alpha}")));
        }
        Ok(TsteConfig { alpha })
    }

    /// `max(d − 1, 1)` for output dimensionality `d`.
    pub fn for_dim(dim: usize) -> Self {
        TsteConfig {
            alpha: (dim as f64 - 1.0).max(1.0),
        }
    }
}

/// Probability that the embedding agrees with `(i, j, k)`:
/// `f(d_ij) / (f(d_ij) + f(d_ik))`, `f(d) = (1 + d²/α)^(−(1+α)/2)`.
pub fn triplet_prob(y: &LowDimEmbedding, t: &Triplet, cfg: TsteConfig) -> f64 {
    let s_ij = sq_dist(y.point(t.anchor), y.point(t.positive));
    let s_ik = sq_dist(y.point(t.anchor), y.point(t.negative));
    prob_from_sq(s_ij, s_ik, cfg.alpha)
}

fn prob_from_sq(s_ij: f64, s_ik: f64, alpha: f64) -> f64 {
    let a = (1.0 + alpha) / 2.0;
    // f_ik / f_ij in log space avoids underflow for distant points.
    let log_ratio = a * ((s_ij / alpha).ln_1p() - (s_ik / alpha).ln_1p());
    1.0 / (1.0 + log_ratio.exp())
}

struct TripletTerm {
    log_p: f64,
    /// d log p / d s_ij and d log p / d s_ik, each times 2.
    c_ij: f64,
    c_ik: f64,
}

fn triplet_term(y: &Matrix, t: &Triplet, alpha: f64) -> TripletTerm {
    let yi = y.row(t.anchor);
    let s_ij = sq_dist(yi, y.row(t.positive));
    let s_ik = sq_dist(yi, y.row(t.negative));
    let p = prob_from_sq(s_ij, s_ik, alpha);
    let a = (1.0 + alpha) / 2.0;
    let q = 1.0 - p;
    TripletTerm {
        log_p: p.max(PROB_FLOOR).ln(),
        c_ij: -2.0 * q * a / (alpha + s_ij),
        c_ik: 2.0 * q * a / (alpha + s_ik),
    }
}

/// Triplet log-likelihood `Σ log p` (to be maximized) and its gradient.
pub fn tste_loss_grad(y: &LowDimEmbedding, triplets: &[Triplet], cfg: TsteConfig) -> (f64, Matrix) {
    let mut grad = Matrix::zeros(y.n(), y.dim());
    let ll = tste_grad_into(y.matrix(), triplets, cfg.alpha, 1.0, &mut grad, ExecPolicy::default());
    (ll, grad)
}

/// Adds `scale · ∇ Σ log p` into `grad` and returns the unscaled `Σ log p`.
/// Terms are evaluated (possibly in parallel) and then scattered in triplet
/// order, so the result does not depend on the execution policy.
pub(crate) fn tste_grad_into(
    y: &Matrix,
    triplets: &[Triplet],
    alpha: f64,
    scale: f64,
    grad: &mut Matrix,
    policy: ExecPolicy,
) -> f64 {
    if triplets.is_empty() {
        return 0.0;
    }
    let terms = exec::map_slice(policy, triplets, |t| triplet_term(y, t, alpha));
    let d = y.cols();
    let mut ll = 0.0;
    for (t, term) in triplets.iter().zip(&terms) {
        ll += term.log_p;
        for c in 0..d {
            let yi = y.get(t.anchor, c);
            let dj = scale * term.c_ij * (yi - y.get(t.positive, c));
            let dk = scale * term.c_ik * (yi - y.get(t.negative, c));
            let g = grad.as_mut_slice();
            g[t.anchor * d + c] += dj + dk;
            g[t.positive * d + c] -= dj;
            g[t.negative * d + c] -= dk;
        }
    }
    ll
}
