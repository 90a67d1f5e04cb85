//! Minimizes `λ·KL(P‖Q) − γ·w·Σ log p_triplet` over the low-dimensional
//! coordinates with momentum SGD, early exaggeration and per-coordinate gains.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::exec::ExecPolicy;
use crate::tsne::{self, AffinityMatrix, DistanceMatrix};
use crate::tste::{self, Triplet, TsteConfig};
use crate::{Error, LowDimEmbedding, Matrix, Result};

const INIT_SCALE: f64 = 1e-4;
const MIN_GAIN: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingMode {
    /// Gradient of the weighted total loss.
    #[default]
    LossLevel,
    /// Weights applied to the component gradients, with the triplet gradient
    /// additionally normalized per triplet (`× N/|T|`).
    GradientLevel,
}

/// Named `(λ, γ)` pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// λ = 0.1, γ = 5.
    #[default]
    MainText,
    /// λ = 5, γ = 0.1.
    Appendix,
}

impl Preset {
    pub fn weights(self) -> (f64, f64) {
        match self {
            Preset::MainText => (0.1, 5.0),
            Preset::Appendix => (5.0, 0.1),
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "main-text" => Ok(Preset::MainText),
            "appendix" => Ok(Preset::Appendix),
            _ => Err(Error::InvalidConfig(format!("unknown preset {s:?}"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::MainText => "main-text",
            Preset::Appendix => "appendix",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SnackConfig {
    pub lambda: f64,
    pub gamma: f64,
    pub perplexity: f64,
    /// Student-t degrees of freedom for triplets; `None` means `max(d − 1, 1)`.
    pub alpha: Option<f64>,
    pub out_dim: usize,
    pub learning_rate: f64,
    pub momentum_init: f64,
    pub momentum_final: f64,
    pub momentum_switch_iter: usize,
    pub iters: usize,
    pub exaggeration_factor: f64,
    pub exaggeration_iters: usize,
    pub weighting_mode: WeightingMode,
    /// Scale the triplet term by `|T| / (|T| + N)`.
    pub tste_ramp: bool,
    pub seed: u64,
    pub exec: ExecPolicy,
}

impl Default for SnackConfig {
    fn default() -> Self {
        let (lambda, gamma) = Preset::MainText.weights();
        SnackConfig {
            lambda,
            gamma,
            perplexity: 30.0,
            alpha: None,
            out_dim: 2,
            learning_rate: 1.0,
            momentum_init: 0.5,
            momentum_final: 0.8,
            momentum_switch_iter: 20,
            iters: 100_000,
            exaggeration_factor: 4.0,
            exaggeration_iters: 100,
            weighting_mode: WeightingMode::LossLevel,
            tste_ramp: false,
            seed: 0,
            exec: ExecPolicy::default(),
        }
    }
}

impl SnackConfig {
    pub fn with_preset(mut self, preset: Preset) -> Self {
        (self.lambda, self.gamma) = preset.weights();
        self
    }

    pub fn tste(&self) -> TsteConfig {
        match self.alpha {
            Some(alpha) => TsteConfig { alpha },
            None => TsteConfig::for_dim(self.out_dim),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lambda >= 0.0 && self.gamma >= 0.0) || !(self.lambda.is_finite() && self.gamma.is_finite()) {
            return bad(format!("lambda and gamma must be finite and >= 0 (got {}, {})", self.lambda, self.gamma));
        }
        if self.lambda == 0.0 && self.gamma == 0.0 {
            return bad("lambda and gamma cannot both be zero".into());
        }
        if !(self.perplexity > 1.0) {
            return bad(format!("perplexity must be > 1, got {}", self.perplexity));
        }
        if self.out_dim == 0 {
            return bad("out_dim must be >= 1".into());
        }
        if self.iters == 0 {
            return bad("iters must be >= 1".into());
        }
        if !(self.learning_rate > 0.0) || !(self.exaggeration_factor > 0.0) {
            return bad("learning rate and exaggeration factor must be positive".into());
        }
        TsteConfig::new(self.tste().alpha)?;
        Ok(())
    }

    /// Weight `|T| / (|T| + N)` when the ramp is enabled, 1 otherwise.
    pub fn ramp_weight(&self, n_triplets: usize, n_points: usize) -> f64 {
        if self.tste_ramp {
            n_triplets as f64 / (n_triplets + n_points) as f64
        } else {
            1.0
        }
    }
}

/// Momentum and gain state carried across iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub velocity: Matrix,
    pub gains: Matrix,
    pub iter: usize,
}

impl OptState {
    pub fn new(n: usize, d: usize) -> Self {
        OptState {
            velocity: Matrix::zeros(n, d),
            gains: Matrix::from_vec(n, d, vec![1.0; n * d]),
            iter: 0,
        }
    }

    /// One momentum step with the gains rule, then recentering.
    fn step(&mut self, y: &mut Matrix, grad: &Matrix, cfg: &SnackConfig) {
        let momentum = if self.iter < cfg.momentum_switch_iter {
            cfg.momentum_init
        } else {
            cfg.momentum_final
        };
        let g = grad.as_slice();
        let v = self.velocity.as_mut_slice();
        let gains = self.gains.as_mut_slice();
        let ys = y.as_mut_slice();
        for idx in 0..g.len() {
            gains[idx] = if (g[idx] > 0.0) != (v[idx] > 0.0) {
                gains[idx] + 0.2
            } else {
                gains[idx] * 0.8
            }
            .max(MIN_GAIN);
            v[idx] = momentum * v[idx] - cfg.learning_rate * gains[idx] * g[idx];
            ys[idx] += v[idx];
        }
        recenter(y);
        self.iter += 1;
    }
}

fn recenter(y: &mut Matrix) {
    let (n, d) = (y.rows(), y.cols());
    if n == 0 {
        return;
    }
    for c in 0..d {
        let mean = (0..n).map(|i| y.get(i, c)).sum::<f64>() / n as f64;
        for i in 0..n {
            let v = y.get(i, c) - mean;
            y.set(i, c, v);
        }
    }
}

/// Seeded Gaussian initialization scaled by 1e-4. Point `i` draws from the
/// ChaCha stream `keys[i]` (default `i`), so a point's start depends only on
/// `(seed, key)`, not on its position.
pub fn init_embedding(n: usize, d: usize, seed: u64, keys: Option<&[u64]>) -> Matrix {
    let mut y = Matrix::zeros(n, d);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(keys.map_or(i as u64, |k| k[i]));
        for v in y.row_mut(i) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = z * INIT_SCALE;
        }
    }
    y
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombinedLoss {
    pub total: f64,
    /// `KL(P‖Q)`.
    pub tsne_part: f64,
    /// Negated triplet log-likelihood, times the ramp weight.
    pub tste_part: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iter: usize,
    pub loss: CombinedLoss,
}

/// Per-call knobs that are not part of the model configuration.
#[derive(Default)]
pub struct FitOptions<'a> {
    /// Starting coordinates; defaults to [`init_embedding`] with `cfg.seed`.
    pub init: Option<Matrix>,
    /// Record the loss every `trace_every` iterations (and after the last one).
    pub trace_every: usize,
    pub checkpoint_every: usize,
    pub on_checkpoint: Option<&'a mut dyn FnMut(usize, &Matrix)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub embedding: LowDimEmbedding,
    pub trace: Vec<TracePoint>,
    pub state: OptState,
}

/// Objective value at `y`, split into its t-SNE and t-STE parts.
pub fn combined_loss(p: &AffinityMatrix, triplets: &[Triplet], y: &LowDimEmbedding, cfg: &SnackConfig) -> CombinedLoss {
    let mut scratch = Matrix::zeros(y.n(), y.dim());
    let tsne_part = tsne::tsne_grad_into(p, y.matrix(), 1.0, &mut scratch, true, cfg.exec).unwrap();
    let ll = tste::tste_grad_into(y.matrix(), triplets, cfg.tste().alpha, 0.0, &mut scratch, cfg.exec);
    combine(cfg, tsne_part, 0.0 - cfg.ramp_weight(triplets.len(), y.n()) * ll)
}

fn combine(cfg: &SnackConfig, tsne_part: f64, tste_part: f64) -> CombinedLoss {
    CombinedLoss {
        total: cfg.lambda * tsne_part + cfg.gamma * tste_part,
        tsne_part,
        tste_part,
    }
}

/// Builds P from `k` at `cfg.perplexity` and runs [`fit`].
pub fn snack_fit(k: &DistanceMatrix, triplets: &[Triplet], cfg: &SnackConfig) -> Result<LowDimEmbedding> {
    cfg.validate()?;
    let p = tsne::affinities_from_distances(k, cfg.perplexity)?;
    Ok(fit(&p, triplets, cfg, FitOptions::default())?.embedding)
}

fn prepare(p: &AffinityMatrix, cfg: &SnackConfig, opts: &mut FitOptions) -> Result<Matrix> {
    cfg.validate()?;
    let n = p.n();
    if n < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: n });
    }
    let y = opts
        .init
        .take()
        .unwrap_or_else(|| init_embedding(n, cfg.out_dim, cfg.seed, None));
    if y.rows() != n || y.cols() != cfg.out_dim {
        return Err(Error::InvalidConfig("initial embedding has the wrong shape".into()));
    }
    Ok(y)
}

fn wants(every: usize, iter: usize, last: usize) -> bool {
    (every > 0 && iter % every == 0) || (every > 0 && iter == last)
}

/// Runs `cfg.iters` full-batch iterations on the combined objective.
pub fn fit(p: &AffinityMatrix, triplets: &[Triplet], cfg: &SnackConfig, mut opts: FitOptions) -> Result<FitResult> {
    let mut y = prepare(p, cfg, &mut opts)?;
    let n = p.n();
    for t in triplets {
        t.validate(n)?;
    }
    let alpha = cfg.tste().alpha;
    let ramp = cfg.ramp_weight(triplets.len(), n);
    let tste_scale = match cfg.weighting_mode {
        WeightingMode::LossLevel => cfg.gamma * ramp,
        WeightingMode::GradientLevel if triplets.is_empty() => 0.0,
        WeightingMode::GradientLevel => cfg.gamma * ramp * n as f64 / triplets.len() as f64,
    };
    let use_tste = !triplets.is_empty() && cfg.gamma > 0.0;

    let mut state = OptState::new(n, cfg.out_dim);
    let mut grad = Matrix::zeros(n, cfg.out_dim);
    let mut trace = Vec::new();
    let last = cfg.iters - 1;
    for iter in 0..cfg.iters {
        let record = wants(opts.trace_every, iter, last);
        let ex = if iter < cfg.exaggeration_iters {
            cfg.exaggeration_factor
        } else {
            1.0
        };
        let kl = tsne::tsne_grad_into(p, &y, ex, &mut grad, record, cfg.exec);
        scale_in_place(&mut grad, cfg.lambda);
        let ll = if use_tste {
            // Descending on −log-likelihood means adding −scale·∇ log p.
            tste::tste_grad_into(&y, triplets, alpha, -tste_scale, &mut grad, cfg.exec)
        } else {
            0.0
        };
        if let Some(kl) = kl {
            let ll = if use_tste {
                ll
            } else {
                tste::tste_grad_into(&y, triplets, alpha, 0.0, &mut Matrix::zeros(n, cfg.out_dim), cfg.exec)
            };
            let loss = combine(cfg, kl, 0.0 - ramp * ll);
            if !loss.total.is_finite() {
                return Err(Error::Diverged(iter));
            }
            trace.push(TracePoint { iter, loss });
        }
        if !grad.is_finite() {
            return Err(Error::Diverged(iter));
        }
        state.step(&mut y, &grad, cfg);
        if !y.is_finite() {
            return Err(Error::Diverged(iter));
        }
        checkpoint(&mut opts, iter, last, &y);
    }
    Ok(FitResult {
        embedding: LowDimEmbedding(y),
        trace,
        state,
    })
}

/// Plain t-SNE: the same schedule on `λ·KL(P‖Q)` alone, without any triplet
/// machinery.
pub fn tsne_fit(p: &AffinityMatrix, cfg: &SnackConfig, mut opts: FitOptions) -> Result<FitResult> {
    let mut y = prepare(p, cfg, &mut opts)?;
    let n = p.n();
    let mut state = OptState::new(n, cfg.out_dim);
    let mut grad = Matrix::zeros(n, cfg.out_dim);
    let mut trace = Vec::new();
    let last = cfg.iters - 1;
    for iter in 0..cfg.iters {
        let record = wants(opts.trace_every, iter, last);
        let ex = if iter < cfg.exaggeration_iters {
            cfg.exaggeration_factor
        } else {
            1.0
        };
        if let Some(kl) = tsne::tsne_grad_into(p, &y, ex, &mut grad, record, cfg.exec) {
            trace.push(TracePoint {
                iter,
                loss: combine(cfg, kl, 0.0),
            });
        }
        scale_in_place(&mut grad, cfg.lambda);
        if !grad.is_finite() {
            return Err(Error::Diverged(iter));
        }
        state.step(&mut y, &grad, cfg);
        checkpoint(&mut opts, iter, last, &y);
    }
    Ok(FitResult {
        embedding: LowDimEmbedding(y),
        trace,
        state,
    })
}

fn scale_in_place(m: &mut Matrix, s: f64) {
    m.as_mut_slice().iter_mut().for_each(|v| *v *= s);
}

fn checkpoint(opts: &mut FitOptions, iter: usize, last: usize, y: &Matrix) {
    if let Some(cb) = opts.on_checkpoint.as_mut() {
        if wants(opts.checkpoint_every, iter + 1, last + 1) {
            cb(iter + 1, y);
        }
    }
}
