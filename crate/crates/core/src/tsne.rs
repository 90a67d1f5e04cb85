//! Exact (dense, O(N²)) t-SNE machinery: distances, perplexity-calibrated
//! Gaussian affinities, Student-t affinities, KL loss and gradient.

use crate::exec::{self, ExecPolicy};
use crate::matrix::sq_dist;
use crate::{Error, LowDimEmbedding, Matrix, Result};

/// Floor applied to affinities inside logarithms.
pub const AFFINITY_FLOOR: f64 = 1e-12;

const SIGMA_MIN: f64 = 1e-20;
const SIGMA_MAX: f64 = 1e20;
const BISECTION_MAX_ITERS: usize = 200;
const ENTROPY_TOL: f64 = 1e-5;

/// Symmetric `N × N` Euclidean distances with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix(Matrix);

impl DistanceMatrix {
    /// Wraps a matrix after checking symmetry, zero diagonal and finiteness.
    pub fn new(m: Matrix) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::Invalid("distance matrix must be square".into()));
        }
        if let Some((row, col)) = m.first_non_finite() {
            return Err(Error::NonFinite { row, col });
        }
        for i in 0..m.rows() {
            if m.get(i, i) != 0.0 {
                return Err(Error::Invalid(format!("non-zero diagonal at {i}")));
            }
            for j in 0..i {
                let v = m.get(i, j);
                if v < 0.0 || v != m.get(j, i) {
                    return Err(Error::Invalid(format!("asymmetric or negative entry at ({i}, {j})")));
                }
            }
        }
        Ok(DistanceMatrix(m))
    }

    pub fn n(&self) -> usize {
        self.0.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    /// Submatrix over the given point indices, in that order.
    pub fn select(&self, idx: &[usize]) -> DistanceMatrix {
        let mut m = Matrix::zeros(idx.len(), idx.len());
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                m.set(a, b, self.get(i, j));
            }
        }
        DistanceMatrix(m)
    }
}

pub fn pairwise_distances(x: &Matrix) -> Result<DistanceMatrix> {
    pairwise_distances_with(x, ExecPolicy::default())
}

pub fn pairwise_distances_with(x: &Matrix, policy: ExecPolicy) -> Result<DistanceMatrix> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: n });
    }
    let mut out = Matrix::zeros(n, n);
    exec::for_each_row(policy, out.as_mut_slice(), n, |i, row| {
        let xi = x.row(i);
        for (j, v) in row.iter_mut().enumerate() {
            if i != j {
                // Evaluate in canonical (min, max) order so K is exactly symmetric.
                let (a, b) = if i < j { (xi, x.row(j)) } else { (x.row(j), xi) };
                *v = sq_dist(a, b).sqrt();
            }
        }
    });
    Ok(DistanceMatrix(out))
}

/// Per-point Gaussian bandwidths calibrated to a target perplexity.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthVector {
    pub sigma: Vec<f64>,
    pub perplexity: f64,
    /// Rows whose off-diagonal distances are all zero; their sigma is 1.
    pub degenerate: Vec<usize>,
    /// Rows whose target entropy is unreachable; sigma sits at a bracket end.
    pub clamped: Vec<usize>,
}

enum RowBandwidth {
    Converged(f64),
    Degenerate,
    Clamped(f64),
    Diverged,
}

/// Shannon entropy in bits of the conditional distribution of row `i`.
pub fn conditional_entropy_bits(k: &DistanceMatrix, i: usize, sigma: f64) -> f64 {
    let row = conditional_row(k, i, sigma);
    -row.iter()
        .filter(|&&p| p > 0.0)
        .map(|p| p * p.log2())
        .sum::<f64>()
}

/// `p_{j|i}` for all `j` (zero at `j == i`).
pub fn conditional_row(k: &DistanceMatrix, i: usize, sigma: f64) -> Vec<f64> {
    let n = k.n();
    let dmin = min_off_diagonal_sq(k, i);
    let scale = 1.0 / (2.0 * sigma * sigma);
    let mut row: Vec<f64> = (0..n)
        .map(|j| {
            if j == i {
                0.0
            } else {
                let d = k.get(i, j);
                (-(d * d - dmin) * scale).exp()
            }
        })
        .collect();
    let total: f64 = row.iter().sum();
    row.iter_mut().for_each(|p| *p /= total);
    row
}

fn min_off_diagonal_sq(k: &DistanceMatrix, i: usize) -> f64 {
    (0..k.n())
        .filter(|&j| j != i)
        .map(|j| k.get(i, j) * k.get(i, j))
        .fold(f64::INFINITY, f64::min)
}

fn bisect_row(k: &DistanceMatrix, i: usize, target_bits: f64) -> RowBandwidth {
    let n = k.n();
    if (0..n).all(|j| j == i || k.get(i, j) == 0.0) {
        return RowBandwidth::Degenerate;
    }
    let (mut lo, mut hi) = (SIGMA_MIN, SIGMA_MAX);
    let mut sigma = 1.0;
    for _ in 0..BISECTION_MAX_ITERS {
        let h = conditional_entropy_bits(k, i, sigma);
        let err = h - target_bits;
        if err.abs() <= ENTROPY_TOL {
            return RowBandwidth::Converged(sigma);
        }
        // Entropy grows with sigma.
        if err > 0.0 {
            hi = sigma;
        } else {
            lo = sigma;
        }
        let next = (lo * hi).sqrt();
        if next == sigma {
            break;
        }
        sigma = next;
    }
    // Target outside the reachable entropy range: sigma runs into a bracket end.
    if conditional_entropy_bits(k, i, SIGMA_MAX) < target_bits - ENTROPY_TOL {
        return RowBandwidth::Clamped(SIGMA_MAX);
    }
    if conditional_entropy_bits(k, i, SIGMA_MIN) > target_bits + ENTROPY_TOL {
        return RowBandwidth::Clamped(SIGMA_MIN);
    }
    RowBandwidth::Diverged
}

/// Binary search (geometric, on `[1e-20, 1e20]`) for each row's sigma so that
/// the conditional's entropy equals `log2(perplexity)` within 1e-5 bits.
pub fn bisect_bandwidths(k: &DistanceMatrix, perplexity: f64) -> Result<BandwidthVector> {
    bisect_bandwidths_with(k, perplexity, ExecPolicy::default())
}

pub fn bisect_bandwidths_with(
    k: &DistanceMatrix,
    perplexity: f64,
    policy: ExecPolicy,
) -> Result<BandwidthVector> {
    if !(perplexity > 1.0 && perplexity.is_finite()) {
        return Err(Error::InvalidConfig(format!("perplexity must be > 1, got {perplexity}")));
    }
    let target = perplexity.log2();
    let rows = exec::map_indices(policy, k.n(), |i| bisect_row(k, i, target));
    let mut out = BandwidthVector {
        sigma: Vec::with_capacity(k.n()),
        perplexity,
        degenerate: Vec::new(),
        clamped: Vec::new(),
    };
    for (i, r) in rows.into_iter().enumerate() {
        match r {
            RowBandwidth::Converged(s) => out.sigma.push(s),
            RowBandwidth::Degenerate => {
                log::warn!("row {i}: all distances are zero, using sigma = 1");
                out.degenerate.push(i);
                out.sigma.push(1.0);
            }
            RowBandwidth::Clamped(s) => {
                out.clamped.push(i);
                out.sigma.push(s);
            }
            RowBandwidth::Diverged => return Err(Error::BisectionDiverged(i)),
        }
    }
    if !out.clamped.is_empty() {
        log::warn!(
            "{} rows cannot reach perplexity {perplexity}; sigma clamped",
            out.clamped.len()
        );
    }
    Ok(out)
}

/// Symmetrized joint affinities `p_ij = (p_{j|i} + p_{i|j}) / 2N`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    p: Matrix,
    /// `Σ p ln max(p, floor)`, cached for cheap loss evaluation.
    neg_entropy: f64,
}

impl AffinityMatrix {
    pub fn from_matrix(p: Matrix) -> Self {
        let neg_entropy = p
            .as_slice()
            .iter()
            .filter(|&&v| v > 0.0)
            .map(|&v| v * v.max(AFFINITY_FLOOR).ln())
            .sum();
        AffinityMatrix { p, neg_entropy }
    }

    pub fn n(&self) -> usize {
        self.p.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p.get(i, j)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.p
    }

    pub fn total(&self) -> f64 {
        self.p.as_slice().iter().sum()
    }

    pub fn permute(&self, perm: &[usize]) -> AffinityMatrix {
        let n = self.n();
        let mut m = Matrix::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                m.set(a, b, self.get(perm[a], perm[b]));
            }
        }
        AffinityMatrix::from_matrix(m)
    }
}

pub fn high_dim_affinities(k: &DistanceMatrix, bw: &BandwidthVector) -> AffinityMatrix {
    high_dim_affinities_with(k, bw, ExecPolicy::default())
}

pub fn high_dim_affinities_with(
    k: &DistanceMatrix,
    bw: &BandwidthVector,
    policy: ExecPolicy,
) -> AffinityMatrix {
    let n = k.n();
    let mut cond = Matrix::zeros(n, n);
    exec::for_each_row(policy, cond.as_mut_slice(), n, |i, row| {
        row.copy_from_slice(&conditional_row(k, i, bw.sigma[i]));
    });
    let mut p = Matrix::zeros(n, n);
    let scale = 1.0 / (2.0 * n as f64);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                // Same operand order for (i, j) and (j, i) keeps P exactly symmetric.
                let (a, b) = if i < j { (i, j) } else { (j, i) };
                p.set(i, j, (cond.get(a, b) + cond.get(b, a)) * scale);
            }
        }
    }
    AffinityMatrix::from_matrix(p)
}

/// Distances, bandwidth bisection and symmetrization in one call.
pub fn affinities_from_distances(k: &DistanceMatrix, perplexity: f64) -> Result<AffinityMatrix> {
    let bw = bisect_bandwidths(k, perplexity)?;
    Ok(high_dim_affinities(k, &bw))
}

/// Normalized Student-t (one degree of freedom) affinities.
#[derive(Debug, Clone, PartialEq)]
pub struct LowDimAffinity(Matrix);

impl LowDimAffinity {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

pub fn low_dim_affinities(y: &LowDimEmbedding) -> Result<LowDimAffinity> {
    let n = y.n();
    if n < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: n });
    }
    let mut q = Matrix::zeros(n, n);
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let v = 1.0 / (1.0 + sq_dist(y.point(i), y.point(j)));
                q.set(i, j, v);
                z += v;
            }
        }
    }
    q.as_mut_slice().iter_mut().for_each(|v| *v /= z);
    Ok(LowDimAffinity(q))
}

/// KL(P || Q) and its gradient with respect to `Y`.
pub fn tsne_loss_grad(p: &AffinityMatrix, y: &LowDimEmbedding) -> (f64, Matrix) {
    let mut grad = Matrix::zeros(y.n(), y.dim());
    let loss = tsne_grad_into(p, y.matrix(), 1.0, &mut grad, true, ExecPolicy::default())
        .expect("loss requested");
    (loss, grad)
}

/// Writes `4 Σ_j (e·p_ij − q_ij)(1 + ‖y_i − y_j‖²)⁻¹ (y_i − y_j)` into `grad`,
/// where `e` is the exaggeration factor. With `want_loss` the unexaggerated
/// KL divergence is returned as well.
///
/// One pass over each row accumulates the Student-t row sum together with
/// `Σ p·num·diff` and `Σ num²·diff`, so the normalizer is applied afterwards
/// and no `N × N` buffer is needed.
pub(crate) fn tsne_grad_into(
    p: &AffinityMatrix,
    y: &Matrix,
    exaggeration: f64,
    grad: &mut Matrix,
    want_loss: bool,
    policy: ExecPolicy,
) -> Option<f64> {
    let n = y.rows();
    let d = y.cols();
    // Row layout: [row_sum, Σ p ln num, attract(d), repulse(d)].
    let width = 2 + 2 * d;
    let mut acc = vec![0.0; n * width];
    exec::for_each_row(policy, &mut acc, width, |i, out| match d {
        2 => grad_row::<2>(p, y, i, want_loss, out),
        3 => grad_row::<3>(p, y, i, want_loss, out),
        _ => grad_row_dyn(p, y, i, want_loss, out),
    });
    let z: f64 = acc.chunks(width).map(|r| r[0]).sum();
    for i in 0..n {
        let r = &acc[i * width..(i + 1) * width];
        let g = grad.row_mut(i);
        for c in 0..d {
            g[c] = 4.0 * (exaggeration * r[2 + c] - r[2 + d + c] / z);
        }
    }
    want_loss.then(|| {
        let plog: f64 = acc.chunks(width).map(|r| r[1]).sum();
        // KL = Σ p ln p − Σ p ln num + (Σ p) ln Z
        p.neg_entropy - plog + p.total() * z.ln()
    })
}

/// Row accumulators `[Σ num, Σ p ln num, Σ p·num·diff, Σ num²·diff]` for a
/// fixed dimension, so the running sums stay in registers.
fn grad_row<const D: usize>(p: &AffinityMatrix, y: &Matrix, i: usize, want_loss: bool, out: &mut [f64]) {
    let prow = p.matrix().row(i);
    let mut yi = [0.0; D];
    yi.copy_from_slice(y.row(i));
    let mut attract = [0.0; D];
    let mut repulse = [0.0; D];
    let mut row_sum = 0.0;
    let mut plog = 0.0;
    for (j, yj) in y.as_slice().chunks_exact(D).enumerate() {
        if j == i {
            continue;
        }
        let mut diff = [0.0; D];
        let mut dist = 0.0;
        for c in 0..D {
            diff[c] = yi[c] - yj[c];
            dist += diff[c] * diff[c];
        }
        let num = 1.0 / (1.0 + dist);
        row_sum += num;
        let pij = prow[j];
        if want_loss && pij > 0.0 {
            plog += pij * num.ln();
        }
        let a = pij * num;
        let r = num * num;
        for c in 0..D {
            attract[c] += a * diff[c];
            repulse[c] += r * diff[c];
        }
    }
    out[0] = row_sum;
    out[1] = plog;
    out[2..2 + D].copy_from_slice(&attract);
    out[2 + D..2 + 2 * D].copy_from_slice(&repulse);
}

fn grad_row_dyn(p: &AffinityMatrix, y: &Matrix, i: usize, want_loss: bool, out: &mut [f64]) {
    let n = y.rows();
    let d = y.cols();
    let yi = y.row(i);
    let prow = p.matrix().row(i);
    let (head, rest) = out.split_at_mut(2);
    let (attract, repulse) = rest.split_at_mut(d);
    let mut row_sum = 0.0;
    let mut plog = 0.0;
    for j in 0..n {
        if j == i {
            continue;
        }
        let yj = y.row(j);
        let num = 1.0 / (1.0 + sq_dist(yi, yj));
        row_sum += num;
        let pij = prow[j];
        if want_loss && pij > 0.0 {
            plog += pij * num.ln();
        }
        let a = pij * num;
        let r = num * num;
        for c in 0..d {
            let diff = yi[c] - yj[c];
            attract[c] += a * diff;
            repulse[c] += r * diff;
        }
    }
    head[0] = row_sum;
    head[1] = plog;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
        Matrix::from_vec(n, d, (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect())
    }

    fn brute_distances(x: &Matrix) -> Vec<Vec<f64>> {
        let n = x.rows();
        let mut out = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for c in 0..x.cols() {
                    s += (x.get(i, c) - x.get(j, c)).powi(2);
                }
                out[i][j] = s.sqrt();
            }
        }
        out
    }

    /// KL(P||Q) from a directly evaluated Q, no shared code with the kernel.
    fn oracle_kl(p: &AffinityMatrix, y: &Matrix) -> f64 {
        let n = y.rows();
        let num = |i: usize, j: usize| {
            let mut s = 0.0;
            for c in 0..y.cols() {
                s += (y.get(i, c) - y.get(j, c)).powi(2);
            }
            1.0 / (1.0 + s)
        };
        let mut z = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    z += num(i, j);
                }
            }
        }
        let mut kl = 0.0;
        for i in 0..n {
            for j in 0..n {
                let pij = p.get(i, j);
                if i != j && pij > 0.0 {
                    kl += pij * (pij / (num(i, j) / z)).ln();
                }
            }
        }
        kl
    }

    #[test]
    fn three_four_five() {
        let k = pairwise_distances(&Matrix::from_rows(&[vec![0.0, 0.0], vec![3.0, 4.0]])).unwrap();
        assert_eq!(k.get(0, 1), 5.0);
        assert_eq!(k.get(1, 0), 5.0);
    }

    #[test]
    fn identical_rows_give_zero_distances() {
        let k = pairwise_distances(&Matrix::from_rows(&vec![vec![1.0, 2.0]; 4])).unwrap();
        assert!(k.matrix().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_few_points() {
        assert!(matches!(
            pairwise_distances(&Matrix::from_rows(&[vec![1.0]])),
            Err(Error::TooFewPoints { .. })
        ));
    }

    #[test]
    fn distances_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_matrix(&mut rng, 10, 8);
        let k = pairwise_distances(&x).unwrap();
        let oracle = brute_distances(&x);
        for i in 0..10 {
            for j in 0..10 {
                assert!((k.get(i, j) - oracle[i][j]).abs() <= 1e-12);
            }
        }
        assert!(DistanceMatrix::new(k.matrix().clone()).is_ok());
    }

    #[test]
    fn two_points_single_neighbor() {
        let k = pairwise_distances(&Matrix::from_rows(&[vec![0.0], vec![1.0]])).unwrap();
        let bw = bisect_bandwidths(&k, 30.0).unwrap();
        assert_eq!(bw.clamped, vec![0, 1]);
        assert_eq!(conditional_row(&k, 0, bw.sigma[0]), vec![0.0, 1.0]);
        let p = high_dim_affinities(&k, &bw);
        // (1 + 1) / (2·2)
        assert_eq!(p.get(0, 1), 0.5);
        assert_eq!(p.get(1, 0), 0.5);
        assert_eq!(p.total(), 1.0);
    }

    #[test]
    fn equidistant_triple() {
        let h = 3f64.sqrt() / 2.0;
        let x = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.5, h]]);
        let k = pairwise_distances(&x).unwrap();
        for sigma in [0.1, 1.0, 10.0] {
            for p in conditional_row(&k, 0, sigma).iter().skip(1) {
                assert!((p - 0.5).abs() < 1e-12);
            }
        }
        let bw = bisect_bandwidths(&k, 2.0).unwrap();
        let p = high_dim_affinities(&k, &bw);
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!((p.get(i, j) - 1.0 / 6.0).abs() < 1e-12);
                }
            }
        }
        // Equilateral Y with uniform P is the KL minimum.
        let y = LowDimEmbedding(x);
        let q = low_dim_affinities(&y).unwrap();
        assert!((q.get(0, 1) - 1.0 / 6.0).abs() < 1e-12);
        let (loss, grad) = tsne_loss_grad(&p, &y);
        assert!(loss.abs() < 1e-12, "{loss}");
        assert!(grad.as_slice().iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn degenerate_row_gets_unit_sigma() {
        let k = pairwise_distances(&Matrix::from_rows(&vec![vec![0.0]; 3])).unwrap();
        let bw = bisect_bandwidths(&k, 2.0).unwrap();
        assert_eq!(bw.degenerate, vec![0, 1, 2]);
        assert!(bw.sigma.iter().all(|&s| s == 1.0));
    }

    #[test]
    fn perplexity_is_hit_on_random_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_matrix(&mut rng, 50, 5);
        let k = pairwise_distances(&x).unwrap();
        let bw = bisect_bandwidths(&k, 30.0).unwrap();
        for i in 0..50 {
            let row = conditional_row(&k, i, bw.sigma[i]);
            let h: f64 = -row.iter().filter(|&&p| p > 0.0).map(|p| p * p.log2()).sum::<f64>();
            let perp = 2f64.powf(h);
            assert!((perp / 30.0 - 1.0).abs() <= 1e-5, "row {i}: {perp}");
        }
    }

    #[test]
    fn bisection_is_monotone_in_perplexity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_matrix(&mut rng, 40, 3);
        let k = pairwise_distances(&x).unwrap();
        let mut prev = bisect_bandwidths(&k, 2.0).unwrap().sigma;
        for u in [5.0, 10.0, 20.0, 30.0] {
            let s = bisect_bandwidths(&k, u).unwrap().sigma;
            assert!(s.iter().zip(&prev).all(|(a, b)| a >= b));
            prev = s;
        }
    }

    #[test]
    fn affinities_match_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_matrix(&mut rng, 12, 4);
        let k = pairwise_distances(&x).unwrap();
        let bw = bisect_bandwidths(&k, 4.0).unwrap();
        let p = high_dim_affinities(&k, &bw);
        let dist = brute_distances(&x);
        let n = 12;
        let cond = |i: usize, j: usize| {
            let s = bw.sigma[i];
            let e = |k: usize| (-(dist[i][k] * dist[i][k]) / (2.0 * s * s)).exp();
            let z: f64 = (0..n).filter(|&k| k != i).map(e).sum();
            e(j) / z
        };
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    assert_eq!(p.get(i, j), 0.0);
                    continue;
                }
                let direct = (cond(i, j) + cond(j, i)) / (2.0 * n as f64);
                assert!((p.get(i, j) - direct).abs() <= 1e-12 * direct.max(1e-3));
                assert_eq!(p.get(i, j), p.get(j, i));
                total += p.get(i, j);
            }
        }
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn low_dim_affinities_match_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = LowDimEmbedding(random_matrix(&mut rng, 15, 2));
        let q = low_dim_affinities(&y).unwrap();
        let mut z = 0.0;
        for k in 0..15 {
            for l in 0..15 {
                if k != l {
                    let dx = y.point(k)[0] - y.point(l)[0];
                    let dy = y.point(k)[1] - y.point(l)[1];
                    z += 1.0 / (1.0 + dx * dx + dy * dy);
                }
            }
        }
        let mut total = 0.0;
        for i in 0..15 {
            for j in 0..15 {
                if i == j {
                    continue;
                }
                let dx = y.point(i)[0] - y.point(j)[0];
                let dy = y.point(i)[1] - y.point(j)[1];
                let direct = 1.0 / (1.0 + dx * dx + dy * dy) / z;
                assert!((q.get(i, j) - direct).abs() < 1e-15);
                assert!(q.get(i, j) > 0.0);
                total += q.get(i, j);
            }
        }
        assert!((total - 1.0).abs() < 1e-9);
        let two = low_dim_affinities(&LowDimEmbedding(random_matrix(&mut rng, 2, 2))).unwrap();
        assert_eq!(two.get(0, 1), 0.5);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..5 {
            let x = random_matrix(&mut rng, 12, 6);
            let p = affinities_from_distances(&pairwise_distances(&x).unwrap(), 4.0).unwrap();
            let mut y = random_matrix(&mut rng, 12, 2);
            let (loss, grad) = tsne_loss_grad(&p, &LowDimEmbedding(y.clone()));
            assert!((loss - oracle_kl(&p, &y)).abs() < 1e-10);
            let h = 1e-5;
            for idx in 0..y.as_slice().len() {
                let orig = y.as_slice()[idx];
                y.as_mut_slice()[idx] = orig + h;
                let up = oracle_kl(&p, &y);
                y.as_mut_slice()[idx] = orig - h;
                let down = oracle_kl(&p, &y);
                y.as_mut_slice()[idx] = orig;
                let fd = (up - down) / (2.0 * h);
                let g = grad.as_slice()[idx];
                assert!((g - fd).abs() / fd.abs().max(1e-6) <= 1e-4, "{g} vs {fd}");
            }
            let sums = (0..2).map(|c| (0..12).map(|i| grad.get(i, c)).sum::<f64>());
            for s in sums {
                assert!(s.abs() < 1e-8);
            }
        }
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_matrix(&mut rng, 30, 5);
        let k_seq = pairwise_distances_with(&x, ExecPolicy::Sequential).unwrap();
        let k_par = pairwise_distances_with(&x, ExecPolicy::Parallel).unwrap();
        assert_eq!(k_seq, k_par);
        let p = affinities_from_distances(&k_seq, 5.0).unwrap();
        let y = random_matrix(&mut rng, 30, 2);
        let mut g1 = Matrix::zeros(30, 2);
        let mut g2 = Matrix::zeros(30, 2);
        let l1 = tsne_grad_into(&p, &y, 4.0, &mut g1, true, ExecPolicy::Sequential);
        let l2 = tsne_grad_into(&p, &y, 4.0, &mut g2, true, ExecPolicy::Parallel);
        assert_eq!(l1, l2);
        assert_eq!(g1, g2);
    }

    #[test]
    fn affinities_are_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_matrix(&mut rng, 9, 3);
        let perm = [3, 1, 7, 0, 8, 2, 6, 5, 4];
        let p = affinities_from_distances(&pairwise_distances(&x).unwrap(), 3.0).unwrap();
        let pp = affinities_from_distances(&pairwise_distances(&x.permute_rows(&perm)).unwrap(), 3.0).unwrap();
        for a in 0..9 {
            for b in 0..9 {
                assert!((pp.get(a, b) - p.get(perm[a], perm[b])).abs() < 1e-12);
            }
        }
    }
}
