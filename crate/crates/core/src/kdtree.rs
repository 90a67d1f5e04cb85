//! Exact k-nearest-neighbor index over embedding rows.
//!
//! Results are ordered by `(squared distance, index)`, so equal distances are
//! broken by ascending index and queries are fully deterministic.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::matrix::sq_dist;
use crate::{Error, LowDimEmbedding, Matrix, Result};

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        value: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

#[derive(Debug, Clone)]
pub struct NeighborIndex {
    points: Matrix,
    /// Point indices, permuted so every leaf owns a contiguous range.
    order: Vec<usize>,
    root: Node,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub sq_dist: f64,
}

impl Neighbor {
    pub fn dist(&self) -> f64 {
        self.sq_dist.sqrt()
    }
}

#[derive(PartialEq)]
struct Candidate(f64, usize);

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl NeighborIndex {
    pub fn build(y: &LowDimEmbedding) -> Result<Self> {
        let n = y.n();
        if n < 2 {
            return Err(Error::TooFewPoints { needed: 2, got: n });
        }
        let points = y.matrix().clone();
        let mut order: Vec<usize> = (0..n).collect();
        let root = build_node(&points, &mut order, 0);
        Ok(NeighborIndex { points, order, root })
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.points.row(i)
    }

    /// The `k` nearest points to point `i`, excluding `i` itself.
    pub fn query(&self, i: usize, k: usize) -> Vec<Neighbor> {
        self.query_point(self.points.row(i), k, Some(i))
    }

    pub fn query_point(&self, q: &[f64], k: usize, exclude: Option<usize>) -> Vec<Neighbor> {
        let available = self.len() - usize::from(exclude.is_some());
        let k = k.min(available);
        if k == 0 {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(&self.root, q, k, exclude, &mut heap);
        let mut out: Vec<Neighbor> = heap
            .into_iter()
            .map(|Candidate(d, index)| Neighbor { index, sq_dist: d })
            .collect();
        out.sort_by(|a, b| a.sq_dist.total_cmp(&b.sq_dist).then(a.index.cmp(&b.index)));
        out
    }

    fn search(&self, node: &Node, q: &[f64], k: usize, exclude: Option<usize>, heap: &mut BinaryHeap<Candidate>) {
        match node {
            Node::Leaf { start, end } => {
                for &idx in &self.order[*start..*end] {
                    if Some(idx) == exclude {
                        continue;
                    }
                    let c = Candidate(sq_dist(q, self.points.row(idx)), idx);
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = q[*dim] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, exclude, heap);
                // `<=` keeps equal-distance points with smaller indices reachable.
                if heap.len() < k || diff * diff <= heap.peek().unwrap().0 {
                    self.search(far, q, k, exclude, heap);
                }
            }
        }
    }
}

fn build_node(points: &Matrix, order: &mut [usize], offset: usize) -> Node {
    let len = order.len();
    if len <= LEAF_SIZE {
        return Node::Leaf {
            start: offset,
            end: offset + len,
        };
    }
    // Split on the widest dimension at the median.
    let dims = points.cols();
    let dim = (0..dims)
        .map(|c| {
            let (lo, hi) = order.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                let v = points.get(i, c);
                (lo.min(v), hi.max(v))
            });
            (c, hi - lo)
        })
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
        .map_or(0, |(c, _)| c);
    let mid = len / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points.get(a, dim).total_cmp(&points.get(b, dim)).then(a.cmp(&b))
    });
    let value = points.get(order[mid], dim);
    let (left, right) = order.split_at_mut(mid);
    // Left holds values <= split, right holds values >= split; the search
    // visits the far side whenever the plane is within the current radius.
    Node::Split {
        dim,
        value,
        left: Box::new(build_node(points, left, offset)),
        right: Box::new(build_node(points, right, offset + mid)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(y: &Matrix, i: usize, k: usize) -> Vec<usize> {
        let mut all: Vec<(f64, usize)> = (0..y.rows())
            .filter(|&j| j != i)
            .map(|j| (sq_dist(y.row(i), y.row(j)), j))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|(_, j)| j).collect()
    }

    #[test]
    fn collinear_points() {
        let y = LowDimEmbedding(Matrix::from_rows(&[vec![0.0], vec![1.0], vec![3.0]]));
        let idx = NeighborIndex::build(&y).unwrap();
        let got: Vec<usize> = idx.query(1, 2).iter().map(|n| n.index).collect();
        assert_eq!(got, vec![0, 2]);
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let m = Matrix::from_vec(100, 2, (0..200).map(|_| rng.random_range(-10.0..10.0)).collect());
        let idx = NeighborIndex::build(&LowDimEmbedding(m.clone())).unwrap();
        for i in 0..100 {
            let got: Vec<usize> = idx.query(i, 10).iter().map(|n| n.index).collect();
            assert_eq!(got, brute(&m, i, 10), "point {i}");
        }
    }

    #[test]
    fn duplicates_break_ties_by_index() {
        let mut rows = vec![vec![1.0, 1.0]; 30];
        rows.push(vec![0.0, 0.0]);
        let m = Matrix::from_rows(&rows);
        let idx = NeighborIndex::build(&LowDimEmbedding(m.clone())).unwrap();
        let got: Vec<usize> = idx.query(30, 12).iter().map(|n| n.index).collect();
        assert_eq!(got, (0..12).collect::<Vec<_>>());
        let got: Vec<usize> = idx.query(5, 4).iter().map(|n| n.index).collect();
        assert_eq!(got, vec![0, 1, 2, 3]);
        assert_eq!(got, brute(&m, 5, 4));
    }

    #[test]
    fn too_few_points() {
        assert!(NeighborIndex::build(&LowDimEmbedding(Matrix::zeros(1, 2))).is_err());
    }

    #[test]
    fn grid_points_with_many_ties() {
        let rows: Vec<Vec<f64>> = (0..64).map(|i| vec![(i % 8) as f64, (i / 8) as f64]).collect();
        let m = Matrix::from_rows(&rows);
        let idx = NeighborIndex::build(&LowDimEmbedding(m.clone())).unwrap();
        for i in 0..64 {
            let got: Vec<usize> = idx.query(i, 9).iter().map(|n| n.index).collect();
            assert_eq!(got, brute(&m, i, 9));
        }
    }
}
