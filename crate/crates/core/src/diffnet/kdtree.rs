//! Exact nearest-neighbor search in arbitrary dimension.
//!
//! Axis-aligned k-d tree with median splits on the widest dimension. Queries
//! backtrack until no unexplored cell can contain a closer point, so results
//! are exact. Ties on distance resolve to the lowest original index.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::DMatrix;
use rayon::prelude::*;

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    /// row-major coordinates in tree order
    points: Vec<f64>,
    /// original row index of each point in tree order
    index: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    d2: f64,
    idx: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2
            .total_cmp(&other.d2)
            .then_with(|| self.idx.cmp(&other.idx))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl KdTree {
    /// Builds a tree over the rows of `points` (`n × d`).
    pub fn new(points: &DMatrix<f64>) -> Self {
        let (n, dim) = points.shape();
        let mut rows = Vec::with_capacity(n * dim);
        for i in 0..n {
            for j in 0..dim {
                rows.push(points[(i, j)]);
            }
        }
        Self::from_rows(rows, dim)
    }

    /// Builds from row-major data.
    pub fn from_rows(rows: Vec<f64>, dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
        assert_eq!(rows.len() % dim, 0);
        let n = rows.len() / dim;
        let mut order: Vec<usize> = (0..n).collect();
        let mut nodes = Vec::new();
        if n > 0 {
            build(&rows, dim, &mut order, 0, n, &mut nodes);
        }
        let mut points = Vec::with_capacity(rows.len());
        for &i in &order {
            points.extend_from_slice(&rows[i * dim..(i + 1) * dim]);
        }
        KdTree {
            dim,
            points,
            index: order,
            nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Nearest point to `q`: `(original index, squared distance)`.
    pub fn nearest(&self, q: &[f64]) -> Option<(usize, f64)> {
        assert_eq!(q.len(), self.dim);
        if self.is_empty() {
            return None;
        }
        let mut best = Candidate {
            d2: f64::INFINITY,
            idx: usize::MAX,
        };
        self.nearest_rec(0, q, &mut best);
        Some((best.idx, best.d2))
    }

    fn nearest_rec(&self, node: usize, q: &[f64], best: &mut Candidate) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for t in start..end {
                    if let Some(d2) = self.dist2_bounded(t, q, best.d2) {
                        let c = Candidate {
                            d2,
                            idx: self.index[t],
                        };
                        if c < *best {
                            *best = c;
                        }
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.nearest_rec(near, q, best);
                if diff * diff <= best.d2 {
                    self.nearest_rec(far, q, best);
                }
            }
        }
    }

    /// The `k` nearest points sorted by `(distance, index)`.
    pub fn k_nearest(&self, q: &[f64], k: usize) -> Vec<(usize, f64)> {
        assert_eq!(q.len(), self.dim);
        if self.is_empty() || k == 0 {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(0, q, k, &mut heap);
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        out.into_iter().map(|c| (c.idx, c.d2)).collect()
    }

    fn knn_rec(&self, node: usize, q: &[f64], k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for t in start..end {
                    let c = Candidate {
                        d2: self.dist2(t, q),
                        idx: self.index[t],
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_rec(near, q, k, heap);
                if heap.len() < k || diff * diff <= heap.peek().unwrap().d2 {
                    self.knn_rec(far, q, k, heap);
                }
            }
        }
    }

    /// Nearest neighbor of every row of `queries`.
    pub fn nearest_all(&self, queries: &DMatrix<f64>) -> Vec<(usize, f64)> {
        let rows = row_major(queries);
        let d = self.dim;
        (0..queries.nrows())
            .into_par_iter()
            .map(|i| self.nearest(&rows[i * d..(i + 1) * d]).unwrap())
            .collect()
    }

    pub fn k_nearest_all(&self, queries: &DMatrix<f64>, k: usize) -> Vec<Vec<(usize, f64)>> {
        let rows = row_major(queries);
        let d = self.dim;
        (0..queries.nrows())
            .into_par_iter()
            .map(|i| self.k_nearest(&rows[i * d..(i + 1) * d], k))
            .collect()
    }

    /// Squared distance, or `None` once a partial sum exceeds `bound`.
    #[inline]
    fn dist2_bounded(&self, t: usize, q: &[f64], bound: f64) -> Option<f64> {
        let p = &self.points[t * self.dim..(t + 1) * self.dim];
        let mut acc = 0.0;
        for (j, (a, b)) in p.iter().zip(q).enumerate() {
            acc += (a - b) * (a - b);
            if j % 8 == 7 && acc > bound {
                return None;
            }
        }
        Some(acc)
    }

    #[inline]
    fn dist2(&self, t: usize, q: &[f64]) -> f64 {
        let p = &self.points[t * self.dim..(t + 1) * self.dim];
        p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum()
    }
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let (n, d) = m.shape();
    let mut out = Vec::with_capacity(n * d);
    for i in 0..n {
        for j in 0..d {
            out.push(m[(i, j)]);
        }
    }
    out
}

fn build(
    rows: &[f64],
    dim: usize,
    order: &mut [usize],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let slice = &mut order[start..end];
    let mut split_dim = 0;
    let mut widest = -1.0;
    for j in 0..dim {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &i in slice.iter() {
            let x = rows[i * dim + j];
            lo = lo.min(x);
            hi = hi.max(x);
        }
        if hi - lo > widest {
            widest = hi - lo;
            split_dim = j;
        }
    }
    if widest <= 0.0 {
        // all points coincide
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| {
        rows[a * dim + split_dim]
            .total_cmp(&rows[b * dim + split_dim])
            .then(a.cmp(&b))
    });
    let value = rows[slice[mid] * dim + split_dim];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let left = build(rows, dim, order, start, start + mid, nodes);
    let right = build(rows, dim, order, start + mid, end, nodes);
    nodes[id] = Node::Split {
        dim: split_dim,
        value,
        left,
        right,
    };
    id
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(points: &DMatrix<f64>, q: &[f64]) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for i in 0..points.nrows() {
            let d: f64 = q
                .iter()
                .enumerate()
                .map(|(j, x)| (points[(i, j)] - x).powi(2))
                .sum();
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    #[test]
    fn matches_brute_force_in_many_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &d in &[1, 3, 8, 63] {
            let pts = DMatrix::from_fn(300, d, |_, _| rng.random::<f64>());
            let tree = KdTree::new(&pts);
            for _ in 0..50 {
                let q: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
                let (i, dist) = tree.nearest(&q).unwrap();
                let (bi, bd) = brute(&pts, &q);
                assert_eq!(i, bi);
                assert_eq!(dist, bd);
            }
        }
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let pts = DMatrix::from_row_slice(40, 1, &[1.0; 40]);
        let tree = KdTree::new(&pts);
        assert_eq!(tree.nearest(&[0.0]).unwrap().0, 0);
        let pts = DMatrix::from_fn(30, 1, |i, _| if i % 2 == 0 { -1.0 } else { 1.0 });
        let tree = KdTree::new(&pts);
        assert_eq!(tree.nearest(&[0.0]).unwrap().0, 0);
        assert_eq!(tree.k_nearest(&[0.0], 3).iter().map(|c| c.0).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn knn_matches_sorted_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts = DMatrix::from_fn(200, 4, |_, _| rng.random::<f64>());
        let tree = KdTree::new(&pts);
        let q = [0.3, 0.6, 0.1, 0.9];
        let mut all: Vec<(usize, f64)> = (0..200)
            .map(|i| (i, (0..4).map(|j| (pts[(i, j)] - q[j]).powi(2)).sum()))
            .collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        assert_eq!(tree.k_nearest(&q, 7), all[..7].to_vec());
    }
}
