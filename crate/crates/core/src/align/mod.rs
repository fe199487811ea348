//! The two alignment stages: coarse extrinsic fitting with an intrinsic
//! deformation field, and refinement of rectified intrinsic embeddings.

mod stage1;
mod stage2;

use nalgebra::{DMatrix, Vector3};

use crate::diffnet::{chamfer_with_tree, KdTree};
use crate::{Error, Result};

pub use stage1::{coarse_fit, pose_template, CoarseFitResult, CoarseObjective, COARSE_TERMS};
pub use stage2::{
    linear_refine, no_refine, refine, refine_embeddings, rectify_target, ColorPair, RefineObjective, RefineResult,
    REFINE_TERMS,
};

/// Similarity taking world coordinates to fitting coordinates:
/// `x ↦ (x − center) / scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub center: Vector3<f64>,
    pub scale: f64,
}

impl Normalization {
    pub fn identity() -> Self {
        Normalization {
            center: Vector3::zeros(),
            scale: 1.0,
        }
    }

    /// Centers the bounding box of `points` and scales its diagonal to one.
    pub fn unit_bbox(points: &[Vector3<f64>]) -> Self {
        let (lo, hi) = crate::mesh::bbox(points);
        let diag = (hi - lo).norm();
        Normalization {
            center: (lo + hi) / 2.0,
            scale: if diag > 0.0 { diag } else { 1.0 },
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        (p - self.center) / self.scale
    }

    pub fn invert(&self, p: &Vector3<f64>) -> Vector3<f64> {
        p * self.scale + self.center
    }

    pub fn apply_matrix(&self, points: &[Vector3<f64>]) -> DMatrix<f64> {
        DMatrix::from_fn(points.len(), 3, |i, c| (points[i][c] - self.center[c]) / self.scale)
    }

    pub fn invert_matrix(&self, m: &DMatrix<f64>) -> Vec<Vector3<f64>> {
        (0..m.nrows())
            .map(|i| self.invert(&Vector3::new(m[(i, 0)], m[(i, 1)], m[(i, 2)])))
            .collect()
    }
}

/// `[β1·Φ, β2·colors]`; without colors the result is `β1·Φ`.
pub fn augment_embedding(phi: &DMatrix<f64>, colors: Option<&DMatrix<f64>>, beta1: f64, beta2: f64) -> Result<DMatrix<f64>> {
    let (n, k) = phi.shape();
    match colors {
        None => Ok(phi * beta1),
        Some(c) => {
            if c.nrows() != n {
                return Err(Error::Dimension(format!("{} color rows for {n} embedding rows", c.nrows())));
            }
            let d = c.ncols();
            Ok(DMatrix::from_fn(n, k + d, |i, j| {
                if j < k {
                    beta1 * phi[(i, j)]
                } else {
                    beta2 * c[(i, j - k)]
                }
            }))
        }
    }
}

/// Squared stretch beyond rest length, `Σ_e max(ℓ_e − ℓ⁰_e, 0)²`.
pub fn clipped_edge_penalty(positions: &DMatrix<f64>, edges: &[[usize; 2]], rest: &[f64]) -> f64 {
    clipped_edges(positions, edges, rest, None)
}

fn clipped_edges(positions: &DMatrix<f64>, edges: &[[usize; 2]], rest: &[f64], mut grad: Option<(&mut DMatrix<f64>, f64)>) -> f64 {
    let mut total = 0.0;
    for (e, &l0) in edges.iter().zip(rest) {
        let d: Vector3<f64> = Vector3::from_fn(|c, _| positions[(e[0], c)] - positions[(e[1], c)]);
        let len = d.norm();
        let over = len - l0;
        if over > 0.0 {
            total += over * over;
            if let Some((g, w)) = grad.as_mut() {
                let scale = 2.0 * *w * over / len;
                for c in 0..3 {
                    g[(e[0], c)] += scale * d[c];
                    g[(e[1], c)] -= scale * d[c];
                }
            }
        }
    }
    total
}

/// Chamfer term restricted to boundary rows against a static boundary
/// target. `None` when either side has no boundary.
struct BoundaryTerm {
    rows: Vec<usize>,
    target: DMatrix<f64>,
    tree: KdTree,
}

impl BoundaryTerm {
    fn new(rows: Vec<usize>, target_all: &DMatrix<f64>, target_rows: &[usize], what: &str) -> Option<Self> {
        match (rows.is_empty(), target_rows.is_empty()) {
            (true, true) => None,
            (false, false) => {
                let target = gather_rows(target_all, target_rows);
                let tree = KdTree::new(&target);
                Some(BoundaryTerm { rows, target, tree })
            }
            _ => {
                log::warn!("{what}: only one shape has boundary vertices; boundary term skipped");
                None
            }
        }
    }

    /// Adds `w · ∂CD/∂source` into `grad` and returns the unweighted value.
    fn accumulate(&self, source: &DMatrix<f64>, weight: f64, grad: &mut DMatrix<f64>) -> Result<f64> {
        let sub = gather_rows(source, &self.rows);
        let r = chamfer_with_tree(&sub, &self.target, &self.tree)?;
        for (local, &row) in self.rows.iter().enumerate() {
            for c in 0..source.ncols() {
                grad[(row, c)] += weight * r.grad_p[(local, c)];
            }
        }
        Ok(r.value)
    }
}

pub(crate) fn gather_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, c| m[(rows[i], c)])
}
