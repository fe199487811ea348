//! Shape transfer: pull the target geometry through the intrinsic
//! correspondence onto the source connectivity.
//!
//! Each source vertex receives a target position blended from its nearest
//! target vertices in embedding space. The final vertices then minimize
//!
//! ```text
//! E4(V̂^M) = Σ_i ‖V̂^M_i − V̂^N_i‖² + Σ_i ‖(L^M V̂^M)_i − (L^N V^N)_{j(i)}‖²
//! ```

use nalgebra::{DMatrix, Vector3};

use crate::diffnet::KdTree;
use crate::fmap::PointMap;
use crate::mesh::{vertex_normals, TriMesh};
use crate::sparse::{CsrMatrix, SparseCholesky};
use crate::{Error, Result};

/// Faces whose area falls below this fraction of the mean face area count as
/// degenerate.
pub const DEGENERATE_AREA_FRACTION: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct TransferWeights {
    /// Target neighbors of every source vertex, nearest first.
    pub neighbors: Vec<Vec<usize>>,
    /// Normalized boosted weights `c_ik w_ik / Σ_k c_ik w_ik`, parallel to
    /// `neighbors`.
    pub weights: Vec<Vec<f64>>,
    /// Nearest target vertex `j(i)`.
    pub nearest: Vec<usize>,
}

impl TransferWeights {
    pub fn point_map(&self) -> PointMap {
        PointMap::new(self.nearest.clone())
    }
}

/// Blended target positions `V̂^N_i = Σ_k c_ik w_ik V^N_k / Σ_k c_ik w_ik` over
/// the `k` nearest target rows in embedding space, with
/// `w_ik = 1 / (‖emb_m_i − emb_n_k‖ + eps)` and `c_ik = c_boost` when `i` or
/// `k` is a boundary vertex.
#[allow(clippy::too_many_arguments)]
pub fn build_transfer_targets(
    emb_m: &DMatrix<f64>,
    emb_n: &DMatrix<f64>,
    target_vertices: &[Vector3<f64>],
    boundary_m: &[bool],
    boundary_n: &[bool],
    k: usize,
    c_boost: f64,
    eps: f64,
) -> Result<(Vec<Vector3<f64>>, TransferWeights)> {
    if k == 0 {
        return Err(Error::Config("transfer needs at least one neighbor".into()));
    }
    if emb_m.ncols() != emb_n.ncols() {
        return Err(Error::Dimension(format!(
            "embedding sizes differ: {} vs {}",
            emb_m.ncols(),
            emb_n.ncols()
        )));
    }
    if emb_n.nrows() == 0 {
        return Err(Error::Empty("transfer target embedding has no rows".into()));
    }
    if target_vertices.len() != emb_n.nrows() || boundary_n.len() != emb_n.nrows() || boundary_m.len() != emb_m.nrows() {
        return Err(Error::Dimension("transfer inputs disagree on vertex counts".into()));
    }
    if !(c_boost.is_finite() && c_boost > 0.0 && eps.is_finite() && eps >= 0.0) {
        return Err(Error::Config("c_boost must be positive and eps non-negative".into()));
    }
    let tree = KdTree::new(emb_n);
    let found = tree.k_nearest_all(emb_m, k);
    let mut positions = Vec::with_capacity(emb_m.nrows());
    let mut out = TransferWeights {
        neighbors: Vec::with_capacity(emb_m.nrows()),
        weights: Vec::with_capacity(emb_m.nrows()),
        nearest: Vec::with_capacity(emb_m.nrows()),
    };
    for (i, nn) in found.into_iter().enumerate() {
        if nn.is_empty() {
            return Err(Error::Empty(format!("source vertex {i} has no transfer neighbors")));
        }
        let dist: Vec<f64> = nn.iter().map(|(_, d2)| d2.sqrt() + eps).collect();
        let boost = |t: usize| if boundary_m[i] || boundary_n[t] { c_boost } else { 1.0 };
        let raw: Vec<f64> = if dist.iter().any(|d| *d == 0.0) {
            // exact matches take all the weight
            nn.iter().zip(&dist).map(|(&(t, _), d)| if *d == 0.0 { boost(t) } else { 0.0 }).collect()
        } else {
            nn.iter().zip(&dist).map(|(&(t, _), d)| boost(t) / d).collect()
        };
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mut p = Vector3::zeros();
        for (&(t, _), w) in nn.iter().zip(&weights) {
            p += target_vertices[t] * *w;
        }
        positions.push(p);
        out.nearest.push(nn[0].0);
        out.neighbors.push(nn.into_iter().map(|(t, _)| t).collect());
        out.weights.push(weights);
    }
    Ok((positions, out))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangleQuality {
    /// Faces whose normal opposes the target surface normal at their
    /// corresponding vertices.
    pub inverted: usize,
    pub degenerate: usize,
    pub faces: usize,
}

impl TriangleQuality {
    /// Fraction of faces that are inverted or degenerate.
    pub fn bad_fraction(&self) -> f64 {
        if self.faces == 0 {
            0.0
        } else {
            (self.inverted + self.degenerate) as f64 / self.faces as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct TransferResult {
    /// `M̂ = (V̂^M, F^M)`.
    pub mesh: TriMesh,
    /// `‖Ax − b‖ / ‖b‖` of the normal equations, worst channel.
    pub residual: f64,
    pub quality: TriangleQuality,
}

/// Solves `(I + LᵀL) V̂^M = V̂^N + Lᵀ b` with `b_i = (L^N V^N)_{j(i)}`, one
/// Cholesky factorization shared by the three coordinates.
pub fn solve_transfer(targets: &[Vector3<f64>], m: &TriMesh, n: &TriMesh, j: &PointMap) -> Result<TransferResult> {
    let nv = m.n_vertices();
    if targets.len() != nv || j.len() != nv {
        return Err(Error::Dimension(format!(
            "transfer for {nv} vertices got {} targets and a {}-entry point map",
            targets.len(),
            j.len()
        )));
    }
    j.check_target_range(n.n_vertices())?;
    let l = m.uniform_laplacian();
    let lt = l.transpose();
    let system = CsrMatrix::identity(nv).add_scaled(&lt.matmul(l), 1.0);
    let chol = SparseCholesky::factor(&system).map_err(|e| e.in_stage("transfer"))?;

    let ln = n.uniform_laplacian().mul_dense(&n.vertex_matrix());
    let b = DMatrix::from_fn(nv, 3, |i, c| ln[(j.target[i], c)]);
    let rhs = crate::mesh::points_to_matrix(targets) + lt.mul_dense(&b);
    let x = chol.solve_dense(&rhs);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("transfer solution".into()));
    }
    let ax = system.mul_dense(&x);
    let residual = (0..3)
        .map(|c| {
            let r = (ax.column(c) - rhs.column(c)).norm();
            let bn = rhs.column(c).norm();
            if bn > 0.0 {
                r / bn
            } else {
                r
            }
        })
        .fold(0.0, f64::max);
    let mesh = m.deformed(crate::mesh::matrix_to_points(&x))?;
    let quality = triangle_quality(&mesh, n, j);
    Ok(TransferResult { mesh, residual, quality })
}

/// Counts inverted and degenerate faces of `aligned`, judging orientation
/// against the target vertex normals at each face's corresponding vertices.
pub fn triangle_quality(aligned: &TriMesh, target: &TriMesh, j: &PointMap) -> TriangleQuality {
    let (normals, _) = vertex_normals(target);
    let faces = aligned.n_faces();
    let mean_area = aligned.total_area() / faces.max(1) as f64;
    let mut q = TriangleQuality {
        inverted: 0,
        degenerate: 0,
        faces,
    };
    for (f, face) in aligned.faces().iter().enumerate() {
        let raw = aligned.face_normal_raw(f);
        if aligned.face_area(f) <= DEGENERATE_AREA_FRACTION * mean_area {
            q.degenerate += 1;
            continue;
        }
        let reference: Vector3<f64> = face.iter().map(|&v| normals[j.target[v]]).sum();
        if raw.dot(&reference) < 0.0 {
            q.inverted += 1;
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(values: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(values.len(), 1, values)
    }

    #[test]
    fn inverse_distance_weights_by_hand() {
        let emb_m = line(&[0.0]);
        let emb_n = line(&[1.0, -3.0]);
        let v = [Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 4.0, 0.0)];
        let (p, w) = build_transfer_targets(&emb_m, &emb_n, &v, &[false], &[false, false], 2, 10.0, 0.0).unwrap();
        assert_eq!(w.neighbors[0], vec![0, 1]);
        assert!((w.weights[0][0] - 0.75).abs() < 1e-15 && (w.weights[0][1] - 0.25).abs() < 1e-15);
        assert!((p[0] - Vector3::new(0.75, 1.0, 0.0)).norm() < 1e-15);
        assert_eq!(w.nearest, vec![0]);
    }

    #[test]
    fn boundary_boost() {
        let emb_m = line(&[0.0]);
        let emb_n = line(&[1.0, -1.0]);
        let v = [Vector3::zeros(), Vector3::x()];
        // interior source: only the boundary neighbor is boosted
        let (_, w) = build_transfer_targets(&emb_m, &emb_n, &v, &[false], &[true, false], 2, 10.0, 0.0).unwrap();
        let boundary_weight = w.weights[0][w.neighbors[0].iter().position(|&t| t == 0).unwrap()];
        assert!((boundary_weight - 10.0 / 11.0).abs() < 1e-15);
        // boundary source: every pair is boosted alike
        let (_, w) = build_transfer_targets(&emb_m, &emb_n, &v, &[true], &[true, false], 2, 10.0, 0.0).unwrap();
        assert!(w.weights[0].iter().all(|x| (x - 0.5).abs() < 1e-15));
    }

    #[test]
    fn single_neighbor_gathers_exactly() {
        let emb = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let v = [Vector3::new(1.0, 2.0, 3.0), Vector3::new(4.0, 5.0, 6.0), Vector3::new(7.0, 8.0, 9.0)];
        let (p, _) = build_transfer_targets(&emb, &emb, &v, &[false; 3], &[false; 3], 1, 10.0, 1e-9).unwrap();
        assert_eq!(p, v.to_vec());
        let (p, _) = build_transfer_targets(&emb, &emb, &v, &[false; 3], &[false; 3], 3, 10.0, 0.0).unwrap();
        assert_eq!(p, v.to_vec());
        assert!(build_transfer_targets(&emb, &emb, &v, &[false; 3], &[false; 3], 0, 10.0, 0.0).is_err());
    }
}
