//! Symmetric Chamfer distance with envelope gradients.

use nalgebra::DMatrix;

use super::kdtree::KdTree;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct ChamferResult {
    pub value: f64,
    /// Gradient with respect to the rows of `P`.
    pub grad_p: DMatrix<f64>,
    /// Gradient with respect to the rows of `Q`.
    pub grad_q: DMatrix<f64>,
    /// Nearest row of `Q` for each row of `P`.
    pub nn_pq: Vec<usize>,
    /// Nearest row of `P` for each row of `Q`.
    pub nn_qp: Vec<usize>,
}

/// `(1/n) Σ_i min_j ‖P_i − Q_j‖² + (1/m) Σ_j min_i ‖Q_j − P_i‖²`.
///
/// Gradients hold the nearest-neighbor assignments fixed.
pub fn chamfer(p: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<ChamferResult> {
    check(p, q)?;
    let tq = KdTree::new(q);
    chamfer_with_tree(p, q, &tq)
}

/// Same as [`chamfer`] with a prebuilt tree over `Q`, for a static target
/// queried many times.
pub fn chamfer_with_tree(p: &DMatrix<f64>, q: &DMatrix<f64>, q_tree: &KdTree) -> Result<ChamferResult> {
    check(p, q)?;
    if q_tree.len() != q.nrows() || q_tree.dim() != q.ncols() {
        return Err(Error::Dimension("spatial index does not match target cloud".into()));
    }
    let tp = KdTree::new(p);
    let pq = q_tree.nearest_all(p);
    let qp = tp.nearest_all(q);
    Ok(assemble(p, q, pq, qp))
}

fn check(p: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<()> {
    if p.nrows() == 0 || q.nrows() == 0 {
        return Err(Error::Empty("chamfer needs non-empty point sets".into()));
    }
    if p.ncols() != q.ncols() {
        return Err(Error::Dimension(format!(
            "chamfer point dimensions differ: {} vs {}",
            p.ncols(),
            q.ncols()
        )));
    }
    Ok(())
}

fn assemble(
    p: &DMatrix<f64>,
    q: &DMatrix<f64>,
    pq: Vec<(usize, f64)>,
    qp: Vec<(usize, f64)>,
) -> ChamferResult {
    let (n, m, d) = (p.nrows(), q.nrows(), p.ncols());
    let mut grad_p = DMatrix::zeros(n, d);
    let mut grad_q = DMatrix::zeros(m, d);
    let mut sum_pq = 0.0;
    for (i, &(j, d2)) in pq.iter().enumerate() {
        sum_pq += d2;
        for c in 0..d {
            let g = 2.0 * (p[(i, c)] - q[(j, c)]) / n as f64;
            grad_p[(i, c)] += g;
            grad_q[(j, c)] -= g;
        }
    }
    let mut sum_qp = 0.0;
    for (j, &(i, d2)) in qp.iter().enumerate() {
        sum_qp += d2;
        for c in 0..d {
            let g = 2.0 * (q[(j, c)] - p[(i, c)]) / m as f64;
            grad_q[(j, c)] += g;
            grad_p[(i, c)] -= g;
        }
    }
    ChamferResult {
        value: sum_pq / n as f64 + sum_qp / m as f64,
        grad_p,
        grad_q,
        nn_pq: pq.into_iter().map(|x| x.0).collect(),
        nn_qp: qp.into_iter().map(|x| x.0).collect(),
    }
}
