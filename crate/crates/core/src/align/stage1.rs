//! Coarse extrinsic fit: pose the template, then train the intrinsic
//! deformation field `D_τ : Φ^M ↦ ℝ³` so that `V'' = V' + D_τ(Φ^M)` matches
//! the target under
//!
//! ```text
//! E2 = w4·CD(V'', V^N) + w5·CD(V''_b, V^N_b) + w6·‖max(E^{T''} − E^M, 0)‖²
//! ```

use nalgebra::{DMatrix, Vector3};

use super::{clipped_edges, BoundaryTerm, Normalization};
use crate::config::PipelineConfig;
use crate::diffnet::{chamfer_with_tree, Activation, AdamConfig, KdTree, LossHistory, MlpField, MlpGradients, OptimizerState};
use crate::fmap::{p2p_nearest, PointMap};
use crate::mesh::{edge_lengths_of, TriMesh};
use crate::rig::{lbs, Pose, Rig};
use crate::{Error, Result};

/// Loss term names of the coarse fit, in history column order.
pub const COARSE_TERMS: [&str; 3] = ["chamfer", "boundary", "edge"];

/// `V' = LBS(V^T)`; without a rig the template is returned unchanged.
pub fn pose_template(template: &TriMesh, rig: Option<(&Rig, &Pose)>) -> Result<Vec<Vector3<f64>>> {
    match rig {
        None => Ok(template.vertices().to_vec()),
        Some((rig, pose)) => {
            if rig.n_vertices() != template.n_vertices() {
                return Err(Error::Rig(format!(
                    "rig is bound to {} vertices, template has {}",
                    rig.n_vertices(),
                    template.n_vertices()
                )));
            }
            lbs(template.vertices(), rig, pose)
        }
    }
}

/// The coarse-fit energy over deformed positions in fitting coordinates.
pub struct CoarseObjective {
    target: DMatrix<f64>,
    target_tree: KdTree,
    /// `β2 · colors` of source and target when colors take part.
    colors: Option<(DMatrix<f64>, f64)>,
    boundary: Option<BoundaryTerm>,
    edges: Vec<[usize; 2]>,
    rest: Vec<f64>,
    weights: [f64; 3],
}

impl CoarseObjective {
    /// `m` provides connectivity, rest edge lengths and boundary flags for the
    /// deforming shape; `n` is the target. Both are mapped through `norm`.
    pub fn new(m: &TriMesh, n: &TriMesh, norm: &Normalization, cfg: &PipelineConfig) -> Result<Self> {
        let target_xyz = norm.apply_matrix(n.vertices());
        let colors = match (cfg.use_colors, m.color_matrix(), n.color_matrix()) {
            (true, Some(cm), Some(cn)) => Some((cm * cfg.beta2, cn * cfg.beta2, cfg.beta1)),
            _ => None,
        };
        let target = match &colors {
            Some((_, cn, b1)) => concat(&(&target_xyz * *b1), cn),
            None => target_xyz.clone(),
        };
        let boundary = BoundaryTerm::new(m.boundary_indices(), &target_xyz, &n.boundary_indices(), "coarse fit");
        Ok(CoarseObjective {
            target_tree: KdTree::new(&target),
            target,
            colors: colors.map(|(cm, _, b1)| (cm, b1)),
            boundary,
            edges: m.edges().to_vec(),
            rest: edge_lengths_of(m.edges(), &crate::mesh::matrix_to_points(&norm.apply_matrix(m.vertices()))),
            weights: [cfg.w4, cfg.w5, cfg.w6],
        })
    }

    /// Weighted `[chamfer, boundary, edge]` values at positions `x` (n×3) and
    /// the gradient of their sum with respect to `x`.
    pub fn terms_and_gradient(&self, x: &DMatrix<f64>) -> Result<([f64; 3], DMatrix<f64>)> {
        if x.ncols() != 3 || x.nrows() != self.colors.as_ref().map_or(x.nrows(), |c| c.0.nrows()) {
            return Err(Error::Dimension(format!("coarse positions are {}x{}", x.nrows(), x.ncols())));
        }
        let [w4, w5, w6] = self.weights;
        let mut grad = DMatrix::zeros(x.nrows(), 3);

        let chamfer = if w4 != 0.0 {
            match &self.colors {
                Some((cm, b1)) => {
                    let r = chamfer_with_tree(&concat(&(x * *b1), cm), &self.target, &self.target_tree)?;
                    grad += r.grad_p.columns(0, 3) * (w4 * b1);
                    r.value
                }
                None => {
                    let r = chamfer_with_tree(x, &self.target, &self.target_tree)?;
                    grad += r.grad_p * w4;
                    r.value
                }
            }
        } else {
            0.0
        };
        let boundary = match (&self.boundary, w5 != 0.0) {
            (Some(b), true) => b.accumulate(x, w5, &mut grad)?,
            _ => 0.0,
        };
        let edge = if w6 != 0.0 {
            clipped_edges(x, &self.edges, &self.rest, Some((&mut grad, w6)))
        } else {
            0.0
        };
        Ok(([w4 * chamfer, w5 * boundary, w6 * edge], grad))
    }

    /// Loss terms and parameter gradients of `E2(x0 + net(phi))`.
    pub fn loss_and_param_gradients(
        &self,
        net: &MlpField,
        phi: &DMatrix<f64>,
        x0: &DMatrix<f64>,
    ) -> Result<([f64; 3], MlpGradients)> {
        let trace = net.forward_trace(phi)?;
        let (terms, grad) = self.terms_and_gradient(&(x0 + &trace.output))?;
        Ok((terms, net.parameter_gradients(&trace, &grad)?))
    }
}

pub(crate) fn concat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, ka) = a.shape();
    DMatrix::from_fn(n, ka + b.ncols(), |i, j| if j < ka { a[(i, j)] } else { b[(i, j - ka)] })
}

#[derive(Debug, Clone)]
pub struct CoarseFitResult {
    /// `V''` in world coordinates.
    pub deformed: Vec<Vector3<f64>>,
    /// Trained `D_τ`, acting in fitting coordinates. It and `deformed` are
    /// taken from the iteration with the lowest total loss.
    pub net: MlpField,
    pub normalization: Normalization,
    /// Weighted terms `chamfer`, `boundary`, `edge` per iteration; the last
    /// record is evaluated after the final update.
    pub history: LossHistory,
    /// Nearest target vertex of every deformed vertex.
    pub p2p: PointMap,
}

impl CoarseFitResult {
    pub fn final_terms(&self) -> [f64; 3] {
        let t = &self.history.last().expect("history is never empty").terms;
        [t[0], t[1], t[2]]
    }
}

/// Trains `D_τ` from a zero start with full-batch Adam and keeps the
/// iterate with the lowest total loss.
///
/// `v_prime` is the posed template, `phi_m` the source eigenfunctions (one
/// row per vertex of `m`), `m` the source mesh and `n` the target.
pub fn coarse_fit(
    v_prime: &[Vector3<f64>],
    phi_m: &DMatrix<f64>,
    m: &TriMesh,
    n: &TriMesh,
    cfg: &PipelineConfig,
) -> Result<CoarseFitResult> {
    cfg.validate()?;
    let nv = m.n_vertices();
    if v_prime.len() != nv || phi_m.nrows() != nv {
        return Err(Error::Dimension(format!(
            "coarse fit needs {nv} rows, got {} posed vertices and {} embedding rows",
            v_prime.len(),
            phi_m.nrows()
        )));
    }
    let norm = if cfg.normalize {
        Normalization::unit_bbox(n.vertices())
    } else {
        Normalization::identity()
    };
    let objective = CoarseObjective::new(m, n, &norm, cfg)?;
    let x0 = norm.apply_matrix(v_prime);

    let mut widths = vec![phi_m.ncols()];
    widths.extend_from_slice(&cfg.hidden);
    widths.push(3);
    let mut net = MlpField::new(&widths, Activation::Gelu, cfg.seed);
    let mut opt = OptimizerState::new(AdamConfig::with_learning_rate(cfg.stage1.learning_rate));
    let mut history = LossHistory::new(COARSE_TERMS);
    let iterations = cfg.stage1.iterations;
    let mut best: Option<(f64, MlpField, DMatrix<f64>)> = None;
    for it in 0..=iterations {
        let trace = net.forward_trace(phi_m)?;
        let x = &x0 + &trace.output;
        let (terms, grad) = objective.terms_and_gradient(&x)?;
        history.push(it, terms.to_vec());
        if !terms.iter().all(|t| t.is_finite()) {
            return Err(Error::Diverged {
                reason: format!("coarse fit loss became non-finite at iteration {it}"),
                trace: history.totals(),
            });
        }
        let total: f64 = terms.iter().sum();
        if best.as_ref().is_none_or(|(b, _, _)| total < *b) {
            best = Some((total, net.clone(), x));
        }
        if it < iterations {
            let g = net.parameter_gradients(&trace, &grad)?;
            net.apply_gradients(&mut opt, &g)?;
        }
    }
    let (_, net, x) = best.expect("at least one iteration is evaluated");
    log::debug!(
        "coarse fit: loss {:.3e} -> {:.3e}",
        history.first().map_or(0.0, |r| r.total),
        history.last().map_or(0.0, |r| r.total)
    );

    let deformed = norm.invert_matrix(&x);
    let p2p = p2p_nearest(&crate::mesh::points_to_matrix(&deformed), &n.vertex_matrix())?;
    Ok(CoarseFitResult {
        deformed,
        net,
        normalization: norm,
        history,
        p2p,
    })
}
