//! Rigged smooth-template extraction.
//!
//! Finds template vertices `V^T` whose posed version matches the observed
//! mesh while keeping the observed edge lengths and a small Laplacian:
//!
//! ```text
//! E1 = w1 ‖LBS(V^T) − V^M‖² + w2 ‖E^T − E^M‖² + w3 ‖L^M V^T‖²
//! ```
//!
//! Energies are reported in units of the squared bounding-box diagonal of the
//! observed mesh, so the weights do not depend on the mesh scale.

use nalgebra::{Matrix3, Vector3};

use super::{Pose, Rig};
use crate::diffnet::{AdamConfig, LossHistory, OptimizerState, ParamTensor};
use crate::mesh::{edge_lengths, TriMesh};
use crate::{Error, Result};

/// Consecutive rejected steps after which the run is declared divergent.
const MAX_REJECTIONS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemplateWeights {
    /// Posed-template data term.
    pub data: f64,
    /// Edge-length preservation.
    pub edge: f64,
    /// Laplacian smoothness.
    pub smooth: f64,
}

impl Default for TemplateWeights {
    fn default() -> Self {
        TemplateWeights {
            data: 1e4,
            edge: 1e3,
            smooth: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothOptions {
    pub iterations: usize,
    /// Absolute step size; `None` means `1e-3 ×` the bounding-box diagonal.
    pub learning_rate: Option<f64>,
    /// Starting vertices; `None` inverts the blended skinning transform of
    /// every observed vertex.
    pub initial: Option<Vec<Vector3<f64>>>,
}

impl Default for SmoothOptions {
    fn default() -> Self {
        SmoothOptions {
            iterations: 1500,
            learning_rate: None,
            initial: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SmoothResult {
    pub template: TriMesh,
    /// Accepted iterations with terms `data`, `edge`, `smooth`.
    pub history: LossHistory,
    pub accepted: usize,
    pub rejected: usize,
}

impl SmoothResult {
    /// Final weighted `[data, edge, smooth]` energies.
    pub fn final_terms(&self) -> [f64; 3] {
        let t = &self.history.last().expect("history is never empty").terms;
        [t[0], t[1], t[2]]
    }
}

struct Problem<'a> {
    mesh: &'a TriMesh,
    blend: Vec<(Matrix3<f64>, Vector3<f64>)>,
    rest: Vec<f64>,
    w: TemplateWeights,
    /// `1 / diag²`
    unit: f64,
}

impl Problem<'_> {
    /// Weighted term values and the gradient of their sum.
    fn evaluate(&self, x: &[f64], grad: &mut [f64]) -> [f64; 3] {
        let n = self.mesh.n_vertices();
        let v = |i: usize| Vector3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2]);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut add = |i: usize, g: Vector3<f64>| {
            grad[3 * i] += g.x;
            grad[3 * i + 1] += g.y;
            grad[3 * i + 2] += g.z;
        };

        let mut data = 0.0;
        if self.w.data != 0.0 {
            let scale = self.w.data * self.unit;
            for (i, (b, c)) in self.blend.iter().enumerate() {
                let r = b * v(i) + c - self.mesh.vertices()[i];
                data += r.norm_squared();
                add(i, b.transpose() * r * (2.0 * scale));
            }
            data *= scale;
        }

        let mut edge = 0.0;
        if self.w.edge != 0.0 {
            let scale = self.w.edge * self.unit;
            for (e, rest) in self.mesh.edges().iter().zip(&self.rest) {
                let d = v(e[0]) - v(e[1]);
                let len = d.norm();
                let diff = len - rest;
                edge += diff * diff;
                if len > 0.0 {
                    let g = d * (2.0 * scale * diff / len);
                    add(e[0], g);
                    add(e[1], -g);
                }
            }
            edge *= scale;
        }

        let mut smooth = 0.0;
        if self.w.smooth != 0.0 {
            let scale = self.w.smooth * self.unit;
            let l = self.mesh.uniform_laplacian();
            let mut lv = vec![0.0; 3 * n];
            for i in 0..n {
                let (cols, vals) = l.row(i);
                let mut acc = Vector3::zeros();
                for (&j, &a) in cols.iter().zip(vals) {
                    acc += v(j) * a;
                }
                smooth += acc.norm_squared();
                lv[3 * i..3 * i + 3].copy_from_slice(acc.as_slice());
            }
            smooth *= scale;
            // L is symmetric, so Lᵀ(LV) = L(LV)
            for i in 0..n {
                let (cols, vals) = l.row(i);
                let mut acc = Vector3::zeros();
                for (&j, &a) in cols.iter().zip(vals) {
                    acc += Vector3::new(lv[3 * j], lv[3 * j + 1], lv[3 * j + 2]) * a;
                }
                add(i, acc * (2.0 * scale));
            }
        }
        [data, edge, smooth]
    }
}

/// Minimizes the template energy with adaptive first-order steps. A step that
/// raises the energy is rejected and the step size halved, so the recorded
/// energy never increases.
///
/// Without a rig the pose is the identity.
pub fn smooth_template(
    mesh: &TriMesh,
    rig: Option<(&Rig, &Pose)>,
    weights: TemplateWeights,
    opts: &SmoothOptions,
) -> Result<SmoothResult> {
    if [weights.data, weights.edge, weights.smooth].iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::Config("template weights must be finite and non-negative".into()));
    }
    let n = mesh.n_vertices();
    let blend = match rig {
        Some((rig, pose)) => {
            if rig.n_vertices() != n {
                return Err(Error::Rig(format!(
                    "rig is bound to {} vertices, mesh has {n}",
                    rig.n_vertices()
                )));
            }
            rig.blended_affine(pose)?
        }
        None => vec![(Matrix3::identity(), Vector3::zeros()); n],
    };
    let diag = mesh.bbox_diagonal();
    let problem = Problem {
        mesh,
        blend,
        rest: edge_lengths(mesh),
        w: weights,
        unit: 1.0 / (diag * diag),
    };

    let start: Vec<Vector3<f64>> = match &opts.initial {
        Some(init) => {
            if init.len() != n {
                return Err(Error::Dimension(format!("{} initial vertices for {n}-vertex mesh", init.len())));
            }
            init.clone()
        }
        None => problem
            .blend
            .iter()
            .zip(mesh.vertices())
            .map(|((b, c), m)| match b.try_inverse() {
                Some(inv) => inv * (m - c),
                None => *m,
            })
            .collect(),
    };
    let mut x: Vec<f64> = start.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
    let mut grad = vec![0.0; 3 * n];
    let mut terms = problem.evaluate(&x, &mut grad);
    let mut energy: f64 = terms.iter().sum();
    if !energy.is_finite() {
        return Err(Error::NonFinite("initial template energy".into()));
    }

    let lr0 = opts.learning_rate.unwrap_or(1e-3 * diag);
    let mut opt = OptimizerState::new(AdamConfig::with_learning_rate(lr0));
    let mut history = LossHistory::new(["data", "edge", "smooth"]);
    history.push(0, terms.to_vec());
    let mut candidate = vec![0.0; 3 * n];
    let mut cand_grad = vec![0.0; 3 * n];
    let (mut accepted, mut rejected, mut streak) = (0, 0, 0);
    for it in 1..=opts.iterations {
        candidate.copy_from_slice(&x);
        opt.step(&mut [ParamTensor {
            name: "template vertices",
            values: &mut candidate,
            grad: &grad,
        }])?;
        let cand_terms = problem.evaluate(&candidate, &mut cand_grad);
        let cand_energy: f64 = cand_terms.iter().sum();
        if cand_energy <= energy {
            std::mem::swap(&mut x, &mut candidate);
            std::mem::swap(&mut grad, &mut cand_grad);
            terms = cand_terms;
            energy = cand_energy;
            history.push(it, terms.to_vec());
            accepted += 1;
            streak = 0;
            opt.set_learning_rate((opt.learning_rate() * 1.05).min(lr0));
        } else {
            rejected += 1;
            streak += 1;
            if streak >= MAX_REJECTIONS {
                return Err(Error::Diverged {
                    reason: format!("template energy failed to decrease for {MAX_REJECTIONS} consecutive steps"),
                    trace: history.totals(),
                });
            }
            opt.set_learning_rate(opt.learning_rate() * 0.5);
        }
    }
    log::debug!("template smoothing: {accepted} accepted, {rejected} rejected steps, energy {energy:.3e}");

    let vertices = x.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect();
    Ok(SmoothResult {
        template: mesh.deformed(vertices)?,
        history,
        accepted,
        rejected,
    })
}
