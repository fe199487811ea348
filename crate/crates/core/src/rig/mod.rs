//! Skeletons, poses and linear blend skinning.
//!
//! A [`Rig`] stores each joint's rest-pose global frame and per-vertex
//! skinning weights. A [`Pose`] holds a local axis-angle rotation per joint
//! plus a root translation. Posed global frames follow the kinematic tree
//!
//! ```text
//! P_root = T(t) · J_root · R(θ_root)
//! P_j    = P_parent · (J_parent⁻¹ · J_j) · R(θ_j)
//! ```
//!
//! and a vertex is skinned by `Σ_j w_j · P_j · J_j⁻¹ · v`.

mod io;
mod smooth;

use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3};
use rayon::prelude::*;

use crate::{Error, Result};

pub use io::{load_pose, load_rig, save_pose, save_rig};
pub use smooth::{smooth_template, SmoothOptions, SmoothResult, TemplateWeights};

/// Tolerance on skinning-weight row sums.
pub const WEIGHT_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    /// Rest-pose global frame.
    pub rest_transform: Matrix4<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rig {
    joints: Vec<Joint>,
    /// Row-major `n_V × J`.
    weights: Vec<f64>,
    n_vertices: usize,
    /// Joint indices with every parent before its children.
    order: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    /// Local axis-angle rotation of each joint (radians).
    pub rotations: Vec<Vector3<f64>>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity(joints: usize) -> Self {
        Pose {
            rotations: vec![Vector3::zeros(); joints],
            translation: Vector3::zeros(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.translation == Vector3::zeros() && self.rotations.iter().all(|r| *r == Vector3::zeros())
    }
}

impl Rig {
    /// Validates the tree (exactly one root, no cycles), invertible rest
    /// frames and weight rows (non-negative, summing to one).
    pub fn new(joints: Vec<Joint>, weights: Vec<f64>, n_vertices: usize) -> Result<Self> {
        let j = joints.len();
        if j == 0 {
            return Err(Error::Rig("rig has no joints".into()));
        }
        if weights.len() != n_vertices * j {
            return Err(Error::Rig(format!(
                "weight table has {} entries, expected {} vertices x {} joints",
                weights.len(),
                n_vertices,
                j
            )));
        }
        let roots: Vec<usize> = (0..j).filter(|&i| joints[i].parent.is_none()).collect();
        if roots.len() != 1 {
            return Err(Error::Rig(format!("rig must have exactly one root, found {}", roots.len())));
        }
        let mut children = vec![Vec::new(); j];
        for (i, joint) in joints.iter().enumerate() {
            if let Some(p) = joint.parent {
                if p >= j || p == i {
                    return Err(Error::Rig(format!("joint {i} has invalid parent {p}")));
                }
                children[p].push(i);
            }
            if joint.rest_transform.try_inverse().is_none() || joint.rest_transform.iter().any(|x| !x.is_finite()) {
                return Err(Error::Rig(format!("rest transform of joint {i} is not invertible")));
            }
        }
        let mut order = Vec::with_capacity(j);
        let mut stack = vec![roots[0]];
        while let Some(i) = stack.pop() {
            order.push(i);
            stack.extend(children[i].iter().rev());
        }
        if order.len() != j {
            return Err(Error::Rig("joint hierarchy contains a cycle".into()));
        }
        for v in 0..n_vertices {
            let row = &weights[v * j..(v + 1) * j];
            if row.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                return Err(Error::Rig(format!("vertex {v} has a negative or non-finite weight")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > WEIGHT_SUM_TOL {
                return Err(Error::Rig(format!("weights of vertex {v} sum to {s}, expected 1")));
            }
        }
        Ok(Rig {
            joints,
            weights,
            n_vertices,
            order,
        })
    }

    /// One joint at the origin with every vertex fully bound to it.
    pub fn single_joint(n_vertices: usize) -> Self {
        Rig::new(
            vec![Joint {
                name: "root".into(),
                parent: None,
                rest_transform: Matrix4::identity(),
            }],
            vec![1.0; n_vertices],
            n_vertices,
        )
        .expect("single-joint rig is valid")
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn n_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn weights(&self, vertex: usize) -> &[f64] {
        let j = self.joints.len();
        &self.weights[vertex * j..(vertex + 1) * j]
    }

    pub fn weight_table(&self) -> &[f64] {
        &self.weights
    }

    fn check_pose(&self, pose: &Pose) -> Result<()> {
        if pose.rotations.len() != self.joints.len() {
            return Err(Error::Rig(format!(
                "pose has {} joint rotations, rig has {} joints",
                pose.rotations.len(),
                self.joints.len()
            )));
        }
        if pose.rotations.iter().chain(std::iter::once(&pose.translation)).any(|r| r.iter().any(|x| !x.is_finite())) {
            return Err(Error::Rig("pose contains non-finite values".into()));
        }
        Ok(())
    }

    /// Posed global frames `P_j`.
    pub fn posed_frames(&self, pose: &Pose) -> Result<Vec<Matrix4<f64>>> {
        self.check_pose(pose)?;
        let mut posed = vec![Matrix4::identity(); self.joints.len()];
        for &i in &self.order {
            let joint = &self.joints[i];
            let rot = Rotation3::new(pose.rotations[i]).to_homogeneous();
            posed[i] = match joint.parent {
                None => Matrix4::new_translation(&pose.translation) * joint.rest_transform * rot,
                Some(p) => {
                    let parent_rest = self.joints[p].rest_transform;
                    let local = parent_rest.try_inverse().unwrap() * joint.rest_transform;
                    posed[p] * local * rot
                }
            };
        }
        Ok(posed)
    }

    /// Skinning transforms `G_j = P_j · J_j⁻¹`.
    pub fn skinning_transforms(&self, pose: &Pose) -> Result<Vec<Matrix4<f64>>> {
        let posed = self.posed_frames(pose)?;
        Ok(posed
            .iter()
            .zip(&self.joints)
            .map(|(p, j)| p * j.rest_transform.try_inverse().unwrap())
            .collect())
    }

    /// Per-vertex blended affine map `v ↦ B v + c`.
    pub fn blended_affine(&self, pose: &Pose) -> Result<Vec<(Matrix3<f64>, Vector3<f64>)>> {
        if pose.is_identity() {
            self.check_pose(pose)?;
            return Ok(vec![(Matrix3::identity(), Vector3::zeros()); self.n_vertices]);
        }
        let g = self.skinning_transforms(pose)?;
        let jn = self.joints.len();
        (0..self.n_vertices)
            .into_par_iter()
            .map(|v| {
                let row = &self.weights[v * jn..(v + 1) * jn];
                if row.iter().sum::<f64>() == 0.0 {
                    return Err(Error::Rig(format!("weights of vertex {v} sum to zero")));
                }
                let mut m = Matrix4::zeros();
                for (w, gj) in row.iter().zip(&g) {
                    if *w != 0.0 {
                        m += gj * *w;
                    }
                }
                Ok((m.fixed_view::<3, 3>(0, 0).into_owned(), m.fixed_view::<3, 1>(0, 3).into_owned()))
            })
            .collect()
    }
}

/// Linear blend skinning of `vertices` (bound to `rig`) into `pose`.
pub fn lbs(vertices: &[Vector3<f64>], rig: &Rig, pose: &Pose) -> Result<Vec<Vector3<f64>>> {
    if vertices.len() != rig.n_vertices() {
        return Err(Error::Rig(format!(
            "rig is bound to {} vertices, got {}",
            rig.n_vertices(),
            vertices.len()
        )));
    }
    if pose.is_identity() {
        rig.check_pose(pose)?;
        return Ok(vertices.to_vec());
    }
    let blend = rig.blended_affine(pose)?;
    Ok(vertices
        .par_iter()
        .zip(blend.par_iter())
        .map(|(v, (b, c))| b * v + c)
        .collect())
}
