//! Synthetic cloth pairs with known correspondence, and geometric evaluation
//! metrics.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffnet::{chamfer, KdTree};
use crate::fmap::PointMap;
use crate::mesh::primitives::grid;
use crate::mesh::{points_to_matrix, save_mesh, vertex_normals, TriMesh};
use crate::rig::{lbs, save_pose, save_rig, Pose, Rig};
use crate::{Error, Result};

/// Analytic deformation of the unit-width grid. Coordinates refer to the
/// grid's material frame: `x ∈ [0, 1]`, `y ∈ [0, height]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Warp {
    /// Roll the x axis onto a circular arc of total angle `angle`; isometric.
    Bend { angle: f64 },
    /// Rotate each cross-section about the grid's center line by `rate · x`.
    Twist { rate: f64 },
    /// `z += amplitude · sin(2π · frequency · x)`.
    Wrinkle { amplitude: f64, frequency: f64 },
    /// Scale x by `factor`.
    Stretch { factor: f64 },
    /// Tangential slide that keeps the outline fixed and moves interior
    /// material along x by up to `amplitude`.
    Slide { amplitude: f64 },
}

impl Warp {
    /// Applies the warp to a point given in the material frame of a grid of
    /// height `height`.
    pub fn apply(&self, p: Vector3<f64>, height: f64) -> Vector3<f64> {
        match *self {
            Warp::Bend { angle } => {
                if angle.abs() < 1e-12 {
                    return p;
                }
                let r = 1.0 / angle;
                let t = angle * p.x;
                // the local normal rotates with the arc, so an offset in z stays normal
                let rad = r - p.z;
                Vector3::new(rad * t.sin(), p.y, r - rad * t.cos())
            }
            Warp::Twist { rate } => {
                let a = rate * p.x;
                let (s, c) = a.sin_cos();
                let yc = height / 2.0;
                let (dy, dz) = (p.y - yc, p.z);
                Vector3::new(p.x, yc + c * dy - s * dz, s * dy + c * dz)
            }
            Warp::Wrinkle { amplitude, frequency } => {
                Vector3::new(p.x, p.y, p.z + amplitude * (2.0 * PI * frequency * p.x).sin())
            }
            Warp::Stretch { factor } => Vector3::new(p.x * factor, p.y, p.z),
            Warp::Slide { amplitude } => {
                let v = if height > 0.0 { (PI * p.y / height).sin() } else { 0.0 };
                Vector3::new(p.x + amplitude * (PI * p.x).sin() * v, p.y, p.z)
            }
        }
    }
}

/// Rigid motion applied after the warps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RigidMotion {
    #[default]
    Identity,
    /// Uniformly random rotation and a translation in `[-0.5, 0.5]³`, drawn
    /// from the pair seed.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairSpec {
    pub rows: usize,
    pub cols: usize,
    /// Applied in order.
    pub warps: Vec<Warp>,
    pub rigid: RigidMotion,
    /// Stripe and checker colors carried by both meshes.
    pub colors: bool,
    /// Uniform per-coordinate jitter of the target as a fraction of its
    /// bounding-box diagonal.
    pub noise: f64,
    pub seed: u64,
}

impl Default for PairSpec {
    fn default() -> Self {
        PairSpec {
            rows: 30,
            cols: 30,
            warps: Vec::new(),
            rigid: RigidMotion::Identity,
            colors: false,
            noise: 0.0,
            seed: 0,
        }
    }
}

/// Jitter magnitude of the noise option.
pub const DEFAULT_NOISE: f64 = 0.002;

#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub source: TriMesh,
    pub target: TriMesh,
    /// Identity on vertex indices.
    pub truth: PointMap,
    pub spec: PairSpec,
    /// Rig and pose that carry the source onto the rigidly moved frame of the
    /// target.
    pub rig: Rig,
    pub pose: Pose,
}

/// Stripes across x with a checker patch, as a function of material
/// coordinates.
pub fn procedural_color(x: f64, y: f64) -> Vector3<f64> {
    if (0.6..0.9).contains(&x) && (0.1..0.4).contains(&y) {
        let cell = ((x * 20.0).floor() as i64 + (y * 20.0).floor() as i64).rem_euclid(2);
        return if cell == 0 {
            Vector3::new(0.1, 0.8, 0.1)
        } else {
            Vector3::new(0.9, 0.9, 0.1)
        };
    }
    let t = (x * 8.0).floor() as i64;
    if t.rem_euclid(2) == 0 {
        Vector3::new(0.9, 0.2, 0.2)
    } else {
        Vector3::new(0.2, 0.2, 0.9)
    }
}

/// Flat `rows × cols` grid spanning `x ∈ [0, 1]`, its warped and rigidly
/// moved copy, and the identity ground truth.
pub fn make_cloth_pair(spec: &PairSpec) -> Result<SyntheticPair> {
    if spec.rows < 2 || spec.cols < 2 {
        return Err(Error::Config(format!("grid needs at least 2x2 vertices, got {}x{}", spec.rows, spec.cols)));
    }
    if !(spec.noise.is_finite() && spec.noise >= 0.0) {
        return Err(Error::Config("noise must be non-negative".into()));
    }
    let spacing = 1.0 / (spec.cols - 1) as f64;
    let height = (spec.rows - 1) as f64 * spacing;
    let flat = grid(spec.rows, spec.cols, spacing);
    let colors = spec
        .colors
        .then(|| flat.vertices().iter().map(|v| procedural_color(v.x, v.y)).collect::<Vec<_>>());
    let source = flat.clone().with_colors(colors)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pose = match spec.rigid {
        RigidMotion::Identity => Pose::identity(1),
        RigidMotion::Random => {
            let axis = loop {
                let a = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                let n = a.norm();
                if n > 1e-3 && n <= 1.0 {
                    break a / n;
                }
            };
            // density ∝ (1 − cos θ) makes the rotation uniform on SO(3)
            let angle = loop {
                let t: f64 = rng.random_range(0.0..PI);
                if rng.random::<f64>() * 2.0 <= 1.0 - t.cos() {
                    break t;
                }
            };
            Pose {
                rotations: vec![axis * angle],
                translation: Vector3::new(
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                ),
            }
        }
    };
    let warped: Vec<Vector3<f64>> = source
        .vertices()
        .iter()
        .map(|v| spec.warps.iter().fold(*v, |p, w| w.apply(p, height)))
        .collect();
    let rig = Rig::single_joint(source.n_vertices());
    let mut moved = lbs(&warped, &rig, &pose)?;
    if spec.noise > 0.0 {
        let amp = spec.noise * crate::mesh::bbox_diagonal(&moved);
        for p in &mut moved {
            for c in 0..3 {
                p[c] += rng.random_range(-amp..=amp);
            }
        }
    }
    let target = TriMesh::new(moved, source.faces().to_vec(), source.colors().map(<[_]>::to_vec))?;
    Ok(SyntheticPair {
        truth: PointMap::identity(source.n_vertices()),
        source,
        target,
        spec: spec.clone(),
        rig,
        pose,
    })
}

/// File names written by [`write_pair`].
pub const PAIR_FILES: [&str; 6] = ["source.obj", "target.obj", "truth.txt", "rig.json", "pose.json", "pair.json"];

/// Writes both meshes, the ground truth, the rig with the target pose, and
/// the generating spec into `dir`.
pub fn write_pair(pair: &SyntheticPair, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_mesh(&pair.source, dir.join(PAIR_FILES[0]), None)?;
    save_mesh(&pair.target, dir.join(PAIR_FILES[1]), None)?;
    pair.truth.save(dir.join(PAIR_FILES[2]))?;
    save_rig(&pair.rig, dir.join(PAIR_FILES[3]))?;
    save_pose(&pair.pose, dir.join(PAIR_FILES[4]))?;
    let spec = serde_json::to_string_pretty(&pair.spec).expect("spec serializes");
    let path = dir.join(PAIR_FILES[5]);
    std::fs::write(&path, spec).map_err(|e| Error::io(&path, e))
}

/// How a mesh is turned into a point set for the metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// The mesh vertices themselves.
    Vertices,
    /// Area-uniform surface samples drawn from `seed`.
    Area { count: usize, seed: u64 },
}

/// Area-uniform surface samples: positions, interpolated unit vertex normals
/// (zero where undefined) and the face of each sample.
pub struct SurfaceSamples {
    pub points: DMatrix<f64>,
    pub normals: Vec<Vector3<f64>>,
    pub faces: Vec<usize>,
}

pub fn sample_surface(mesh: &TriMesh, count: usize, seed: u64) -> Result<SurfaceSamples> {
    if count == 0 {
        return Err(Error::Config("sample count must be positive".into()));
    }
    let mut cumulative = Vec::with_capacity(mesh.n_faces());
    let mut total = 0.0;
    for f in 0..mesh.n_faces() {
        total += mesh.face_area(f);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::InvalidMesh("mesh has zero surface area".into()));
    }
    let (vn, _) = vertex_normals(mesh);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = DMatrix::zeros(count, 3);
    let mut normals = Vec::with_capacity(count);
    let mut faces = Vec::with_capacity(count);
    for s in 0..count {
        let t = rng.random::<f64>() * total;
        let f = cumulative.partition_point(|c| *c <= t).min(mesh.n_faces() - 1);
        let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        // corners in ascending index order, so a sample does not depend on the winding
        let mut face = mesh.faces()[f];
        face.sort_unstable();
        let [a, b, c] = face;
        let w = 1.0 - u - v;
        let vs = mesh.vertices();
        let p = vs[a] * w + vs[b] * u + vs[c] * v;
        points.set_row(s, &p.transpose());
        let n = vn[a] * w + vn[b] * u + vn[c] * v;
        let len = n.norm();
        normals.push(if len > 1e-12 { n / len } else { Vector3::zeros() });
        faces.push(f);
    }
    Ok(SurfaceSamples { points, normals, faces })
}

fn point_set(mesh: &TriMesh, sampling: Sampling) -> Result<DMatrix<f64>> {
    match sampling {
        Sampling::Vertices => Ok(points_to_matrix(mesh.vertices())),
        Sampling::Area { count, seed } => Ok(sample_surface(mesh, count, seed)?.points),
    }
}

/// Symmetric Chamfer distance between the two point sets. With area sampling
/// both meshes use the same seed, which makes the value exactly symmetric.
pub fn chamfer_metric(a: &TriMesh, b: &TriMesh, sampling: Sampling) -> Result<f64> {
    let pa = point_set(a, sampling)?;
    let pb = point_set(b, sampling)?;
    Ok(chamfer(&pa, &pb)?.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormalCosine {
    /// Mean cosine over both directions.
    pub value: f64,
    /// Samples skipped because their normal or their partner's is undefined.
    pub excluded: usize,
}

/// For each surface sample of one mesh, the cosine between its normal and
/// the normal of the nearest sample of the other mesh; averaged over both
/// directions.
pub fn normal_cosine(a: &TriMesh, b: &TriMesh, samples: usize, seed: u64) -> Result<NormalCosine> {
    let sa = sample_surface(a, samples, seed)?;
    let sb = sample_surface(b, samples, seed)?;
    let (sum_ab, cnt_ab, ex_ab) = directed_cosine(&sa, &sb);
    let (sum_ba, cnt_ba, ex_ba) = directed_cosine(&sb, &sa);
    if cnt_ab == 0 || cnt_ba == 0 {
        return Err(Error::Empty("no sample has a well-defined normal".into()));
    }
    Ok(NormalCosine {
        value: 0.5 * (sum_ab / cnt_ab as f64 + sum_ba / cnt_ba as f64),
        excluded: ex_ab + ex_ba,
    })
}

fn directed_cosine(from: &SurfaceSamples, to: &SurfaceSamples) -> (f64, usize, usize) {
    let tree = KdTree::new(&to.points);
    let nn = tree.nearest_all(&from.points);
    let (mut sum, mut count, mut excluded) = (0.0, 0, 0);
    for (i, (j, _)) in nn.into_iter().enumerate() {
        let (p, q) = (from.normals[i], to.normals[j]);
        if p == Vector3::zeros() || q == Vector3::zeros() {
            excluded += 1;
        } else {
            sum += p.dot(&q);
            count += 1;
        }
    }
    (sum, count, excluded)
}

/// Diagonal of the box whose second moments match the surface: for a flat
/// rectangle this is its bounding-box diagonal, and unlike the axis-aligned
/// box it does not change under rotation.
pub fn moment_box_diagonal(mesh: &TriMesh) -> f64 {
    let v = mesh.vertices();
    let mut area = 0.0;
    let mut first = Vector3::zeros();
    let mut second = 0.0;
    for (f, &[a, b, c]) in mesh.faces().iter().enumerate() {
        let ar = mesh.face_area(f);
        let s = v[a] + v[b] + v[c];
        area += ar;
        first += s * (ar / 3.0);
        // ∫‖x‖² dA over a triangle
        second += ar / 12.0 * (v[a].norm_squared() + v[b].norm_squared() + v[c].norm_squared() + s.norm_squared());
    }
    if !(area > 0.0) {
        return 0.0;
    }
    let mean = first / area;
    let trace = (second / area - mean.norm_squared()).max(0.0);
    (12.0 * trace).sqrt()
}

/// Correspondence error summary as fractions of the target's
/// [`moment_box_diagonal`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrespondenceError {
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
}

/// Per-vertex distance on the target between predicted and true
/// correspondents, divided by the target's [`moment_box_diagonal`].
pub fn correspondence_error(predicted: &PointMap, truth: &PointMap, target: &TriMesh) -> Result<CorrespondenceError> {
    if predicted.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "predicted map covers {} vertices, ground truth {}",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::Empty("empty point maps".into()));
    }
    predicted.check_target_range(target.n_vertices())?;
    truth.check_target_range(target.n_vertices())?;
    let diag = moment_box_diagonal(target);
    let v = target.vertices();
    let mut d: Vec<f64> = predicted
        .target
        .iter()
        .zip(&truth.target)
        .map(|(&p, &t)| (v[p] - v[t]).norm() / diag)
        .collect();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    d.sort_by(f64::total_cmp);
    Ok(CorrespondenceError {
        mean,
        median: quantile(&d, 0.5),
        p95: quantile(&d, 0.95),
    })
}

/// Linear interpolation between order statistics of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// One metric value tagged with the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub metric: String,
    pub value: f64,
    pub config_hash: String,
}

impl MetricRecord {
    pub fn new(metric: impl Into<String>, value: f64, config_hash: impl Into<String>) -> Self {
        MetricRecord {
            metric: metric.into(),
            value,
            config_hash: config_hash.into(),
        }
    }
}
