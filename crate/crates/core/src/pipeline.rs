//! End-to-end orchestration: spectral bases, template smoothing, coarse fit,
//! induced functional map, refinement and shape transfer, plus the file-level
//! commands and their artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::align::{augment_embedding, coarse_fit, pose_template, rectify_target, refine, ColorPair, CoarseFitResult, RefineResult};
use crate::bench::{chamfer_metric, correspondence_error, moment_box_diagonal, normal_cosine, CorrespondenceError, MetricRecord, NormalCosine, Sampling};
use crate::config::PipelineConfig;
use crate::fmap::{fmap_from_p2p, FunctionalMap, PointMap};
use crate::mesh::{load_mesh, save_mesh, TriMesh};
use crate::rig::{load_pose, load_rig, smooth_template, Pose, Rig, SmoothOptions, SmoothResult, TemplateWeights};
use crate::spectral::{cached_eigenbasis, EigenOptions, SpectralBasis};
use crate::transfer::{build_transfer_targets, solve_transfer, TransferResult, TransferWeights};
use crate::{Error, Result};

/// Artifact file names written into the output directory.
pub mod artifacts {
    pub const TEMPLATE: &str = "template.obj";
    pub const STAGE0_LOSS: &str = "stage0_loss.csv";
    pub const STAGE1_DEFORMED: &str = "stage1_deformed.obj";
    pub const STAGE1_LOSS: &str = "stage1_loss.csv";
    pub const COARSE_POINTMAP: &str = "coarse_pointmap.txt";
    pub const FMAP: &str = "fmap.txt";
    pub const STAGE2_LOSS: &str = "stage2_loss.csv";
    pub const SOURCE_EMBEDDING: &str = "embedding_source.bin";
    pub const TARGET_EMBEDDING: &str = "embedding_target.bin";
    pub const POINTMAP: &str = "pointmap.txt";
    pub const ALIGNED: &str = "aligned.obj";
    pub const MANIFEST: &str = "manifest.json";
}

/// Skeleton with the poses of the source and the target.
#[derive(Debug, Clone)]
pub struct RigInput {
    pub rig: Rig,
    pub source_pose: Pose,
    pub target_pose: Pose,
}

#[derive(Debug, Clone, Default)]
pub struct AlignOptions {
    /// Directory of cached eigenbases.
    pub cache_dir: Option<PathBuf>,
    /// When set, every stage writes its artifacts here as soon as it finishes.
    pub out_dir: Option<PathBuf>,
    pub eigen: EigenOptions,
}

#[derive(Debug, Clone)]
pub struct AlignOutput {
    pub basis_source: SpectralBasis,
    pub basis_target: SpectralBasis,
    pub template: SmoothResult,
    pub coarse: CoarseFitResult,
    pub a0: FunctionalMap,
    pub refined: RefineResult,
    pub weights: TransferWeights,
    pub transfer: TransferResult,
    /// Whether colors entered the data terms.
    pub colors_used: bool,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

impl AlignOutput {
    /// Final source-to-target vertex correspondence.
    pub fn pointmap(&self) -> &PointMap {
        &self.refined.p2p
    }

    pub fn aligned(&self) -> &TriMesh {
        &self.transfer.mesh
    }
}

fn colors_used(cfg: &PipelineConfig, m: &TriMesh, n: &TriMesh) -> bool {
    cfg.use_colors && m.colors().is_some() && n.colors().is_some()
}

fn timed<T>(timings: &mut BTreeMap<String, f64>, name: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f().map_err(|e| e.in_stage(name));
    timings.insert(name.to_string(), start.elapsed().as_secs_f64());
    log::info!("{name} finished in {:.2}s", start.elapsed().as_secs_f64());
    out
}

fn write_in(dir: &Option<PathBuf>, f: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    match dir {
        Some(d) => f(d),
        None => Ok(()),
    }
}

/// Smooth template of the source: posed data fit with the source pose, or the
/// identity pose without a rig.
pub fn run_template(source: &TriMesh, rig: Option<&RigInput>, cfg: &PipelineConfig) -> Result<SmoothResult> {
    let weights = TemplateWeights {
        data: cfg.w1,
        edge: cfg.w2,
        smooth: cfg.w3,
    };
    let opts = SmoothOptions {
        iterations: cfg.stage0.iterations,
        learning_rate: Some(cfg.stage0.learning_rate * source.bbox_diagonal()),
        initial: None,
    };
    smooth_template(source, rig.map(|r| (&r.rig, &r.source_pose)), weights, &opts)
}

/// Runs every stage on in-memory meshes.
pub fn align(
    source: &TriMesh,
    target: &TriMesh,
    rig: Option<&RigInput>,
    cfg: &PipelineConfig,
    opts: &AlignOptions,
) -> Result<AlignOutput> {
    cfg.validate()?;
    if let Some(r) = rig {
        if r.rig.n_vertices() != source.n_vertices() {
            return Err(Error::Rig(format!(
                "rig is bound to {} vertices, source has {}",
                r.rig.n_vertices(),
                source.n_vertices()
            )));
        }
    }
    if let Some(d) = &opts.out_dir {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut timings = BTreeMap::new();
    let cache = opts.cache_dir.as_deref();
    let basis_m = timed(&mut timings, "spectral", || cached_eigenbasis(source, cfg.k, &opts.eigen, cache))?;
    let basis_n = timed(&mut timings, "spectral_target", || cached_eigenbasis(target, cfg.k, &opts.eigen, cache))?;

    let template = timed(&mut timings, "template", || run_template(source, rig, cfg))?;
    write_in(&opts.out_dir, |d| {
        save_mesh(&template.template, d.join(artifacts::TEMPLATE), None)?;
        template.history.write_csv(d.join(artifacts::STAGE0_LOSS))
    })?;

    let coarse = timed(&mut timings, "stage1", || {
        let v_prime = pose_template(&template.template, rig.map(|r| (&r.rig, &r.target_pose)))?;
        coarse_fit(&v_prime, &basis_m.phi, source, target, cfg)
    })?;
    write_in(&opts.out_dir, |d| {
        save_mesh(&source.deformed(coarse.deformed.clone())?, d.join(artifacts::STAGE1_DEFORMED), None)?;
        coarse.history.write_csv(d.join(artifacts::STAGE1_LOSS))?;
        coarse.p2p.save(d.join(artifacts::COARSE_POINTMAP))
    })?;

    let a0 = timed(&mut timings, "fmap", || fmap_from_p2p(&basis_m, &basis_n, &coarse.p2p))?;
    write_in(&opts.out_dir, |d| a0.save(d.join(artifacts::FMAP)))?;

    let use_colors = colors_used(cfg, source, target);
    let refined = timed(&mut timings, "stage2", || refine_stage(source, target, &basis_m, &basis_n, &a0, cfg))?;
    write_in(&opts.out_dir, |d| {
        refined.history.write_csv(d.join(artifacts::STAGE2_LOSS))?;
        save_matrix(&refined.source, d.join(artifacts::SOURCE_EMBEDDING))?;
        save_matrix(&refined.target, d.join(artifacts::TARGET_EMBEDDING))?;
        refined.p2p.save(d.join(artifacts::POINTMAP))
    })?;

    let (weights, transfer) = timed(&mut timings, "transfer", || {
        transfer_stage(source, target, &refined.source, &refined.target, cfg)
    })?;
    if transfer.quality.inverted + transfer.quality.degenerate > 0 {
        log::warn!(
            "aligned mesh has {} inverted and {} degenerate faces",
            transfer.quality.inverted,
            transfer.quality.degenerate
        );
    }
    write_in(&opts.out_dir, |d| save_mesh(&transfer.mesh, d.join(artifacts::ALIGNED), None))?;

    Ok(AlignOutput {
        basis_source: basis_m,
        basis_target: basis_n,
        template,
        coarse,
        a0,
        refined,
        weights,
        transfer,
        colors_used: use_colors,
        timings,
    })
}

/// Rectifies the target basis through `a0` and refines the embeddings with
/// the configured mode, using colors when both meshes carry them.
pub fn refine_stage(
    source: &TriMesh,
    target: &TriMesh,
    basis_m: &SpectralBasis,
    basis_n: &SpectralBasis,
    a0: &FunctionalMap,
    cfg: &PipelineConfig,
) -> Result<RefineResult> {
    let (cm, cn) = (source.color_matrix(), target.color_matrix());
    let color_pair = match (colors_used(cfg, source, target), &cm, &cn) {
        (true, Some(s), Some(t)) => Some(ColorPair { source: s, target: t }),
        _ => None,
    };
    let rectified = rectify_target(basis_n, a0, &basis_m.eigenvalues)?;
    refine(
        &basis_m.phi_scaled,
        &rectified,
        &source.boundary_indices(),
        &target.boundary_indices(),
        color_pair,
        cfg,
    )
}

/// Blends target positions through the refined embeddings (color-augmented
/// when colors are in use) and solves for the aligned source vertices.
pub fn transfer_stage(
    source: &TriMesh,
    target: &TriMesh,
    emb_source: &DMatrix<f64>,
    emb_target: &DMatrix<f64>,
    cfg: &PipelineConfig,
) -> Result<(TransferWeights, TransferResult)> {
    let (es, et) = match (colors_used(cfg, source, target), source.color_matrix(), target.color_matrix()) {
        (true, Some(cs), Some(ct)) => (
            augment_embedding(emb_source, Some(&cs), cfg.beta1, cfg.beta2)?,
            augment_embedding(emb_target, Some(&ct), cfg.beta1, cfg.beta2)?,
        ),
        _ => (emb_source.clone(), emb_target.clone()),
    };
    let (targets, weights) = build_transfer_targets(
        &es,
        &et,
        target.vertices(),
        source.boundary_flags(),
        target.boundary_flags(),
        cfg.knn,
        cfg.c_boost,
        cfg.eps,
    )?;
    let result = solve_transfer(&targets, source, target, &weights.point_map())?;
    Ok((weights, result))
}

/// Writes `rows`, `cols` (u64 LE) and the row-major `f64` entries.
pub fn save_matrix(m: &DMatrix<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(16 + 8 * m.len());
    buf.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    buf.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            buf.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 {
        return Err(Error::parse(path, "byte 0", "matrix header is truncated"));
    }
    let rows = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if rows.checked_mul(cols).and_then(|x| x.checked_mul(8)).map(|x| x + 16) != Some(bytes.len()) {
        return Err(Error::parse(path, "byte 16", format!("expected {rows} x {cols} entries")));
    }
    let vals: Vec<f64> = bytes[16..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(DMatrix::from_row_slice(rows, cols, &vals))
}

/// Hex SHA-256 of a file's bytes.
pub fn file_hash(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
}

impl InputFile {
    fn new(path: &Path) -> Result<Self> {
        Ok(InputFile {
            path: std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf()),
            sha256: file_hash(path)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigFiles {
    pub rig: InputFile,
    pub source_pose: Option<InputFile>,
    pub target_pose: Option<InputFile>,
}

/// Inputs of one file-level alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignRequest {
    pub source: PathBuf,
    pub target: PathBuf,
    pub rig: Option<PathBuf>,
    pub source_pose: Option<PathBuf>,
    pub target_pose: Option<PathBuf>,
    pub config: PipelineConfig,
    pub out_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub stage1_loss: f64,
    pub stage2_loss: f64,
    pub transfer_residual: f64,
    pub inverted_faces: usize,
    pub degenerate_faces: usize,
    pub colors_used: bool,
}

/// Everything needed to repeat a run, plus timings and a result summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub source: InputFile,
    pub target: InputFile,
    pub rig: Option<RigFiles>,
    pub config: PipelineConfig,
    pub config_hash: String,
    pub threads: usize,
    pub cache_dir: Option<PathBuf>,
    pub artifacts: Vec<String>,
    pub timings: BTreeMap<String, f64>,
    pub summary: RunSummary,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::parse(path, format!("line {} column {}", e.line(), e.column()), e.to_string()))
    }

    /// Request that repeats this run into `out_dir`, after checking that the
    /// recorded inputs are unchanged.
    pub fn to_request(&self, out_dir: impl Into<PathBuf>) -> Result<AlignRequest> {
        let check = |f: &InputFile| -> Result<PathBuf> {
            let now = file_hash(&f.path)?;
            if now != f.sha256 {
                return Err(Error::parse(&f.path, "content", "file changed since the manifest was written"));
            }
            Ok(f.path.clone())
        };
        Ok(AlignRequest {
            source: check(&self.source)?,
            target: check(&self.target)?,
            rig: self.rig.as_ref().map(|r| check(&r.rig)).transpose()?,
            source_pose: self.rig.as_ref().and_then(|r| r.source_pose.as_ref()).map(check).transpose()?,
            target_pose: self.rig.as_ref().and_then(|r| r.target_pose.as_ref()).map(check).transpose()?,
            config: self.config.clone(),
            out_dir: out_dir.into(),
            cache_dir: self.cache_dir.clone(),
        })
    }
}

/// Loads the rig and poses named in a request. A pose without a rig is a
/// configuration error; a missing pose defaults to the identity.
pub fn load_rig_input(rig: Option<&Path>, source_pose: Option<&Path>, target_pose: Option<&Path>) -> Result<Option<RigInput>> {
    let Some(rig_path) = rig else {
        if source_pose.is_some() || target_pose.is_some() {
            return Err(Error::Config("a pose was given without a rig".into()));
        }
        return Ok(None);
    };
    let rig = load_rig(rig_path).map_err(|e| match e {
        Error::Io { path, source } if source.kind() == std::io::ErrorKind::NotFound => {
            Error::Config(format!("rig file {} does not exist", path.display()))
        }
        other => other,
    })?;
    let pose = |p: Option<&Path>| -> Result<Pose> {
        let pose = match p {
            Some(p) => load_pose(p)?,
            None => Pose::identity(rig.n_joints()),
        };
        if pose.rotations.len() != rig.n_joints() {
            return Err(Error::Config(format!(
                "pose has {} rotations, rig has {} joints",
                pose.rotations.len(),
                rig.n_joints()
            )));
        }
        Ok(pose)
    };
    let source_pose = pose(source_pose)?;
    let target_pose = pose(target_pose)?;
    Ok(Some(RigInput {
        rig,
        source_pose,
        target_pose,
    }))
}

/// Loads inputs, runs [`align`] writing every artifact into `out_dir`, and
/// finishes with the manifest.
pub fn run_align(req: &AlignRequest) -> Result<(AlignOutput, Manifest)> {
    req.config.validate()?;
    let rig = load_rig_input(req.rig.as_deref(), req.source_pose.as_deref(), req.target_pose.as_deref())?;
    let source = load_mesh(&req.source, None)?;
    let target = load_mesh(&req.target, None)?;
    let opts = AlignOptions {
        cache_dir: req.cache_dir.clone(),
        out_dir: Some(req.out_dir.clone()),
        eigen: EigenOptions::default(),
    };
    let out = align(&source, &target, rig.as_ref(), &req.config, &opts)?;

    let rig_files = match &req.rig {
        Some(r) => Some(RigFiles {
            rig: InputFile::new(r)?,
            source_pose: req.source_pose.as_deref().map(InputFile::new).transpose()?,
            target_pose: req.target_pose.as_deref().map(InputFile::new).transpose()?,
        }),
        None => None,
    };
    let artifacts_written = [
        artifacts::TEMPLATE,
        artifacts::STAGE0_LOSS,
        artifacts::STAGE1_DEFORMED,
        artifacts::STAGE1_LOSS,
        artifacts::COARSE_POINTMAP,
        artifacts::FMAP,
        artifacts::STAGE2_LOSS,
        artifacts::SOURCE_EMBEDDING,
        artifacts::TARGET_EMBEDDING,
        artifacts::POINTMAP,
        artifacts::ALIGNED,
        artifacts::MANIFEST,
    ];
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        source: InputFile::new(&req.source)?,
        target: InputFile::new(&req.target)?,
        rig: rig_files,
        config: req.config.clone(),
        config_hash: req.config.hash(),
        threads: rayon::current_num_threads(),
        cache_dir: req.cache_dir.clone(),
        artifacts: artifacts_written.iter().map(|s| s.to_string()).collect(),
        timings: out.timings.clone(),
        summary: RunSummary {
            stage1_loss: out.coarse.history.last().map_or(f64::NAN, |r| r.total),
            stage2_loss: out.refined.history.last().map_or(f64::NAN, |r| r.total),
            transfer_residual: out.transfer.residual,
            inverted_faces: out.transfer.quality.inverted,
            degenerate_faces: out.transfer.quality.degenerate,
            colors_used: out.colors_used,
        },
    };
    let path = req.out_dir.join(artifacts::MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok((out, manifest))
}

/// Geometric metrics of an aligned mesh against its target, and the
/// correspondence error when ground truth is available.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub chamfer: f64,
    /// Chamfer divided by the squared moment-box diagonal of the target.
    pub chamfer_relative: f64,
    pub normal_cosine: NormalCosine,
    pub correspondence: Option<CorrespondenceError>,
    pub config_hash: String,
}

impl EvalReport {
    pub fn records(&self) -> Vec<MetricRecord> {
        let h = &self.config_hash;
        let mut r = vec![
            MetricRecord::new("chamfer", self.chamfer, h),
            MetricRecord::new("chamfer_relative", self.chamfer_relative, h),
            MetricRecord::new("normal_cosine", self.normal_cosine.value, h),
        ];
        if let Some(c) = &self.correspondence {
            r.push(MetricRecord::new("correspondence_mean", c.mean, h));
            r.push(MetricRecord::new("correspondence_median", c.median, h));
            r.push(MetricRecord::new("correspondence_p95", c.p95, h));
        }
        r
    }
}

/// `predicted` is the correspondence to score against `truth`; both are
/// needed for the correspondence error.
pub fn evaluate(
    aligned: &TriMesh,
    target: &TriMesh,
    predicted: Option<&PointMap>,
    truth: Option<&PointMap>,
    cfg: &PipelineConfig,
) -> Result<EvalReport> {
    let sampling = Sampling::Area {
        count: cfg.eval_samples,
        seed: cfg.seed,
    };
    let chamfer = chamfer_metric(aligned, target, sampling)?;
    let diag = moment_box_diagonal(target);
    let correspondence = match (predicted, truth) {
        (Some(p), Some(t)) => Some(correspondence_error(p, t, target)?),
        (None, Some(_)) => return Err(Error::Config("ground truth given without a predicted point map".into())),
        _ => None,
    };
    Ok(EvalReport {
        chamfer,
        chamfer_relative: chamfer / (diag * diag),
        normal_cosine: normal_cosine(aligned, target, cfg.eval_samples, cfg.seed)?,
        correspondence,
        config_hash: cfg.hash(),
    })
}
