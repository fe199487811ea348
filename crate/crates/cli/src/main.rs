//! `garmalign`: command-line front end of the alignment pipeline.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use garmalign_core::align::{coarse_fit, pose_template};
use garmalign_core::bench::{make_cloth_pair, write_pair, PairSpec, RigidMotion, Warp};
use garmalign_core::config::{PipelineConfig, RefineMode};
use garmalign_core::fmap::{fmap_from_p2p, PointMap};
use garmalign_core::mesh::{load_mesh, save_mesh};
use garmalign_core::pipeline::{
    artifacts, evaluate, load_matrix, load_rig_input, refine_stage, run_align, run_template, save_matrix,
    transfer_stage, AlignRequest, Manifest,
};
use garmalign_core::spectral::{cached_eigenbasis, save_basis, EigenOptions};
use garmalign_core::{Error, Result};

#[derive(Parser)]
#[command(name = "garmalign", version, about = "Non-rigid alignment of deformable triangle meshes")]
struct Cli {
    /// Worker threads; 1 selects the deterministic reference mode.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Increase log verbosity (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON configuration; every key is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured refinement mode (neural, linear, none).
    #[arg(long)]
    refine: Option<RefineMode>,
}

impl ConfigArgs {
    fn load(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(mode) = self.refine {
            cfg.refine = mode;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct RigArgs {
    /// Rig JSON bound to the source mesh.
    #[arg(long)]
    rig: Option<PathBuf>,
    /// Pose of the source mesh (identity when omitted).
    #[arg(long)]
    source_pose: Option<PathBuf>,
    /// Pose of the target mesh (identity when omitted).
    #[arg(long)]
    target_pose: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Extract the smooth unposed template of a rigged mesh.
    SmoothTemplate {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        rig: Option<PathBuf>,
        /// Pose of the input mesh.
        #[arg(long)]
        pose: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
        /// Output mesh path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full pipeline and write every artifact into the output directory.
    Align {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        rig: RigArgs,
        #[arg(long)]
        out_dir: PathBuf,
        /// Directory for cached eigenbases.
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// Repeat a run recorded in a manifest.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Geometric metrics of an aligned mesh, and correspondence error against ground truth.
    Eval {
        #[arg(long)]
        aligned: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Ground-truth point map.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Predicted point map; defaults to the pointmap.txt next to the aligned mesh.
        #[arg(long)]
        pointmap: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
        /// Write the JSON records here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute (or load from cache) a mesh eigenbasis.
    Spectral {
        #[arg(long)]
        mesh: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// Template smoothing and the coarse fit only.
    Stage1 {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        rig: RigArgs,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// Functional-map rectification and refinement from a coarse point map.
    Stage2 {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Point map written by stage1.
        #[arg(long)]
        coarse_pointmap: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// Shape transfer from refined embeddings.
    Transfer {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        source_embedding: PathBuf,
        #[arg(long)]
        target_embedding: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Generate a synthetic cloth pair with ground truth.
    Synth {
        #[arg(long, default_value_t = 30)]
        rows: usize,
        #[arg(long, default_value_t = 30)]
        cols: usize,
        /// Bend angle in radians.
        #[arg(long)]
        bend: Option<f64>,
        /// Twist rate in radians per unit length.
        #[arg(long)]
        twist: Option<f64>,
        /// Wrinkle as `amplitude,frequency`.
        #[arg(long, value_parser = parse_pair)]
        wrinkle: Option<(f64, f64)>,
        #[arg(long)]
        stretch: Option<f64>,
        /// Tangential slide amplitude.
        #[arg(long)]
        slide: Option<f64>,
        /// Apply a random rigid motion.
        #[arg(long)]
        rigid: bool,
        /// Procedural stripe colors.
        #[arg(long)]
        colors: bool,
        /// Target jitter as a fraction of the bounding-box diagonal.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn parse_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected two comma-separated numbers")?;
    Ok((
        a.trim().parse().map_err(|e| format!("{e}"))?,
        b.trim().parse().map_err(|e| format!("{e}"))?,
    ))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SmoothTemplate {
            mesh,
            rig,
            pose,
            config,
            out,
        } => {
            let cfg = config.load()?;
            let rig = load_rig_input(rig.as_deref(), pose.as_deref(), None)?;
            let mesh = load_mesh(&mesh, None)?;
            let result = run_template(&mesh, rig.as_ref(), &cfg).map_err(|e| e.in_stage("template"))?;
            save_mesh(&result.template, &out, None)?;
            let t = result.final_terms();
            log::info!("template energy: data {:.3e}, edge {:.3e}, smooth {:.3e}", t[0], t[1], t[2]);
            Ok(())
        }
        Command::Align {
            source,
            target,
            config,
            rig,
            out_dir,
            cache_dir,
        } => {
            let req = AlignRequest {
                source,
                target,
                rig: rig.rig,
                source_pose: rig.source_pose,
                target_pose: rig.target_pose,
                config: config.load()?,
                out_dir,
                cache_dir,
            };
            let (_, manifest) = run_align(&req)?;
            log::info!("alignment finished: {:?}", manifest.summary);
            Ok(())
        }
        Command::Rerun { manifest, out_dir } => {
            let req = Manifest::load(&manifest)?.to_request(out_dir)?;
            run_align(&req).map(|_| ())
        }
        Command::Eval {
            aligned,
            target,
            truth,
            pointmap,
            config,
            out,
        } => {
            let cfg = config.load()?;
            let aligned_mesh = load_mesh(&aligned, None)?;
            let target_mesh = load_mesh(&target, None)?;
            let truth = truth.map(PointMap::load).transpose()?;
            let predicted = match (&truth, pointmap) {
                (None, _) => None,
                (Some(_), Some(p)) => Some(PointMap::load(p)?),
                (Some(_), None) => {
                    let sibling = aligned.parent().unwrap_or(Path::new(".")).join(artifacts::POINTMAP);
                    Some(PointMap::load(sibling)?)
                }
            };
            if let (Some(t), Some(p)) = (&truth, &predicted) {
                if t.len() != p.len() || p.len() != aligned_mesh.n_vertices() {
                    return Err(Error::Dimension(format!(
                        "aligned mesh has {} vertices, predicted map {}, ground truth {}",
                        aligned_mesh.n_vertices(),
                        p.len(),
                        t.len()
                    )));
                }
            }
            let report = evaluate(&aligned_mesh, &target_mesh, predicted.as_ref(), truth.as_ref(), &cfg)?;
            let json = serde_json::to_string_pretty(&report.records()).expect("records serialize");
            match out {
                Some(p) => write_text(&p, &json),
                None => {
                    println!("{json}");
                    Ok(())
                }
            }
        }
        Command::Spectral {
            mesh,
            config,
            out,
            cache_dir,
        } => {
            let cfg = config.load()?;
            let mesh = load_mesh(&mesh, None)?;
            let basis = cached_eigenbasis(&mesh, cfg.k, &EigenOptions::default(), cache_dir.as_deref())
                .map_err(|e| e.in_stage("spectral"))?;
            save_basis(&basis, &out)
        }
        Command::Stage1 {
            source,
            target,
            config,
            rig,
            out_dir,
            cache_dir,
        } => {
            let cfg = config.load()?;
            let rig = load_rig_input(rig.rig.as_deref(), rig.source_pose.as_deref(), rig.target_pose.as_deref())?;
            let m = load_mesh(&source, None)?;
            let n = load_mesh(&target, None)?;
            create_dir(&out_dir)?;
            let basis = cached_eigenbasis(&m, cfg.k, &EigenOptions::default(), cache_dir.as_deref())
                .map_err(|e| e.in_stage("spectral"))?;
            let template = run_template(&m, rig.as_ref(), &cfg).map_err(|e| e.in_stage("template"))?;
            save_mesh(&template.template, out_dir.join(artifacts::TEMPLATE), None)?;
            let v_prime = pose_template(&template.template, rig.as_ref().map(|r| (&r.rig, &r.target_pose)))?;
            let coarse = coarse_fit(&v_prime, &basis.phi, &m, &n, &cfg).map_err(|e| e.in_stage("stage1"))?;
            save_mesh(&m.deformed(coarse.deformed.clone())?, out_dir.join(artifacts::STAGE1_DEFORMED), None)?;
            coarse.history.write_csv(out_dir.join(artifacts::STAGE1_LOSS))?;
            coarse.p2p.save(out_dir.join(artifacts::COARSE_POINTMAP))
        }
        Command::Stage2 {
            source,
            target,
            coarse_pointmap,
            config,
            out_dir,
            cache_dir,
        } => {
            let cfg = config.load()?;
            let m = load_mesh(&source, None)?;
            let n = load_mesh(&target, None)?;
            let p2p = PointMap::load(&coarse_pointmap)?;
            if p2p.len() != m.n_vertices() {
                return Err(Error::Dimension(format!(
                    "coarse point map covers {} vertices, source has {}",
                    p2p.len(),
                    m.n_vertices()
                )));
            }
            create_dir(&out_dir)?;
            let eig = EigenOptions::default();
            let bm = cached_eigenbasis(&m, cfg.k, &eig, cache_dir.as_deref()).map_err(|e| e.in_stage("spectral"))?;
            let bn = cached_eigenbasis(&n, cfg.k, &eig, cache_dir.as_deref()).map_err(|e| e.in_stage("spectral"))?;
            let a0 = fmap_from_p2p(&bm, &bn, &p2p).map_err(|e| e.in_stage("fmap"))?;
            a0.save(out_dir.join(artifacts::FMAP))?;
            let result = refine_stage(&m, &n, &bm, &bn, &a0, &cfg).map_err(|e| e.in_stage("stage2"))?;
            result.history.write_csv(out_dir.join(artifacts::STAGE2_LOSS))?;
            save_matrix(&result.source, out_dir.join(artifacts::SOURCE_EMBEDDING))?;
            save_matrix(&result.target, out_dir.join(artifacts::TARGET_EMBEDDING))?;
            result.p2p.save(out_dir.join(artifacts::POINTMAP))
        }
        Command::Transfer {
            source,
            target,
            source_embedding,
            target_embedding,
            config,
            out_dir,
        } => {
            let cfg = config.load()?;
            let m = load_mesh(&source, None)?;
            let n = load_mesh(&target, None)?;
            let es = load_matrix(&source_embedding)?;
            let et = load_matrix(&target_embedding)?;
            create_dir(&out_dir)?;
            let (weights, result) = transfer_stage(&m, &n, &es, &et, &cfg).map_err(|e| e.in_stage("transfer"))?;
            let pm = weights.point_map();
            pm.save(out_dir.join(artifacts::POINTMAP))?;
            save_mesh(&result.mesh, out_dir.join(artifacts::ALIGNED), None)
        }
        Command::Synth {
            rows,
            cols,
            bend,
            twist,
            wrinkle,
            stretch,
            slide,
            rigid,
            colors,
            noise,
            seed,
            out_dir,
        } => {
            let mut warps = Vec::new();
            if let Some(f) = stretch {
                warps.push(Warp::Stretch { factor: f });
            }
            if let Some(a) = slide {
                warps.push(Warp::Slide { amplitude: a });
            }
            if let Some((amplitude, frequency)) = wrinkle {
                warps.push(Warp::Wrinkle { amplitude, frequency });
            }
            if let Some(rate) = twist {
                warps.push(Warp::Twist { rate });
            }
            if let Some(angle) = bend {
                warps.push(Warp::Bend { angle });
            }
            let spec = PairSpec {
                rows,
                cols,
                warps,
                rigid: if rigid { RigidMotion::Random } else { RigidMotion::Identity },
                colors,
                noise,
                seed,
            };
            write_pair(&make_cloth_pair(&spec)?, &out_dir)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
