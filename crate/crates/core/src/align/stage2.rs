//! Intrinsic refinement: rectify the target embedding with the induced map
//! `A₀`, then train `D_φ : ℝ^K → ℝ^K` so that
//! `Φ̂^{M↓} = Φ^{M↓} + D_φ(Φ^{M↓})` matches the rectified target under
//!
//! ```text
//! E3 = w7·CD(Φ̂^{M↓}, Φ̂^{N↓}) + w8·CD(Φ̂^{M↓}_b, Φ̂^{N↓}_b) + w9·mean_i ‖D_φ(Φ^{M↓})_i‖²
//! ```

use nalgebra::DMatrix;

use super::stage1::concat;
use super::BoundaryTerm;
use crate::config::{PipelineConfig, RefineMode};
use crate::diffnet::{chamfer_with_tree, Activation, AdamConfig, KdTree, LossHistory, MlpField, OptimizerState};
use crate::fmap::{apply_fmap, linear_icp_refine, FunctionalMap, PointMap};
use crate::spectral::SpectralBasis;
use crate::{Error, Result};

/// Loss term names of the refinement, in history column order.
pub const REFINE_TERMS: [&str; 3] = ["chamfer", "boundary", "regularizer"];

/// `Φ̂^{N↓} = (Φ^N A₀) Λ_M^{-1/2}`.
///
/// After rectification the columns of `Φ^N A₀` correspond to the source
/// eigenfunctions, so each is scaled by the source eigenvalue it now
/// represents.
pub fn rectify_target(basis_n: &SpectralBasis, a0: &FunctionalMap, source_eigenvalues: &[f64]) -> Result<DMatrix<f64>> {
    let k = basis_n.k();
    if a0.k() != k || source_eigenvalues.len() != k {
        return Err(Error::Dimension(format!(
            "target basis has {k} functions, map is {}x{}, {} source eigenvalues",
            a0.c.nrows(),
            a0.c.ncols(),
            source_eigenvalues.len()
        )));
    }
    if let Some(bad) = source_eigenvalues.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        return Err(Error::Config(format!("source eigenvalue {bad} is not positive")));
    }
    let mut out = apply_fmap(&basis_n.phi, a0)?;
    for (j, lambda) in source_eigenvalues.iter().enumerate() {
        out.column_mut(j).scale_mut(1.0 / lambda.sqrt());
    }
    Ok(out)
}

/// Per-vertex colors of source and target, used only in the full Chamfer term
/// and in correspondence extraction.
#[derive(Debug, Clone, Copy)]
pub struct ColorPair<'a> {
    pub source: &'a DMatrix<f64>,
    pub target: &'a DMatrix<f64>,
}

/// The refinement energy over the refined source embedding.
pub struct RefineObjective {
    target: DMatrix<f64>,
    target_tree: KdTree,
    colors: Option<(DMatrix<f64>, f64)>,
    boundary: Option<BoundaryTerm>,
    weights: [f64; 3],
}

impl RefineObjective {
    pub fn new(
        target: &DMatrix<f64>,
        boundary_m: &[usize],
        boundary_n: &[usize],
        colors: Option<ColorPair<'_>>,
        cfg: &PipelineConfig,
    ) -> Result<Self> {
        let (full_target, colors) = match colors {
            Some(c) => {
                if c.target.nrows() != target.nrows() {
                    return Err(Error::Dimension(format!(
                        "{} target colors for {} target rows",
                        c.target.nrows(),
                        target.nrows()
                    )));
                }
                (
                    concat(&(target * cfg.beta1), &(c.target * cfg.beta2)),
                    Some((c.source * cfg.beta2, cfg.beta1)),
                )
            }
            None => (target.clone(), None),
        };
        Ok(RefineObjective {
            target_tree: KdTree::new(&full_target),
            target: full_target,
            colors,
            boundary: BoundaryTerm::new(boundary_m.to_vec(), target, boundary_n, "refinement"),
            weights: [cfg.w7, cfg.w8, cfg.w9],
        })
    }

    /// Weighted `[chamfer, boundary, regularizer]` at refined embedding
    /// `y = x + d` with deformation `d`, and the gradient of their sum with
    /// respect to `d`.
    pub fn terms_and_gradient(&self, y: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<([f64; 3], DMatrix<f64>)> {
        let (n, k) = y.shape();
        if d.shape() != (n, k) {
            return Err(Error::Dimension("refined embedding and deformation shapes differ".into()));
        }
        if let Some((cm, _)) = &self.colors {
            if cm.nrows() != n {
                return Err(Error::Dimension(format!("{} source colors for {n} rows", cm.nrows())));
            }
        }
        let [w7, w8, w9] = self.weights;
        let mut grad = DMatrix::zeros(n, k);
        let chamfer = if w7 != 0.0 {
            match &self.colors {
                Some((cm, b1)) => {
                    let r = chamfer_with_tree(&concat(&(y * *b1), cm), &self.target, &self.target_tree)?;
                    grad += r.grad_p.columns(0, k) * (w7 * b1);
                    r.value
                }
                None => {
                    let r = chamfer_with_tree(y, &self.target, &self.target_tree)?;
                    grad += r.grad_p * w7;
                    r.value
                }
            }
        } else {
            0.0
        };
        let boundary = match (&self.boundary, w8 != 0.0) {
            (Some(b), true) => b.accumulate(y, w8, &mut grad)?,
            _ => 0.0,
        };
        let reg = d.norm_squared() / n as f64;
        if w9 != 0.0 {
            grad += d * (2.0 * w9 / n as f64);
        }
        Ok(([w7 * chamfer, w8 * boundary, w9 * reg], grad))
    }

    /// Correspondence extraction in the same space as the full Chamfer term.
    fn extract(&self, y: &DMatrix<f64>) -> Result<PointMap> {
        let query = match &self.colors {
            Some((cm, b1)) => concat(&(y * *b1), cm),
            None => y.clone(),
        };
        let nn = self.target_tree.nearest_all(&query);
        let mut map = PointMap::new(nn.iter().map(|(j, _)| *j).collect());
        map.distances = Some(nn.iter().map(|(_, d2)| d2.sqrt()).collect());
        Ok(map)
    }
}

#[derive(Debug, Clone)]
pub struct RefineResult {
    /// Refined source embedding `Φ̂^{M↓}` (n×K), at the lowest-loss iterate
    /// in neural mode.
    pub source: DMatrix<f64>,
    /// Final target embedding (m×K): the rectified target, post-multiplied by
    /// the ICP map in linear mode.
    pub target: DMatrix<f64>,
    /// Trained `D_φ` in neural mode.
    pub net: Option<MlpField>,
    /// Orthogonal map found in linear mode.
    pub map: Option<FunctionalMap>,
    /// Weighted terms per iteration; a single record outside neural mode.
    pub history: LossHistory,
    /// Nearest target vertex of every source vertex in embedding space.
    pub p2p: PointMap,
}

fn check_shapes(source: &DMatrix<f64>, target: &DMatrix<f64>) -> Result<()> {
    if source.ncols() != target.ncols() {
        return Err(Error::Dimension(format!(
            "embedding sizes differ: {} vs {}",
            source.ncols(),
            target.ncols()
        )));
    }
    if source.nrows() == 0 || target.nrows() == 0 {
        return Err(Error::Empty("refinement needs non-empty embeddings".into()));
    }
    Ok(())
}

/// Trains `D_φ` from a zero start with full-batch Adam and keeps the
/// iterate with the lowest total loss.
pub fn refine_embeddings(
    source: &DMatrix<f64>,
    target: &DMatrix<f64>,
    boundary_m: &[usize],
    boundary_n: &[usize],
    colors: Option<ColorPair<'_>>,
    cfg: &PipelineConfig,
) -> Result<RefineResult> {
    cfg.validate()?;
    check_shapes(source, target)?;
    let objective = RefineObjective::new(target, boundary_m, boundary_n, colors, cfg)?;
    let k = source.ncols();
    let mut widths = vec![k];
    widths.extend_from_slice(&cfg.hidden);
    widths.push(k);
    let mut net = MlpField::new(&widths, Activation::Gelu, cfg.seed.wrapping_add(1));
    let mut opt = OptimizerState::new(AdamConfig::with_learning_rate(cfg.stage2.learning_rate));
    let mut history = LossHistory::new(REFINE_TERMS);
    let iterations = cfg.stage2.iterations;
    let mut best: Option<(f64, MlpField, DMatrix<f64>)> = None;
    for it in 0..=iterations {
        let trace = net.forward_trace(source)?;
        let y = source + &trace.output;
        let (terms, grad) = objective.terms_and_gradient(&y, &trace.output)?;
        history.push(it, terms.to_vec());
        if !terms.iter().all(|t| t.is_finite()) {
            return Err(Error::Diverged {
                reason: format!("refinement loss became non-finite at iteration {it}"),
                trace: history.totals(),
            });
        }
        let total: f64 = terms.iter().sum();
        if best.as_ref().is_none_or(|(b, _, _)| total < *b) {
            best = Some((total, net.clone(), y));
        }
        if it < iterations {
            let g = net.parameter_gradients(&trace, &grad)?;
            net.apply_gradients(&mut opt, &g)?;
        }
    }
    let (_, net, refined) = best.expect("at least one iteration is evaluated");
    log::debug!(
        "refinement: loss {:.3e} -> {:.3e}",
        history.first().map_or(0.0, |r| r.total),
        history.last().map_or(0.0, |r| r.total)
    );
    let p2p = objective.extract(&refined)?;
    Ok(RefineResult {
        source: refined,
        target: target.clone(),
        net: Some(net),
        map: None,
        history,
        p2p,
    })
}

/// Orthogonal ICP between the embeddings in place of the network.
pub fn linear_refine(
    source: &DMatrix<f64>,
    target: &DMatrix<f64>,
    boundary_m: &[usize],
    boundary_n: &[usize],
    colors: Option<ColorPair<'_>>,
    cfg: &PipelineConfig,
) -> Result<RefineResult> {
    cfg.validate()?;
    check_shapes(source, target)?;
    let icp = linear_icp_refine(source, target, cfg.icp_rounds, None)?;
    let moved = target * &icp.map.c;
    finish_static(source, moved, Some(icp.map), boundary_m, boundary_n, colors, cfg)
}

/// Uses the rectified embeddings directly.
pub fn no_refine(
    source: &DMatrix<f64>,
    target: &DMatrix<f64>,
    boundary_m: &[usize],
    boundary_n: &[usize],
    colors: Option<ColorPair<'_>>,
    cfg: &PipelineConfig,
) -> Result<RefineResult> {
    cfg.validate()?;
    check_shapes(source, target)?;
    finish_static(source, target.clone(), None, boundary_m, boundary_n, colors, cfg)
}

fn finish_static(
    source: &DMatrix<f64>,
    target: DMatrix<f64>,
    map: Option<FunctionalMap>,
    boundary_m: &[usize],
    boundary_n: &[usize],
    colors: Option<ColorPair<'_>>,
    cfg: &PipelineConfig,
) -> Result<RefineResult> {
    let objective = RefineObjective::new(&target, boundary_m, boundary_n, colors, cfg)?;
    let zero = DMatrix::zeros(source.nrows(), source.ncols());
    let (terms, _) = objective.terms_and_gradient(source, &zero)?;
    let mut history = LossHistory::new(REFINE_TERMS);
    history.push(0, terms.to_vec());
    let p2p = objective.extract(source)?;
    Ok(RefineResult {
        source: source.clone(),
        target,
        net: None,
        map,
        history,
        p2p,
    })
}

/// Dispatches on the configured refinement mode.
pub fn refine(
    source: &DMatrix<f64>,
    target: &DMatrix<f64>,
    boundary_m: &[usize],
    boundary_n: &[usize],
    colors: Option<ColorPair<'_>>,
    cfg: &PipelineConfig,
) -> Result<RefineResult> {
    match cfg.refine {
        RefineMode::Neural => refine_embeddings(source, target, boundary_m, boundary_n, colors, cfg),
        RefineMode::Linear => linear_refine(source, target, boundary_m, boundary_n, colors, cfg),
        RefineMode::None => no_refine(source, target, boundary_m, boundary_n, colors, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, k: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, k, |_, _| rng.random_range(-0.3..0.3))
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let x = random(12, 4, 1);
        let d = random(12, 4, 2) * 0.1;
        let t = random(15, 4, 3);
        let cs = random(12, 3, 4).abs();
        let ct = random(15, 3, 5).abs();
        let cfg = PipelineConfig {
            w9: 0.7,
            beta1: 1.3,
            ..Default::default()
        };
        let obj = RefineObjective::new(&t, &[0, 3, 5], &[1, 2, 9, 14], Some(ColorPair { source: &cs, target: &ct }), &cfg).unwrap();
        let (_, g) = obj.terms_and_gradient(&(&x + &d), &d).unwrap();
        let h = 1e-7;
        for idx in 0..d.len() {
            let mut dp = d.clone();
            dp[idx] += h;
            let fp: f64 = obj.terms_and_gradient(&(&x + &dp), &dp).unwrap().0.iter().sum();
            dp[idx] -= 2.0 * h;
            let fm: f64 = obj.terms_and_gradient(&(&x + &dp), &dp).unwrap().0.iter().sum();
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - g[idx]).abs() <= 1e-5 * g[idx].abs().max(1e-3), "{idx}: {fd} vs {}", g[idx]);
        }
    }

    #[test]
    fn regularizer_alone_keeps_zero_field() {
        let x = random(20, 3, 7);
        let t = random(25, 3, 8);
        let cfg = PipelineConfig {
            w7: 0.0,
            w8: 0.0,
            hidden: vec![16, 16],
            stage2: crate::config::OptimizerSettings {
                iterations: 30,
                learning_rate: 1e-3,
            },
            ..Default::default()
        };
        let r = refine_embeddings(&x, &t, &[], &[], None, &cfg).unwrap();
        assert!(r.history.totals().iter().all(|v| *v == 0.0));
        assert_eq!(r.source, x);
    }
}
