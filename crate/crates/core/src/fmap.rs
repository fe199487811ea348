//! Functional-map algebra: induced maps from point correspondences, map
//! application, nearest-neighbor point maps and the linear ICP baseline.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::diffnet::KdTree;
use crate::spectral::SpectralBasis;
use crate::{Error, Result};

/// Condition number above which an induced map is reported as ill-posed.
pub const CONDITION_WARNING: f64 = 1e8;

/// A `K × K` matrix taking spectral coefficients of one shape to another.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalMap {
    pub c: DMatrix<f64>,
    /// Frobenius norm of the least-squares residual that produced `c`.
    pub residual: f64,
    pub source_id: Option<String>,
    pub target_id: Option<String>,
}

impl FunctionalMap {
    pub fn new(c: DMatrix<f64>) -> Self {
        FunctionalMap {
            c,
            residual: 0.0,
            source_id: None,
            target_id: None,
        }
    }

    pub fn identity(k: usize) -> Self {
        Self::new(DMatrix::identity(k, k))
    }

    pub fn k(&self) -> usize {
        self.c.nrows()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in 0..self.c.nrows() {
            for c in 0..self.c.ncols() {
                if c > 0 {
                    s.push(' ');
                }
                write!(s, "{:e}", self.c[(r, c)]).unwrap();
            }
            s.push('\n');
        }
        s
    }

    /// Whitespace-delimited square matrix, one row per line.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(path, format!("line {}", ln + 1), e.to_string()))?;
            rows.push(row);
        }
        let k = rows.len();
        if k == 0 {
            return Err(Error::parse(path, "line 1", "empty functional map"));
        }
        if let Some(bad) = rows.iter().position(|r| r.len() != k) {
            return Err(Error::parse(path, format!("row {}", bad + 1), format!("expected {k} columns")));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Ok(Self::new(DMatrix::from_row_slice(k, k, &flat)))
    }
}

/// A total map from source vertices to target vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMap {
    pub target: Vec<usize>,
    /// Distance to the assigned target, when known.
    pub distances: Option<Vec<f64>>,
}

impl PointMap {
    pub fn new(target: Vec<usize>) -> Self {
        PointMap {
            target,
            distances: None,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::new((0..n).collect())
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    pub fn check_target_range(&self, n_target: usize) -> Result<()> {
        match self.target.iter().position(|&j| j >= n_target) {
            Some(i) => Err(Error::Dimension(format!(
                "point map sends vertex {i} to {} but the target has {n_target} vertices",
                self.target[i]
            ))),
            None => Ok(()),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(12 * self.target.len());
        for (i, j) in self.target.iter().enumerate() {
            writeln!(s, "{i} {j}").unwrap();
        }
        s
    }

    /// Two columns per line: source index, target index.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let loc = || format!("line {}", ln + 1);
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 2 {
                return Err(Error::parse(path, loc(), "expected two integer columns"));
            }
            let parse = |t: &str| t.parse::<usize>().map_err(|e| Error::parse(path, loc(), e.to_string()));
            pairs.push((parse(cols[0])?, parse(cols[1])?));
        }
        let n = pairs.len();
        let mut target = vec![usize::MAX; n];
        for (i, j) in pairs {
            if i >= n || target[i] != usize::MAX {
                return Err(Error::parse(path, format!("source {i}"), "source indices must be 0..n, each once"));
            }
            target[i] = j;
        }
        Ok(Self::new(target))
    }
}

/// Exact nearest row of `target` for every row of `source`; ties go to the
/// lowest target index.
pub fn p2p_nearest(source: &DMatrix<f64>, target: &DMatrix<f64>) -> Result<PointMap> {
    if target.nrows() == 0 {
        return Err(Error::Empty("point map target has no points".into()));
    }
    if source.ncols() != target.ncols() {
        return Err(Error::Dimension(format!(
            "source points have {} coordinates, target points {}",
            source.ncols(),
            target.ncols()
        )));
    }
    let tree = KdTree::new(target);
    let nn = tree.nearest_all(source);
    Ok(PointMap {
        target: nn.iter().map(|x| x.0).collect(),
        distances: Some(nn.iter().map(|x| x.1.sqrt()).collect()),
    })
}

/// Least-squares `A₀` with `Φ̂^M A₀ ≈ Φ^M`, where row `i` of `Φ̂^M` is row
/// `j(i)` of `Φ^N`.
pub fn fmap_from_p2p(basis_m: &SpectralBasis, basis_n: &SpectralBasis, p2p: &PointMap) -> Result<FunctionalMap> {
    fmap_from_embeddings(&basis_m.phi, &basis_n.phi, p2p)
}

pub fn fmap_from_embeddings(phi_m: &DMatrix<f64>, phi_n: &DMatrix<f64>, p2p: &PointMap) -> Result<FunctionalMap> {
    let k = phi_m.ncols();
    if phi_n.ncols() != k {
        return Err(Error::Dimension(format!("basis sizes differ: {k} vs {}", phi_n.ncols())));
    }
    if p2p.len() != phi_m.nrows() {
        return Err(Error::Dimension(format!(
            "point map covers {} vertices, source has {}",
            p2p.len(),
            phi_m.nrows()
        )));
    }
    p2p.check_target_range(phi_n.nrows())?;
    let mut distinct = p2p.target.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::RankDeficient(format!(
            "point map hits only {} distinct target vertices, fewer than K = {k}",
            distinct.len()
        )));
    }
    let gathered = DMatrix::from_fn(p2p.len(), k, |i, c| phi_n[(p2p.target[i], c)]);
    let (c, cond) = least_squares(&gathered, phi_m)?;
    if cond > CONDITION_WARNING {
        log::warn!("induced functional map is ill-conditioned (condition estimate {cond:.2e})");
    }
    let residual = (&gathered * &c - phi_m).norm();
    Ok(FunctionalMap {
        c,
        residual,
        source_id: None,
        target_id: None,
    })
}

/// Solves `min ‖A X − B‖_F` by column-pivoted QR. Returns `X` and the
/// condition estimate `|R₀₀| / |R_kk|`.
fn least_squares(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let k = a.ncols();
    let qr = a.clone().col_piv_qr();
    let r = qr.r();
    let r00 = r[(0, 0)].abs();
    let rkk = r[(k - 1, k - 1)].abs();
    let tol = f64::EPSILON * a.nrows().max(k) as f64 * r00;
    if !(rkk > tol) {
        return Err(Error::RankDeficient(format!(
            "gathered basis is numerically rank deficient (|R| diagonal {rkk:.3e} vs {r00:.3e})"
        )));
    }
    let mut x = qr.q().transpose() * b;
    if !r.solve_upper_triangular_mut(&mut x) {
        return Err(Error::RankDeficient("triangular factor is singular".into()));
    }
    qr.p().inv_permute_rows(&mut x);
    Ok((x, r00 / rkk))
}

/// `Φ C`.
pub fn apply_fmap(embedding: &DMatrix<f64>, map: &FunctionalMap) -> Result<DMatrix<f64>> {
    if embedding.ncols() != map.c.nrows() {
        return Err(Error::Dimension(format!(
            "embedding has {} columns, map is {}x{}",
            embedding.ncols(),
            map.c.nrows(),
            map.c.ncols()
        )));
    }
    Ok(embedding * &map.c)
}

#[derive(Debug, Clone)]
pub struct IcpResult {
    pub map: FunctionalMap,
    pub p2p: PointMap,
    /// Mean squared alignment error after each round.
    pub errors: Vec<f64>,
}

/// Orthogonal ICP in embedding space: alternate nearest neighbors of
/// `emb_m` rows in `emb_n · C` with a Procrustes update of `C`.
pub fn linear_icp_refine(
    emb_m: &DMatrix<f64>,
    emb_n: &DMatrix<f64>,
    rounds: usize,
    initial: Option<&DMatrix<f64>>,
) -> Result<IcpResult> {
    let k = emb_m.ncols();
    if rounds == 0 {
        return Err(Error::Config("linear ICP needs at least one round".into()));
    }
    if emb_n.ncols() != k {
        return Err(Error::Dimension(format!("embedding sizes differ: {k} vs {}", emb_n.ncols())));
    }
    let mut c = match initial {
        Some(c0) if c0.shape() != (k, k) => {
            return Err(Error::Dimension(format!("initial map must be {k}x{k}")));
        }
        Some(c0) => c0.clone(),
        None => DMatrix::identity(k, k),
    };
    let mut errors = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let moved = emb_n * &c;
        let p2p = p2p_nearest(emb_m, &moved)?;
        let gathered = DMatrix::from_fn(emb_m.nrows(), k, |i, col| emb_n[(p2p.target[i], col)]);
        let cross = gathered.transpose() * emb_m;
        let svd = cross.svd(true, true);
        let (u, vt) = match (svd.u, svd.v_t) {
            (Some(u), Some(vt)) if svd.singular_values.iter().all(|s| s.is_finite()) => (u, vt),
            _ => return Err(Error::NonFinite("Procrustes SVD".into())),
        };
        c = u * vt;
        let err = (&gathered * &c - emb_m).norm_squared() / emb_m.nrows() as f64;
        errors.push(err);
    }
    let p2p = p2p_nearest(emb_m, &(emb_n * &c))?;
    Ok(IcpResult {
        map: FunctionalMap::new(c),
        p2p,
        errors,
    })
}
