//! Cotangent Laplace-Beltrami discretization and its low-frequency eigenbasis.
//!
//! The stiffness matrix `W` uses cotangent weights and the lumped mass `A`
//! uses mixed Voronoi areas. The generalized problem `W φ = λ A φ` is solved
//! for the smallest non-constant modes with shift-invert subspace iteration
//! and Rayleigh-Ritz projection; small meshes fall back to a dense solve.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mesh::TriMesh;
use crate::sparse::{CsrMatrix, SparseCholesky};

/// `cot(1°)`: cotangent magnitudes are capped here.
pub const COT_CLAMP: f64 = 57.289_961_630_759_42;

/// Meshes at or below this many vertices are solved densely.
const DENSE_LIMIT: usize = 400;

#[derive(Debug, Clone)]
pub struct CotanOperator {
    /// Symmetric positive semidefinite stiffness, rows sum to zero.
    pub stiffness: CsrMatrix,
    /// Lumped (mixed Voronoi) vertex areas.
    pub mass: Vec<f64>,
    /// Number of cotangents that hit [`COT_CLAMP`].
    pub clamped: usize,
}

/// Assembles the cotangent stiffness `W` and mixed Voronoi mass `A`.
pub fn cotangent_matrix(mesh: &TriMesh) -> CotanOperator {
    let n = mesh.n_vertices();
    let v = mesh.vertices();
    let mut trip = Vec::with_capacity(mesh.n_faces() * 12);
    let mut mass = vec![0.0; n];
    let mut clamped = 0;

    for f in mesh.faces() {
        let p = [v[f[0]], v[f[1]], v[f[2]]];
        let area = 0.5 * (p[1] - p[0]).cross(&(p[2] - p[0])).norm();
        let mut cots = [0.0; 3];
        for k in 0..3 {
            // angle at corner k, opposite edge (k+1, k+2)
            let a = p[(k + 1) % 3] - p[k];
            let b = p[(k + 2) % 3] - p[k];
            let mut c = a.dot(&b) / a.cross(&b).norm();
            if !c.is_finite() || c.abs() > COT_CLAMP {
                c = if c.is_nan() { 0.0 } else { c.clamp(-COT_CLAMP, COT_CLAMP) };
                clamped += 1;
            }
            cots[k] = c;
        }
        for k in 0..3 {
            let i = f[(k + 1) % 3];
            let j = f[(k + 2) % 3];
            let w = -0.5 * cots[k];
            trip.push((i, j, w));
            trip.push((j, i, w));
            trip.push((i, i, -w));
            trip.push((j, j, -w));
        }

        let obtuse = (0..3).find(|&k| {
            let a = p[(k + 1) % 3] - p[k];
            let b = p[(k + 2) % 3] - p[k];
            a.dot(&b) < 0.0
        });
        match obtuse {
            None => {
                for k in 0..3 {
                    // Voronoi region of corner k: edges (k,k+1) and (k,k+2)
                    let e1 = (p[(k + 1) % 3] - p[k]).norm_squared();
                    let e2 = (p[(k + 2) % 3] - p[k]).norm_squared();
                    mass[f[k]] += (e1 * cots[(k + 2) % 3] + e2 * cots[(k + 1) % 3]) / 8.0;
                }
            }
            Some(o) => {
                for k in 0..3 {
                    mass[f[k]] += if k == o { area / 2.0 } else { area / 4.0 };
                }
            }
        }
    }
    CotanOperator {
        stiffness: CsrMatrix::from_triplets(n, n, &trip),
        mass,
        clamped,
    }
}

#[derive(Debug, Clone)]
pub struct EigenOptions {
    pub max_iterations: usize,
    /// Target relative residual `‖Wφ − λAφ‖ / (λ‖Aφ‖)` for every returned pair.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            max_iterations: 500,
            tolerance: 1e-10,
            seed: 0x5eed,
        }
    }
}

/// Low-frequency Laplace-Beltrami eigenbasis of one mesh.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    /// Ascending, strictly positive.
    pub eigenvalues: Vec<f64>,
    /// `n × K`, A-orthonormal columns.
    pub phi: DMatrix<f64>,
    /// Column `j` is `phi[:, j] / sqrt(eigenvalues[j])`.
    pub phi_scaled: DMatrix<f64>,
    pub mass: Vec<f64>,
    pub stiffness: CsrMatrix,
    /// Discarded near-zero modes (one per connected component), `n × c`.
    pub null_modes: DMatrix<f64>,
    pub null_values: Vec<f64>,
    /// Relative residual of each returned pair.
    pub residuals: Vec<f64>,
}

impl SpectralBasis {
    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.phi.nrows()
    }

    fn from_parts(
        eigenvalues: Vec<f64>,
        phi: DMatrix<f64>,
        op: &CotanOperator,
        null_modes: DMatrix<f64>,
        null_values: Vec<f64>,
    ) -> Self {
        let residuals = relative_residuals(&op.stiffness, &op.mass, &eigenvalues, &phi);
        let mut b = SpectralBasis {
            eigenvalues,
            phi,
            phi_scaled: DMatrix::zeros(0, 0),
            mass: op.mass.clone(),
            stiffness: op.stiffness.clone(),
            null_modes,
            null_values,
            residuals,
        };
        b.phi_scaled = scale_basis(&b);
        b
    }
}

/// Columns divided by `sqrt(λ_j)`, damping high frequencies.
pub fn scale_basis(basis: &SpectralBasis) -> DMatrix<f64> {
    let mut out = basis.phi.clone();
    for (j, &lam) in basis.eigenvalues.iter().enumerate() {
        let s = lam.sqrt();
        out.column_mut(j).iter_mut().for_each(|x| *x /= s);
    }
    out
}

pub fn relative_residuals(w: &CsrMatrix, mass: &[f64], lambda: &[f64], phi: &DMatrix<f64>) -> Vec<f64> {
    let wp = w.mul_dense(phi);
    (0..phi.ncols())
        .map(|j| {
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..phi.nrows() {
                let ap = mass[i] * phi[(i, j)];
                num += (wp[(i, j)] - lambda[j] * ap).powi(2);
                den += ap * ap;
            }
            num.sqrt() / (lambda[j].abs().max(f64::MIN_POSITIVE) * den.sqrt())
        })
        .collect()
}

/// Computes the first `k` non-constant eigenpairs of the mesh.
pub fn mesh_eigenbasis(mesh: &TriMesh, k: usize, opts: &EigenOptions) -> Result<SpectralBasis> {
    let op = cotangent_matrix(mesh);
    if op.clamped > 0 {
        log::warn!("{} cotangent weights clamped to ±cot(1°)", op.clamped);
    }
    eigenbasis(&op, k, opts)
}

/// Solves `W φ = λ A φ` and returns the `k` smallest pairs above the
/// near-zero threshold, with a deterministic sign convention.
pub fn eigenbasis(op: &CotanOperator, k: usize, opts: &EigenOptions) -> Result<SpectralBasis> {
    let n = op.mass.len();
    if k == 0 {
        return Err(Error::Config("basis size K must be positive".into()));
    }
    if let Some(i) = op.mass.iter().position(|&a| !(a > 0.0)) {
        return Err(Error::InvalidMesh(format!(
            "vertex {i} has non-positive mass (isolated vertex?)"
        )));
    }
    let (ncomp, comp) = pattern_components(&op.stiffness);
    if k + ncomp >= n {
        return Err(Error::TooManyEigenpairs {
            requested: k,
            available: n.saturating_sub(ncomp + 1),
        });
    }

    let (values, vectors) = if n <= DENSE_LIMIT {
        dense_spectrum(op, k + ncomp + 1)
    } else {
        subspace_iteration(op, k, ncomp, &comp, opts)?
    };

    // second return: the K+1-th non-null eigenvalue estimate
    let tail = values.get(ncomp + k).copied();
    let zero_tol = match tail {
        Some(t) if t > 0.0 => 1e-6 * t,
        _ => 1e-8,
    };
    let keep: Vec<usize> = (0..values.len()).filter(|&j| values[j] >= zero_tol).collect();
    let drop: Vec<usize> = (0..values.len()).filter(|&j| values[j] < zero_tol).collect();
    if keep.len() < k {
        return Err(Error::TooManyEigenpairs {
            requested: k,
            available: keep.len(),
        });
    }
    let mut phi = DMatrix::zeros(n, k);
    let mut lam = Vec::with_capacity(k);
    for (c, &j) in keep.iter().take(k).enumerate() {
        let mut col = vectors.column(j).into_owned();
        fix_sign(&mut col);
        phi.set_column(c, &col);
        lam.push(values[j]);
    }
    let mut null_modes = DMatrix::zeros(n, drop.len());
    for (c, &j) in drop.iter().enumerate() {
        null_modes.set_column(c, &vectors.column(j));
    }
    let null_values = drop.iter().map(|&j| values[j]).collect();

    let basis = SpectralBasis::from_parts(lam, phi, op, null_modes, null_values);
    Ok(basis)
}

/// Flip so the entry of largest magnitude is positive (lowest index wins ties).
fn fix_sign(col: &mut DVector<f64>) {
    let mut best = 0;
    for i in 1..col.len() {
        if col[i].abs() > col[best].abs() {
            best = i;
        }
    }
    if col[best] < 0.0 {
        col.neg_mut();
    }
}

fn pattern_components(w: &CsrMatrix) -> (usize, Vec<usize>) {
    let n = w.nrows();
    let mut comp = vec![usize::MAX; n];
    let mut count = 0;
    let mut stack = Vec::new();
    for s in 0..n {
        if comp[s] != usize::MAX {
            continue;
        }
        comp[s] = count;
        stack.push(s);
        while let Some(u) = stack.pop() {
            for &v in w.row(u).0 {
                if comp[v] == usize::MAX {
                    comp[v] = count;
                    stack.push(v);
                }
            }
        }
        count += 1;
    }
    (count, comp)
}

/// Dense route: eigen-decomposition of `A^{-1/2} W A^{-1/2}`.
fn dense_spectrum(op: &CotanOperator, count: usize) -> (Vec<f64>, DMatrix<f64>) {
    let n = op.mass.len();
    let inv_sqrt: Vec<f64> = op.mass.iter().map(|a| 1.0 / a.sqrt()).collect();
    let mut m = op.stiffness.to_dense();
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let count = count.min(n);
    let mut vecs = DMatrix::zeros(n, count);
    let mut vals = Vec::with_capacity(count);
    for (c, &j) in order.iter().take(count).enumerate() {
        vals.push(eig.eigenvalues[j].max(0.0));
        for i in 0..n {
            vecs[(i, c)] = eig.eigenvectors[(i, j)] * inv_sqrt[i];
        }
    }
    (vals, vecs)
}

/// Shift-invert subspace iteration with Rayleigh-Ritz, run in the
/// A-orthogonal complement of the per-component constant vectors. The
/// constant vectors are the exact kernel of `W` and are returned first.
fn subspace_iteration(
    op: &CotanOperator,
    k: usize,
    ncomp: usize,
    comp: &[usize],
    opts: &EigenOptions,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = op.mass.len();
    let a = &op.mass;
    let w = &op.stiffness;
    let trace_a: f64 = a.iter().sum();
    let shift = 1e-8 * trace_a;
    let shifted = w.add_scaled(&CsrMatrix::from_diagonal(a), shift);
    let chol = SparseCholesky::factor(&shifted)?;

    // A-normalized indicator vectors of each component
    let mut null = DMatrix::zeros(n, ncomp);
    let mut comp_mass = vec![0.0; ncomp];
    for i in 0..n {
        comp_mass[comp[i]] += a[i];
    }
    for i in 0..n {
        null[(i, comp[i])] = 1.0 / comp_mass[comp[i]].sqrt();
    }
    let deflate = |x: &mut DMatrix<f64>| {
        for c in 0..ncomp {
            for j in 0..x.ncols() {
                let mut dot = 0.0;
                for i in 0..n {
                    dot += null[(i, c)] * a[i] * x[(i, j)];
                }
                for i in 0..n {
                    x[(i, j)] -= dot * null[(i, c)];
                }
            }
        }
    };

    let want = k + 1;
    let p = (2 * want + 8).min(n - ncomp);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x = DMatrix::from_fn(n, p, |_, _| rng.random::<f64>() - 0.5);
    deflate(&mut x);

    let mut worst = f64::INFINITY;
    let mut residuals = Vec::new();
    for iter in 0..opts.max_iterations {
        let ax = scale_rows(&x, a);
        let mut y = chol.solve_dense(&ax);
        deflate(&mut y);

        let wy = w.mul_dense(&y);
        let ay = scale_rows(&y, a);
        let mp = y.transpose() * &ay;
        let kp = y.transpose() * &wy;
        let (theta, coeffs) = match ritz(&mp, &kp) {
            Some(r) => r,
            None => {
                return Err(Error::EigenNotConverged {
                    iterations: iter,
                    worst_residual: f64::INFINITY,
                    residuals,
                })
            }
        };
        x = &y * &coeffs;
        let got = x.ncols();
        if got < p {
            // refill lost directions with fresh random vectors
            let mut fill = DMatrix::from_fn(n, p - got, |_, _| rng.random::<f64>() - 0.5);
            deflate(&mut fill);
            x = DMatrix::from_fn(n, p, |i, j| if j < got { x[(i, j)] } else { fill[(i, j - got)] });
        }

        let check = want.min(got);
        let xs = x.columns(0, check).into_owned();
        residuals = relative_residuals(w, a, &theta[..check], &xs);
        worst = residuals.iter().copied().fold(0.0, f64::max);
        if check == want && worst < opts.tolerance {
            let mut vals = Vec::with_capacity(ncomp + want);
            let mut vecs = DMatrix::zeros(n, ncomp + want);
            let wn = w.mul_dense(&null);
            for c in 0..ncomp {
                let mut q = 0.0;
                for i in 0..n {
                    q += null[(i, c)] * wn[(i, c)];
                }
                vals.push(q.max(0.0));
                vecs.set_column(c, &null.column(c));
            }
            for j in 0..want {
                vals.push(theta[j]);
                vecs.set_column(ncomp + j, &x.column(j));
            }
            log::debug!("subspace iteration converged in {} iterations", iter + 1);
            return Ok((vals, vecs));
        }
    }
    Err(Error::EigenNotConverged {
        iterations: opts.max_iterations,
        worst_residual: worst,
        residuals,
    })
}

fn scale_rows(x: &DMatrix<f64>, s: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| s[i] * x[(i, j)])
}

/// Solves the projected pencil `kp z = θ mp z`; returns ascending θ and
/// mp-orthonormal coefficient vectors, dropping numerically dependent directions.
fn ritz(mp: &DMatrix<f64>, kp: &DMatrix<f64>) -> Option<(Vec<f64>, DMatrix<f64>)> {
    let p = mp.nrows();
    let mp = (mp + mp.transpose()) * 0.5;
    let em = SymmetricEigen::new(mp);
    let dmax = em.eigenvalues.iter().copied().fold(0.0, f64::max);
    if !(dmax > 0.0) {
        return None;
    }
    let keep: Vec<usize> = (0..p)
        .filter(|&i| em.eigenvalues[i] > 1e-13 * dmax)
        .collect();
    let b = DMatrix::from_fn(p, keep.len(), |i, c| {
        em.eigenvectors[(i, keep[c])] / em.eigenvalues[keep[c]].sqrt()
    });
    let t = b.transpose() * kp * &b;
    let t = (&t + t.transpose()) * 0.5;
    let et = SymmetricEigen::new(t);
    let mut order: Vec<usize> = (0..keep.len()).collect();
    order.sort_by(|&a, &c| et.eigenvalues[a].total_cmp(&et.eigenvalues[c]));
    let z = DMatrix::from_fn(keep.len(), keep.len(), |i, c| et.eigenvectors[(i, order[c])]);
    let theta = order.iter().map(|&j| et.eigenvalues[j]).collect();
    Some((theta, b * z))
}

/// Hex SHA-256 of vertex coordinates and faces; keys the basis cache.
pub fn content_hash(mesh: &TriMesh) -> String {
    let mut h = Sha256::new();
    h.update((mesh.n_vertices() as u64).to_le_bytes());
    for v in mesh.vertices() {
        for x in v.iter() {
            h.update(x.to_le_bytes());
        }
    }
    h.update((mesh.n_faces() as u64).to_le_bytes());
    for f in mesh.faces() {
        for &i in f {
            h.update((i as u64).to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `n_V`, `K` (u64 LE), then λ and row-major Φ (f64 LE).
pub fn save_basis(basis: &SpectralBasis, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (n, k) = (basis.n_vertices(), basis.k());
    let mut buf = Vec::with_capacity(16 + 8 * k * (n + 1));
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    buf.extend_from_slice(&(k as u64).to_le_bytes());
    for &l in &basis.eigenvalues {
        buf.extend_from_slice(&l.to_le_bytes());
    }
    for i in 0..n {
        for j in 0..k {
            buf.extend_from_slice(&basis.phi[(i, j)].to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Reads a basis written by [`save_basis`]; `W` and `A` are reassembled from `mesh`.
pub fn load_basis(path: impl AsRef<Path>, mesh: &TriMesh) -> Result<SpectralBasis> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let word = |i: usize| -> Result<[u8; 8]> {
        bytes
            .get(8 * i..8 * i + 8)
            .map(|s| s.try_into().unwrap())
            .ok_or_else(|| Error::parse(path, format!("byte offset {}", 8 * i), "truncated basis file"))
    };
    let n = u64::from_le_bytes(word(0)?) as usize;
    let k = u64::from_le_bytes(word(1)?) as usize;
    if n != mesh.n_vertices() {
        return Err(Error::parse(
            path,
            "header",
            format!("basis has {n} rows, mesh has {} vertices", mesh.n_vertices()),
        ));
    }
    if bytes.len() != 16 + 8 * k * (n + 1) {
        return Err(Error::parse(path, "body", "file size does not match header"));
    }
    let mut lam = Vec::with_capacity(k);
    for j in 0..k {
        lam.push(f64::from_le_bytes(word(2 + j)?));
    }
    let mut phi = DMatrix::zeros(n, k);
    for i in 0..n {
        for j in 0..k {
            phi[(i, j)] = f64::from_le_bytes(word(2 + k + i * k + j)?);
        }
    }
    let op = cotangent_matrix(mesh);
    let (ncomp, comp) = pattern_components(&op.stiffness);
    let mut null = DMatrix::zeros(n, ncomp);
    let mut cm = vec![0.0; ncomp];
    for i in 0..n {
        cm[comp[i]] += op.mass[i];
    }
    for i in 0..n {
        null[(i, comp[i])] = 1.0 / cm[comp[i]].sqrt();
    }
    Ok(SpectralBasis::from_parts(lam, phi, &op, null, vec![0.0; ncomp]))
}

/// Loads the basis from `cache_dir` if present, otherwise computes and stores it.
pub fn cached_eigenbasis(
    mesh: &TriMesh,
    k: usize,
    opts: &EigenOptions,
    cache_dir: Option<&Path>,
) -> Result<SpectralBasis> {
    let Some(dir) = cache_dir else {
        return mesh_eigenbasis(mesh, k, opts);
    };
    let file = dir.join(format!("{}.k{}.basis", content_hash(mesh), k));
    if file.exists() {
        match load_basis(&file, mesh) {
            Ok(b) if b.k() == k => return Ok(b),
            Ok(_) => log::warn!("ignoring basis cache {} with wrong K", file.display()),
            Err(e) => log::warn!("ignoring unreadable basis cache {}: {e}", file.display()),
        }
    }
    let basis = mesh_eigenbasis(mesh, k, opts)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_basis(&basis, &file)?;
    Ok(basis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn two_equilateral() -> TriMesh {
        let h = 3f64.sqrt() / 2.0;
        TriMesh::new(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(0.5, h, 0.0),
                Vector3::new(0.5, -h, 0.0),
            ],
            vec![[0, 1, 2], [1, 0, 3]],
            None,
        )
        .unwrap()
    }

    #[test]
    fn equilateral_pair_weights() {
        let op = cotangent_matrix(&two_equilateral());
        let w = &op.stiffness;
        let cot60 = 1.0 / 3f64.sqrt();
        assert!((w.get(0, 1) + cot60).abs() < 1e-12);
        assert!((w.get(0, 2) + cot60 / 2.0).abs() < 1e-12);
        assert!((w.get(1, 3) + cot60 / 2.0).abs() < 1e-12);
        assert!(w.is_symmetric(1e-15));
        for s in w.mul_vec(&[1.0; 4]) {
            assert!(s.abs() < 1e-12);
        }
        assert_eq!(op.clamped, 0);
    }

    #[test]
    fn equilateral_mass_is_area() {
        let h = 3f64.sqrt() / 2.0;
        let m = TriMesh::new(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(0.5, h, 0.0),
            ],
            vec![[0, 1, 2]],
            None,
        )
        .unwrap();
        let total: f64 = cotangent_matrix(&m).mass.iter().sum();
        assert!((total - 3f64.sqrt() / 4.0).abs() < 1e-12);
    }

    #[test]
    fn obtuse_mass_partition() {
        let m = TriMesh::new(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(4.0, 0.0, 0.0),
                Vector3::new(2.0, 0.5, 0.0),
            ],
            vec![[0, 1, 2]],
            None,
        )
        .unwrap();
        let op = cotangent_matrix(&m);
        let area = 1.0;
        assert!((op.mass[2] - area / 2.0).abs() < 1e-12);
        assert!((op.mass[0] - area / 4.0).abs() < 1e-12);
    }

    #[test]
    fn sliver_cotangent_is_clamped() {
        let m = TriMesh::new(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(0.5, 1e-4, 0.0),
            ],
            vec![[0, 1, 2]],
            None,
        )
        .unwrap();
        let op = cotangent_matrix(&m);
        assert!(op.clamped > 0);
        let (_, vals) = op.stiffness.row(0);
        assert!(vals.iter().all(|v| v.abs() <= COT_CLAMP));
    }

    #[test]
    fn scaling_is_column_division() {
        let mut b = mesh_eigenbasis(&crate::mesh::primitives::grid(6, 6, 1.0), 3, &EigenOptions::default()).unwrap();
        b.eigenvalues[0] = 4.0;
        b.phi.column_mut(0).fill(0.5);
        let s = scale_basis(&b);
        assert!(s.column(0).iter().all(|&x| x == 0.25));
        let back = s.column(0) * 2.0;
        assert_eq!(back, b.phi.column(0));
    }

    #[test]
    fn sign_convention_picks_positive_peak() {
        let mut v = DVector::from_vec(vec![0.1, -0.9, 0.9, 0.2]);
        fix_sign(&mut v);
        // tie between |−0.9| and |0.9|: lowest index (1) wins, so flip
        assert_eq!(v[1], 0.9);
    }

    #[test]
    fn cache_round_trip() {
        let mesh = crate::mesh::primitives::grid(5, 7, 1.0);
        let b = mesh_eigenbasis(&mesh, 4, &EigenOptions::default()).unwrap();
        let d = tempfile::tempdir().unwrap();
        let c1 = cached_eigenbasis(&mesh, 4, &EigenOptions::default(), Some(d.path())).unwrap();
        let c2 = cached_eigenbasis(&mesh, 4, &EigenOptions::default(), Some(d.path())).unwrap();
        assert_eq!(c1.eigenvalues, b.eigenvalues);
        assert_eq!(c2.phi, b.phi);
        assert_eq!(std::fs::read_dir(d.path()).unwrap().count(), 1);
    }

    #[test]
    fn too_many_pairs_is_an_error() {
        let mesh = crate::mesh::primitives::grid(3, 3, 1.0);
        assert!(matches!(
            mesh_eigenbasis(&mesh, 8, &EigenOptions::default()),
            Err(Error::TooManyEigenpairs { .. })
        ));
    }
}
