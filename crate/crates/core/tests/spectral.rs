use std::f64::consts::PI;
use std::time::Instant;

use garmalign_core::mesh::primitives::{grid, icosphere};
use garmalign_core::mesh::TriMesh;
use garmalign_core::spectral::{mesh_eigenbasis, EigenOptions};
use nalgebra::{Rotation3, Vector3};

/// Neumann spectrum of the unit square, `π²(m² + n²)` sorted, constant mode removed.
fn square_neumann(count: usize) -> Vec<f64> {
    let mut vals = Vec::new();
    for m in 0..10 {
        for n in 0..10 {
            if m + n > 0 {
                vals.push(PI * PI * (m * m + n * n) as f64);
            }
        }
    }
    vals.sort_by(f64::total_cmp);
    vals.truncate(count);
    vals
}

#[test]
fn unit_square_grid_matches_neumann_spectrum() {
    let mesh = grid(50, 50, 1.0 / 49.0);
    let t = Instant::now();
    let basis = mesh_eigenbasis(&mesh, 8, &EigenOptions::default()).unwrap();
    let elapsed = t.elapsed().as_secs_f64();
    for (got, want) in basis.eigenvalues.iter().zip(square_neumann(8)) {
        assert!((got - want).abs() / want < 0.03, "{got} vs {want}");
    }
    assert!(elapsed < 30.0);
}

#[test]
fn icosphere_eigenvalues_cluster_at_l_l_plus_one() {
    let mesh = icosphere(4, 1.0);
    let basis = mesh_eigenbasis(&mesh, 15, &EigenOptions::default()).unwrap();
    let expected: Vec<f64> = [(2.0, 3), (6.0, 5), (12.0, 7)]
        .iter()
        .flat_map(|&(v, m)| std::iter::repeat_n(v, m))
        .collect();
    for (got, want) in basis.eigenvalues.iter().zip(expected) {
        assert!((got - want).abs() / want < 0.02, "{got} vs {want}");
    }
    // scaled columns shrink by exactly 1/sqrt(λ)
    for j in 0..basis.k() {
        let ratio = basis.phi_scaled.column(j).norm() / basis.phi.column(j).norm();
        assert!((ratio - 1.0 / basis.eigenvalues[j].sqrt()).abs() < 1e-14);
    }
}

#[test]
fn basis_is_mass_orthonormal_with_small_residuals() {
    let mesh = icosphere(3, 1.0);
    let basis = mesh_eigenbasis(&mesh, 20, &EigenOptions::default()).unwrap();
    let a = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_vec(basis.mass.clone()));
    let gram = basis.phi.transpose() * &a * &basis.phi;
    for i in 0..20 {
        for j in 0..20 {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((gram[(i, j)] - want).abs() < 1e-6);
        }
    }
    assert!(basis.residuals.iter().all(|&r| r < 1e-5));
    assert!(basis.eigenvalues.windows(2).all(|w| 0.0 < w[0] && w[0] <= w[1]));
    // one discarded mode, constant
    assert_eq!(basis.null_modes.ncols(), 1);
    let c = basis.null_modes.column(0);
    let mean = c.mean();
    assert!(c.iter().all(|x| ((x - mean) / mean).abs() < 1e-6));
}

fn transformed(mesh: &TriMesh, f: impl Fn(&Vector3<f64>) -> Vector3<f64>) -> TriMesh {
    mesh.with_vertices(mesh.vertices().iter().map(f).collect()).unwrap()
}

#[test]
fn eigenvalues_are_rigid_invariant_and_scale_covariant() {
    let mesh = icosphere(2, 1.0);
    let base = mesh_eigenbasis(&mesh, 10, &EigenOptions::default()).unwrap();
    let rot = Rotation3::from_euler_angles(0.3, -1.1, 2.0);
    let moved = transformed(&mesh, |p| rot * p + Vector3::new(1.0, -2.0, 0.5));
    let moved = mesh_eigenbasis(&moved, 10, &EigenOptions::default()).unwrap();
    let scaled = transformed(&mesh, |p| p * 3.0);
    let scaled = mesh_eigenbasis(&scaled, 10, &EigenOptions::default()).unwrap();
    for j in 0..10 {
        let l = base.eigenvalues[j];
        assert!((moved.eigenvalues[j] - l).abs() / l < 1e-8);
        assert!((scaled.eigenvalues[j] * 9.0 - l).abs() / l < 1e-8);
    }
}

#[test]
fn bending_a_strip_barely_changes_the_spectrum() {
    let n = 40;
    let flat = grid(n, n, 1.0 / (n - 1) as f64);
    let angle = PI / 2.0;
    let r = 1.0 / angle;
    let bent = transformed(&flat, |p| {
        let t = p.x * angle;
        Vector3::new(r * t.sin(), p.y, r * (1.0 - t.cos()))
    });
    let a = mesh_eigenbasis(&flat, 10, &EigenOptions::default()).unwrap();
    let b = mesh_eigenbasis(&bent, 10, &EigenOptions::default()).unwrap();
    for j in 0..10 {
        let rel = (a.eigenvalues[j] - b.eigenvalues[j]).abs() / a.eigenvalues[j];
        assert!(rel < 0.01, "mode {j}: {rel}");
    }
}
