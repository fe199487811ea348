use std::f64::consts::PI;

use garmalign_core::mesh::primitives::grid;
use garmalign_core::mesh::{edge_lengths, TriMesh};
use garmalign_core::rig::{smooth_template, SmoothOptions, TemplateWeights};
use nalgebra::Vector3;

fn laplacian_energy(mesh: &TriMesh) -> f64 {
    let l = mesh.uniform_laplacian();
    (0..3)
        .map(|c| {
            let x: Vec<f64> = mesh.vertices().iter().map(|v| v[c]).collect();
            l.mul_vec(&x).iter().map(|y| y * y).sum::<f64>()
        })
        .sum()
}

fn wrinkled_grid(n: usize) -> TriMesh {
    let g = grid(n, n, 1.0 / (n - 1) as f64);
    let v = g
        .vertices()
        .iter()
        .map(|p| Vector3::new(p.x, p.y, 0.05 * (2.0 * PI * 4.0 * p.x).sin()))
        .collect();
    g.with_vertices(v).unwrap()
}

#[test]
fn smoothing_dominated_run_flattens_wrinkles() {
    let m = wrinkled_grid(20);
    let w = TemplateWeights {
        data: 1e-6,
        edge: 1e-6,
        smooth: 1.0,
    };
    let r = smooth_template(&m, None, w, &SmoothOptions::default()).unwrap();
    let before = laplacian_energy(&m);
    let after = laplacian_energy(&r.template);
    assert!(after * 100.0 <= before, "{before} -> {after}");
}

#[test]
fn edge_only_run_relaxes_to_rest_lengths() {
    let n = 12;
    let flat = grid(n, n, 1.0 / (n - 1) as f64);
    let angle = PI / 2.0;
    let bent: Vec<Vector3<f64>> = flat
        .vertices()
        .iter()
        .map(|p| {
            // 10% stretch along the bend so the start is far from isometric
            let t = 1.1 * p.x * angle;
            Vector3::new(t.sin() / angle, p.y, (1.0 - t.cos()) / angle)
        })
        .collect();
    let w = TemplateWeights {
        data: 0.0,
        edge: 1.0,
        smooth: 0.0,
    };
    let opts = SmoothOptions {
        initial: Some(bent),
        ..Default::default()
    };
    let rest = edge_lengths(&flat);
    let rms = |m: &[f64]| (rest.iter().zip(m).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / rest.len() as f64).sqrt();
    let start = garmalign_core::mesh::edge_lengths_of(flat.edges(), opts.initial.as_ref().unwrap());
    assert!(rms(&start) > 1e-3);
    let r = smooth_template(&flat, None, w, &opts).unwrap();
    let totals = r.history.totals();
    assert!(totals.windows(2).all(|p| p[1] <= p[0]));
    let end = rms(&edge_lengths(&r.template));
    assert!(end < 1e-4, "rms {end}");
}
