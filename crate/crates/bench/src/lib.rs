//! Shared inputs for the criterion benchmarks.

use garmalign_core::config::{OptimizerSettings, PipelineConfig};
use garmalign_core::mesh::primitives::grid;
use garmalign_core::mesh::TriMesh;
use nalgebra::{DMatrix, Vector3};

/// Unit-width `n × n` grid with a two-dimensional ripple.
pub fn wavy_grid(n: usize) -> TriMesh {
    let g = grid(n, n, 1.0 / (n - 1) as f64);
    g.with_vertices(
        g.vertices()
            .iter()
            .map(|v| Vector3::new(v.x, v.y, 0.05 * (6.0 * v.x).sin() * (4.0 * v.y).cos()))
            .collect(),
    )
    .expect("ripple keeps the grid valid")
}

/// Deterministic pseudo-random matrix with entries in `[-1, 1)`.
pub fn pseudo_random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    DMatrix::from_fn(rows, cols, |_, _| {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 52) as f64 - 1.0
    })
}

/// Default weights with `iterations` optimizer steps in stages 1 and 2.
pub fn config_with_iterations(iterations: usize) -> PipelineConfig {
    let stage = |lr| OptimizerSettings {
        iterations,
        learning_rate: lr,
    };
    let d = PipelineConfig::default();
    PipelineConfig {
        stage1: stage(d.stage1.learning_rate),
        stage2: stage(d.stage2.learning_rate),
        ..d
    }
}
