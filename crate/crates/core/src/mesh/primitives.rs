//! Procedural meshes used by tests, benchmarks and the synthetic generator.

use std::collections::HashMap;

use nalgebra::Vector3;

use super::TriMesh;

/// Regular `rows × cols` vertex grid in the z = 0 plane with the given
/// spacing. Vertex `(r, c)` has index `r * cols + c` and sits at
/// `(c * spacing, r * spacing, 0)`; faces are counter-clockwise seen from +z.
pub fn grid(rows: usize, cols: usize, spacing: f64) -> TriMesh {
    assert!(rows >= 2 && cols >= 2, "grid needs at least 2x2 vertices");
    let mut v = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            v.push(Vector3::new(c as f64 * spacing, r as f64 * spacing, 0.0));
        }
    }
    TriMesh::new(v, grid_faces(rows, cols), None).expect("grid is a valid mesh")
}

pub fn grid_faces(rows: usize, cols: usize) -> Vec<[usize; 3]> {
    let mut f = Vec::with_capacity(2 * (rows - 1) * (cols - 1));
    for r in 0..rows - 1 {
        for c in 0..cols - 1 {
            let i = r * cols + c;
            f.push([i, i + 1, i + cols + 1]);
            f.push([i, i + cols + 1, i + cols]);
        }
    }
    f
}

/// Icosahedron subdivided `levels` times and projected to the sphere.
pub fn icosphere(levels: usize, radius: f64) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<Vector3<f64>> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|p| Vector3::new(p[0], p[1], p[2]).normalize())
    .collect();
    let mut f: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..levels {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut nf = Vec::with_capacity(f.len() * 4);
        let mut midpoint = |a: usize, b: usize, v: &mut Vec<Vector3<f64>>| -> usize {
            let key = (a.min(b), a.max(b));
            *mid.entry(key).or_insert_with(|| {
                v.push(((v[a] + v[b]) * 0.5).normalize());
                v.len() - 1
            })
        };
        for [a, b, c] in f {
            let ab = midpoint(a, b, &mut v);
            let bc = midpoint(b, c, &mut v);
            let ca = midpoint(c, a, &mut v);
            nf.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        f = nf;
    }
    let v = v.into_iter().map(|p| p * radius).collect();
    TriMesh::new(v, f, None).expect("icosphere is a valid mesh")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_counts() {
        let m = icosphere(2, 1.0);
        assert_eq!(m.n_vertices(), 162);
        assert_eq!(m.n_faces(), 320);
        assert!(m.boundary_indices().is_empty());
        // outward orientation
        let (n, _) = crate::mesh::vertex_normals(&m);
        assert!(n.iter().zip(m.vertices()).all(|(a, b)| a.dot(b) > 0.9));
    }

    #[test]
    fn grid_counts() {
        let g = grid(3, 4, 0.5);
        assert_eq!(g.n_vertices(), 12);
        assert_eq!(g.n_faces(), 12);
        assert_eq!(g.boundary_indices().len(), 10);
    }
}
