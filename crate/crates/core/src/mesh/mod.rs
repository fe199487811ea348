//! Triangle meshes with derived topology.
//!
//! A [`TriMesh`] is validated and its derived data (canonical edge list,
//! boundary flags, uniform Laplacian) is computed once at construction; the
//! mesh is immutable afterwards.

mod io;
pub mod primitives;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Vector3};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

pub use io::{load_mesh, save_mesh, save_mesh_with, MeshFormat, PlyEncoding};

/// Faces with area below this fraction of the squared bounding-box diagonal are rejected.
pub const DEGENERATE_AREA_RATIO: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct TriMesh {
    vertices: Vec<Vector3<f64>>,
    faces: Vec<[usize; 3]>,
    colors: Option<Vec<Vector3<f64>>>,
    edges: Vec<[usize; 2]>,
    edge_face_count: Vec<u8>,
    boundary: Vec<bool>,
    laplacian: CsrMatrix,
}

impl TriMesh {
    /// Validates the input and computes derived topology.
    ///
    /// Rejects empty meshes, out-of-range or repeated face indices, non-manifold
    /// edges (more than two incident faces) and faces whose area is below
    /// [`DEGENERATE_AREA_RATIO`] times the squared bounding-box diagonal.
    pub fn new(
        vertices: Vec<Vector3<f64>>,
        faces: Vec<[usize; 3]>,
        colors: Option<Vec<Vector3<f64>>>,
    ) -> Result<Self> {
        if vertices.is_empty() || faces.is_empty() {
            return Err(Error::Empty(format!(
                "mesh has {} vertices and {} faces",
                vertices.len(),
                faces.len()
            )));
        }
        let n = vertices.len();
        if let Some(c) = &colors {
            if c.len() != n {
                return Err(Error::InvalidMesh(format!(
                    "{} colors for {} vertices",
                    c.len(),
                    n
                )));
            }
        }
        if let Some(i) = vertices.iter().position(|v| !v.iter().all(|x| x.is_finite())) {
            return Err(Error::InvalidMesh(format!("vertex {i} is not finite")));
        }
        let diag2 = bbox_diagonal(&vertices).powi(2);
        for (fi, f) in faces.iter().enumerate() {
            if let Some(&bad) = f.iter().find(|&&v| v >= n) {
                return Err(Error::InvalidMesh(format!(
                    "face {fi} references vertex {bad} but the mesh has {n} vertices"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!(
                    "face {fi} repeats a vertex index: {f:?}"
                )));
            }
            let area = triangle_area(&vertices[f[0]], &vertices[f[1]], &vertices[f[2]]);
            if area < DEGENERATE_AREA_RATIO * diag2 {
                return Err(Error::InvalidMesh(format!(
                    "face {fi} is degenerate (area {area:.3e})"
                )));
            }
        }

        let mut edge_map: BTreeMap<[usize; 2], u8> = BTreeMap::new();
        for f in &faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let key = [a.min(b), a.max(b)];
                *edge_map.entry(key).or_insert(0) += 1;
            }
        }
        if let Some((e, c)) = edge_map.iter().find(|(_, &c)| c > 2) {
            return Err(Error::InvalidMesh(format!(
                "non-manifold edge {e:?} has {c} incident faces"
            )));
        }
        let edges: Vec<[usize; 2]> = edge_map.keys().copied().collect();
        let edge_face_count: Vec<u8> = edge_map.values().copied().collect();

        let mut boundary = vec![false; n];
        for (e, &c) in edges.iter().zip(&edge_face_count) {
            if c == 1 {
                boundary[e[0]] = true;
                boundary[e[1]] = true;
            }
        }

        let laplacian = uniform_laplacian_from_edges(n, &edges);
        Ok(TriMesh {
            vertices,
            faces,
            colors,
            edges,
            edge_face_count,
            boundary,
            laplacian,
        })
    }

    /// Same topology (and colors), new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<Vector3<f64>>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::Dimension(format!(
                "{} positions for a mesh with {} vertices",
                vertices.len(),
                self.vertices.len()
            )));
        }
        TriMesh::new(vertices, self.faces.clone(), self.colors.clone())
    }

    /// Same topology and colors at new positions, without the degenerate-face
    /// check. Meant for optimizer outputs, where a collapsed face is a result
    /// to report rather than invalid input.
    pub fn deformed(&self, vertices: Vec<Vector3<f64>>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::Dimension(format!(
                "{} positions for a mesh with {} vertices",
                vertices.len(),
                self.vertices.len()
            )));
        }
        if let Some(i) = vertices.iter().position(|v| !v.iter().all(|x| x.is_finite())) {
            return Err(Error::NonFinite(format!("deformed vertex {i}")));
        }
        Ok(TriMesh {
            vertices,
            ..self.clone()
        })
    }

    pub fn with_colors(mut self, colors: Option<Vec<Vector3<f64>>>) -> Result<Self> {
        if let Some(c) = &colors {
            if c.len() != self.vertices.len() {
                return Err(Error::InvalidMesh("color count mismatch".into()));
            }
        }
        self.colors = colors;
        Ok(self)
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn colors(&self) -> Option<&[Vector3<f64>]> {
        self.colors.as_deref()
    }

    /// Unique undirected edges in lexicographic `(min, max)` order.
    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    /// Number of faces adjacent to each edge (1 on the boundary, 2 inside).
    pub fn edge_face_counts(&self) -> &[u8] {
        &self.edge_face_count
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary
    }

    pub fn boundary_indices(&self) -> Vec<usize> {
        (0..self.n_vertices()).filter(|&i| self.boundary[i]).collect()
    }

    /// Uniform graph Laplacian: degree on the diagonal, -1 per edge.
    pub fn uniform_laplacian(&self) -> &CsrMatrix {
        &self.laplacian
    }

    /// Vertex positions as an `n × 3` matrix.
    pub fn vertex_matrix(&self) -> DMatrix<f64> {
        points_to_matrix(&self.vertices)
    }

    pub fn color_matrix(&self) -> Option<DMatrix<f64>> {
        self.colors.as_deref().map(points_to_matrix)
    }

    pub fn bbox(&self) -> (Vector3<f64>, Vector3<f64>) {
        bbox(&self.vertices)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        bbox_diagonal(&self.vertices)
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f];
        triangle_area(&self.vertices[a], &self.vertices[b], &self.vertices[c])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_faces()).map(|f| self.face_area(f)).sum()
    }

    /// Unnormalized face normal (length = 2 × area).
    pub fn face_normal_raw(&self, f: usize) -> Vector3<f64> {
        let [a, b, c] = self.faces[f];
        (self.vertices[b] - self.vertices[a]).cross(&(self.vertices[c] - self.vertices[a]))
    }

    /// Number of connected components of the vertex-edge graph (isolated
    /// vertices count as their own component).
    pub fn connected_components(&self) -> (usize, Vec<usize>) {
        let n = self.n_vertices();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for e in &self.edges {
            let (a, b) = (find(&mut parent, e[0]), find(&mut parent, e[1]));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut label = vec![usize::MAX; n];
        let mut count = 0;
        let mut comp = vec![0; n];
        for i in 0..n {
            let r = find(&mut parent, i);
            if label[r] == usize::MAX {
                label[r] = count;
                count += 1;
            }
            comp[i] = label[r];
        }
        (count, comp)
    }
}

/// Length of every canonical edge, in [`TriMesh::edges`] order.
pub fn edge_lengths(mesh: &TriMesh) -> Vec<f64> {
    edge_lengths_of(mesh.edges(), mesh.vertices())
}

/// Edge lengths of `edges` evaluated at arbitrary positions (same topology).
pub fn edge_lengths_of(edges: &[[usize; 2]], positions: &[Vector3<f64>]) -> Vec<f64> {
    edges
        .iter()
        .map(|e| (positions[e[0]] - positions[e[1]]).norm())
        .collect()
}

pub fn uniform_laplacian(mesh: &TriMesh) -> CsrMatrix {
    mesh.uniform_laplacian().clone()
}

fn uniform_laplacian_from_edges(n: usize, edges: &[[usize; 2]]) -> CsrMatrix {
    let mut trip = Vec::with_capacity(4 * edges.len());
    for e in edges {
        trip.push((e[0], e[1], -1.0));
        trip.push((e[1], e[0], -1.0));
        trip.push((e[0], e[0], 1.0));
        trip.push((e[1], e[1], 1.0));
    }
    CsrMatrix::from_triplets(n, n, &trip)
}

/// Area-weighted vertex normals. Vertices without a well-defined normal get a
/// zero vector and are listed in the second return value.
pub fn vertex_normals(mesh: &TriMesh) -> (Vec<Vector3<f64>>, Vec<usize>) {
    let mut acc = vec![Vector3::zeros(); mesh.n_vertices()];
    for (f, face) in mesh.faces().iter().enumerate() {
        // cross product length is twice the area, so this is area weighting
        let nrm = mesh.face_normal_raw(f);
        for &v in face {
            acc[v] += nrm;
        }
    }
    let mut flagged = Vec::new();
    for (i, n) in acc.iter_mut().enumerate() {
        let len = n.norm();
        if len > 0.0 && len.is_finite() {
            *n /= len;
        } else {
            *n = Vector3::zeros();
            flagged.push(i);
        }
    }
    (acc, flagged)
}

pub fn triangle_area(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

pub fn bbox(points: &[Vector3<f64>]) -> (Vector3<f64>, Vector3<f64>) {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (lo, hi)
}

pub fn bbox_diagonal(points: &[Vector3<f64>]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let (lo, hi) = bbox(points);
    (hi - lo).norm()
}

pub fn points_to_matrix(points: &[Vector3<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(points.len(), 3, |i, j| points[i][j])
}

pub fn matrix_to_points(m: &DMatrix<f64>) -> Vec<Vector3<f64>> {
    assert_eq!(m.ncols(), 3, "expected an n x 3 matrix");
    (0..m.nrows())
        .map(|i| Vector3::new(m[(i, 0)], m[(i, 1)], m[(i, 2)]))
        .collect()
}
