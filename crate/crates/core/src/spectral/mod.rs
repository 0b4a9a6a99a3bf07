//! Cotangent Laplace–Beltrami operator and its low-frequency eigenbasis.
//!
//! The operator is kept as the pair `(W, A)`: `W` is the positive
//! semidefinite cotangent stiffness matrix and `A` the lumped mass diagonal.
//! Eigenpairs solve `W φ = λ A φ` and are `A`-orthonormal.

mod cache;
mod eigs;

use nalgebra::Point3;
use sprs::{CsMat, TriMat};

use crate::error::{Error, Result};
use crate::geometry::{vertex_areas, LocalMesh, PointCloud, TriangleMesh, VertexAreas};

pub use cache::{cached_embedding, content_key, sidecar_path};
pub use eigs::{lb_eigs, lb_eigs_with, EigsOptions};

/// Stiffness matrix `W` (CSR, symmetric, rows sum to zero) with the lumped
/// mass diagonal.
#[derive(Debug, Clone)]
pub struct LaplacianPair {
    w: CsMat<f64>,
    areas: VertexAreas,
}

impl LaplacianPair {
    pub fn new(w: CsMat<f64>, areas: VertexAreas) -> Result<Self> {
        if w.rows() != w.cols() || w.rows() != areas.len() {
            return Err(Error::DimensionMismatch {
                expected: areas.len(),
                found: w.rows(),
            });
        }
        Ok(Self { w: w.to_csr(), areas })
    }

    pub fn len(&self) -> usize {
        self.areas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.areas.is_empty()
    }

    pub fn w(&self) -> &CsMat<f64> {
        &self.w
    }

    pub fn areas(&self) -> &VertexAreas {
        &self.areas
    }

    /// Entry `W[i][j]`, zero outside the sparsity pattern.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.w.get(i, j).copied().unwrap_or(0.0)
    }

    /// `W·x`.
    pub fn apply_w(&self, x: &[f64]) -> Vec<f64> {
        spmv(&self.w, x)
    }
}

pub(crate) fn spmv(m: &CsMat<f64>, x: &[f64]) -> Vec<f64> {
    m.outer_iterator()
        .map(|row| row.iter().map(|(j, v)| v * x[j]).sum())
        .collect()
}

/// Half the cotangent of the angle at `c` in triangle `(a, b, c)`.
fn half_cot(a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> f64 {
    let (u, v) = (a - c, b - c);
    0.5 * u.dot(&v) / u.cross(&v).norm()
}

fn assemble(n: usize, offdiag: impl IntoIterator<Item = (usize, usize, f64)>) -> CsMat<f64> {
    let mut diag = vec![0.0; n];
    let mut tri = TriMat::new((n, n));
    for (i, j, w) in offdiag {
        tri.add_triplet(i, j, -w);
        tri.add_triplet(j, i, -w);
        diag[i] += w;
        diag[j] += w;
    }
    for (i, d) in diag.into_iter().enumerate() {
        tri.add_triplet(i, i, d);
    }
    tri.to_csr()
}

/// Cotangent Laplacian of a triangle mesh. Boundary edges get the single
/// cotangent of their one incident face.
pub fn cotan_laplacian(mesh: &TriangleMesh) -> Result<LaplacianPair> {
    let areas = vertex_areas(mesh)?;
    let v = mesh.vertices();
    let mut entries = Vec::with_capacity(mesh.num_faces() * 3);
    for &[a, b, c] in mesh.faces() {
        for (i, j, k) in [(a, b, c), (b, c, a), (c, a, b)] {
            entries.push((i.min(j), i.max(j), half_cot(&v[i], &v[j], &v[k])));
        }
    }
    LaplacianPair::new(assemble(mesh.num_vertices(), entries), areas)
}

/// Laplacian of a point cloud assembled from per-point local meshes. Each
/// center contributes the cotangent weights of its own star; the two
/// estimates of an edge are averaged (an edge seen from one side only keeps
/// half its weight).
pub fn local_mesh_laplacian(cloud: &PointCloud, locals: &[LocalMesh]) -> Result<LaplacianPair> {
    let n = cloud.len();
    if locals.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: locals.len(),
        });
    }
    let pts = cloud.points();
    let mut entries = Vec::new();
    let mut areas = vec![0.0; n];
    for lm in locals {
        let g = lm.vertices();
        let i = lm.center();
        for f in lm.center_faces() {
            // rotate so the center is first
            let r = f.iter().position(|&x| x == 0).expect("center face");
            let (a, b) = (g[f[(r + 1) % 3]], g[f[(r + 2) % 3]]);
            let (pi, pa, pb) = (&pts[i], &pts[a], &pts[b]);
            // edge (i, a) is opposite b; edge (i, b) is opposite a
            entries.push((i.min(a), i.max(a), 0.5 * half_cot(pi, pa, pb)));
            entries.push((i.min(b), i.max(b), 0.5 * half_cot(pi, pb, pa)));
        }
        areas[i] = lm.center_area(pts);
    }
    LaplacianPair::new(assemble(n, entries), VertexAreas::from_vec(areas)?)
}

/// First `K` Laplace–Beltrami eigenpairs. `phi` is row-major `n × K`, so
/// `row(i)` is the spectral coordinate of vertex `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEmbedding {
    n: usize,
    k: usize,
    eigenvalues: Vec<f64>,
    phi: Vec<f64>,
}

impl SpectralEmbedding {
    pub fn from_parts(n: usize, k: usize, eigenvalues: Vec<f64>, phi: Vec<f64>) -> Result<Self> {
        if eigenvalues.len() != k {
            return Err(Error::LengthMismatch {
                expected: k,
                found: eigenvalues.len(),
            });
        }
        if phi.len() != n * k {
            return Err(Error::LengthMismatch {
                expected: n * k,
                found: phi.len(),
            });
        }
        Ok(Self { n, k, eigenvalues, phi })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Row-major `n × K` coefficients.
    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.phi[i * self.k..(i + 1) * self.k]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.phi[i * self.k + j]).collect()
    }

    /// The leading `k` columns.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k > self.k {
            return Err(Error::DimensionMismatch {
                expected: self.k,
                found: k,
            });
        }
        let phi = (0..self.n).flat_map(|i| self.row(i)[..k].iter().copied()).collect();
        Self::from_parts(self.n, k, self.eigenvalues[..k].to_vec(), phi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::shapes;

    fn two_equilateral() -> TriangleMesh {
        let h = 3.0f64.sqrt() / 2.0;
        TriangleMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.5, h, 0.0),
                Point3::new(0.5, -h, 0.0),
            ],
            vec![[0, 1, 2], [1, 0, 3]],
        )
        .unwrap()
    }

    #[test]
    fn shared_edge_between_equilateral_faces() {
        let lap = cotan_laplacian(&two_equilateral()).unwrap();
        // off-diagonals carry -w_ij
        assert!((-lap.weight(0, 1) - 1.0 / 3.0f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn right_angle_boundary_edge_has_zero_weight() {
        let m = TriangleMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let lap = cotan_laplacian(&m).unwrap();
        // the angle at vertex 0 is 90°, opposite edge (1, 2)
        assert!(lap.weight(1, 2).abs() < 1e-16);
    }

    #[test]
    fn constants_in_kernel_and_symmetric() {
        let m = shapes::bumpy_blob(5);
        let lap = cotan_laplacian(&m).unwrap();
        let y = lap.apply_w(&vec![1.0; m.num_vertices()]);
        assert!(y.iter().all(|v| v.abs() < 1e-9));
        for (i, row) in lap.w().outer_iterator().enumerate() {
            for (j, &v) in row.iter() {
                assert_eq!(v, lap.weight(j, i));
            }
        }
    }

    #[test]
    fn pattern_is_edge_graph_plus_diagonal() {
        let m = shapes::icosphere(3);
        let lap = cotan_laplacian(&m).unwrap();
        for (i, row) in lap.w().outer_iterator().enumerate() {
            let mut cols: Vec<usize> = row.indices().to_vec();
            cols.retain(|&j| j != i);
            assert_eq!(cols, m.graph().neighbors(i));
        }
    }

    #[test]
    fn degenerate_face_rejected() {
        let m = TriangleMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(2.0, 0.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(matches!(cotan_laplacian(&m), Err(Error::DegenerateGeometry { .. })));
    }

    #[test]
    fn cloud_laplacian_row_sums_vanish() {
        let m = shapes::icosphere(6);
        let cloud = PointCloud::new(m.vertices().to_vec()).unwrap();
        let locals = cloud.local_meshes(crate::geometry::DEFAULT_K_LOCAL).unwrap();
        let lap = local_mesh_laplacian(&cloud, &locals).unwrap();
        let y = lap.apply_w(&vec![1.0; cloud.len()]);
        assert!(y.iter().all(|v| v.abs() < 1e-9));
        let total = lap.areas().total();
        assert!((total - 4.0 * std::f64::consts::PI).abs() < 0.1 * total);
    }
}
