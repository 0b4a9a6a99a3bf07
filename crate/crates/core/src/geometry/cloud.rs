//! Point clouds and their per-point local meshes.
//!
//! A local mesh is the 2D Delaunay triangulation of a point's k nearest
//! neighbors projected onto their least-squares tangent plane. Only the star
//! of the center is used downstream (one-ring, area, cotangent weights).

use delaunator::{triangulate, Point as DPoint};
use nalgebra::{Matrix3, Point3, SymmetricEigen, Vector3};
use rayon::prelude::*;

use super::{triangle_area, SpatialGrid, TriangleMesh};
use crate::error::{Error, Result};

/// Neighborhood size used when a config does not override it.
pub const DEFAULT_K_LOCAL: usize = 10;

/// Smallest neighborhood for which the local triangulation is meaningful.
pub const MIN_K_LOCAL: usize = 6;

#[derive(Debug, Clone)]
pub struct PointCloud {
    points: Vec<Point3<f64>>,
    grid: SpatialGrid,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("point cloud is empty".into()));
        }
        if points.iter().any(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidArgument("non-finite point coordinate".into()));
        }
        let grid = SpatialGrid::new(&points);
        Ok(Self { points, grid })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    /// Local mesh of point `i` over its `k_local` nearest neighbors.
    pub fn build_local_mesh(&self, i: usize, k_local: usize) -> Result<LocalMesh> {
        let n = self.points.len();
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, len: n });
        }
        if k_local < MIN_K_LOCAL {
            return Err(Error::InvalidArgument(format!(
                "k_local must be at least {MIN_K_LOCAL}, got {k_local}"
            )));
        }
        if n < k_local + 1 {
            return Err(Error::InvalidArgument(format!(
                "cloud has {n} points, local meshes need at least {}",
                k_local + 1
            )));
        }
        let degenerate = |reason: String| Error::DegenerateNeighborhood { index: i, reason };

        let mut vertices = vec![i];
        vertices.extend(
            self.grid
                .knn(&self.points[i], k_local, Some(i))
                .into_iter()
                .map(|(j, _)| j),
        );
        let pts: Vec<Point3<f64>> = vertices.iter().map(|&v| self.points[v]).collect();

        let scale = pts.iter().map(|p| (p - pts[0]).norm()).fold(0.0, f64::max);
        let tol = 1e-9 * scale;
        for a in 0..pts.len() {
            for b in a + 1..pts.len() {
                if (pts[a] - pts[b]).norm() <= tol {
                    return Err(degenerate(format!(
                        "points {} and {} coincide",
                        vertices[a], vertices[b]
                    )));
                }
            }
        }

        let (normal, e1, e2, evals) = tangent_frame(&pts);
        if evals[1] <= 1e-10 * evals[2] {
            return Err(degenerate("neighborhood is collinear".into()));
        }
        let planar: Vec<[f64; 2]> = pts
            .iter()
            .map(|p| {
                let d = p - pts[0];
                [d.dot(&e1), d.dot(&e2)]
            })
            .collect();
        let dpts: Vec<DPoint> = planar.iter().map(|q| DPoint { x: q[0], y: q[1] }).collect();
        let tri = triangulate(&dpts);

        let mut faces = Vec::with_capacity(tri.triangles.len() / 3);
        for t in tri.triangles.chunks_exact(3) {
            let [a, b, c] = [t[0], t[1], t[2]];
            let signed = (planar[b][0] - planar[a][0]) * (planar[c][1] - planar[a][1])
                - (planar[b][1] - planar[a][1]) * (planar[c][0] - planar[a][0]);
            let face = if signed >= 0.0 { [a, b, c] } else { [a, c, b] };
            let (pa, pb, pc) = (&pts[face[0]], &pts[face[1]], &pts[face[2]]);
            let longest = (pb - pa)
                .norm_squared()
                .max((pc - pb).norm_squared())
                .max((pa - pc).norm_squared());
            if (pb - pa).cross(&(pc - pa)).norm() > 4.0 * f64::EPSILON * longest {
                faces.push(face);
            }
        }
        if !faces.iter().any(|f| f.contains(&0)) {
            return Err(degenerate("center has no valid incident triangle".into()));
        }
        let interior = !tri.hull.contains(&0);
        Ok(LocalMesh {
            vertices,
            planar,
            faces,
            normal,
            interior,
        })
    }

    /// Local meshes for every point, computed in parallel. On failure the
    /// error of the lowest failing index is returned.
    pub fn local_meshes(&self, k_local: usize) -> Result<Vec<LocalMesh>> {
        let results: Vec<Result<LocalMesh>> = (0..self.len())
            .into_par_iter()
            .map(|i| self.build_local_mesh(i, k_local))
            .collect();
        results.into_iter().collect()
    }

    /// Unit normals from the local tangent-plane fits, oriented away from the
    /// cloud centroid.
    pub fn normals(&self, locals: &[LocalMesh]) -> Vec<Vector3<f64>> {
        let centroid = self.points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / self.points.len() as f64;
        locals
            .iter()
            .map(|lm| {
                let outward = self.points[lm.center()].coords - centroid;
                if lm.normal.dot(&outward) < 0.0 {
                    -lm.normal
                } else {
                    lm.normal
                }
            })
            .collect()
    }
}

/// Plane fit through the centroid. Returns the normal, two in-plane axes and
/// the covariance eigenvalues in ascending order.
fn tangent_frame(pts: &[Point3<f64>]) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>, [f64; 3]) {
    let c = pts.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / pts.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in pts {
        let d = p.coords - c;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let col = |k: usize| eig.eigenvectors.column(order[k]).into_owned();
    let normal = col(0);
    let e1 = col(2);
    let e2 = normal.cross(&e1);
    let evals = order.map(|k| eig.eigenvalues[k].max(0.0));
    (normal, e1, e2, evals)
}

/// Triangulated neighborhood of one cloud point. `vertices[0]` is the center;
/// faces index into `vertices` and are counterclockwise in the tangent plane.
#[derive(Debug, Clone)]
pub struct LocalMesh {
    vertices: Vec<usize>,
    planar: Vec<[f64; 2]>,
    faces: Vec<[usize; 3]>,
    normal: Vector3<f64>,
    interior: bool,
}

impl LocalMesh {
    pub fn center(&self) -> usize {
        self.vertices[0]
    }

    /// Global indices of the local vertices; the first entry is the center.
    pub fn vertices(&self) -> &[usize] {
        &self.vertices
    }

    /// Tangent-plane coordinates relative to the center.
    pub fn planar(&self) -> &[[f64; 2]] {
        &self.planar
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    /// Unoriented unit normal of the fitted tangent plane.
    pub fn normal(&self) -> Vector3<f64> {
        self.normal
    }

    /// Whether the center lies strictly inside the triangulated region.
    pub fn is_center_interior(&self) -> bool {
        self.interior
    }

    /// Faces incident to the center, in local indices.
    pub fn center_faces(&self) -> impl Iterator<Item = &[usize; 3]> {
        self.faces.iter().filter(|f| f.contains(&0))
    }

    /// Global indices of the center's one-ring, sorted.
    pub fn center_ring(&self) -> Vec<usize> {
        let mut ring: Vec<usize> = self
            .center_faces()
            .flat_map(|f| f.iter().copied())
            .filter(|&v| v != 0)
            .map(|v| self.vertices[v])
            .collect();
        ring.sort_unstable();
        ring.dedup();
        ring
    }

    /// One third of the 3D area of the faces around the center.
    pub fn center_area(&self, points: &[Point3<f64>]) -> f64 {
        self.center_faces()
            .map(|f| {
                let [a, b, c] = f.map(|v| points[self.vertices[v]]);
                triangle_area(&a, &b, &c)
            })
            .sum::<f64>()
            / 3.0
    }

    /// The local triangulation as a standalone mesh (3D positions), with the
    /// global index of each of its vertices.
    pub fn to_triangle_mesh(&self, points: &[Point3<f64>]) -> Result<(TriangleMesh, Vec<usize>)> {
        let verts = self.vertices.iter().map(|&v| points[v]).collect();
        let (mesh, kept) = TriangleMesh::new_pruned(verts, self.faces.clone())?;
        Ok((mesh, kept.into_iter().map(|k| self.vertices[k]).collect()))
    }
}
