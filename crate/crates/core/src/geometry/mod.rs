//! Shape ingestion and the connectivity data every other module works on.
//!
//! A [`TriangleMesh`] carries its edge graph. A [`PointCloud`] has no global
//! connectivity; it borrows one from per-point local meshes. Both reduce to a
//! [`Surface`]: positions, normals, an [`EdgeGraph`] and lumped [`VertexAreas`].

mod cloud;
pub mod io;
pub mod shapes;
mod spatial;

use std::collections::VecDeque;

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};

pub use cloud::{LocalMesh, PointCloud, DEFAULT_K_LOCAL, MIN_K_LOCAL};
pub use io::{load_shape, save_mesh, save_point_cloud, Shape, ShapeFormat};
pub use spatial::SpatialGrid;

/// Undirected weighted graph in compressed-row form. Neighbor lists are sorted
/// by vertex index and edge weights are Euclidean lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeGraph {
    offsets: Vec<usize>,
    targets: Vec<usize>,
    lengths: Vec<f64>,
}

impl EdgeGraph {
    /// Builds a graph from undirected edges. Duplicates are merged; self loops
    /// are dropped. When an edge is listed twice the first length wins.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut directed = Vec::with_capacity(edges.len() * 2);
        for &(a, b, len) in edges {
            for v in [a, b] {
                if v >= n {
                    return Err(Error::IndexOutOfRange { index: v, len: n });
                }
            }
            if a == b {
                continue;
            }
            if !(len.is_finite() && len >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "edge ({a}, {b}) has invalid length {len}"
                )));
            }
            directed.push((a, b, len));
            directed.push((b, a, len));
        }
        // stable sort keeps first occurrence first among duplicates
        directed.sort_by_key(|&(a, b, _)| (a, b));
        directed.dedup_by_key(|&mut (a, b, _)| (a, b));

        let mut offsets = vec![0usize; n + 1];
        for &(a, _, _) in &directed {
            offsets[a + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let targets = directed.iter().map(|e| e.1).collect();
        let lengths = directed.iter().map(|e| e.2).collect();
        Ok(Self {
            offsets,
            targets,
            lengths,
        })
    }

    fn from_faces(positions: &[Point3<f64>], faces: &[[usize; 3]]) -> Result<Self> {
        let mut edges = Vec::with_capacity(faces.len() * 3);
        for f in faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let (a, b) = if a < b { (a, b) } else { (b, a) };
                edges.push((a, b, (positions[a] - positions[b]).norm()));
            }
        }
        Self::from_edges(positions.len(), &edges)
    }

    pub fn num_vertices(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.targets.len() / 2
    }

    /// Neighbors of `v` in ascending index order.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    /// Edge lengths parallel to [`EdgeGraph::neighbors`].
    pub fn lengths(&self, v: usize) -> &[f64] {
        &self.lengths[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn edge_length(&self, a: usize, b: usize) -> Option<f64> {
        let nb = self.neighbors(a);
        nb.binary_search(&b).ok().map(|k| self.lengths(a)[k])
    }

    /// Iterates each undirected edge once as `(a, b, length)` with `a < b`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.num_vertices()).flat_map(move |a| {
            self.neighbors(a)
                .iter()
                .zip(self.lengths(a))
                .filter(move |(&b, _)| a < b)
                .map(move |(&b, &l)| (a, b, l))
        })
    }

    /// Returns the same graph with every edge length multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            offsets: self.offsets.clone(),
            targets: self.targets.clone(),
            lengths: self.lengths.iter().map(|l| l * s).collect(),
        }
    }
}

/// Indexed triangle mesh with 0-based indices and precomputed edge graph.
#[derive(Debug, Clone)]
pub struct TriangleMesh {
    vertices: Vec<Point3<f64>>,
    faces: Vec<[usize; 3]>,
    graph: EdgeGraph,
}

impl TriangleMesh {
    /// Validates indices, rejects faces with repeated vertices and rejects
    /// vertices not referenced by any face.
    pub fn new(vertices: Vec<Point3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        let mut referenced = vec![false; n];
        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                if v >= n {
                    return Err(Error::IndexOutOfRange { index: v, len: n });
                }
                referenced[v] = true;
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidArgument(format!("face {fi} repeats a vertex: {f:?}")));
            }
        }
        if let Some(v) = referenced.iter().position(|r| !r) {
            return Err(Error::InvalidArgument(format!(
                "vertex {v} is not referenced by any face"
            )));
        }
        if vertices.iter().any(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidArgument("non-finite vertex coordinate".into()));
        }
        let graph = EdgeGraph::from_faces(&vertices, &faces)?;
        Ok(Self { vertices, faces, graph })
    }

    /// Like [`TriangleMesh::new`] but drops unreferenced vertices instead of
    /// failing. Returns the mesh and, per kept vertex, its original index.
    pub fn new_pruned(vertices: Vec<Point3<f64>>, faces: Vec<[usize; 3]>) -> Result<(Self, Vec<usize>)> {
        let n = vertices.len();
        let mut remap = vec![usize::MAX; n];
        for f in &faces {
            for &v in f {
                if v >= n {
                    return Err(Error::IndexOutOfRange { index: v, len: n });
                }
                remap[v] = 0;
            }
        }
        let mut kept = Vec::new();
        for (v, r) in remap.iter_mut().enumerate() {
            if *r == 0 {
                *r = kept.len();
                kept.push(v);
            }
        }
        let verts = kept.iter().map(|&v| vertices[v]).collect();
        let faces = faces.iter().map(|f| [remap[f[0]], remap[f[1]], remap[f[2]]]).collect();
        Ok((Self::new(verts, faces)?, kept))
    }

    /// Sub-mesh induced by the faces whose three vertices all satisfy `keep`.
    /// Vertices left without a face are dropped. Returns the original index of
    /// every vertex of the sub-mesh.
    pub fn submesh(&self, keep: &[bool]) -> Result<(Self, Vec<usize>)> {
        if keep.len() != self.num_vertices() {
            return Err(Error::LengthMismatch {
                expected: self.num_vertices(),
                found: keep.len(),
            });
        }
        let faces = self
            .faces
            .iter()
            .filter(|f| f.iter().all(|&v| keep[v]))
            .copied()
            .collect();
        Self::new_pruned(self.vertices.clone(), faces)
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn graph(&self) -> &EdgeGraph {
        &self.graph
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f];
        triangle_area(&self.vertices[a], &self.vertices[b], &self.vertices[c])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Indices of faces whose area is zero up to rounding.
    pub fn degenerate_faces(&self) -> Vec<usize> {
        (0..self.faces.len())
            .filter(|&f| {
                let [a, b, c] = self.faces[f];
                let (pa, pb, pc) = (&self.vertices[a], &self.vertices[b], &self.vertices[c]);
                let longest = (pb - pa)
                    .norm_squared()
                    .max((pc - pb).norm_squared())
                    .max((pa - pc).norm_squared());
                (pb - pa).cross(&(pc - pa)).norm() <= 4.0 * f64::EPSILON * longest
            })
            .collect()
    }

    /// Area-weighted vertex normals, unit length (zero for isolated fans).
    pub fn vertex_normals(&self) -> Vec<Vector3<f64>> {
        let mut normals = vec![Vector3::zeros(); self.vertices.len()];
        for &[a, b, c] in &self.faces {
            let n = (self.vertices[b] - self.vertices[a]).cross(&(self.vertices[c] - self.vertices[a]));
            for v in [a, b, c] {
                normals[v] += n;
            }
        }
        for n in &mut normals {
            let len = n.norm();
            if len > 0.0 {
                *n /= len;
            }
        }
        normals
    }

    /// Applies `f` to every vertex, keeping connectivity.
    pub fn map_vertices(&self, f: impl Fn(&Point3<f64>) -> Point3<f64>) -> Self {
        let vertices: Vec<_> = self.vertices.iter().map(f).collect();
        let graph = EdgeGraph::from_faces(&vertices, &self.faces).expect("connectivity already validated");
        Self {
            vertices,
            faces: self.faces.clone(),
            graph,
        }
    }

    /// Length of the axis-aligned bounding-box diagonal.
    pub fn bbox_diagonal(&self) -> f64 {
        bbox_diagonal(&self.vertices)
    }
}

pub(crate) fn triangle_area(a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

pub(crate) fn bbox_diagonal(points: &[Point3<f64>]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let mut lo = points[0].coords;
    let mut hi = points[0].coords;
    for p in points {
        lo = lo.inf(&p.coords);
        hi = hi.sup(&p.coords);
    }
    (hi - lo).norm()
}

/// Diagonal of the lumped mass matrix: one third of every incident face area.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexAreas {
    areas: Vec<f64>,
}

impl VertexAreas {
    /// Wraps raw per-vertex areas, which must all be positive and finite.
    pub fn from_vec(areas: Vec<f64>) -> Result<Self> {
        if let Some(i) = areas.iter().position(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "vertex area {i} is {} (must be positive)",
                areas[i]
            )));
        }
        Ok(Self { areas })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.areas
    }

    pub fn len(&self) -> usize {
        self.areas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.areas.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.areas.iter().sum()
    }
}

impl std::ops::Index<usize> for VertexAreas {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.areas[i]
    }
}

/// Barycentric (one-third) lumped vertex areas.
pub fn vertex_areas(mesh: &TriangleMesh) -> Result<VertexAreas> {
    let degenerate = mesh.degenerate_faces();
    if !degenerate.is_empty() {
        return Err(Error::DegenerateGeometry { faces: degenerate });
    }
    let mut areas = vec![0.0; mesh.num_vertices()];
    for (f, face) in mesh.faces().iter().enumerate() {
        let third = mesh.face_area(f) / 3.0;
        for &v in face {
            areas[v] += third;
        }
    }
    VertexAreas::from_vec(areas)
}

/// All vertices within `depth` hops of `i`, excluding `i`, sorted by index.
pub fn ring_neighborhood(graph: &EdgeGraph, i: usize, depth: usize) -> Result<Vec<usize>> {
    let n = graph.num_vertices();
    if i >= n {
        return Err(Error::IndexOutOfRange { index: i, len: n });
    }
    if depth == 0 {
        return Err(Error::InvalidArgument("ring depth must be at least 1".into()));
    }
    let mut hops = std::collections::HashMap::new();
    hops.insert(i, 0usize);
    let mut queue = VecDeque::from([i]);
    while let Some(v) = queue.pop_front() {
        let h = hops[&v];
        if h == depth {
            continue;
        }
        for &w in graph.neighbors(v) {
            if let std::collections::hash_map::Entry::Vacant(e) = hops.entry(w) {
                e.insert(h + 1);
                queue.push_back(w);
            }
        }
    }
    let mut out: Vec<usize> = hops.into_keys().filter(|&v| v != i).collect();
    out.sort_unstable();
    Ok(out)
}

/// What the matching algorithms need from a shape: positions, unit normals,
/// an edge graph for geodesics and lumped areas.
#[derive(Debug, Clone)]
pub struct Surface {
    pub positions: Vec<Point3<f64>>,
    pub normals: Vec<Vector3<f64>>,
    pub graph: EdgeGraph,
    pub areas: VertexAreas,
}

impl Surface {
    pub fn from_mesh(mesh: &TriangleMesh) -> Result<Self> {
        Ok(Self {
            positions: mesh.vertices().to_vec(),
            normals: mesh.vertex_normals(),
            graph: mesh.graph().clone(),
            areas: vertex_areas(mesh)?,
        })
    }

    /// Builds the surface of a point cloud from its local meshes: the graph is
    /// the symmetrized union of each point's local one-ring.
    pub fn from_local_meshes(cloud: &PointCloud, locals: &[LocalMesh]) -> Result<Self> {
        let n = cloud.len();
        if locals.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: locals.len(),
            });
        }
        let pts = cloud.points();
        let mut edges = Vec::new();
        let mut areas = vec![0.0; n];
        for lm in locals {
            let i = lm.center();
            for &j in &lm.center_ring() {
                edges.push((i.min(j), i.max(j), (pts[i] - pts[j]).norm()));
            }
            areas[i] = lm.center_area(pts);
        }
        Ok(Self {
            positions: pts.to_vec(),
            normals: cloud.normals(locals),
            graph: EdgeGraph::from_edges(n, &edges)?,
            areas: VertexAreas::from_vec(areas)?,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn bbox_diagonal(&self) -> f64 {
        bbox_diagonal(&self.positions)
    }
}
