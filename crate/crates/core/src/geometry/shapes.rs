//! Procedural shapes used by tests, benchmarks and the CLI demos.

use std::collections::HashMap;

use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};

use super::TriangleMesh;

const ICOSAHEDRON_FACES: [[usize; 3]; 20] = [
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

fn icosahedron_vertices() -> [Vector3<f64>; 12] {
    let t = (1.0 + 5.0f64.sqrt()) / 2.0;
    [
        Vector3::new(-1.0, t, 0.0),
        Vector3::new(1.0, t, 0.0),
        Vector3::new(-1.0, -t, 0.0),
        Vector3::new(1.0, -t, 0.0),
        Vector3::new(0.0, -1.0, t),
        Vector3::new(0.0, 1.0, t),
        Vector3::new(0.0, -1.0, -t),
        Vector3::new(0.0, 1.0, -t),
        Vector3::new(t, 0.0, -1.0),
        Vector3::new(t, 0.0, 1.0),
        Vector3::new(-t, 0.0, -1.0),
        Vector3::new(-t, 0.0, 1.0),
    ]
}

/// Unit geodesic sphere: every icosahedron face split into `frequency²`
/// triangles and projected onto the sphere. Has `10·frequency² + 2` vertices
/// (frequency 16 gives the classic 2562-vertex sphere).
pub fn icosphere(frequency: usize) -> TriangleMesh {
    assert!(frequency >= 1, "frequency must be positive");
    let base = icosahedron_vertices();
    let nu = frequency;
    let mut index: HashMap<Vec<(usize, usize)>, usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut faces = Vec::new();

    for face in ICOSAHEDRON_FACES {
        let mut local = vec![vec![0usize; nu + 1]; nu + 1];
        for i in 0..=nu {
            for j in 0..=(nu - i) {
                // barycentric weights over the face corners, keyed canonically so
                // shared edge points get bit-identical coordinates
                let mut key: Vec<(usize, usize)> = [(face[0], nu - i - j), (face[1], i), (face[2], j)]
                    .into_iter()
                    .filter(|&(_, w)| w > 0)
                    .collect();
                key.sort_unstable();
                let id = *index.entry(key.clone()).or_insert_with(|| {
                    let mut p = Vector3::zeros();
                    for &(c, w) in &key {
                        p += base[c] * (w as f64);
                    }
                    vertices.push(Point3::from(p.normalize()));
                    vertices.len() - 1
                });
                local[i][j] = id;
            }
        }
        for i in 0..nu {
            for j in 0..(nu - i) {
                faces.push([local[i][j], local[i + 1][j], local[i][j + 1]]);
                if i + j + 1 < nu {
                    faces.push([local[i + 1][j], local[i + 1][j + 1], local[i][j + 1]]);
                }
            }
        }
    }
    TriangleMesh::new(vertices, faces).expect("icosphere construction is valid")
}

/// Radial height field used by [`bumpy_blob`]; smooth and without symmetry.
fn blob_radius(u: &Vector3<f64>) -> f64 {
    let bumps = [
        (Vector3::new(0.8, 0.3, 0.52), 0.22, 0.35),
        (Vector3::new(-0.35, 0.85, -0.4), 0.15, 0.45),
        (Vector3::new(-0.2, -0.6, 0.77), 0.12, 0.3),
        (Vector3::new(0.1, -0.5, -0.86), -0.08, 0.5),
    ];
    let mut r = 1.0 + 0.06 * u.x * u.y + 0.05 * u.z * u.z * u.x;
    for (c, amp, width) in bumps {
        let c = c.normalize();
        let d2 = (u - c).norm_squared();
        r += amp * (-d2 / (width * width)).exp();
    }
    r
}

/// An asymmetric closed surface: an anisotropically stretched geodesic sphere
/// with a few smooth bumps. No nontrivial rigid or intrinsic symmetry.
pub fn bumpy_blob(frequency: usize) -> TriangleMesh {
    let sphere = icosphere(frequency);
    sphere.map_vertices(|p| {
        let u = p.coords.normalize();
        let q = u * blob_radius(&u);
        Point3::new(1.4 * q.x, 1.0 * q.y, 0.85 * q.z)
    })
}

/// Regular tetrahedron with the given edge length, centred at the origin,
/// faces oriented outward.
pub fn regular_tetrahedron(edge: f64) -> TriangleMesh {
    let s = edge / (2.0 * 2.0f64.sqrt());
    let v = vec![
        Point3::new(s, s, s),
        Point3::new(s, -s, -s),
        Point3::new(-s, s, -s),
        Point3::new(-s, -s, s),
    ];
    let faces = vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]];
    TriangleMesh::new(v, faces).expect("tetrahedron is valid")
}

/// Planar grid of `nx × ny` vertices with spacing `h` in the z = 0 plane.
/// Vertex `(i, j)` has index `j·nx + i`.
pub fn grid_sheet(nx: usize, ny: usize, h: f64) -> TriangleMesh {
    assert!(nx >= 2 && ny >= 2);
    let mut vertices = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            vertices.push(Point3::new(i as f64 * h, j as f64 * h, 0.0));
        }
    }
    let id = |i: usize, j: usize| j * nx + i;
    let mut faces = Vec::new();
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            faces.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            faces.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    TriangleMesh::new(vertices, faces).expect("grid is valid")
}

/// Rolls a sheet lying in the z = 0 plane onto a cylinder of radius `radius`
/// around an axis parallel to y. Arc length along x is preserved, so the
/// result is isometric to the input up to chord-versus-arc effects.
pub fn roll_sheet(mesh: &TriangleMesh, radius: f64) -> TriangleMesh {
    mesh.map_vertices(|p| {
        let theta = p.x / radius;
        Point3::new(radius * theta.sin(), p.y, radius * (1.0 - theta.cos()))
    })
}

/// A fixed, generic rigid motion (rotation about a skew axis plus a shift).
pub fn generic_rigid_motion() -> Isometry3<f64> {
    let axis = nalgebra::Unit::new_normalize(Vector3::new(0.3, -0.7, 0.65));
    Isometry3::from_parts(
        Translation3::new(0.37, -1.2, 2.05),
        UnitQuaternion::from_axis_angle(&axis, 1.234),
    )
}

pub fn transformed(mesh: &TriangleMesh, motion: &Isometry3<f64>) -> TriangleMesh {
    mesh.map_vertices(|p| motion * p)
}
