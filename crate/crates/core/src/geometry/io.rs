//! ASCII readers and writers: OFF, OBJ and PLY meshes, XYZ point clouds.
//!
//! Coordinates are written with Rust's shortest round-trip float formatting,
//! so saving and reloading reproduces vertices bit for bit. Polygons with more
//! than three corners are fan-triangulated on load.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Point3;

use super::{PointCloud, TriangleMesh};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeFormat {
    Off,
    Obj,
    Ply,
    Xyz,
}

impl ShapeFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "off" => Some(Self::Off),
            "obj" => Some(Self::Obj),
            "ply" => Some(Self::Ply),
            "xyz" | "txt" | "pts" => Some(Self::Xyz),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Shape {
    Mesh(TriangleMesh),
    Cloud(PointCloud),
}

impl Shape {
    pub fn num_points(&self) -> usize {
        match self {
            Shape::Mesh(m) => m.num_vertices(),
            Shape::Cloud(c) => c.len(),
        }
    }
}

/// Loads a shape. XYZ yields a point cloud; the other formats yield a mesh
/// with vertex order exactly as in the file.
pub fn load_shape(path: &Path, format: ShapeFormat) -> Result<Shape> {
    let text = fs::read_to_string(path).map_err(|e| Error::parse(path, 0, e.to_string()))?;
    match format {
        ShapeFormat::Xyz => parse_xyz(path, &text).map(Shape::Cloud),
        _ => {
            let (verts, faces) = match format {
                ShapeFormat::Off => parse_off(path, &text)?,
                ShapeFormat::Obj => parse_obj(path, &text)?,
                ShapeFormat::Ply => parse_ply(path, &text)?,
                ShapeFormat::Xyz => unreachable!(),
            };
            let mesh = TriangleMesh::new(verts, faces).map_err(|e| match e {
                Error::IndexOutOfRange { index, len } => Error::parse(
                    path,
                    0,
                    format!("face references vertex {index} but only {len} vertices exist"),
                ),
                Error::InvalidArgument(msg) => Error::parse(path, 0, msg),
                other => other,
            })?;
            let degenerate = mesh.degenerate_faces();
            if !degenerate.is_empty() {
                return Err(Error::DegenerateGeometry { faces: degenerate });
            }
            Ok(Shape::Mesh(mesh))
        }
    }
}

/// Non-empty, comment-stripped lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then_some((i + 1, l))
    })
}

fn parse_f64(path: &Path, line: usize, tok: &str) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| Error::parse(path, line, format!("expected a number, found `{tok}`")))
}

fn parse_usize(path: &Path, line: usize, tok: &str) -> Result<usize> {
    tok.parse::<usize>()
        .map_err(|_| Error::parse(path, line, format!("expected an index, found `{tok}`")))
}

fn fan(path: &Path, line: usize, poly: &[usize], faces: &mut Vec<[usize; 3]>) -> Result<()> {
    if poly.len() < 3 {
        return Err(Error::parse(path, line, "polygon with fewer than 3 vertices"));
    }
    for k in 1..poly.len() - 1 {
        faces.push([poly[0], poly[k], poly[k + 1]]);
    }
    Ok(())
}

type Parsed = (Vec<Point3<f64>>, Vec<[usize; 3]>);

fn parse_off(path: &Path, text: &str) -> Result<Parsed> {
    let mut lines = content_lines(text);
    let (ln, first) = lines.next().ok_or_else(|| Error::parse(path, 0, "empty file"))?;
    let mut header_rest: Vec<&str> = first.split_whitespace().collect();
    if header_rest.first().map(|t| t.ends_with("OFF")) != Some(true) {
        return Err(Error::parse(path, ln, "missing OFF header"));
    }
    header_rest.remove(0);
    let (ln, counts) = if header_rest.is_empty() {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| Error::parse(path, ln, "missing element counts"))?;
        (ln, l.split_whitespace().collect::<Vec<_>>())
    } else {
        (ln, header_rest)
    };
    if counts.len() < 2 {
        return Err(Error::parse(path, ln, "expected vertex and face counts"));
    }
    let nv = parse_usize(path, ln, counts[0])?;
    let nf = parse_usize(path, ln, counts[1])?;

    let mut verts = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 0, "unexpected end of file in vertex list"))?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() < 3 {
            return Err(Error::parse(path, ln, "vertex needs three coordinates"));
        }
        verts.push(Point3::new(
            parse_f64(path, ln, toks[0])?,
            parse_f64(path, ln, toks[1])?,
            parse_f64(path, ln, toks[2])?,
        ));
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 0, "unexpected end of file in face list"))?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        let k = parse_usize(path, ln, toks[0])?;
        if toks.len() < k + 1 {
            return Err(Error::parse(path, ln, format!("face declares {k} vertices")));
        }
        let poly = toks[1..=k]
            .iter()
            .map(|t| parse_usize(path, ln, t))
            .collect::<Result<Vec<_>>>()?;
        check_range(path, ln, &poly, nv)?;
        fan(path, ln, &poly, &mut faces)?;
    }
    Ok((verts, faces))
}

fn check_range(path: &Path, line: usize, poly: &[usize], nv: usize) -> Result<()> {
    if let Some(&bad) = poly.iter().find(|&&v| v >= nv) {
        return Err(Error::parse(
            path,
            line,
            format!("face references vertex {bad} but only {nv} vertices exist"),
        ));
    }
    Ok(())
}

fn parse_obj(path: &Path, text: &str) -> Result<Parsed> {
    let mut verts = Vec::new();
    let mut polys = Vec::new();
    for (ln, l) in content_lines(text) {
        let mut toks = l.split_whitespace();
        match toks.next() {
            Some("v") => {
                let c: Vec<&str> = toks.collect();
                if c.len() < 3 {
                    return Err(Error::parse(path, ln, "vertex needs three coordinates"));
                }
                verts.push(Point3::new(
                    parse_f64(path, ln, c[0])?,
                    parse_f64(path, ln, c[1])?,
                    parse_f64(path, ln, c[2])?,
                ));
            }
            Some("f") => {
                let mut poly = Vec::new();
                for t in toks {
                    let idx = t.split('/').next().unwrap_or("");
                    let i: i64 = idx
                        .parse()
                        .map_err(|_| Error::parse(path, ln, format!("bad face index `{t}`")))?;
                    let resolved = if i > 0 {
                        i - 1
                    } else if i < 0 {
                        verts.len() as i64 + i
                    } else {
                        return Err(Error::parse(path, ln, "face index 0 is invalid in OBJ"));
                    };
                    if resolved < 0 {
                        return Err(Error::parse(path, ln, format!("bad face index `{t}`")));
                    }
                    poly.push(resolved as usize);
                }
                polys.push((ln, poly));
            }
            _ => {}
        }
    }
    let mut faces = Vec::new();
    for (ln, poly) in polys {
        check_range(path, ln, &poly, verts.len())?;
        fan(path, ln, &poly, &mut faces)?;
    }
    Ok((verts, faces))
}

fn parse_ply(path: &Path, text: &str) -> Result<Parsed> {
    struct Element {
        name: String,
        count: usize,
        props: Vec<String>,
    }
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(Error::parse(path, 1, "missing `ply` magic")),
    }
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 0, "header not terminated"))?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["format", fmt, ..] => {
                if *fmt != "ascii" {
                    return Err(Error::parse(path, ln, format!("unsupported PLY format `{fmt}`")));
                }
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: parse_usize(path, ln, count)?,
                props: Vec::new(),
            }),
            ["property", "list", _, _, name] | ["property", _, name] => {
                let e = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(path, ln, "property before element"))?;
                e.props.push(name.to_string());
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            _ => return Err(Error::parse(path, ln, format!("unrecognized header line `{l}`"))),
        }
    }
    let mut verts = Vec::new();
    let mut faces = Vec::new();
    let mut nv = 0;
    for e in &elements {
        for _ in 0..e.count {
            let (ln, l) = lines
                .next()
                .ok_or_else(|| Error::parse(path, 0, format!("unexpected end of `{}` data", e.name)))?;
            let toks: Vec<&str> = l.split_whitespace().collect();
            match e.name.as_str() {
                "vertex" => {
                    let mut xyz = [0.0; 3];
                    for (c, axis) in ["x", "y", "z"].iter().enumerate() {
                        let k = e
                            .props
                            .iter()
                            .position(|p| p == axis)
                            .ok_or_else(|| Error::parse(path, ln, format!("vertex lacks `{axis}`")))?;
                        let t = toks.get(k).ok_or_else(|| Error::parse(path, ln, "short vertex row"))?;
                        xyz[c] = parse_f64(path, ln, t)?;
                    }
                    verts.push(Point3::from(xyz));
                    nv = verts.len();
                }
                "face" => {
                    let k = parse_usize(path, ln, toks.first().copied().unwrap_or(""))?;
                    if toks.len() < k + 1 {
                        return Err(Error::parse(path, ln, format!("face declares {k} vertices")));
                    }
                    let poly = toks[1..=k]
                        .iter()
                        .map(|t| parse_usize(path, ln, t))
                        .collect::<Result<Vec<_>>>()?;
                    check_range(path, ln, &poly, nv)?;
                    fan(path, ln, &poly, &mut faces)?;
                }
                _ => {}
            }
        }
    }
    Ok((verts, faces))
}

fn parse_xyz(path: &Path, text: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (ln, l) in content_lines(text) {
        let toks: Vec<&str> = l
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .collect();
        if toks.len() < 3 {
            return Err(Error::parse(path, ln, "expected three columns"));
        }
        points.push(Point3::new(
            parse_f64(path, ln, toks[0])?,
            parse_f64(path, ln, toks[1])?,
            parse_f64(path, ln, toks[2])?,
        ));
    }
    PointCloud::new(points).map_err(|e| Error::parse(path, 0, e.to_string()))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes a mesh in the given format (XYZ writes vertices only).
pub fn save_mesh(mesh: &TriangleMesh, path: &Path, format: ShapeFormat) -> Result<()> {
    let mut s = String::new();
    let v = mesh.vertices();
    let f = mesh.faces();
    match format {
        ShapeFormat::Off => {
            let _ = writeln!(s, "OFF\n{} {} 0", v.len(), f.len());
            for p in v {
                let _ = writeln!(s, "{} {} {}", p.x, p.y, p.z);
            }
            for t in f {
                let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
            }
        }
        ShapeFormat::Obj => {
            for p in v {
                let _ = writeln!(s, "v {} {} {}", p.x, p.y, p.z);
            }
            for t in f {
                let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
            }
        }
        ShapeFormat::Ply => {
            let _ = write!(
                s,
                "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
                v.len(),
                f.len()
            );
            for p in v {
                let _ = writeln!(s, "{} {} {}", p.x, p.y, p.z);
            }
            for t in f {
                let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
            }
        }
        ShapeFormat::Xyz => return save_xyz(v, path),
    }
    write_file(path, &s)
}

pub fn save_point_cloud(cloud: &PointCloud, path: &Path) -> Result<()> {
    save_xyz(cloud.points(), path)
}

fn save_xyz(points: &[Point3<f64>], path: &Path) -> Result<()> {
    let mut s = String::new();
    for p in points {
        let _ = writeln!(s, "{} {} {}", p.x, p.y, p.z);
    }
    write_file(path, &s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::shapes;

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn off_tetrahedron() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "t.off",
            "OFF\n# comment\n4 4 6\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 2 1\n3 0 1 3\n3 0 3 2\n3 1 2 3\n",
        );
        let Shape::Mesh(m) = load_shape(&p, ShapeFormat::Off).unwrap() else {
            panic!("expected mesh")
        };
        assert_eq!((m.num_vertices(), m.num_faces()), (4, 4));
    }

    #[test]
    fn off_out_of_range_index_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "bad.off", "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 3\n");
        assert!(matches!(load_shape(&p, ShapeFormat::Off), Err(Error::Parse { .. })));
    }

    #[test]
    fn xyz_hundred_rows() {
        let dir = tempfile::tempdir().unwrap();
        let mut text = String::new();
        for i in 0..100 {
            let t = i as f64 * 0.37;
            let _ = writeln!(text, "{} {} {}", t.cos(), t.sin(), 0.01 * i as f64);
        }
        let p = write(dir.path(), "c.xyz", &text);
        let Shape::Cloud(c) = load_shape(&p, ShapeFormat::Xyz).unwrap() else {
            panic!("expected cloud")
        };
        assert_eq!(c.len(), 100);
    }

    #[test]
    fn missing_file_reports_path() {
        let err = load_shape(Path::new("/nonexistent/shape.off"), ShapeFormat::Off).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        assert!(err.to_string().contains("/nonexistent/shape.off"));
    }

    #[test]
    fn zero_area_face_rejected_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "flat.off",
            "OFF\n4 2 0\n0 0 0\n1 0 0\n2 0 0\n0 1 0\n3 0 1 2\n3 0 1 3\n",
        );
        match load_shape(&p, ShapeFormat::Off) {
            Err(Error::DegenerateGeometry { faces }) => assert_eq!(faces, vec![0]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn obj_and_ply_quads_are_fanned() {
        let dir = tempfile::tempdir().unwrap();
        let obj = write(
            dir.path(),
            "q.obj",
            "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1 2/2 3/3 4/4\n",
        );
        let ply = write(
            dir.path(),
            "q.ply",
            "ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\nproperty float nx\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0 9\n1 0 0 9\n1 1 0 9\n0 1 0 9\n4 0 1 2 3\n",
        );
        for (p, f) in [(obj, ShapeFormat::Obj), (ply, ShapeFormat::Ply)] {
            let Shape::Mesh(m) = load_shape(&p, f).unwrap() else {
                panic!()
            };
            assert_eq!(m.faces(), &[[0, 1, 2], [0, 2, 3]]);
        }
    }

    #[test]
    fn round_trip_all_mesh_formats() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = shapes::bumpy_blob(3);
        for (name, f) in [
            ("m.off", ShapeFormat::Off),
            ("m.obj", ShapeFormat::Obj),
            ("m.ply", ShapeFormat::Ply),
        ] {
            let p = dir.path().join(name);
            save_mesh(&mesh, &p, f).unwrap();
            let Shape::Mesh(back) = load_shape(&p, f).unwrap() else {
                panic!()
            };
            assert_eq!(back.vertices(), mesh.vertices());
            assert_eq!(back.faces(), mesh.faces());
        }
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(ShapeFormat::from_path(Path::new("a/b.OFF")), Some(ShapeFormat::Off));
        assert_eq!(ShapeFormat::from_path(Path::new("x.xyz")), Some(ShapeFormat::Xyz));
        assert_eq!(ShapeFormat::from_path(Path::new("x.stl")), None);
    }
}
