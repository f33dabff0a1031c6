//! OFF and ASCII PLY readers and writers (positions and faces only).

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::geometry::mesh::{PointCloud, Shape, TriMesh, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeFormat {
    Off,
    PlyAscii,
}

fn parse_err(line: usize, msg: impl Into<String>) -> CoreError {
    CoreError::Parse { line, msg: msg.into() }
}

/// Non-empty lines with comments stripped, paired with 1-based line numbers.
fn content_lines<'a>(text: &'a str, comment: &str) -> Vec<(usize, &'a str)> {
    text.lines()
        .enumerate()
        .filter_map(|(i, l)| {
            let l = match l.find(comment) {
                Some(p) => &l[..p],
                None => l,
            };
            let l = l.trim();
            (!l.is_empty()).then_some((i + 1, l))
        })
        .collect()
}

fn numbers<T: std::str::FromStr>(line: usize, s: &str) -> Result<Vec<T>> {
    s.split_whitespace()
        .map(|t| t.parse::<T>().map_err(|_| parse_err(line, format!("bad number `{t}`"))))
        .collect()
}

fn sniff(text: &str) -> Option<ShapeFormat> {
    let first = text.split_whitespace().next()?;
    if first.starts_with("OFF") {
        Some(ShapeFormat::Off)
    } else if first == "ply" {
        Some(ShapeFormat::PlyAscii)
    } else {
        None
    }
}

/// Parses a shape; faceless files become point clouds.
pub fn load_shape(bytes: &[u8], format: Option<ShapeFormat>) -> Result<Shape> {
    let text = std::str::from_utf8(bytes).map_err(|_| parse_err(0, "file is not utf-8 text"))?;
    let format = format.or_else(|| sniff(text)).ok_or_else(|| parse_err(1, "unknown format"))?;
    let (vertices, polys) = match format {
        ShapeFormat::Off => parse_off(text)?,
        ShapeFormat::PlyAscii => parse_ply(text)?,
    };
    if vertices.is_empty() {
        return Err(CoreError::EmptyShape);
    }
    if polys.is_empty() {
        let n = vertices.len();
        return Ok(Shape::Cloud(PointCloud::new(vertices, vec![false; n])?));
    }
    let mut faces = Vec::with_capacity(polys.len());
    for (line, p) in polys {
        if p.len() < 3 {
            return Err(parse_err(line, "face with fewer than 3 vertices"));
        }
        if let Some(&i) = p.iter().find(|&&i| i >= vertices.len()) {
            return Err(parse_err(line, format!("vertex index {i} out of range")));
        }
        for j in 1..p.len() - 1 {
            faces.push([p[0], p[j], p[j + 1]]);
        }
    }
    Ok(Shape::Mesh(TriMesh::new(vertices, faces)?))
}

pub fn load_shape_file(path: impl AsRef<Path>) -> Result<Shape> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some("off") | Some("OFF") => Some(ShapeFormat::Off),
        Some("ply") | Some("PLY") => Some(ShapeFormat::PlyAscii),
        _ => None,
    };
    load_shape(&bytes, format)
}

pub fn load_mesh_file(path: impl AsRef<Path>) -> Result<TriMesh> {
    match load_shape_file(path)? {
        Shape::Mesh(m) => Ok(m),
        Shape::Cloud(_) => Err(CoreError::InvalidMesh("file has no faces".into())),
    }
}

type Polys = Vec<(usize, Vec<usize>)>;

fn parse_off(text: &str) -> Result<(Vec<Vec3>, Polys)> {
    let lines = content_lines(text, "#");
    let mut it = lines.into_iter();
    let (hline, header) = it.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let rest = header
        .strip_prefix("OFF")
        .ok_or_else(|| parse_err(hline, "missing OFF header"))?
        .trim();
    let (cline, counts) = if rest.is_empty() {
        it.next().ok_or_else(|| parse_err(hline + 1, "missing counts"))?
    } else {
        (hline, rest)
    };
    let counts: Vec<usize> = numbers(cline, counts)?;
    if counts.len() < 2 {
        return Err(parse_err(cline, "expected vertex and face counts"));
    }
    let (nv, nf) = (counts[0], counts[1]);
    let mut vertices = Vec::with_capacity(nv);
    for i in 0..nv {
        let (line, l) = it.next().ok_or_else(|| parse_err(0, format!("declared {nv} vertices, found {i}")))?;
        let xs: Vec<f64> = numbers(line, l)?;
        if xs.len() < 3 {
            return Err(parse_err(line, "vertex needs 3 coordinates"));
        }
        vertices.push([xs[0], xs[1], xs[2]]);
    }
    let mut polys = Vec::with_capacity(nf);
    for i in 0..nf {
        let (line, l) = it.next().ok_or_else(|| parse_err(0, format!("declared {nf} faces, found {i}")))?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        let n: usize = toks[0].parse().map_err(|_| parse_err(line, "bad face size"))?;
        if toks.len() < n + 1 {
            return Err(parse_err(line, format!("face declares {n} vertices")));
        }
        let idx: Vec<usize> = numbers(line, &toks[1..=n].join(" "))?;
        polys.push((line, idx));
    }
    if let Some((line, _)) = it.next() {
        return Err(parse_err(line, "unexpected data after faces"));
    }
    Ok((vertices, polys))
}

struct PlyElement {
    name: String,
    count: usize,
    props: Vec<String>,
    list_prop: Option<String>,
}

fn parse_ply(text: &str) -> Result<(Vec<Vec3>, Polys)> {
    let lines: Vec<(usize, &str)> =
        text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty()).collect();
    let mut it = lines.into_iter();
    match it.next() {
        Some((_, "ply")) => {}
        Some((line, _)) => return Err(parse_err(line, "missing ply magic")),
        None => return Err(parse_err(1, "empty file")),
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    loop {
        let (line, l) = it.next().ok_or_else(|| parse_err(0, "missing end_header"))?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks[0] {
            "end_header" => break,
            "comment" | "obj_info" => {}
            "format" => {
                if toks.get(1) != Some(&"ascii") {
                    return Err(parse_err(line, "only ascii ply is supported"));
                }
            }
            "element" => {
                if toks.len() != 3 {
                    return Err(parse_err(line, "malformed element line"));
                }
                let count = toks[2].parse().map_err(|_| parse_err(line, "bad element count"))?;
                elements.push(PlyElement { name: toks[1].to_string(), count, props: vec![], list_prop: None });
            }
            "property" => {
                let el = elements.last_mut().ok_or_else(|| parse_err(line, "property before element"))?;
                if toks.get(1) == Some(&"list") {
                    el.list_prop = toks.get(4).map(|s| s.to_string());
                    el.props.push(toks.get(4).unwrap_or(&"").to_string());
                } else {
                    el.props.push(toks.last().unwrap_or(&"").to_string());
                }
            }
            other => return Err(parse_err(line, format!("unknown header keyword `{other}`"))),
        }
    }
    let mut vertices = Vec::new();
    let mut polys = Vec::new();
    for el in &elements {
        for i in 0..el.count {
            let (line, l) = it
                .next()
                .ok_or_else(|| parse_err(0, format!("declared {} `{}` entries, found {i}", el.count, el.name)))?;
            match el.name.as_str() {
                "vertex" => {
                    let xs: Vec<f64> = numbers(line, l)?;
                    let pos = |n: &str| el.props.iter().position(|p| p == n);
                    let (Some(x), Some(y), Some(z)) = (pos("x"), pos("y"), pos("z")) else {
                        return Err(parse_err(line, "vertex element lacks x/y/z"));
                    };
                    if xs.len() < el.props.len() {
                        return Err(parse_err(line, "too few vertex properties"));
                    }
                    vertices.push([xs[x], xs[y], xs[z]]);
                }
                "face" if el.list_prop.is_some() => {
                    let toks: Vec<usize> = numbers(line, l)?;
                    let n = *toks.first().ok_or_else(|| parse_err(line, "empty face"))?;
                    if toks.len() < n + 1 {
                        return Err(parse_err(line, format!("face declares {n} vertices")));
                    }
                    polys.push((line, toks[1..=n].to_vec()));
                }
                _ => {}
            }
        }
    }
    Ok((vertices, polys))
}

pub fn write_off(mesh: &TriMesh) -> String {
    let mut s = format!("OFF\n{} {} 0\n", mesh.num_vertices(), mesh.num_faces());
    for v in mesh.vertices() {
        let _ = writeln!(s, "{} {} {}", v[0], v[1], v[2]);
    }
    for f in mesh.faces() {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    s
}

/// OFF file with one scalar per vertex stored in a leading comment block.
pub fn write_scalar_off(mesh: &TriMesh, scalars: &[f64]) -> Result<String> {
    if scalars.len() != mesh.num_vertices() {
        return Err(CoreError::LengthMismatch { expected: mesh.num_vertices(), got: scalars.len() });
    }
    let mut s = String::from("OFF\n# vertex_scalar\n");
    for chunk in scalars.chunks(8) {
        let row: Vec<String> = chunk.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "# {}", row.join(" "));
    }
    Ok(s + &write_off(mesh)[4..])
}

pub fn write_ply(vertices: &[Vec3], faces: &[[usize; 3]]) -> String {
    let mut s = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n",
        vertices.len()
    );
    if !faces.is_empty() {
        let _ = write!(s, "element face {}\nproperty list uchar int vertex_indices\n", faces.len());
    }
    s.push_str("end_header\n");
    for v in vertices {
        let _ = writeln!(s, "{} {} {}", v[0], v[1], v[2]);
    }
    for f in faces {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const TET: &str = "OFF\n4 4 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 2 1\n3 0 1 3\n3 0 3 2\n3 1 2 3\n";

    #[test]
    fn tetrahedron_off() {
        let Shape::Mesh(m) = load_shape(TET.as_bytes(), None).unwrap() else { panic!("expected mesh") };
        assert_eq!((m.num_vertices(), m.num_faces()), (4, 4));
    }

    #[test]
    fn faceless_ply_is_a_point_cloud() {
        let pts: Vec<Vec3> = (0..8).map(|i| [(i & 1) as f64, ((i >> 1) & 1) as f64, (i >> 2) as f64]).collect();
        let text = write_ply(&pts, &[]);
        let Shape::Cloud(pc) = load_shape(text.as_bytes(), None).unwrap() else { panic!("expected cloud") };
        assert_eq!(pc.points, pts);
    }

    #[test]
    fn vertex_count_mismatch_is_a_parse_error() {
        let bad = TET.replacen("4 4 0", "5 4 0", 1);
        assert!(matches!(load_shape(bad.as_bytes(), None), Err(CoreError::Parse { .. })));
    }

    #[test]
    fn off_and_ply_roundtrip_exactly() {
        let v = vec![[0.1, 1.0 / 3.0, -2.5e-7], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let m = TriMesh::new(v.clone(), vec![[0, 1, 2]]).unwrap();
        let Shape::Mesh(a) = load_shape(write_off(&m).as_bytes(), None).unwrap() else { panic!() };
        assert_eq!(a, m);
        let Shape::Mesh(b) = load_shape(write_ply(&v, m.faces()).as_bytes(), None).unwrap() else { panic!() };
        assert_eq!(b, m);
        let s = write_scalar_off(&m, &[0.5, 0.25, 1.0]).unwrap();
        let Shape::Mesh(c) = load_shape(s.as_bytes(), None).unwrap() else { panic!() };
        assert_eq!(c, m);
    }

    #[test]
    fn out_of_range_index_reports_line() {
        let bad = TET.replacen("3 1 2 3", "3 1 2 9", 1);
        match load_shape(bad.as_bytes(), None) {
            Err(CoreError::Parse { line, .. }) => assert_eq!(line, 10),
            other => panic!("{other:?}"),
        }
    }
}
