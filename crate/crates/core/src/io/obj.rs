//! Wavefront OBJ: triangulated reading with `g`/`o` groups as face labels.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use super::{read_text, write_text};
use crate::error::{Error, Result};
use crate::geom::TriangleMesh;
use crate::parser::PrimitiveSet;

/// Parses OBJ text. Polygons are fan-triangulated; negative indices count
/// back from the latest vertex. When any group statement is present every
/// face is labeled with the index of its group in order of first
/// appearance (faces before the first group get their own label).
pub fn parse_obj(text: &str, path: &Path) -> Result<TriangleMesh> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut face_group = Vec::new();
    let mut groups: Vec<String> = Vec::new();
    let mut current: Option<usize> = None;
    let mut saw_group = false;

    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut parts = content.split_whitespace();
        let Some(tag) = parts.next() else { continue };
        match tag {
            "v" => {
                let c: Vec<f64> = parts
                    .take(3)
                    .map(|p| p.parse::<f64>().map_err(|e| err(line, format!("bad coordinate {p:?}: {e}"))))
                    .collect::<Result<_>>()?;
                if c.len() < 3 {
                    return Err(err(line, "vertex needs three coordinates".into()));
                }
                if c.iter().any(|v| !v.is_finite()) {
                    return Err(err(line, "non-finite vertex coordinate".into()));
                }
                vertices.push(Vector3::new(c[0], c[1], c[2]));
            }
            "f" => {
                let idx: Vec<usize> = parts
                    .map(|p| {
                        let first = p.split('/').next().unwrap_or("");
                        let i: i64 = first.parse().map_err(|e| err(line, format!("bad index {p:?}: {e}")))?;
                        let n = vertices.len() as i64;
                        let resolved = if i > 0 { i - 1 } else { n + i };
                        if i == 0 || resolved < 0 || resolved >= n {
                            return Err(err(line, format!("index {i} out of range for {n} vertices")));
                        }
                        Ok(resolved as usize)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(err(line, "face needs at least three vertices".into()));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                    face_group.push(current);
                }
            }
            "g" | "o" => {
                saw_group = true;
                let name = parts.collect::<Vec<_>>().join(" ");
                current = Some(match groups.iter().position(|g| *g == name) {
                    Some(i) => i,
                    None => {
                        groups.push(name);
                        groups.len() - 1
                    }
                });
            }
            _ => {}
        }
    }
    let labels = saw_group.then(|| {
        let ungrouped = groups.len() as u32;
        face_group
            .iter()
            .map(|g| g.map_or(ungrouped, |i| i as u32))
            .collect()
    });
    TriangleMesh::new(vertices, faces, labels)
}

pub fn read_obj(path: &Path) -> Result<TriangleMesh> {
    parse_obj(&read_text(path)?, path)
}

pub fn format_obj(mesh: &TriangleMesh) -> String {
    let mut s = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    let mut last = None;
    for (i, f) in mesh.faces.iter().enumerate() {
        if let Some(labels) = &mesh.labels {
            if last != Some(labels[i]) {
                let _ = writeln!(s, "g part{}", labels[i]);
                last = Some(labels[i]);
            }
        }
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

pub fn write_obj(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    write_text(path, &format_obj(mesh))
}

/// Closed box meshes of all primitives, one group per primitive.
pub fn primitives_mesh(set: &PrimitiveSet) -> TriangleMesh {
    let parts: Vec<TriangleMesh> = set.primitives.iter().map(TriangleMesh::from_primitive).collect();
    TriangleMesh::merge(&parts, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Primitive;

    fn parse(s: &str) -> Result<TriangleMesh> {
        parse_obj(s, Path::new("test.obj"))
    }

    #[test]
    fn quads_are_fanned_and_negative_indices_resolve() {
        let m = parse("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1/1 2/2/2 3 4\nf -4 -3 -1\n").unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3], [0, 1, 3]]);
        assert!(m.labels.is_none());
    }

    #[test]
    fn groups_become_labels() {
        let m = parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 2 3\ng a\nf 1 2 4\ng b\nf 1 3 4\ng a\nf 2 3 4\n").unwrap();
        assert_eq!(m.labels, Some(vec![2, 0, 1, 0]));
    }

    #[test]
    fn errors_carry_line_numbers() {
        match parse("v 0 0 0\nv 1 0 0\nf 1 2 9\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("v 0 x 0\n"), Err(Error::Parse { line: 1, .. })));
        assert!(parse("f 1 2 3\n").is_err());
    }

    #[test]
    fn written_meshes_read_back() {
        let p = Primitive::axis_aligned(Vector3::new(1.0, 2.0, 0.5), Vector3::new(0.1, 0.2, 0.3));
        let q = Primitive::axis_aligned(Vector3::new(0.3, 0.3, 0.3), Vector3::new(2.0, 0.0, 0.0));
        let mesh = primitives_mesh(&PrimitiveSet::new(vec![p, q]));
        let back = parse(&format_obj(&mesh)).unwrap();
        assert_eq!(back.vertices, mesh.vertices);
        assert_eq!(back.faces, mesh.faces);
        assert_eq!(back.labels, mesh.labels);
    }
}
