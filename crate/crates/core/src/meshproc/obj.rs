//! Minimal Wavefront OBJ reader/writer (`v` and `f` records only).

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::meshproc::LabelledMesh;

/// Parses OBJ text. Polygons are fan-triangulated; `f a/b/c` forms and negative
/// (relative) indices are accepted. `origin` is used in error messages.
pub fn parse_obj(text: &str, origin: &Path) -> Result<LabelledMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = line.split_whitespace();
        let Some(tag) = tokens.next() else { continue };
        let err = |msg: String| Error::parse(origin, format!("line {}: {msg}", lineno + 1));
        match tag {
            "v" => {
                let coords: Vec<f64> = tokens
                    .take(3)
                    .map(|t| t.parse::<f64>().map_err(|e| err(format!("bad coordinate {t:?}: {e}"))))
                    .collect::<Result<_>>()?;
                if coords.len() != 3 {
                    return Err(err("vertex needs 3 coordinates".into()));
                }
                if !coords.iter().all(|c| c.is_finite()) {
                    return Err(err("non-finite coordinate".into()));
                }
                vertices.push(Point3::new(coords[0], coords[1], coords[2]));
            }
            "f" => {
                let mut idx = Vec::new();
                for t in tokens {
                    let head = t.split('/').next().unwrap_or("");
                    let i: i64 = head
                        .parse()
                        .map_err(|e| err(format!("bad face index {t:?}: {e}")))?;
                    let resolved = if i > 0 {
                        i - 1
                    } else if i < 0 {
                        vertices.len() as i64 + i
                    } else {
                        return Err(err("face index 0 is invalid in OBJ".into()));
                    };
                    if resolved < 0 || resolved as usize >= vertices.len() {
                        return Err(err(format!("face index {i} out of range")));
                    }
                    idx.push(resolved as usize);
                }
                if idx.len() < 3 {
                    return Err(err("face needs at least 3 vertices".into()));
                }
                for k in 1..idx.len() - 1 {
                    let f = [idx[0], idx[k], idx[k + 1]];
                    if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                        return Err(err("face repeats a vertex".into()));
                    }
                    faces.push(f);
                }
            }
            _ => {}
        }
    }
    if vertices.is_empty() {
        return Err(Error::parse(origin, "no vertices"));
    }
    LabelledMesh::new(vertices, faces).map_err(|e| Error::parse(origin, e.to_string()))
}

pub fn read_obj(path: &Path) -> Result<LabelledMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingAsset {
            path: path.to_path_buf(),
        },
        _ => Error::io(path, e),
    })?;
    parse_obj(&text, path)
}

/// Serializes with shortest round-trip float formatting.
pub fn to_obj_string(mesh: &LabelledMesh) -> String {
    let mut out = String::with_capacity(mesh.vertices.len() * 40 + mesh.faces.len() * 20);
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {:?} {:?} {:?}", v.x, v.y, v.z);
    }
    for f in &mesh.faces {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

pub fn write_obj(mesh: &LabelledMesh, path: &Path) -> Result<()> {
    std::fs::write(path, to_obj_string(mesh)).map_err(|e| Error::io(path, e))
}
