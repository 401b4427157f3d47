use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use super::{TriMesh, Vec3};

#[derive(Debug, Error)]
pub enum ObjError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Parse Wavefront OBJ text. Only `v` and `f` records are used; polygons are
/// fan-triangulated and negative indices are resolved relative to the end.
pub fn read_obj(text: &str) -> Result<TriMesh, ObjError> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let err = |msg: String| ObjError::Parse { line, msg };
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut tok = content.split_whitespace();
        match tok.next() {
            Some("v") => {
                let mut c = [0.0; 3];
                for slot in &mut c {
                    let t = tok.next().ok_or_else(|| err("vertex needs 3 coordinates".into()))?;
                    *slot = t
                        .parse::<f64>()
                        .map_err(|_| err(format!("bad coordinate {t:?}")))?;
                    if !slot.is_finite() {
                        return Err(err(format!("non-finite coordinate {t:?}")));
                    }
                }
                vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for t in tok {
                    let head = t.split('/').next().unwrap_or("");
                    let i: i64 = head.parse().map_err(|_| err(format!("bad face index {t:?}")))?;
                    let resolved = if i > 0 {
                        i - 1
                    } else if i < 0 {
                        vertices.len() as i64 + i
                    } else {
                        return Err(err("face index 0".into()));
                    };
                    if resolved < 0 || resolved >= vertices.len() as i64 {
                        return Err(err(format!("face index {i} out of range")));
                    }
                    idx.push(resolved as u32);
                }
                if idx.len() < 3 {
                    return Err(err("face needs at least 3 vertices".into()));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok(TriMesh::new(vertices, faces))
}

pub fn load_obj(path: &Path) -> Result<TriMesh, ObjError> {
    let text = std::fs::read_to_string(path).map_err(|source| ObjError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_obj(&text)
}

/// `%.9g`-style formatting.
pub(crate) fn fmt_g9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.8e}", x);
    let (mant, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{:.*}", decimals, x);
        trim_zeros(&s)
    } else {
        format!("{}e{}", trim_zeros(mant), exp)
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

pub fn write_obj(mesh: &TriMesh) -> String {
    let mut out = String::with_capacity(mesh.vertices.len() * 32 + mesh.faces.len() * 16);
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {} {} {}", fmt_g9(v.x), fmt_g9(v.y), fmt_g9(v.z));
    }
    for f in &mesh.faces {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

pub fn save_obj(mesh: &TriMesh, path: &Path) -> Result<(), ObjError> {
    std::fs::write(path, write_obj(mesh)).map_err(|source| ObjError::Io {
        path: path.display().to_string(),
        source,
    })
}
