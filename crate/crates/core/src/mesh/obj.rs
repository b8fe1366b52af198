//! Wavefront OBJ input/output (positions and triangle faces only).

use std::fmt::Write as _;
use std::path::Path;

use crate::geom::Vec3;
use crate::scalar::Real;

use super::{HalfedgeMesh, MeshError, Result};

pub fn load_obj<T: Real>(path: impl AsRef<Path>) -> Result<HalfedgeMesh<T>> {
    let text = std::fs::read_to_string(path)?;
    parse_obj(&text)
}

/// Parses `v` and `f` records; texture/normal records and grouping
/// statements are ignored.
pub fn parse_obj<T: Real>(text: &str) -> Result<HalfedgeMesh<T>> {
    let mut positions = Vec::new();
    let mut faces = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        let mut tok = body.split_whitespace();
        match tok.next() {
            Some("v") => {
                let mut c = [T::zero(); 3];
                for slot in c.iter_mut() {
                    let s = tok.next().ok_or_else(|| perr(line, "vertex needs 3 coordinates"))?;
                    let v: f64 = s.parse().map_err(|_| perr(line, &format!("bad coordinate {s:?}")))?;
                    if !v.is_finite() {
                        return Err(perr(line, "non-finite coordinate"));
                    }
                    *slot = T::lit(v);
                }
                positions.push(Vec3::from_array(c));
            }
            Some("f") => {
                let idx: Vec<&str> = tok.collect();
                if idx.len() != 3 {
                    return Err(perr(line, &format!("face has {} vertices; only triangles are supported", idx.len())));
                }
                let mut tri = [0usize; 3];
                for (slot, s) in tri.iter_mut().zip(idx) {
                    let first = s.split('/').next().unwrap_or("");
                    let i: i64 = first.parse().map_err(|_| perr(line, &format!("bad face index {s:?}")))?;
                    let n = positions.len() as i64;
                    let resolved = if i > 0 { i - 1 } else if i < 0 { n + i } else { -1 };
                    if resolved < 0 || resolved >= n {
                        return Err(perr(line, &format!("face index {i} out of range")));
                    }
                    *slot = resolved as usize;
                }
                faces.push(tri);
            }
            _ => {}
        }
    }
    if faces.is_empty() {
        return Err(perr(0, "no faces"));
    }
    HalfedgeMesh::from_triangles(positions, &faces)
}

fn perr(line: usize, msg: &str) -> MeshError {
    MeshError::Parse { line, msg: msg.to_string() }
}

/// Serializes live vertices and faces with 17 significant digits.
pub fn write_obj<T: Real>(mesh: &HalfedgeMesh<T>) -> String {
    let mut out = String::new();
    let mut map = vec![usize::MAX; mesh.vertex_capacity()];
    for (i, v) in mesh.vertices().enumerate() {
        map[v] = i;
        let p = mesh.position(v);
        let _ = writeln!(out, "v {:.16e} {:.16e} {:.16e}", p.x.to_f64_lossy(), p.y.to_f64_lossy(), p.z.to_f64_lossy());
    }
    for f in mesh.faces() {
        let [a, b, c] = mesh.face_vertices(f);
        let _ = writeln!(out, "f {} {} {}", map[a] + 1, map[b] + 1, map[c] + 1);
    }
    out
}

pub fn save_obj<T: Real>(mesh: &HalfedgeMesh<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_obj(mesh))?;
    Ok(())
}
