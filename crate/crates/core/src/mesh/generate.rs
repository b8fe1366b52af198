//! Closed test meshes: platonic solids, icospheres, tori, subdivided cubes.

use std::collections::HashMap;

use crate::geom::Vec3;
use crate::scalar::Real;

use super::HalfedgeMesh;

fn build<T: Real>(pts: Vec<[f64; 3]>, tris: &[[usize; 3]]) -> HalfedgeMesh<T> {
    let positions = pts.into_iter().map(|p| Vec3::new(T::lit(p[0]), T::lit(p[1]), T::lit(p[2]))).collect();
    HalfedgeMesh::from_triangles(positions, tris).expect("generator produces a closed manifold")
}

/// Regular tetrahedron inscribed in the unit sphere.
pub fn tetrahedron<T: Real>() -> HalfedgeMesh<T> {
    let s = 1.0 / 3f64.sqrt();
    build(
        vec![[s, s, s], [s, -s, -s], [-s, s, -s], [-s, -s, s]],
        &[[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]],
    )
}

pub fn octahedron<T: Real>() -> HalfedgeMesh<T> {
    build(
        vec![[1., 0., 0.], [-1., 0., 0.], [0., 1., 0.], [0., -1., 0.], [0., 0., 1.], [0., 0., -1.]],
        &[
            [0, 2, 4],
            [2, 1, 4],
            [1, 3, 4],
            [3, 0, 4],
            [2, 0, 5],
            [1, 2, 5],
            [3, 1, 5],
            [0, 3, 5],
        ],
    )
}

fn icosahedron() -> (Vec<[f64; 3]>, Vec<[usize; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        [-1., t, 0.],
        [1., t, 0.],
        [-1., -t, 0.],
        [1., -t, 0.],
        [0., -1., t],
        [0., 1., t],
        [0., -1., -t],
        [0., 1., -t],
        [t, 0., -1.],
        [t, 0., 1.],
        [-t, 0., -1.],
        [-t, 0., 1.],
    ];
    let pts = raw.iter().map(|p| normalize(*p)).collect();
    let tris = vec![
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
    (pts, tris)
}

fn normalize(p: [f64; 3]) -> [f64; 3] {
    let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    [p[0] / n, p[1] / n, p[2] / n]
}

/// Unit icosphere with `20 * 4^subdivisions` faces.
pub fn icosphere<T: Real>(subdivisions: u32) -> HalfedgeMesh<T> {
    let (mut pts, mut tris) = icosahedron();
    for _ in 0..subdivisions {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(tris.len() * 4);
        let mut midpoint = |a: usize, b: usize, pts: &mut Vec<[f64; 3]>| -> usize {
            let key = (a.min(b), a.max(b));
            *mid.entry(key).or_insert_with(|| {
                let (p, q) = (pts[a], pts[b]);
                pts.push(normalize([(p[0] + q[0]) / 2., (p[1] + q[1]) / 2., (p[2] + q[2]) / 2.]));
                pts.len() - 1
            })
        };
        for [a, b, c] in tris {
            let ab = midpoint(a, b, &mut pts);
            let bc = midpoint(b, c, &mut pts);
            let ca = midpoint(c, a, &mut pts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        tris = next;
    }
    build(pts, &tris)
}

/// Torus around the z axis with `2 * major * minor` faces.
pub fn torus<T: Real>(major: usize, minor: usize, major_radius: f64, minor_radius: f64) -> HalfedgeMesh<T> {
    assert!(major >= 3 && minor >= 3, "torus needs at least 3 segments per direction");
    let mut pts = Vec::with_capacity(major * minor);
    for i in 0..major {
        let u = std::f64::consts::TAU * i as f64 / major as f64;
        for j in 0..minor {
            let v = std::f64::consts::TAU * j as f64 / minor as f64;
            let r = major_radius + minor_radius * v.cos();
            pts.push([r * u.cos(), r * u.sin(), minor_radius * v.sin()]);
        }
    }
    let id = |i: usize, j: usize| (i % major) * minor + (j % minor);
    let mut tris = Vec::with_capacity(2 * major * minor);
    for i in 0..major {
        for j in 0..minor {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            tris.push([a, b, c]);
            tris.push([a, c, d]);
        }
    }
    build(pts, &tris)
}

/// Cube `[-1, 1]^3` with each side split into an `n x n` grid of squares,
/// two triangles per square. Sides are exactly planar.
pub fn subdivided_cube<T: Real>(n: usize) -> HalfedgeMesh<T> {
    assert!(n >= 1);
    let mut index: HashMap<[i64; 3], usize> = HashMap::new();
    let mut pts: Vec<[f64; 3]> = Vec::new();
    let mut tris = Vec::new();
    let n_i = n as i64;
    let mut vid = |g: [i64; 3], pts: &mut Vec<[f64; 3]>| -> usize {
        *index.entry(g).or_insert_with(|| {
            pts.push([
                2.0 * g[0] as f64 / n as f64 - 1.0,
                2.0 * g[1] as f64 / n as f64 - 1.0,
                2.0 * g[2] as f64 / n as f64 - 1.0,
            ]);
            pts.len() - 1
        })
    };
    // (normal axis, fixed value, u axis, v axis) with u x v along the outward normal.
    let sides: [(usize, i64, usize, usize); 6] =
        [(0, n_i, 1, 2), (0, 0, 2, 1), (1, n_i, 2, 0), (1, 0, 0, 2), (2, n_i, 0, 1), (2, 0, 1, 0)];
    for (axis, fixed, ua, va) in sides {
        for i in 0..n_i {
            for j in 0..n_i {
                let g = |di: i64, dj: i64| {
                    let mut p = [0i64; 3];
                    p[axis] = fixed;
                    p[ua] = i + di;
                    p[va] = j + dj;
                    p
                };
                let a = vid(g(0, 0), &mut pts);
                let b = vid(g(1, 0), &mut pts);
                let c = vid(g(1, 1), &mut pts);
                let d = vid(g(0, 1), &mut pts);
                tris.push([a, b, c]);
                tris.push([a, c, d]);
            }
        }
    }
    build(pts, &tris)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_face_count() {
        for k in 0..4 {
            let m = icosphere::<f64>(k);
            assert_eq!(m.num_faces(), 20 * 4usize.pow(k));
            assert_eq!(m.genus(), Some(0));
        }
    }

    #[test]
    fn outward_orientation() {
        for m in [icosphere::<f64>(2), subdivided_cube(3), octahedron(), tetrahedron()] {
            for f in m.faces() {
                let g = m.face_geometry(f).unwrap();
                assert!(g.normal.dot(g.center) > 0.0);
            }
        }
    }

    #[test]
    fn torus_has_genus_one() {
        let m = torus::<f64>(64, 32, 1.0, 0.4);
        assert_eq!(m.num_faces(), 4096);
        assert_eq!(m.genus(), Some(1));
        m.check_invariants().unwrap();
    }
}
