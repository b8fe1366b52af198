use crate::geom::Vec3;
use crate::linalg::{frobenius3, inverse3, Mat3};
use crate::mesh::{face_of, HalfedgeMesh};
use crate::scalar::Real;

/// Symmetric 4x4 quadric stored as its upper triangle:
/// `[a00, a01, a02, a03, a11, a12, a13, a22, a23, a33]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quadric<T> {
    pub q: [T; 10],
}

impl<T: Real> Default for Quadric<T> {
    fn default() -> Self {
        Self { q: [T::zero(); 10] }
    }
}

impl<T: Real> Quadric<T> {
    /// `weight * p pᵀ` for the plane `n·x + d = 0`, `p = (n, d)`.
    pub fn from_plane(n: Vec3<T>, d: T, weight: T) -> Self {
        let p = [n.x, n.y, n.z, d];
        let mut q = [T::zero(); 10];
        let mut k = 0;
        for i in 0..4 {
            for j in i..4 {
                q[k] = weight * p[i] * p[j];
                k += 1;
            }
        }
        Self { q }
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut q = self.q;
        for (a, b) in q.iter_mut().zip(o.q.iter()) {
            *a += *b;
        }
        Self { q }
    }

    pub fn matrix4(&self) -> [[T; 4]; 4] {
        let mut m = [[T::zero(); 4]; 4];
        let mut k = 0;
        for i in 0..4 {
            for j in i..4 {
                m[i][j] = self.q[k];
                m[j][i] = self.q[k];
                k += 1;
            }
        }
        m
    }

    /// Squared-distance error `[x 1] Q [x 1]ᵀ`.
    pub fn eval(&self, x: Vec3<T>) -> T {
        let m = self.matrix4();
        let v = [x.x, x.y, x.z, T::one()];
        let mut s = T::zero();
        for i in 0..4 {
            for j in 0..4 {
                s += v[i] * m[i][j] * v[j];
            }
        }
        s
    }

    /// Minimizer of the quadric when the 3x3 block is well conditioned
    /// (`‖A‖_F ‖A⁻¹‖_F ≤ 1e8`).
    pub fn minimizer(&self) -> Option<Vec3<T>> {
        let m = self.matrix4();
        let a: Mat3<T> = [[m[0][0], m[0][1], m[0][2]], [m[1][0], m[1][1], m[1][2]], [m[2][0], m[2][1], m[2][2]]];
        let inv = inverse3(&a)?;
        if frobenius3(&a) * frobenius3(&inv) > T::lit(1e8) {
            return None;
        }
        let b = [m[0][3], m[1][3], m[2][3]];
        let x = Vec3::new(
            -(inv[0][0] * b[0] + inv[0][1] * b[1] + inv[0][2] * b[2]),
            -(inv[1][0] * b[0] + inv[1][1] * b[1] + inv[1][2] * b[2]),
            -(inv[2][0] * b[0] + inv[2][1] * b[1] + inv[2][2] * b[2]),
        );
        x.is_finite().then_some(x)
    }
}

/// Area-weighted sum of the plane quadrics of the faces around `v`.
pub fn quadric_for_vertex<T: Real>(mesh: &HalfedgeMesh<T>, v: usize) -> Quadric<T> {
    let mut acc = Quadric::default();
    for h in mesh.outgoing(v) {
        let f = face_of(h);
        let cr = mesh.face_cross(f);
        let Some(n) = cr.normalized() else { continue };
        let area = cr.norm() * T::lit(0.5);
        let d = -n.dot(mesh.position(v));
        acc = acc.add(&Quadric::from_plane(n, d, area));
    }
    acc
}

/// Position minimizing `q1 + q2` and its error. Falls back to the best of
/// the midpoint and both endpoints when the system is ill conditioned.
pub fn optimal_vertex_position<T: Real>(q1: &Quadric<T>, q2: &Quadric<T>, p1: Vec3<T>, p2: Vec3<T>) -> (Vec3<T>, T) {
    let q = q1.add(q2);
    let pos = match q.minimizer() {
        Some(x) => x,
        None => {
            let mut best = (p1 + p2) * T::lit(0.5);
            let mut best_e = q.eval(best);
            for c in [p1, p2] {
                let e = q.eval(c);
                if e < best_e {
                    best = c;
                    best_e = e;
                }
            }
            best
        }
    };
    (pos, q.eval(pos).max(T::zero()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{subdivided_cube, HalfedgeMesh};

    #[test]
    fn planar_vertex_has_zero_error_on_plane() {
        let m = subdivided_cube::<f64>(4);
        let v = m
            .vertices()
            .find(|&v| {
                let p = m.position(v);
                p.z == 1.0 && p.x.abs() < 0.9 && p.y.abs() < 0.9
            })
            .unwrap();
        let q = quadric_for_vertex(&m, v);
        for (x, y) in [(0.3, -0.7), (5.0, 2.0), (-1.0, 0.0)] {
            assert!(q.eval(Vec3::new(x, y, 1.0)).abs() < 1e-14);
        }
        assert!(q.eval(Vec3::new(0.0, 0.0, 1.5)) > 0.0);
    }

    #[test]
    fn cube_corner_is_own_minimizer() {
        let m: HalfedgeMesh<f64> = subdivided_cube(2);
        let v = m.vertices().find(|&v| m.position(v) == Vec3::new(1.0, 1.0, 1.0)).unwrap();
        let x = quadric_for_vertex(&m, v).minimizer().unwrap();
        assert!((x - Vec3::new(1.0, 1.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn planar_edge_falls_back_on_plane() {
        let m = subdivided_cube::<f64>(4);
        let on_top = |v: usize| {
            let p = m.position(v);
            p.z == 1.0 && p.x.abs() < 0.9 && p.y.abs() < 0.9
        };
        let h = (0..m.halfedge_capacity()).find(|&h| on_top(m.origin(h)) && on_top(m.dest(h))).unwrap();
        let (a, b) = (m.origin(h), m.dest(h));
        let (x, e) =
            optimal_vertex_position(&quadric_for_vertex(&m, a), &quadric_for_vertex(&m, b), m.position(a), m.position(b));
        assert_eq!(x.z, 1.0);
        assert!(e.abs() < 1e-14);
    }

    #[test]
    fn tent_ridge_is_symmetric() {
        // Two planes z = 1 - |x| meeting along the ridge x = 0.
        let s = 1.0 / 2f64.sqrt();
        let left = Quadric::from_plane(Vec3::new(-s, 0.0, s), -s, 1.0);
        let right = Quadric::from_plane(Vec3::new(s, 0.0, s), -s, 1.0);
        let (x, e) =
            optimal_vertex_position(&left, &right, Vec3::new(0.0, -1.0, 1.0), Vec3::new(0.0, 1.0, 1.0));
        assert!(x.x.abs() < 1e-12);
        assert!(e < 1e-12);
    }
}
