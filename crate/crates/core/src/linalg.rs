//! Dense solvers for the small systems that appear per patch.

use crate::scalar::Real;

/// Solves `a * x = b` for a row-major `n x n` matrix by Gaussian elimination
/// with partial pivoting. Returns `None` for a (numerically) singular matrix.
pub fn solve_dense<T: Real>(mut a: Vec<T>, mut b: Vec<T>, n: usize) -> Option<Vec<T>> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    let scale = a.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    if scale == T::zero() {
        return None;
    }
    let tiny = scale * T::lit(1e-14);
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[r * n + col].abs() > a[piv * n + col].abs() {
                piv = r;
            }
        }
        if !(a[piv * n + col].abs() > tiny) {
            return None;
        }
        if piv != col {
            for c in 0..n {
                a.swap(col * n + c, piv * n + c);
            }
            b.swap(col, piv);
        }
        let d = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / d;
            if f == T::zero() {
                continue;
            }
            for c in col..n {
                let v = a[col * n + c];
                a[r * n + c] -= f * v;
            }
            let bc = b[col];
            b[r] -= f * bc;
        }
    }
    let mut x = vec![T::zero(); n];
    for r in (0..n).rev() {
        let mut acc = b[r];
        for c in r + 1..n {
            acc -= a[r * n + c] * x[c];
        }
        x[r] = acc / a[r * n + r];
    }
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}

pub type Mat3<T> = [[T; 3]; 3];

pub fn det3<T: Real>(m: &Mat3<T>) -> T {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Inverse by adjugate, `None` when the determinant vanishes.
pub fn inverse3<T: Real>(m: &Mat3<T>) -> Option<Mat3<T>> {
    let det = det3(m);
    if det == T::zero() || !det.is_finite() {
        return None;
    }
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let adj = [
        [c(1, 2, 1, 2), -c(0, 2, 1, 2), c(0, 1, 1, 2)],
        [-c(1, 2, 0, 2), c(0, 2, 0, 2), -c(0, 1, 0, 2)],
        [c(1, 2, 0, 1), -c(0, 2, 0, 1), c(0, 1, 0, 1)],
    ];
    let mut inv = [[T::zero(); 3]; 3];
    for r in 0..3 {
        for col in 0..3 {
            inv[r][col] = adj[r][col] / det;
        }
    }
    Some(inv)
}

pub fn frobenius3<T: Real>(m: &Mat3<T>) -> T {
    m.iter().flatten().map(|v| *v * *v).sum::<T>().sqrt()
}

/// 2x2 matrix stored row-major as `[[a, b], [c, d]]`.
pub type Mat2<T> = [[T; 2]; 2];

pub fn det2<T: Real>(m: &Mat2<T>) -> T {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

pub fn inverse2<T: Real>(m: &Mat2<T>) -> Option<Mat2<T>> {
    let d = det2(m);
    if d == T::zero() || !d.is_finite() {
        return None;
    }
    Some([[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]])
}

pub fn mul2<T: Real>(a: &Mat2<T>, b: &Mat2<T>) -> Mat2<T> {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

pub fn frobenius2_sq<T: Real>(m: &Mat2<T>) -> T {
    m[0][0] * m[0][0] + m[0][1] * m[0][1] + m[1][0] * m[1][0] + m[1][1] * m[1][1]
}
