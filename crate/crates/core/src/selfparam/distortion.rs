use crate::geom::{signed_area2, TriangleFrame, Vec2};
use crate::linalg::{det2, frobenius2_sq, inverse2, mul2, Mat2};
use crate::planar::{clip_convex_by_triangle, polygon_area};
use crate::scalar::Real;

use super::patch::FlattenedPatch;

/// One piece of the common refinement of two flattened patches.
#[derive(Clone, Debug)]
pub struct MutualCell<T> {
    /// Triangle index in the first patch.
    pub p_tri: usize,
    /// Triangle index in the second patch.
    pub q_tri: usize,
    pub polygon: Vec<Vec2<T>>,
    pub uv_area: T,
}

fn bbox<T: Real>(t: &[Vec2<T>; 3]) -> (Vec2<T>, Vec2<T>) {
    let lo = Vec2::new(t[0].x.min(t[1].x).min(t[2].x), t[0].y.min(t[1].y).min(t[2].y));
    let hi = Vec2::new(t[0].x.max(t[1].x).max(t[2].x), t[0].y.max(t[1].y).max(t[2].y));
    (lo, hi)
}

/// Intersections of every triangle of `p` with every triangle of `q` in the
/// shared UV domain.
pub fn mutual_tessellation<T: Real>(p: &FlattenedPatch<T>, q: &FlattenedPatch<T>) -> Vec<MutualCell<T>> {
    let eps = T::lit(1e-12) * p.diameter();
    let qt: Vec<([Vec2<T>; 3], (Vec2<T>, Vec2<T>))> = (0..q.tris.len())
        .map(|j| {
            let t = q.triangle_uv(j);
            (t, bbox(&t))
        })
        .collect();
    let mut out = Vec::new();
    for i in 0..p.tris.len() {
        let tp = p.triangle_uv(i);
        let (lo, hi) = bbox(&tp);
        for (j, (tq, (qlo, qhi))) in qt.iter().enumerate() {
            if qlo.x > hi.x || qhi.x < lo.x || qlo.y > hi.y || qhi.y < lo.y {
                continue;
            }
            let poly = clip_convex_by_triangle(&tp, tq, eps);
            if poly.is_empty() {
                continue;
            }
            let uv_area = polygon_area(&poly);
            if uv_area > T::zero() {
                out.push(MutualCell { p_tri: i, q_tri: j, polygon: poly, uv_area });
            }
        }
    }
    out
}

/// Linear part of the affine map taking the 3D triangle (in its own frame)
/// to its UV triangle.
fn to_uv<T: Real>(patch: &FlattenedPatch<T>, t: usize) -> Option<Mat2<T>> {
    let [a, b, c] = patch.triangle_pos3(t);
    let loc = TriangleFrame::local_triangle(a, b, c)?;
    let uv = patch.triangle_uv(t);
    let x = [[loc[1].x - loc[0].x, loc[2].x - loc[0].x], [loc[1].y - loc[0].y, loc[2].y - loc[0].y]];
    let u = [[uv[1].x - uv[0].x, uv[2].x - uv[0].x], [uv[1].y - uv[0].y, uv[2].y - uv[0].y]];
    Some(mul2(&u, &inverse2(&x)?))
}

/// Symmetric Dirichlet energy of the map `P_3d -> UV -> Q_3d`, integrated
/// over the 3D area of `P`. Infinite when any cell Jacobian is singular.
pub fn symmetric_dirichlet<T: Real>(p: &FlattenedPatch<T>, q: &FlattenedPatch<T>, cells: &[MutualCell<T>]) -> T {
    let ap: Vec<Option<Mat2<T>>> = (0..p.tris.len()).map(|t| to_uv(p, t)).collect();
    let bq: Vec<Option<Mat2<T>>> = (0..q.tris.len()).map(|t| to_uv(q, t).and_then(|m| inverse2(&m))).collect();
    let mut e = T::zero();
    for c in cells {
        let (Some(a), Some(b)) = (ap[c.p_tri], bq[c.q_tri]) else { return T::infinity() };
        let det_a = det2(&a);
        if !(det_a > T::zero()) {
            return T::infinity();
        }
        let j = mul2(&b, &a);
        let dj = det2(&j);
        let tol = T::lit(1e-12) * frobenius2_sq(&j);
        if !(dj.abs() > tol) {
            return T::infinity();
        }
        let f2 = frobenius2_sq(&j);
        e += c.uv_area / det_a * (f2 + f2 / (dj * dj));
    }
    e
}

/// 3D area of `P` as seen through the cells; equals the patch area when the
/// cells tile it.
pub fn cell_area_3d<T: Real>(p: &FlattenedPatch<T>, cells: &[MutualCell<T>]) -> T {
    cells
        .iter()
        .map(|c| match to_uv(p, c.p_tri) {
            Some(a) => c.uv_area / det2(&a),
            None => T::zero(),
        })
        .sum()
}

/// Total UV area of the triangles of `patch`.
pub fn uv_area<T: Real>(patch: &FlattenedPatch<T>) -> T {
    (0..patch.tris.len())
        .map(|t| {
            let [a, b, c] = patch.triangle_uv(t);
            signed_area2(a, b, c)
        })
        .sum()
}
