//! Planar primitives shared by parameterization and overlay code.

use crate::geom::Vec2;
use crate::scalar::Real;

/// A planar segment from `p` to `q`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment2<T> {
    pub p: Vec2<T>,
    pub q: Vec2<T>,
}

impl<T: Real> Segment2<T> {
    pub fn new(p: Vec2<T>, q: Vec2<T>) -> Self {
        Self { p, q }
    }

    pub fn length(&self) -> T {
        (self.q - self.p).norm()
    }

    /// Point with weight `lambda` on `p` and `1 - lambda` on `q`.
    pub fn at(&self, lambda: T) -> Vec2<T> {
        self.p * lambda + self.q * (T::one() - lambda)
    }
}

/// Raised when two segments are parallel (or collinear) and the 2x2 system
/// has no unique solution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("segments are parallel or collinear")]
pub struct Collinear;

/// Solves `l1 * p1 + (1 - l1) * q1 = l2 * p2 + (1 - l2) * q2`.
///
/// Returns `Ok(Some((l1, l2)))` when both coefficients are in `[0, 1]` up to
/// `1e-9` (values are then clamped into `[0, 1]`), `Ok(None)` when the lines
/// meet outside either segment.
pub fn segment_intersection<T: Real>(s1: &Segment2<T>, s2: &Segment2<T>) -> Result<Option<(T, T)>, Collinear> {
    let d1 = s1.p - s1.q;
    let d2 = s2.p - s2.q;
    let r = s2.q - s1.q;
    let det = d1.cross(d2);
    if !(det.abs() >= T::lit(1e-12) * d1.norm() * d2.norm()) {
        return Err(Collinear);
    }
    let l1 = r.cross(d2) / det;
    let l2 = r.cross(d1) / det;
    let tol = T::lit(1e-9);
    let inside = |l: T| l >= -tol && l <= T::one() + tol;
    if inside(l1) && inside(l2) {
        Ok(Some((clamp01(l1), clamp01(l2))))
    } else {
        Ok(None)
    }
}

#[inline]
pub fn clamp01<T: Real>(v: T) -> T {
    v.max(T::zero()).min(T::one())
}

/// Signed shoelace area; positive for counter-clockwise polygons.
pub fn signed_polygon_area<T: Real>(points: &[Vec2<T>]) -> T {
    if points.len() < 3 {
        return T::zero();
    }
    let mut acc = T::zero();
    for i in 0..points.len() {
        let j = (i + 1) % points.len();
        acc += points[i].cross(points[j]);
    }
    acc * T::lit(0.5)
}

/// Absolute shoelace area; degenerate input gives 0.
pub fn polygon_area<T: Real>(points: &[Vec2<T>]) -> T {
    signed_polygon_area(points).abs()
}

/// A polygon vertex that can be split along a clipping line.
pub trait ClipVertex<T: Real>: Clone {
    fn pos(&self) -> Vec2<T>;

    /// Point at parameter `t` from `self` to `other`, created on clip edge
    /// `clip_edge` of the clipping triangle.
    fn split(&self, other: &Self, t: T, clip_edge: usize) -> Self;

    /// Absorbs a near-duplicate neighbour that is being dropped.
    fn merge(&mut self, _other: &Self) {}
}

impl<T: Real> ClipVertex<T> for Vec2<T> {
    fn pos(&self) -> Vec2<T> {
        *self
    }

    fn split(&self, other: &Self, t: T, _clip_edge: usize) -> Self {
        self.lerp(*other, t)
    }
}

/// Clips a convex polygon against a counter-clockwise triangle
/// (Sutherland–Hodgman over the triangle's three halfplanes). Consecutive
/// vertices closer than `dedup_eps` are merged; fewer than 3 remaining
/// vertices yields an empty polygon.
pub fn clip_convex_by_triangle<T: Real, V: ClipVertex<T>>(poly: &[V], tri: &[Vec2<T>; 3], dedup_eps: T) -> Vec<V> {
    let mut cur: Vec<V> = poly.to_vec();
    let mut next: Vec<V> = Vec::with_capacity(poly.len() + 3);
    for k in 0..3 {
        if cur.is_empty() {
            break;
        }
        let a = tri[k];
        let b = tri[(k + 1) % 3];
        let dir = b - a;
        let side = |p: Vec2<T>| dir.cross(p - a);
        next.clear();
        let n = cur.len();
        for i in 0..n {
            let va = &cur[i];
            let vb = &cur[(i + 1) % n];
            let da = side(va.pos());
            let db = side(vb.pos());
            let ina = da >= T::zero();
            if ina {
                next.push(va.clone());
            }
            // Vertices exactly on the line are kept as they are, never split.
            if (da > T::zero() && db < T::zero()) || (da < T::zero() && db > T::zero()) {
                let t = da / (da - db);
                next.push(va.split(vb, t, k));
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    dedup_ring(&mut cur, dedup_eps);
    if cur.len() < 3 {
        cur.clear();
    }
    cur
}

/// Removes consecutive (cyclic) duplicates closer than `eps`.
pub fn dedup_ring<T: Real, V: ClipVertex<T>>(ring: &mut Vec<V>, eps: T) {
    if ring.len() < 2 {
        return;
    }
    let mut out: Vec<V> = Vec::with_capacity(ring.len());
    for v in ring.drain(..) {
        if let Some(last) = out.last_mut() {
            if (last.pos() - v.pos()).norm() <= eps {
                last.merge(&v);
                continue;
            }
        }
        out.push(v);
    }
    while out.len() > 1 && (out[0].pos() - out[out.len() - 1].pos()).norm() <= eps {
        let v = out.pop().expect("len > 1");
        out[0].merge(&v);
    }
    *ring = out;
}

/// Do segments (a, b) and (c, d) touch or cross?
pub fn segments_touch<T: Real>(a: Vec2<T>, b: Vec2<T>, c: Vec2<T>, d: Vec2<T>) -> bool {
    let o1 = (b - a).cross(c - a);
    let o2 = (b - a).cross(d - a);
    let o3 = (d - c).cross(a - c);
    let o4 = (d - c).cross(b - c);
    let z = T::zero();
    if ((o1 > z && o2 < z) || (o1 < z && o2 > z)) && ((o3 > z && o4 < z) || (o3 < z && o4 > z)) {
        return true;
    }
    let on = |p: Vec2<T>, q: Vec2<T>, r: Vec2<T>, o: T| {
        o == z && r.x >= p.x.min(q.x) && r.x <= p.x.max(q.x) && r.y >= p.y.min(q.y) && r.y <= p.y.max(q.y)
    };
    on(a, b, c, o1) || on(a, b, d, o2) || on(c, d, a, o3) || on(c, d, b, o4)
}

/// True when the closed polygon has no two non-adjacent edges touching.
pub fn is_simple_polygon<T: Real>(points: &[Vec2<T>]) -> bool {
    let n = points.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let (a, b) = (points[i], points[(i + 1) % n]);
        for j in i + 1..n {
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (c, d) = (points[j], points[(j + 1) % n]);
            if segments_touch(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: f64, y: f64) -> Vec2<f64> {
        Vec2::new(x, y)
    }

    #[test]
    fn perpendicular_midpoint_crossing() {
        let s1 = Segment2::new(v(0., -1.), v(0., 1.));
        let s2 = Segment2::new(v(-1., 0.), v(1., 0.));
        let (l1, l2) = segment_intersection(&s1, &s2).unwrap().unwrap();
        assert!((l1 - 0.5).abs() < 1e-15 && (l2 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn parallel_segments_are_collinear_signal() {
        let s1 = Segment2::new(v(0., 0.), v(1., 0.));
        let s2 = Segment2::new(v(0., 1.), v(1., 1.));
        assert_eq!(segment_intersection(&s1, &s2), Err(Collinear));
    }

    #[test]
    fn disjoint_segments_miss() {
        let s1 = Segment2::new(v(0., 0.), v(1., 0.));
        let s2 = Segment2::new(v(2., -1.), v(2., 1.));
        assert_eq!(segment_intersection(&s1, &s2), Ok(None));
    }

    #[test]
    fn square_and_triangle_areas() {
        assert_eq!(polygon_area(&[v(0., 0.), v(1., 0.), v(1., 1.), v(0., 1.)]), 1.0);
        assert_eq!(polygon_area(&[v(0., 0.), v(1., 0.), v(0., 1.)]), 0.5);
        assert_eq!(polygon_area(&[v(0., 0.), v(1., 0.)]), 0.0);
    }

    /// Independent oracle: parameter along each segment from the
    /// cross-product ratio of the endpoints' signed distances.
    fn cross_ratio_oracle(s1: &Segment2<f64>, s2: &Segment2<f64>) -> Option<(f64, f64)> {
        let side2 = |p: Vec2<f64>| (s2.q - s2.p).cross(p - s2.p);
        let side1 = |p: Vec2<f64>| (s1.q - s1.p).cross(p - s1.p);
        let (a, b) = (side2(s1.p), side2(s1.q));
        let (c, d) = (side1(s2.p), side1(s2.q));
        if a * b > 0.0 || c * d > 0.0 {
            return None;
        }
        // Weight on p is the fraction of the signed distance carried by q.
        Some((b / (b - a), d / (d - c)))
    }

    proptest! {
        #[test]
        fn intersection_matches_cross_ratio(coords in proptest::collection::vec(-1.0f64..1.0, 8)) {
            let s1 = Segment2::new(v(coords[0], coords[1]), v(coords[2], coords[3]));
            let s2 = Segment2::new(v(coords[4], coords[5]), v(coords[6], coords[7]));
            prop_assume!(s1.length() > 1e-3 && s2.length() > 1e-3);
            let (d1, d2) = (s1.p - s1.q, s2.p - s2.q);
            prop_assume!(d1.cross(d2).abs() > 1e-3 * d1.norm() * d2.norm());
            let got = segment_intersection(&s1, &s2).unwrap();
            let oracle = cross_ratio_oracle(&s1, &s2);
            match (got, oracle) {
                (Some((l1, l2)), Some((o1, o2))) => {
                    prop_assert!((l1 - o1).abs() < 1e-9 && (l2 - o2).abs() < 1e-9);
                }
                (None, None) => {}
                (g, o) => {
                    // Only borderline cases within the tolerance may disagree.
                    let (l1, l2) = g.or(o).unwrap();
                    prop_assert!(l1.min(1.0 - l1) < 1e-8 || l2.min(1.0 - l2) < 1e-8);
                }
            }
        }

        #[test]
        fn intersection_symmetric(coords in proptest::collection::vec(-1.0f64..1.0, 8)) {
            let s1 = Segment2::new(v(coords[0], coords[1]), v(coords[2], coords[3]));
            let s2 = Segment2::new(v(coords[4], coords[5]), v(coords[6], coords[7]));
            let a = segment_intersection(&s1, &s2);
            let b = segment_intersection(&s2, &s1);
            match (a, b) {
                (Ok(Some((l1, l2))), Ok(Some((m1, m2)))) => {
                    prop_assert!((l1 - m2).abs() < 1e-12 && (l2 - m1).abs() < 1e-12);
                }
                (Ok(None), Ok(None)) | (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "asymmetric outcome"),
            }
        }

        #[test]
        fn convex_area_matches_fan(n in 3usize..12, seed in 0u64..10_000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
            angles.sort_by(f64::total_cmp);
            let r = rng.random_range(0.1..3.0);
            let c = v(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let pts: Vec<_> = angles.iter().map(|a| c + v(a.cos(), a.sin()) * r).collect();
            let mut fan = 0.0;
            for i in 1..n - 1 {
                let (a, b, d) = (pts[0], pts[i], pts[i + 1]);
                fan += ((b - a).cross(d - a) * 0.5).abs();
            }
            prop_assert!((polygon_area(&pts) - fan).abs() < 1e-12);
            // Cyclic rotation and reversal.
            let mut rot = pts.clone();
            rot.rotate_left(n / 2);
            prop_assert!((polygon_area(&rot) - fan).abs() < 1e-12);
            let mut rev = pts.clone();
            rev.reverse();
            prop_assert!((signed_polygon_area(&rev) + signed_polygon_area(&pts)).abs() < 1e-12);
        }
    }

    #[test]
    fn clip_triangle_against_itself() {
        let tri = [v(0., 0.), v(1., 0.), v(0.2, 0.9)];
        let out = clip_convex_by_triangle(&tri, &tri, 1e-12);
        assert_eq!(out.len(), 3);
        assert!((polygon_area(&out) - polygon_area(&tri)).abs() < 1e-15);
    }

    #[test]
    fn simple_polygon_detection() {
        assert!(is_simple_polygon(&[v(0., 0.), v(1., 0.), v(1., 1.), v(0., 1.)]));
        assert!(!is_simple_polygon(&[v(0., 0.), v(1., 1.), v(1., 0.), v(0., 1.)]));
    }
}
