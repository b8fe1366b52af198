//! Small fixed-size vectors and planar primitives.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Vec2<T> {
    pub x: T,
    pub y: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Vec2<T> {
    #[inline]
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    #[inline]
    pub fn cross(self, o: Self) -> T {
        self.x * o.y - self.y * o.x
    }

    #[inline]
    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    /// Counter-clockwise rotation by 90 degrees.
    #[inline]
    pub fn perp(self) -> Self {
        Self::new(-self.y, self.x)
    }

    #[inline]
    pub fn lerp(self, o: Self, t: T) -> Self {
        self + (o - self) * t
    }
}

impl<T: Real> Vec3<T> {
    #[inline]
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    #[inline]
    pub fn norm_squared(self) -> T {
        self.dot(self)
    }

    /// Unit vector, or `None` when the norm is zero or not finite.
    pub fn normalized(self) -> Option<Self> {
        let n = self.norm();
        if n > T::zero() && n.is_finite() {
            Some(self / n)
        } else {
            None
        }
    }

    #[inline]
    pub fn lerp(self, o: Self, t: T) -> Self {
        self + (o - self) * t
    }

    #[inline]
    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    #[inline]
    pub fn from_array(a: [T; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

macro_rules! impl_vec_ops {
    ($v:ident { $($f:ident),+ }) => {
        impl<T: Real> Add for $v<T> {
            type Output = Self;
            #[inline]
            fn add(self, o: Self) -> Self { Self { $($f: self.$f + o.$f),+ } }
        }
        impl<T: Real> Sub for $v<T> {
            type Output = Self;
            #[inline]
            fn sub(self, o: Self) -> Self { Self { $($f: self.$f - o.$f),+ } }
        }
        impl<T: Real> Mul<T> for $v<T> {
            type Output = Self;
            #[inline]
            fn mul(self, s: T) -> Self { Self { $($f: self.$f * s),+ } }
        }
        impl<T: Real> Div<T> for $v<T> {
            type Output = Self;
            #[inline]
            fn div(self, s: T) -> Self { Self { $($f: self.$f / s),+ } }
        }
        impl<T: Real> Neg for $v<T> {
            type Output = Self;
            #[inline]
            fn neg(self) -> Self { Self { $($f: -self.$f),+ } }
        }
    };
}

impl_vec_ops!(Vec2 { x, y });
impl_vec_ops!(Vec3 { x, y, z });

/// Signed area of the planar triangle (a, b, c); positive when counter-clockwise.
#[inline]
pub fn signed_area2<T: Real>(a: Vec2<T>, b: Vec2<T>, c: Vec2<T>) -> T {
    (b - a).cross(c - a) * T::lit(0.5)
}

/// Barycentric weights of `p` with respect to (a, b, c), or `None` for a
/// degenerate triangle.
pub fn barycentric<T: Real>(p: Vec2<T>, a: Vec2<T>, b: Vec2<T>, c: Vec2<T>) -> Option<[T; 3]> {
    let d = (b - a).cross(c - a);
    if d == T::zero() || !d.is_finite() {
        return None;
    }
    let wa = (b - p).cross(c - p) / d;
    let wb = (c - p).cross(a - p) / d;
    Some([wa, wb, T::one() - wa - wb])
}

/// Oriented orthonormal frame of a 3D triangle; maps points into the
/// triangle's plane with its first vertex at the origin and first edge on +x.
#[derive(Clone, Copy, Debug)]
pub struct TriangleFrame<T> {
    pub origin: Vec3<T>,
    pub ex: Vec3<T>,
    pub ey: Vec3<T>,
}

impl<T: Real> TriangleFrame<T> {
    pub fn new(a: Vec3<T>, b: Vec3<T>, c: Vec3<T>) -> Option<Self> {
        let ex = (b - a).normalized()?;
        let n = (b - a).cross(c - a).normalized()?;
        let ey = n.cross(ex);
        Some(Self { origin: a, ex, ey })
    }

    #[inline]
    pub fn project(&self, p: Vec3<T>) -> Vec2<T> {
        let d = p - self.origin;
        Vec2::new(d.dot(self.ex), d.dot(self.ey))
    }

    #[inline]
    pub fn lift(&self, q: Vec2<T>) -> Vec3<T> {
        self.origin + self.ex * q.x + self.ey * q.y
    }

    /// The triangle's three corners in frame coordinates.
    pub fn local_triangle(a: Vec3<T>, b: Vec3<T>, c: Vec3<T>) -> Option<[Vec2<T>; 3]> {
        let f = Self::new(a, b, c)?;
        Some([f.project(a), f.project(b), f.project(c)])
    }
}
