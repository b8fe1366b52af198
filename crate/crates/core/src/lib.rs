//! Mesh pyramids with bijective inter-level maps, area-overlap resampling
//! operators and a multi-resolution face convolution network.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`, which is what the tolerances are tuned for.

#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::type_complexity
)]

pub mod geom;
pub mod linalg;
pub mod mesh;
pub mod network;
pub mod ops;
pub mod overlay;
pub mod planar;
pub mod pyramid;
pub mod scalar;
pub mod selfparam;

pub use geom::{Vec2, Vec3};
pub use mesh::{HalfedgeMesh, MeshError};
pub use scalar::Real;

pub type Mesh = HalfedgeMesh<f64>;
pub type Mesh32 = HalfedgeMesh<f32>;
pub type Pyramid = pyramid::MeshPyramid<f64>;
pub type Pyramid32 = pyramid::MeshPyramid<f32>;
pub type Field = ops::FeatureField<f64>;
pub type Field32 = ops::FeatureField<f32>;
pub type Params = network::NetParams<f64>;
pub type Params32 = network::NetParams<f32>;
