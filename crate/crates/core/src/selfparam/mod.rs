//! Edge-collapse decimation that keeps a bijective piecewise-linear map
//! between the input mesh and its decimated version.
//!
//! Each collapse flattens the faces around the edge (`P`) and around the new
//! vertex (`Q`) into one UV domain. Fine vertices are re-located from `P` to
//! `Q`, and the pieces of fine faces carried by every working face ("cells")
//! are clipped against the new faces, so the common refinement of both
//! meshes is available exactly when the target is reached.

mod decimate;
pub mod distortion;
pub mod patch;
pub mod quadric;

pub use decimate::{
    decimate_qem_reference, decimate_to, replay_collapses, extract_crossings, extract_reverse_triplets, Cell, CellVertex,
    CollapseCandidate, CollapseRecord, Decimation, TrackedDecimation,
};
pub use distortion::{mutual_tessellation, symmetric_dirichlet, MutualCell};
pub use patch::{flatten_star_patch, lscm_flatten_edge_patch, point_locate, FlattenedPatch};
pub use quadric::{optimal_vertex_position, quadric_for_vertex, Quadric};

use thiserror::Error;

use crate::mesh::{face_of, HalfedgeMesh, MeshError};
use crate::scalar::Real;

/// Default weight of the distortion term.
pub const DEFAULT_DISTORTION_WEIGHT: f64 = 0.1;

/// Barycentric components below this are snapped to zero.
pub const BARY_SNAP: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SelfParamError {
    #[error("patch around the edge is not a topological disk")]
    NotDisk,
    #[error("flattening produced a flipped or degenerate triangle")]
    FlipDetected,
    #[error("point lies outside the patch")]
    OutsidePatch,
    #[error("collapse rejected: {0}")]
    RejectedCollapse(&'static str),
    #[error("target of {target} faces unreachable: stuck at {reached}")]
    TargetUnreachable { reached: usize, target: usize },
    #[error("invalid target {target} for a mesh with {faces} faces")]
    InvalidTarget { target: usize, faces: usize },
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Position of a fine vertex on the coarse surface: weights `alpha` and
/// `beta` on corners 0 and 1 of `face`, `1 - alpha - beta` on corner 2.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaryTriplet<T> {
    pub face: usize,
    pub alpha: T,
    pub beta: T,
}

impl<T: Real> BaryTriplet<T> {
    pub fn weights(&self) -> [T; 3] {
        [self.alpha, self.beta, T::one() - self.alpha - self.beta]
    }

    pub fn from_weights(face: usize, w: [T; 3]) -> Self {
        Self { face, alpha: w[0], beta: w[1] }
    }

    /// Point on the named face of `mesh`.
    pub fn point(&self, mesh: &HalfedgeMesh<T>) -> crate::geom::Vec3<T> {
        let [a, b, c] = mesh.face_positions(self.face);
        let w = self.weights();
        a * w[0] + b * w[1] + c * w[2]
    }
}

/// Crossing of fine edge `fine_edge` with coarse halfedge `coarse_halfedge`.
/// `lambda1` weights the origin of the fine edge's canonical halfedge,
/// `lambda2` the origin of the coarse halfedge.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeCrossing<T> {
    pub fine_edge: usize,
    pub coarse_halfedge: usize,
    pub lambda1: T,
    pub lambda2: T,
}

/// A coarse vertex located on the fine surface.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReverseTriplet<T> {
    pub coarse_vertex: usize,
    pub fine: BaryTriplet<T>,
}

/// Clamps barycentrics into the simplex: components below [`BARY_SNAP`]
/// become 0 and the rest are renormalized.
pub fn snap_barycentric<T: Real>(w: [T; 3]) -> [T; 3] {
    let eps = T::lit(BARY_SNAP);
    let mut s = w.map(|x| if x < eps { T::zero() } else { x });
    let sum = s[0] + s[1] + s[2];
    if sum > T::zero() {
        for x in s.iter_mut() {
            *x /= sum;
        }
    }
    s
}

/// Crossings on `halfedge`, ordered from its origin. Crossings stored on the
/// twin are reversed with `lambda2 -> 1 - lambda2`.
pub fn crossings_along<T: Real>(
    mesh: &HalfedgeMesh<T>,
    crossings: &[EdgeCrossing<T>],
    halfedge: usize,
) -> Vec<EdgeCrossing<T>> {
    let twin = mesh.twin(halfedge);
    let mut out: Vec<EdgeCrossing<T>> = crossings
        .iter()
        .filter_map(|c| {
            if c.coarse_halfedge == halfedge {
                Some(*c)
            } else if c.coarse_halfedge == twin {
                Some(EdgeCrossing { coarse_halfedge: halfedge, lambda2: T::one() - c.lambda2, ..*c })
            } else {
                None
            }
        })
        .collect();
    out.sort_by(|a, b| b.lambda2.total_cmp_lossy(&a.lambda2));
    out
}

/// Checks the stored crossing tables:
/// - along every coarse halfedge, `lambda2` strictly decreases;
/// - every fine edge, walked from its origin through its crossings, only
///   steps between coarse faces that share the crossed edge.
pub fn audit_crossings<T: Real>(
    fine: &HalfedgeMesh<T>,
    coarse: &HalfedgeMesh<T>,
    triplets: &[BaryTriplet<T>],
    crossings: &[EdgeCrossing<T>],
) -> Result<(), String> {
    for w in crossings.windows(2) {
        if w[0].coarse_halfedge == w[1].coarse_halfedge && !(w[0].lambda2 > w[1].lambda2) {
            return Err(format!("crossings on coarse halfedge {} not strictly ordered", w[0].coarse_halfedge));
        }
    }
    let mut by_edge: Vec<Vec<EdgeCrossing<T>>> = vec![Vec::new(); fine.edge_capacity()];
    for c in crossings {
        if c.fine_edge >= by_edge.len() || !coarse.is_face_alive(face_of(c.coarse_halfedge)) {
            return Err(format!("crossing refers to invalid ids ({}, {})", c.fine_edge, c.coarse_halfedge));
        }
        let in01 = |x: T| x >= T::zero() && x <= T::one();
        if !in01(c.lambda1) || !in01(c.lambda2) {
            return Err(format!("crossing coefficient outside [0, 1] on fine edge {}", c.fine_edge));
        }
        by_edge[c.fine_edge].push(*c);
    }
    for e in fine.edges() {
        let list = &mut by_edge[e];
        if list.is_empty() {
            continue;
        }
        list.sort_by(|a, b| b.lambda1.total_cmp_lossy(&a.lambda1));
        let h = fine.edge_halfedge(e);
        let mut current = support_faces(coarse, &triplets[fine.origin(h)]);
        for c in list.iter() {
            let here = [face_of(c.coarse_halfedge), face_of(coarse.twin(c.coarse_halfedge))];
            if !here.iter().any(|f| current.contains(f)) {
                return Err(format!("fine edge {e} jumps between unconnected coarse faces"));
            }
            current = here.to_vec();
        }
        let end = support_faces(coarse, &triplets[fine.dest(h)]);
        if !end.iter().any(|f| current.contains(f)) {
            return Err(format!("fine edge {e} does not end in a face next to its last crossing"));
        }
    }
    Ok(())
}

/// Coarse faces whose closure contains the triplet's point.
fn support_faces<T: Real>(coarse: &HalfedgeMesh<T>, t: &BaryTriplet<T>) -> Vec<usize> {
    let w = t.weights();
    let zeros: Vec<usize> = (0..3).filter(|&k| w[k] == T::zero()).collect();
    match zeros.as_slice() {
        [z] => {
            let h = 3 * t.face + (z + 1) % 3;
            vec![t.face, face_of(coarse.twin(h))]
        }
        [z0, z1] => {
            let corner = 3 - z0 - z1;
            let v = coarse.face_vertices(t.face)[corner];
            coarse.vertex_faces(v)
        }
        _ => vec![t.face],
    }
}

/// Checks that every fine vertex has a triplet on a live coarse face with
/// barycentrics in the simplex.
pub fn audit_triplets<T: Real>(coarse: &HalfedgeMesh<T>, triplets: &[BaryTriplet<T>], n_fine: usize) -> Result<(), String> {
    if triplets.len() != n_fine {
        return Err(format!("{} triplets for {} fine vertices", triplets.len(), n_fine));
    }
    for (v, t) in triplets.iter().enumerate() {
        if t.face >= coarse.face_capacity() || !coarse.is_face_alive(t.face) {
            return Err(format!("vertex {v} maps to invalid face {}", t.face));
        }
        let w = t.weights();
        let tol = T::lit(1e-9);
        if w.iter().any(|&x| x < -tol || x > T::one() + tol) {
            return Err(format!("vertex {v} has barycentrics outside the simplex"));
        }
    }
    Ok(())
}
