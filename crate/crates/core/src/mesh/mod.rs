//! Indexed halfedge triangle mesh.
//!
//! Halfedges are stored three per face: halfedge `3f + k` leaves corner `k`
//! of face `f` and points at corner `k + 1`. `next`, `prev` and `face` are
//! therefore implicit, and only origin, twin and edge id are stored.
//! Collapses leave tombstones (dead faces, edges and vertices) in place so
//! that ids held by map tables stay valid until [`HalfedgeMesh::compact`].

mod generate;
mod obj;

pub use generate::{icosphere, octahedron, subdivided_cube, tetrahedron, torus};
pub use obj::{load_obj, parse_obj, save_obj, write_obj};

use std::collections::HashMap;

use thiserror::Error;

use crate::geom::Vec3;
use crate::scalar::Real;

pub const INVALID: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("non-manifold mesh: {0}")]
    NonManifold(String),
    #[error("mesh is not watertight: {count} boundary halfedge(s), first from vertex {first_origin} to {first_dest}")]
    NotWatertight { count: usize, first_origin: usize, first_dest: usize },
    #[error("inconsistent winding across edge ({0}, {1})")]
    InconsistentWinding(usize, usize),
    #[error("degenerate face {0}")]
    DegenerateFace(usize),
    #[error("degenerate vertex {0}: incident faces have no area")]
    DegenerateVertex(usize),
    #[error("invalid {kind} id {id}")]
    InvalidId { kind: &'static str, id: usize },
}

pub type Result<T> = std::result::Result<T, MeshError>;

/// Center, area and unit normal of one face.
#[derive(Clone, Copy, Debug)]
pub struct FaceGeometry<T> {
    pub center: Vec3<T>,
    pub area: T,
    pub normal: Vec3<T>,
}

/// Index maps produced by [`HalfedgeMesh::compact`]; `None` marks a removed
/// element.
#[derive(Clone, Debug, Default)]
pub struct Compaction {
    pub vertex_map: Vec<Option<usize>>,
    pub face_map: Vec<Option<usize>>,
}

#[derive(Clone, Debug)]
pub struct HalfedgeMesh<T> {
    positions: Vec<Vec3<T>>,
    origin: Vec<u32>,
    twin: Vec<u32>,
    edge: Vec<u32>,
    edge_he: Vec<u32>,
    vertex_he: Vec<u32>,
    face_alive: Vec<bool>,
    vertex_alive: Vec<bool>,
    edge_alive: Vec<bool>,
    live_faces: usize,
    live_vertices: usize,
    live_edges: usize,
    /// Squared bounding-box diagonal at construction; scale for tolerances.
    scale2: T,
}

#[inline]
pub fn next_he(h: usize) -> usize {
    3 * (h / 3) + (h % 3 + 1) % 3
}

#[inline]
pub fn prev_he(h: usize) -> usize {
    3 * (h / 3) + (h % 3 + 2) % 3
}

#[inline]
pub fn face_of(h: usize) -> usize {
    h / 3
}

impl<T: Real> HalfedgeMesh<T> {
    /// Builds connectivity from positions and counter-clockwise triangles and
    /// validates that the result is a closed, consistently oriented 2-manifold.
    pub fn from_triangles(positions: Vec<Vec3<T>>, faces: &[[usize; 3]]) -> Result<Self> {
        let nv = positions.len();
        let nh = faces.len() * 3;
        let mut origin = Vec::with_capacity(nh);
        for (f, tri) in faces.iter().enumerate() {
            for &v in tri {
                if v >= nv {
                    return Err(MeshError::InvalidId { kind: "vertex", id: v });
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[2] == tri[0] {
                return Err(MeshError::DegenerateFace(f));
            }
            origin.extend(tri.iter().map(|&v| v as u32));
        }

        let mut directed: HashMap<(u32, u32), u32> = HashMap::with_capacity(nh);
        for h in 0..nh {
            let key = (origin[h], origin[next_he(h)]);
            if directed.insert(key, h as u32).is_some() {
                let (a, b) = (key.0 as usize, key.1 as usize);
                // Same directed edge twice: either a third face on the edge or
                // two faces that disagree on orientation.
                let rev = directed.contains_key(&(key.1, key.0));
                return Err(if rev {
                    MeshError::NonManifold(format!("edge ({a}, {b}) has more than two faces"))
                } else {
                    MeshError::InconsistentWinding(a, b)
                });
            }
        }

        let mut twin = vec![INVALID; nh];
        let mut boundary = Vec::new();
        for h in 0..nh {
            let key = (origin[next_he(h)], origin[h]);
            match directed.get(&key) {
                Some(&t) => twin[h] = t,
                None => boundary.push(h),
            }
        }
        if let Some(&h) = boundary.first() {
            return Err(MeshError::NotWatertight {
                count: boundary.len(),
                first_origin: origin[h] as usize,
                first_dest: origin[next_he(h)] as usize,
            });
        }

        let mut edge = vec![INVALID; nh];
        let mut edge_he = Vec::with_capacity(nh / 2);
        for h in 0..nh {
            if edge[h] == INVALID {
                let e = edge_he.len() as u32;
                edge[h] = e;
                edge[twin[h] as usize] = e;
                edge_he.push(h as u32);
            }
        }

        let mut vertex_he = vec![INVALID; nv];
        for h in 0..nh {
            let v = origin[h] as usize;
            if vertex_he[v] == INVALID {
                vertex_he[v] = h as u32;
            }
        }
        if let Some(v) = vertex_he.iter().position(|&h| h == INVALID) {
            return Err(MeshError::NonManifold(format!("vertex {v} is not referenced by any face")));
        }

        let scale2 = bbox_diagonal(&positions).powi(2);
        let live_edges = edge_he.len();
        let mesh = Self {
            positions,
            origin,
            twin,
            edge,
            edge_alive: vec![true; live_edges],
            edge_he,
            vertex_he,
            face_alive: vec![true; faces.len()],
            vertex_alive: vec![true; nv],
            live_faces: faces.len(),
            live_vertices: nv,
            live_edges,
            scale2,
        };

        // Every outgoing halfedge of a vertex must lie in a single fan.
        let mut fan_len = vec![0usize; nv];
        for h in 0..nh {
            fan_len[mesh.origin[h] as usize] += 1;
        }
        for (v, &n) in fan_len.iter().enumerate() {
            if mesh.outgoing(v).count() != n {
                return Err(MeshError::NonManifold(format!("vertex {v} has a non-disk neighborhood")));
            }
        }
        Ok(mesh)
    }

    // ----- sizes and liveness -----

    pub fn num_vertices(&self) -> usize {
        self.live_vertices
    }

    pub fn num_faces(&self) -> usize {
        self.live_faces
    }

    pub fn num_edges(&self) -> usize {
        self.live_edges
    }

    /// Capacity of the id spaces, including tombstones.
    pub fn vertex_capacity(&self) -> usize {
        self.positions.len()
    }

    pub fn face_capacity(&self) -> usize {
        self.face_alive.len()
    }

    pub fn edge_capacity(&self) -> usize {
        self.edge_alive.len()
    }

    pub fn halfedge_capacity(&self) -> usize {
        self.origin.len()
    }

    pub fn is_face_alive(&self, f: usize) -> bool {
        self.face_alive.get(f).copied().unwrap_or(false)
    }

    pub fn is_vertex_alive(&self, v: usize) -> bool {
        self.vertex_alive.get(v).copied().unwrap_or(false)
    }

    pub fn is_edge_alive(&self, e: usize) -> bool {
        self.edge_alive.get(e).copied().unwrap_or(false)
    }

    pub fn faces(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.face_alive.len()).filter(|&f| self.face_alive[f])
    }

    pub fn vertices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.vertex_alive.len()).filter(|&v| self.vertex_alive[v])
    }

    pub fn edges(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.edge_alive.len()).filter(|&e| self.edge_alive[e])
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.live_vertices as i64 - self.live_edges as i64 + self.live_faces as i64
    }

    /// Genus from the Euler characteristic of a closed orientable surface.
    pub fn genus(&self) -> Option<u32> {
        let chi = self.euler_characteristic();
        if chi <= 2 && (2 - chi) % 2 == 0 {
            Some(((2 - chi) / 2) as u32)
        } else {
            None
        }
    }

    // ----- connectivity -----

    #[inline]
    pub fn origin(&self, h: usize) -> usize {
        self.origin[h] as usize
    }

    #[inline]
    pub fn dest(&self, h: usize) -> usize {
        self.origin[next_he(h)] as usize
    }

    #[inline]
    pub fn twin(&self, h: usize) -> usize {
        self.twin[h] as usize
    }

    #[inline]
    pub fn edge_of(&self, h: usize) -> usize {
        self.edge[h] as usize
    }

    /// Canonical halfedge of an edge (the lower of the two ids at
    /// construction time).
    #[inline]
    pub fn edge_halfedge(&self, e: usize) -> usize {
        self.edge_he[e] as usize
    }

    pub fn edge_vertices(&self, e: usize) -> [usize; 2] {
        let h = self.edge_halfedge(e);
        [self.origin(h), self.dest(h)]
    }

    #[inline]
    pub fn vertex_halfedge(&self, v: usize) -> usize {
        self.vertex_he[v] as usize
    }

    #[inline]
    pub fn face_vertices(&self, f: usize) -> [usize; 3] {
        [self.origin(3 * f), self.origin(3 * f + 1), self.origin(3 * f + 2)]
    }

    #[inline]
    pub fn position(&self, v: usize) -> Vec3<T> {
        self.positions[v]
    }

    pub fn positions(&self) -> &[Vec3<T>] {
        &self.positions
    }

    pub fn set_position(&mut self, v: usize, p: Vec3<T>) {
        self.positions[v] = p;
    }

    pub fn face_positions(&self, f: usize) -> [Vec3<T>; 3] {
        let [a, b, c] = self.face_vertices(f);
        [self.positions[a], self.positions[b], self.positions[c]]
    }

    /// Outgoing halfedges of `v`, rotating through adjacent faces.
    pub fn outgoing(&self, v: usize) -> Outgoing<'_, T> {
        let start = self.vertex_halfedge(v);
        Outgoing { mesh: self, start, cur: Some(start) }
    }

    pub fn vertex_neighbors(&self, v: usize) -> Vec<usize> {
        self.outgoing(v).map(|h| self.dest(h)).collect()
    }

    pub fn vertex_faces(&self, v: usize) -> Vec<usize> {
        self.outgoing(v).map(face_of).collect()
    }

    pub fn valence(&self, v: usize) -> usize {
        self.outgoing(v).count()
    }

    /// The 3 faces adjacent to `f`, in counter-clockwise order starting at
    /// the face across its first halfedge.
    pub fn ordered_neighbor_faces(&self, f: usize) -> [usize; 3] {
        [
            face_of(self.twin(3 * f)),
            face_of(self.twin(3 * f + 1)),
            face_of(self.twin(3 * f + 2)),
        ]
    }

    /// Halfedge from `a` to `b`, if the edge exists.
    pub fn find_halfedge(&self, a: usize, b: usize) -> Option<usize> {
        self.outgoing(a).find(|&h| self.dest(h) == b)
    }

    // ----- geometry -----

    pub fn scale(&self) -> T {
        self.scale2.sqrt()
    }

    pub fn bbox_diagonal(&self) -> T {
        bbox_diagonal(self.vertices().map(|v| self.positions[v]).collect::<Vec<_>>().as_slice())
    }

    /// Twice-area normal vector (unnormalized cross product).
    pub fn face_cross(&self, f: usize) -> Vec3<T> {
        let [a, b, c] = self.face_positions(f);
        (b - a).cross(c - a)
    }

    pub fn face_area(&self, f: usize) -> T {
        self.face_cross(f).norm() * T::lit(0.5)
    }

    pub fn face_geometry(&self, f: usize) -> Result<FaceGeometry<T>> {
        if !self.is_face_alive(f) {
            return Err(MeshError::InvalidId { kind: "face", id: f });
        }
        let [a, b, c] = self.face_positions(f);
        let cr = (b - a).cross(c - a);
        let area = cr.norm() * T::lit(0.5);
        if !(area >= T::lit(1e-14) * self.scale2) {
            return Err(MeshError::DegenerateFace(f));
        }
        let normal = cr.normalized().ok_or(MeshError::DegenerateFace(f))?;
        Ok(FaceGeometry { center: (a + b + c) / T::lit(3.0), area, normal })
    }

    /// Area-weighted average of incident face normals.
    pub fn vertex_normal(&self, v: usize) -> Result<Vec3<T>> {
        if !self.is_vertex_alive(v) {
            return Err(MeshError::InvalidId { kind: "vertex", id: v });
        }
        let mut acc = Vec3::zero();
        for h in self.outgoing(v) {
            acc = acc + self.face_cross(face_of(h));
        }
        if !(acc.norm() > T::lit(1e-14) * self.scale2) {
            return Err(MeshError::DegenerateVertex(v));
        }
        acc.normalized().ok_or(MeshError::DegenerateVertex(v))
    }

    pub fn total_area(&self) -> T {
        self.faces().map(|f| self.face_area(f)).sum()
    }

    // ----- validation -----

    /// Audits the structural invariants; returns a description of the first
    /// violation.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        for f in self.faces() {
            for k in 0..3 {
                let h = 3 * f + k;
                let t = self.twin(h);
                if t == INVALID as usize || !self.is_face_alive(face_of(t)) {
                    return Err(format!("halfedge {h} has no live twin"));
                }
                if self.twin(t) != h {
                    return Err(format!("twin(twin({h})) != {h}"));
                }
                if self.origin(t) != self.dest(h) || self.dest(t) != self.origin(h) {
                    return Err(format!("halfedge {h} and twin {t} are not opposite"));
                }
                if self.edge_of(h) != self.edge_of(t) || !self.is_edge_alive(self.edge_of(h)) {
                    return Err(format!("halfedge {h} edge id inconsistent"));
                }
                if !self.is_vertex_alive(self.origin(h)) {
                    return Err(format!("halfedge {h} starts at dead vertex"));
                }
            }
            let [a, b, c] = self.face_vertices(f);
            if a == b || b == c || c == a {
                return Err(format!("face {f} repeats a vertex"));
            }
        }
        for e in self.edges() {
            let h = self.edge_halfedge(e);
            if !self.is_face_alive(face_of(h)) || self.edge_of(h) != e {
                return Err(format!("edge {e} representative is stale"));
            }
        }
        for v in self.vertices() {
            let h = self.vertex_halfedge(v);
            if !self.is_face_alive(face_of(h)) || self.origin(h) != v {
                return Err(format!("vertex {v} outgoing halfedge is stale"));
            }
            if self.valence(v) < 3 {
                return Err(format!("vertex {v} has valence < 3"));
            }
        }
        if self.genus().is_none() {
            return Err(format!("Euler characteristic {} is not 2 - 2g", self.euler_characteristic()));
        }
        Ok(())
    }

    // ----- mutation (decimation) -----

    /// Link condition for collapsing the edge of `h`: the endpoints' common
    /// neighbors are exactly the two opposite vertices, the result keeps
    /// every vertex at valence >= 3, and the collapse would not pinch a
    /// tetrahedron.
    pub fn collapse_allowed(&self, h: usize) -> bool {
        let a = self.origin(h);
        let b = self.dest(h);
        let c = self.dest(next_he(h));
        let t = self.twin(h);
        let d = self.dest(next_he(t));
        if c == d {
            return false;
        }
        let na = self.vertex_neighbors(a);
        let nb = self.vertex_neighbors(b);
        let common = na.iter().filter(|x| nb.contains(x)).count();
        if common != 2 {
            return false;
        }
        if self.valence(c) <= 3 || self.valence(d) <= 3 {
            return false;
        }
        if na.len() + nb.len() - 4 < 3 {
            return false;
        }
        self.live_faces > 4
    }

    /// Collapses the edge of `h` (from `a` to `b`), keeping `a` at `new_pos`.
    /// The caller is responsible for checking [`Self::collapse_allowed`].
    pub fn collapse(&mut self, h: usize, new_pos: Vec3<T>) -> CollapseInfo {
        let a = self.origin(h);
        let b = self.dest(h);
        let t = self.twin(h);
        let (h1, h2) = (next_he(h), prev_he(h));
        let (t1, t2) = (next_he(t), prev_he(t));
        let (o1, o2) = (self.twin(h1), self.twin(h2));
        let (p1, p2) = (self.twin(t1), self.twin(t2));
        let c = self.dest(h1);
        let d = self.dest(t1);

        let b_out: Vec<usize> = self.outgoing(b).collect();
        for hb in b_out {
            self.origin[hb] = a as u32;
        }

        let removed_edges = [self.edge_of(h), self.edge_of(h1), self.edge_of(t2)];
        let keep_ac = self.edge_of(h2);
        let keep_ad = self.edge_of(t1);

        self.twin[o1] = o2 as u32;
        self.twin[o2] = o1 as u32;
        self.edge[o1] = keep_ac as u32;
        self.edge[o2] = keep_ac as u32;
        self.edge_he[keep_ac] = o2 as u32;

        self.twin[p1] = p2 as u32;
        self.twin[p2] = p1 as u32;
        self.edge[p1] = keep_ad as u32;
        self.edge[p2] = keep_ad as u32;
        self.edge_he[keep_ad] = p1 as u32;

        let (f1, f2) = (face_of(h), face_of(t));
        for f in [f1, f2] {
            self.face_alive[f] = false;
            for k in 0..3 {
                self.twin[3 * f + k] = INVALID;
            }
        }
        for e in removed_edges {
            self.edge_alive[e] = false;
        }
        self.vertex_alive[b] = false;
        self.vertex_he[a] = o2 as u32;
        self.vertex_he[c] = o1 as u32;
        self.vertex_he[d] = p1 as u32;
        self.positions[a] = new_pos;

        self.live_faces -= 2;
        self.live_edges -= 3;
        self.live_vertices -= 1;
        CollapseInfo { kept: a, removed_vertex: b, removed_faces: [f1, f2], removed_edges }
    }

    /// Rebuilds a dense mesh from the live elements. Face corner order is
    /// preserved, so halfedge `3f + k` of a kept face maps to
    /// `3 * face_map[f] + k`.
    pub fn compact(&self) -> Result<(HalfedgeMesh<T>, Compaction)> {
        let mut vertex_map = vec![None; self.positions.len()];
        let mut positions = Vec::with_capacity(self.live_vertices);
        for v in self.vertices() {
            vertex_map[v] = Some(positions.len());
            positions.push(self.positions[v]);
        }
        let mut face_map = vec![None; self.face_alive.len()];
        let mut tris = Vec::with_capacity(self.live_faces);
        for f in self.faces() {
            face_map[f] = Some(tris.len());
            let [a, b, c] = self.face_vertices(f);
            tris.push([
                vertex_map[a].expect("live face uses live vertex"),
                vertex_map[b].expect("live face uses live vertex"),
                vertex_map[c].expect("live face uses live vertex"),
            ]);
        }
        let mut mesh = HalfedgeMesh::from_triangles(positions, &tris)?;
        mesh.scale2 = self.scale2;
        Ok((mesh, Compaction { vertex_map, face_map }))
    }

    /// Live triangles as vertex index triples (tombstoned ids included as-is).
    pub fn triangles(&self) -> Vec<[usize; 3]> {
        self.faces().map(|f| self.face_vertices(f)).collect()
    }

    /// Applies `map` to every vertex position; connectivity is unchanged.
    pub fn map_positions(&self, map: impl Fn(Vec3<T>) -> Vec3<T>) -> Self {
        let mut out = self.clone();
        for p in out.positions.iter_mut() {
            *p = map(*p);
        }
        out.scale2 = bbox_diagonal(&out.positions).powi(2);
        out
    }
}

/// What a collapse removed.
#[derive(Clone, Copy, Debug)]
pub struct CollapseInfo {
    pub kept: usize,
    pub removed_vertex: usize,
    pub removed_faces: [usize; 2],
    pub removed_edges: [usize; 3],
}

pub struct Outgoing<'a, T> {
    mesh: &'a HalfedgeMesh<T>,
    start: usize,
    cur: Option<usize>,
}

impl<T: Real> Iterator for Outgoing<'_, T> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        let h = self.cur?;
        let n = self.mesh.twin(prev_he(h));
        self.cur = if n == self.start || n == INVALID as usize { None } else { Some(n) };
        Some(h)
    }
}

pub(crate) fn bbox_diagonal<T: Real>(pts: &[Vec3<T>]) -> T {
    if pts.is_empty() {
        return T::zero();
    }
    let mut lo = pts[0];
    let mut hi = pts[0];
    for p in pts {
        lo = Vec3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
        hi = Vec3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
    }
    (hi - lo).norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tetrahedron_counts() {
        let m = tetrahedron::<f64>();
        assert_eq!((m.num_vertices(), m.num_edges(), m.num_faces()), (4, 6, 4));
        assert_eq!(m.genus(), Some(0));
        m.check_invariants().unwrap();
    }

    #[test]
    fn tetrahedron_neighbors_are_other_faces() {
        let m = tetrahedron::<f64>();
        for f in 0..4 {
            let mut n = m.ordered_neighbor_faces(f).to_vec();
            n.sort();
            let expect: Vec<usize> = (0..4).filter(|&g| g != f).collect();
            assert_eq!(n, expect);
        }
    }

    #[test]
    fn neighbor_order_rotates_with_first_halfedge() {
        let m = tetrahedron::<f64>();
        let [a, b, c] = m.face_vertices(0);
        let n0 = m.ordered_neighbor_faces(0);
        // Same triangle listed from its second corner.
        let mut tris = m.triangles();
        tris[0] = [b, c, a];
        let m2 = HalfedgeMesh::from_triangles(m.positions().to_vec(), &tris).unwrap();
        let n1 = m2.ordered_neighbor_faces(0);
        assert_eq!(n1, [n0[1], n0[2], n0[0]]);
    }

    #[test]
    fn open_mesh_rejected() {
        let p = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        ];
        assert!(matches!(
            HalfedgeMesh::from_triangles(p, &[[0, 1, 2]]),
            Err(MeshError::NotWatertight { count: 3, .. })
        ));
    }

    #[test]
    fn flipped_face_rejected() {
        let m = tetrahedron::<f64>();
        let mut tris = m.triangles();
        tris[1] = [tris[1][0], tris[1][2], tris[1][1]];
        assert!(matches!(
            HalfedgeMesh::from_triangles(m.positions().to_vec(), &tris),
            Err(MeshError::InconsistentWinding(..))
        ));
    }

    #[test]
    fn face_geometry_planar_triangle() {
        // Tetrahedron with a face on z = 0.
        let p = vec![
            Vec3::<f64>::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        ];
        let m = HalfedgeMesh::from_triangles(p, &[[0, 1, 2], [0, 3, 1], [1, 3, 2], [2, 3, 0]]).unwrap();
        let g = m.face_geometry(0).unwrap();
        assert!((g.center - Vec3::new(1.0 / 3.0, 1.0 / 3.0, 0.0)).norm() < 1e-15);
        assert!((g.area - 0.5).abs() < 1e-15);
        assert!((g.normal - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-15);

        let flipped = HalfedgeMesh::from_triangles(
            m.positions().to_vec(),
            &[[0, 2, 1], [0, 1, 3], [1, 2, 3], [2, 0, 3]],
        )
        .unwrap();
        let gf = flipped.face_geometry(0).unwrap();
        assert!((gf.normal + g.normal).norm() < 1e-15);
    }

    #[test]
    fn degenerate_face_reported() {
        let p = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        ];
        let m = HalfedgeMesh::from_triangles(p, &[[0, 1, 2], [0, 3, 1], [1, 3, 2], [2, 3, 0]]).unwrap();
        assert!(matches!(m.face_geometry(0), Err(MeshError::DegenerateFace(0))));
    }

    #[test]
    fn cube_corner_normal() {
        // Trirectangular corner: three unit-area faces on the coordinate planes.
        let s = 2f64.sqrt();
        let p = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(s, 0.0, 0.0),
            Vec3::new(0.0, s, 0.0),
            Vec3::new(0.0, 0.0, s),
        ];
        let m = HalfedgeMesh::from_triangles(p, &[[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]]).unwrap();
        for f in 0..3 {
            assert!((m.face_area(f) - 1.0).abs() < 1e-12);
        }
        let n = m.vertex_normal(0).unwrap();
        let expect = Vec3::new(-1.0, -1.0, -1.0) / 3f64.sqrt();
        assert!((n - expect).norm() < 1e-12, "{n:?}");
    }

    #[test]
    fn planar_patch_vertex_normal() {
        let m = subdivided_cube::<f64>(3);
        for v in m.vertices() {
            let p = m.position(v);
            // Interior vertices of the +z side.
            if p.z == 1.0 && p.x.abs() < 1.0 && p.y.abs() < 1.0 {
                let n = m.vertex_normal(v).unwrap();
                assert!((n - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn collapse_removes_two_faces() {
        let mut m = icosphere::<f64>(1);
        let (v, e, f) = (m.num_vertices(), m.num_edges(), m.num_faces());
        let h = m.edge_halfedge(0);
        assert!(m.collapse_allowed(h));
        let mid = (m.position(m.origin(h)) + m.position(m.dest(h))) * 0.5;
        m.collapse(h, mid);
        assert_eq!((m.num_vertices(), m.num_edges(), m.num_faces()), (v - 1, e - 3, f - 2));
        m.check_invariants().unwrap();
        let (c, _) = m.compact().unwrap();
        c.check_invariants().unwrap();
        assert_eq!(c.num_faces(), f - 2);
    }

    #[test]
    fn tetrahedron_collapse_refused() {
        let m = tetrahedron::<f64>();
        for e in m.edges() {
            assert!(!m.collapse_allowed(m.edge_halfedge(e)));
        }
    }
}
