use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geom::{barycentric, signed_area2, Vec2, Vec3};
use crate::mesh::{face_of, next_he, Compaction, HalfedgeMesh};
use crate::planar::{clip_convex_by_triangle, polygon_area, ClipVertex};
use crate::scalar::Real;

use super::distortion::{mutual_tessellation, symmetric_dirichlet};
use super::patch::{contains, flatten_star_patch, lscm_flatten_edge_patch, FlattenedPatch};
use super::quadric::{optimal_vertex_position, quadric_for_vertex, Quadric};
use super::{snap_barycentric, BaryTriplet, EdgeCrossing, ReverseTriplet, SelfParamError, BARY_SNAP};

/// Corner of a cell: barycentrics on its working (coarse) face and on its
/// fine face, plus which fine halfedges of that face it lies on (bit `k` for
/// halfedge `3f + k`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellVertex<T> {
    pub coarse: [T; 3],
    pub fine: [T; 3],
    pub mask: u8,
}

/// Convex piece of a fine face's image inside one working face, counter
/// clockwise in the working face's barycentric plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell<T> {
    pub fine_face: usize,
    pub verts: Vec<CellVertex<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollapseCandidate<T> {
    pub edge: usize,
    pub v_star: Vec3<T>,
    pub e_approx: T,
    /// Zero (not evaluated) when the distortion weight is zero.
    pub e_distort: T,
    pub e: T,
    pub stamp: u64,
}

/// One accepted collapse. `edge` is the working edge id, which equals the
/// fine edge id because the working mesh starts as a copy of the fine mesh.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollapseRecord<T> {
    pub edge: usize,
    pub kept: usize,
    pub removed: usize,
    pub v_star: Vec3<T>,
    pub e_approx: T,
    pub e_distort: T,
    pub e: T,
}

/// Finished decimation with every table expressed in compacted coarse ids.
#[derive(Clone, Debug)]
pub struct Decimation<T> {
    pub coarse: HalfedgeMesh<T>,
    pub compaction: Compaction,
    /// One per fine vertex.
    pub triplets: Vec<BaryTriplet<T>>,
    /// Sorted by coarse halfedge, then by position from its origin.
    pub crossings: Vec<EdgeCrossing<T>>,
    /// One per coarse vertex.
    pub reverse_triplets: Vec<ReverseTriplet<T>>,
    /// Cells per coarse face.
    pub cells: Vec<Vec<Cell<T>>>,
    pub records: Vec<CollapseRecord<T>>,
}

struct Evaluated<T> {
    cand: CollapseCandidate<T>,
    p: Option<FlattenedPatch<T>>,
    q: Option<FlattenedPatch<T>>,
}

#[derive(Clone, Copy, Debug)]
struct HeapKey {
    e: f64,
    rank: u64,
    edge: usize,
    stamp: u64,
}

impl PartialEq for HeapKey {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for HeapKey {}
impl PartialOrd for HeapKey {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for HeapKey {
    fn cmp(&self, o: &Self) -> Ordering {
        self.e
            .total_cmp(&o.e)
            .then(self.rank.cmp(&o.rank))
            .then(self.edge.cmp(&o.edge))
            .then(self.stamp.cmp(&o.stamp))
    }
}

#[derive(Clone)]
struct ClipV<T> {
    uv: Vec2<T>,
    fine: [T; 3],
    mask: u8,
}

impl<T: Real> ClipVertex<T> for ClipV<T> {
    fn pos(&self) -> Vec2<T> {
        self.uv
    }

    fn split(&self, other: &Self, t: T, _clip_edge: usize) -> Self {
        let mut fine = [T::zero(); 3];
        for k in 0..3 {
            fine[k] = self.fine[k] + (other.fine[k] - self.fine[k]) * t;
        }
        ClipV { uv: self.uv.lerp(other.uv, t), fine, mask: self.mask & other.mask }
    }

    fn merge(&mut self, other: &Self) {
        self.mask |= other.mask;
        // On two fine edges: snap onto their shared corner.
        if self.mask.count_ones() == 2 {
            let k = (0..3).find(|&k| self.mask & (1 << k) != 0 && self.mask & (1 << ((k + 2) % 3)) != 0);
            if let Some(k) = k {
                self.fine = [T::zero(); 3];
                self.fine[k] = T::one();
            }
        }
    }
}

/// State of an in-progress decimation of one level.
pub struct TrackedDecimation<T> {
    fine: HalfedgeMesh<T>,
    work: HalfedgeMesh<T>,
    w: T,
    track: bool,
    quadrics: Vec<Quadric<T>>,
    triplets: Vec<BaryTriplet<T>>,
    members: Vec<Vec<u32>>,
    cells: Vec<Vec<Cell<T>>>,
    rank: Vec<u64>,
    stamps: Vec<u64>,
    heap: BinaryHeap<Reverse<HeapKey>>,
    records: Vec<CollapseRecord<T>>,
    rejected: usize,
}

impl<T: Real> TrackedDecimation<T> {
    /// Starts from the identity map. `seed` permutes the edge ranks used for
    /// tie-breaking; seed 0 keeps edge-id order.
    pub fn new(mesh: &HalfedgeMesh<T>, w: T, seed: u64) -> Self {
        Self::with_tracking(mesh, w, seed, true)
    }

    fn with_tracking(mesh: &HalfedgeMesh<T>, w: T, seed: u64, track: bool) -> Self {
        let nf = mesh.face_capacity();
        let nv = mesh.vertex_capacity();
        let ne = mesh.edge_capacity();
        let mut triplets = vec![BaryTriplet { face: usize::MAX, alpha: T::zero(), beta: T::zero() }; nv];
        let mut members = vec![Vec::new(); nf];
        let mut cells = vec![Vec::new(); nf];
        for f in mesh.faces() {
            let verts = (0..3)
                .map(|k| {
                    let mut e = [T::zero(); 3];
                    e[k] = T::one();
                    CellVertex { coarse: e, fine: e, mask: (1 << k) | (1 << ((k + 2) % 3)) }
                })
                .collect();
            if track {
                cells[f] = vec![Cell { fine_face: f, verts }];
            }
        }
        for v in mesh.vertices() {
            let f = mesh.vertex_faces(v).into_iter().min().expect("vertex has faces");
            let k = mesh.face_vertices(f).iter().position(|&x| x == v).expect("corner");
            let mut e = [T::zero(); 3];
            e[k] = T::one();
            triplets[v] = BaryTriplet::from_weights(f, e);
            members[f].push(v as u32);
        }
        let mut rank: Vec<u64> = (0..ne as u64).collect();
        if seed != 0 {
            rank.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        let quadrics = (0..nv)
            .map(|v| if mesh.is_vertex_alive(v) { quadric_for_vertex(mesh, v) } else { Quadric::default() })
            .collect();
        let mut s = Self {
            fine: mesh.clone(),
            work: mesh.clone(),
            w,
            track,
            quadrics,
            triplets,
            members,
            cells,
            rank,
            stamps: vec![0; ne],
            heap: BinaryHeap::new(),
            records: Vec::new(),
            rejected: 0,
        };
        let edges: Vec<usize> = s.work.edges().collect();
        for e in edges {
            s.refresh(e);
        }
        s
    }

    pub fn fine(&self) -> &HalfedgeMesh<T> {
        &self.fine
    }

    pub fn working(&self) -> &HalfedgeMesh<T> {
        &self.work
    }

    /// Triplets in working face ids.
    pub fn triplets(&self) -> &[BaryTriplet<T>] {
        &self.triplets
    }

    /// Cells per working face id.
    pub fn cells(&self) -> &[Vec<Cell<T>>] {
        &self.cells
    }

    pub fn records(&self) -> &[CollapseRecord<T>] {
        &self.records
    }

    /// Candidates popped but rejected at collapse time.
    pub fn rejected(&self) -> usize {
        self.rejected
    }

    fn refresh(&mut self, e: usize) {
        self.stamps[e] += 1;
        if let Ok(ev) = self.evaluate_inner(e, false) {
            self.heap.push(Reverse(HeapKey {
                e: ev.cand.e.to_f64_lossy(),
                rank: self.rank[e],
                edge: e,
                stamp: self.stamps[e],
            }));
        }
    }

    /// Evaluates collapsing working edge `e` in its current state.
    pub fn evaluate(&self, e: usize) -> Result<CollapseCandidate<T>, SelfParamError> {
        self.evaluate_inner(e, false).map(|ev| ev.cand)
    }

    fn evaluate_inner(&self, e: usize, keep_patches: bool) -> Result<Evaluated<T>, SelfParamError> {
        let m = &self.work;
        if e >= m.edge_capacity() || !m.is_edge_alive(e) {
            return Err(SelfParamError::RejectedCollapse("edge is not alive"));
        }
        let h = m.edge_halfedge(e);
        if !m.collapse_allowed(h) {
            return Err(SelfParamError::RejectedCollapse("link condition"));
        }
        let (a, b) = (m.origin(h), m.dest(h));
        let (v_star, e_approx) =
            optimal_vertex_position(&self.quadrics[a], &self.quadrics[b], m.position(a), m.position(b));
        let removed = [face_of(h), face_of(m.twin(h))];
        let min_cross = T::lit(2e-14) * m.scale() * m.scale();
        for v in [a, b] {
            for f in m.vertex_faces(v) {
                if removed.contains(&f) {
                    continue;
                }
                let p = m.face_vertices(f).map(|x| if x == a || x == b { v_star } else { m.position(x) });
                let new = (p[1] - p[0]).cross(p[2] - p[0]);
                if !(new.norm() > min_cross) {
                    return Err(SelfParamError::RejectedCollapse("degenerate face"));
                }
                if !(new.dot(m.face_cross(f)) > T::zero()) {
                    return Err(SelfParamError::RejectedCollapse("normal flip"));
                }
            }
        }
        let p = lscm_flatten_edge_patch(m, h)?;
        let q = flatten_star_patch(&p, v_star, removed)?;
        let e_distort = if self.w > T::zero() {
            let cells = mutual_tessellation(&p, &q);
            symmetric_dirichlet(&p, &q, &cells)
        } else {
            T::zero()
        };
        if !e_distort.is_finite() {
            return Err(SelfParamError::RejectedCollapse("singular distortion"));
        }
        let energy = (T::one() - self.w) * e_approx + self.w * e_distort;
        if !energy.is_finite() {
            return Err(SelfParamError::RejectedCollapse("non-finite error"));
        }
        let cand = CollapseCandidate { edge: e, v_star, e_approx, e_distort, e: energy, stamp: self.stamps[e] };
        Ok(Evaluated { cand, p: keep_patches.then_some(p), q: keep_patches.then_some(q) })
    }

    /// Pops candidates until one collapses. Returns `None` when the queue is
    /// exhausted.
    pub fn step(&mut self) -> Option<CollapseRecord<T>> {
        while let Some(Reverse(key)) = self.heap.pop() {
            if key.stamp != self.stamps[key.edge] {
                continue;
            }
            let ev = match self.evaluate_inner(key.edge, true) {
                Ok(ev) => ev,
                Err(_) => continue,
            };
            if ev.cand.e.to_f64_lossy().to_bits() != key.e.to_bits() {
                self.heap.push(Reverse(HeapKey { e: ev.cand.e.to_f64_lossy(), ..key }));
                continue;
            }
            match self.apply(ev) {
                Ok(rec) => return Some(rec),
                Err(_) => {
                    self.rejected += 1;
                    continue;
                }
            }
        }
        None
    }

    /// Collapses a specific working edge, bypassing the queue.
    pub fn collapse_edge(&mut self, e: usize) -> Result<CollapseRecord<T>, SelfParamError> {
        let ev = self.evaluate_inner(e, true)?;
        self.apply(ev)
    }

    /// Collapses until the working mesh has at most `target` faces.
    pub fn run_to(&mut self, target: usize) -> Result<(), SelfParamError> {
        if target < 4 || target > self.work.num_faces() {
            return Err(SelfParamError::InvalidTarget { target, faces: self.work.num_faces() });
        }
        while self.work.num_faces() > target {
            if self.step().is_none() {
                return Err(SelfParamError::TargetUnreachable { reached: self.work.num_faces(), target });
            }
        }
        Ok(())
    }

    fn apply(&mut self, ev: Evaluated<T>) -> Result<CollapseRecord<T>, SelfParamError> {
        let cand = ev.cand;
        let (p, q) = (ev.p.expect("patches kept"), ev.q.expect("patches kept"));
        let h = self.work.edge_halfedge(cand.edge);
        let (a, b) = (self.work.origin(h), self.work.dest(h));
        let c = self.work.dest(next_he(h));
        let d = self.work.dest(next_he(self.work.twin(h)));

        let new_cells = if self.track { Some(self.clip_cells(&p, &q)?) } else { None };
        let relocated = self.relocate(&p, &q)?;

        let info = self.work.collapse(h, cand.v_star);
        debug_assert_eq!(info.kept, a);
        self.quadrics[a] = self.quadrics[a].add(&self.quadrics[b]);
        for f in info.removed_faces {
            self.cells[f].clear();
            self.members[f].clear();
        }
        for &f in &p.faces {
            self.members[f].clear();
        }
        if let Some(new_cells) = new_cells {
            for (f, cs) in q.faces.iter().zip(new_cells) {
                self.cells[*f] = cs;
            }
        }
        for (v, t) in relocated {
            self.members[t.face].push(v as u32);
            self.triplets[v] = t;
        }
        for e in info.removed_edges {
            self.stamps[e] += 1;
        }

        let mut zone: Vec<usize> = Vec::new();
        let mut around = vec![a];
        around.extend(self.work.vertex_neighbors(a));
        for &v in &around {
            zone.extend(self.work.outgoing(v).map(|x| self.work.edge_of(x)));
        }
        for v in [c, d] {
            for f in self.work.vertex_faces(v) {
                zone.extend((0..3).map(|k| self.work.edge_of(3 * f + k)));
            }
        }
        zone.sort_unstable();
        zone.dedup();
        for e in zone {
            self.refresh(e);
        }

        let rec = CollapseRecord {
            edge: cand.edge,
            kept: a,
            removed: b,
            v_star: cand.v_star,
            e_approx: cand.e_approx,
            e_distort: cand.e_distort,
            e: cand.e,
        };
        self.records.push(rec);
        Ok(rec)
    }

    /// Cells of the `P` faces re-expressed on the `Q` faces, in `q.faces`
    /// order.
    fn clip_cells(&self, p: &FlattenedPatch<T>, q: &FlattenedPatch<T>) -> Result<Vec<Vec<Cell<T>>>, SelfParamError> {
        let mut polys: Vec<(usize, Vec<ClipV<T>>, Vec2<T>, Vec2<T>)> = Vec::new();
        for (t, &f) in p.faces.iter().enumerate() {
            let tri = p.triangle_uv(t);
            for cell in &self.cells[f] {
                let verts: Vec<ClipV<T>> = cell
                    .verts
                    .iter()
                    .map(|cv| ClipV {
                        uv: tri[0] * cv.coarse[0] + tri[1] * cv.coarse[1] + tri[2] * cv.coarse[2],
                        fine: cv.fine,
                        mask: cv.mask,
                    })
                    .collect();
                let (lo, hi) = uv_bbox(verts.iter().map(|v| v.uv));
                polys.push((cell.fine_face, verts, lo, hi));
            }
        }
        let eps = T::lit(1e-12) * q.diameter();
        let mut out = Vec::with_capacity(q.tris.len());
        for t in 0..q.tris.len() {
            let tri = q.triangle_uv(t);
            let tri_area = signed_area2(tri[0], tri[1], tri[2]);
            let (tlo, thi) = uv_bbox(tri.iter().copied());
            let mut cells = Vec::new();
            let mut covered = T::zero();
            for (ff, poly, lo, hi) in &polys {
                if lo.x > thi.x || hi.x < tlo.x || lo.y > thi.y || hi.y < tlo.y {
                    continue;
                }
                let clipped = clip_convex_by_triangle(poly, &tri, eps);
                if clipped.is_empty() {
                    continue;
                }
                let area = polygon_area(&clipped.iter().map(|v| v.uv).collect::<Vec<_>>());
                if !(area >= T::lit(1e-14) * tri_area) {
                    continue;
                }
                covered += area;
                let mut verts: Vec<CellVertex<T>> = Vec::with_capacity(clipped.len());
                for v in clipped {
                    let w = barycentric(v.uv, tri[0], tri[1], tri[2])
                        .ok_or(SelfParamError::RejectedCollapse("degenerate triangle in Q"))?;
                    let cv = snapped_vertex(snap_barycentric(w), v.fine, v.mask);
                    if verts.last().is_some_and(|l| same_fine_corner(l, &cv)) {
                        continue;
                    }
                    verts.push(cv);
                }
                while verts.len() > 1 && same_fine_corner(&verts[0], &verts[verts.len() - 1]) {
                    verts.pop();
                }
                if verts.len() < 3 {
                    continue;
                }
                cells.push(Cell { fine_face: *ff, verts });
            }
            if !((covered - tri_area).abs() <= T::lit(1e-9) * tri_area) {
                return Err(SelfParamError::RejectedCollapse("tiling gap"));
            }
            out.push(cells);
        }
        Ok(out)
    }

    /// New triplets for fine vertices currently on `P` faces.
    fn relocate(&self, p: &FlattenedPatch<T>, q: &FlattenedPatch<T>) -> Result<Vec<(usize, BaryTriplet<T>)>, SelfParamError> {
        let tol = T::lit(1e-9) * q.diameter();
        // Q triangles in ascending face id so the first hit is the lowest id.
        let mut order: Vec<usize> = (0..q.tris.len()).collect();
        order.sort_by_key(|&t| q.faces[t]);
        let mut out = Vec::new();
        for (t, &f) in p.faces.iter().enumerate() {
            let tri = p.triangle_uv(t);
            for &v in &self.members[f] {
                let w = self.triplets[v as usize].weights();
                let uv = tri[0] * w[0] + tri[1] * w[1] + tri[2] * w[2];
                let hit = order.iter().find_map(|&s| contains(&q.triangle_uv(s), uv, tol).map(|w| (q.faces[s], w)));
                let (face, w) = hit.ok_or(SelfParamError::RejectedCollapse("fine vertex outside Q"))?;
                out.push((v as usize, BaryTriplet::from_weights(face, snap_barycentric(w))));
            }
        }
        Ok(out)
    }

    /// Compacts the working mesh and converts every table to coarse ids.
    pub fn finish(self) -> Result<Decimation<T>, SelfParamError> {
        let (coarse, compaction) = self.work.compact()?;
        let fmap = |f: usize| compaction.face_map[f].expect("live face");
        let triplets: Vec<BaryTriplet<T>> = self
            .triplets
            .iter()
            .take(self.fine.vertex_capacity())
            .map(|t| BaryTriplet { face: fmap(t.face), ..*t })
            .collect();
        let mut cells = vec![Vec::new(); coarse.face_capacity()];
        for (f, cs) in self.cells.into_iter().enumerate() {
            if let Some(g) = compaction.face_map[f] {
                cells[g] = cs;
            }
        }
        let (crossings, reverse_triplets) = if self.track {
            (extract_crossings(&self.fine, &coarse, &cells), extract_reverse_triplets(&coarse, &cells)?)
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(Decimation { coarse, compaction, triplets, crossings, reverse_triplets, cells, records: self.records })
    }
}

/// Snaps the fine barycentrics like the coarse ones; a point snapped onto a
/// fine edge or vertex gains the matching provenance bits.
fn snapped_vertex<T: Real>(coarse: [T; 3], fine: [T; 3], mask: u8) -> CellVertex<T> {
    let fine = snap_barycentric(fine);
    let mut mask = mask;
    for k in 0..3 {
        if fine[(k + 2) % 3] == T::zero() {
            mask |= 1 << k;
        }
    }
    CellVertex { coarse, fine, mask }
}

fn same_fine_corner<T: Real>(a: &CellVertex<T>, b: &CellVertex<T>) -> bool {
    a.mask.count_ones() >= 2 && a.mask == b.mask && a.fine == b.fine
}

fn uv_bbox<T: Real>(mut it: impl Iterator<Item = Vec2<T>>) -> (Vec2<T>, Vec2<T>) {
    let first = it.next().expect("non-empty polygon");
    it.fold((first, first), |(lo, hi), p| {
        (Vec2::new(lo.x.min(p.x), lo.y.min(p.y)), Vec2::new(hi.x.max(p.x), hi.y.max(p.y)))
    })
}

/// Crossings of fine edges with coarse edges, read off the cell corners that
/// lie on exactly one fine edge and exactly one coarse edge. Each crossing is
/// reported once, on the canonical halfedge of its coarse edge.
pub fn extract_crossings<T: Real>(
    fine: &HalfedgeMesh<T>,
    coarse: &HalfedgeMesh<T>,
    cells: &[Vec<Cell<T>>],
) -> Vec<EdgeCrossing<T>> {
    let mut out = Vec::new();
    for g in coarse.faces() {
        for cell in &cells[g] {
            let f = cell.fine_face;
            for v in &cell.verts {
                if v.mask.count_ones() != 1 {
                    continue;
                }
                let zeros: Vec<usize> = (0..3).filter(|&k| v.coarse[k] == T::zero()).collect();
                let [z] = zeros.as_slice() else { continue };
                let m = (z + 1) % 3;
                let ch = 3 * g + m;
                if coarse.edge_halfedge(coarse.edge_of(ch)) != ch {
                    continue;
                }
                let k = v.mask.trailing_zeros() as usize;
                let fh = 3 * f + k;
                let fe = fine.edge_of(fh);
                let (wo, wd) = if fine.edge_halfedge(fe) == fh {
                    (v.fine[k], v.fine[(k + 1) % 3])
                } else {
                    (v.fine[(k + 1) % 3], v.fine[k])
                };
                let s = wo + wd;
                if !(s > T::zero()) {
                    continue;
                }
                let lambda1 = wo / s;
                let eps = T::lit(BARY_SNAP);
                if lambda1 < eps || lambda1 > T::one() - eps {
                    continue;
                }
                out.push(EdgeCrossing { fine_edge: fe, coarse_halfedge: ch, lambda1, lambda2: v.coarse[m] });
            }
        }
    }
    out.sort_by(|a, b| {
        a.coarse_halfedge
            .cmp(&b.coarse_halfedge)
            .then(b.lambda2.total_cmp_lossy(&a.lambda2))
            .then(a.fine_edge.cmp(&b.fine_edge))
    });
    let tol = T::lit(BARY_SNAP);
    let mut dedup: Vec<EdgeCrossing<T>> = Vec::with_capacity(out.len());
    for c in out {
        if let Some(last) = dedup.last() {
            if last.coarse_halfedge == c.coarse_halfedge && (last.lambda2 - c.lambda2).abs() <= tol {
                continue;
            }
        }
        dedup.push(c);
    }
    dedup
}

/// Coarse vertices on the fine surface, read off the cell corners at coarse
/// face corners (lowest coarse face first).
pub fn extract_reverse_triplets<T: Real>(
    coarse: &HalfedgeMesh<T>,
    cells: &[Vec<Cell<T>>],
) -> Result<Vec<ReverseTriplet<T>>, SelfParamError> {
    let mut out: Vec<Option<ReverseTriplet<T>>> = vec![None; coarse.vertex_capacity()];
    for g in coarse.faces() {
        let corners = coarse.face_vertices(g);
        for cell in &cells[g] {
            for v in &cell.verts {
                let Some(k) = (0..3).find(|&k| v.coarse[k] == T::one()) else { continue };
                let u = corners[k];
                if out[u].is_none() {
                    out[u] = Some(ReverseTriplet {
                        coarse_vertex: u,
                        fine: BaryTriplet::from_weights(cell.fine_face, snap_barycentric(v.fine)),
                    });
                }
            }
        }
    }
    coarse
        .vertices()
        .map(|u| out[u].ok_or(SelfParamError::RejectedCollapse("coarse vertex missing from cells")))
        .collect()
}

/// Decimates `mesh` to at most `target` faces with distortion weight `w`.
pub fn decimate_to<T: Real>(mesh: &HalfedgeMesh<T>, target: usize, w: T, seed: u64) -> Result<Decimation<T>, SelfParamError> {
    if target < 4 || target > mesh.num_faces() {
        return Err(SelfParamError::InvalidTarget { target, faces: mesh.num_faces() });
    }
    let mut d = TrackedDecimation::new(mesh, w, seed);
    d.run_to(target)?;
    d.finish()
}

/// Replays a recorded collapse sequence (working edge ids, as in
/// [`CollapseRecord::edge`]) instead of choosing edges by priority.
pub fn replay_collapses<T: Real>(mesh: &HalfedgeMesh<T>, edges: &[usize], w: T) -> Result<Decimation<T>, SelfParamError> {
    let mut d = TrackedDecimation::new(mesh, w, 0);
    for &e in edges {
        d.collapse_edge(e)?;
    }
    d.finish()
}

/// Plain QEM decimation (no distortion term, no map tracking) with the same
/// validity checks and tie-breaking. Returns the collapsed edge sequence.
pub fn decimate_qem_reference<T: Real>(mesh: &HalfedgeMesh<T>, target: usize, seed: u64) -> Result<Vec<usize>, SelfParamError> {
    let mut d = TrackedDecimation::with_tracking(mesh, T::zero(), seed, false);
    d.run_to(target)?;
    Ok(d.records.iter().map(|r| r.edge).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{icosphere, subdivided_cube, tetrahedron};
    use crate::selfparam::{audit_crossings, audit_triplets};

    #[test]
    fn tetrahedron_collapse_is_rejected() {
        let m = tetrahedron::<f64>();
        let mut d = TrackedDecimation::new(&m, 0.1, 0);
        for e in 0..6 {
            assert!(matches!(d.collapse_edge(e), Err(SelfParamError::RejectedCollapse(_))));
        }
        assert!(d.step().is_none());
    }

    #[test]
    fn zero_collapses_is_identity() {
        let m = icosphere::<f64>(1);
        let d = decimate_to(&m, m.num_faces(), 0.1, 0).unwrap();
        assert!(d.records.is_empty());
        for v in 0..m.num_vertices() {
            let t = d.triplets[v];
            let k = m.face_vertices(t.face).iter().position(|&x| x == v).unwrap();
            assert_eq!(t.weights()[k], 1.0);
        }
        assert!(d.crossings.is_empty());
        assert_eq!(d.cells.iter().map(|c| c.len()).sum::<usize>(), m.num_faces());
    }

    #[test]
    fn planar_collapse_reconstructs_positions() {
        let m = subdivided_cube::<f64>(4);
        let mut d = TrackedDecimation::new(&m, 0.1, 0);
        let on_top = |p: Vec3<f64>| p.z == 1.0 && p.x.abs() < 0.6 && p.y.abs() < 0.6;
        let e = m
            .edges()
            .find(|&e| {
                let [a, b] = m.edge_vertices(e);
                on_top(m.position(a)) && on_top(m.position(b))
            })
            .unwrap();
        d.collapse_edge(e).unwrap();
        for v in m.vertices() {
            let t = d.triplets()[v];
            let err = (t.point(d.working()) - m.position(v)).norm();
            assert!(err <= 1e-12, "vertex {v} off by {err}");
        }
    }

    #[test]
    fn accepted_candidate_is_global_minimum() {
        let m = icosphere::<f64>(2);
        let mut d = TrackedDecimation::new(&m, 0.1, 0);
        for _ in 0..40 {
            let best = d
                .working()
                .edges()
                .filter_map(|e| d.evaluate(e).ok())
                .map(|c| c.e)
                .fold(f64::INFINITY, f64::min);
            let rec = d.step().unwrap();
            assert!(rec.e <= best, "{} > {}", rec.e, best);
        }
    }

    #[test]
    fn every_collapse_keeps_tables_consistent() {
        let m = icosphere::<f64>(2);
        let mut d = TrackedDecimation::new(&m, 0.1, 0);
        for _ in 0..60 {
            let before = (d.working().num_vertices(), d.working().num_edges(), d.working().num_faces());
            d.step().unwrap();
            let after = (d.working().num_vertices(), d.working().num_edges(), d.working().num_faces());
            assert_eq!((before.0 - after.0, before.1 - after.1, before.2 - after.2), (1, 3, 2));
            audit_triplets(d.working(), d.triplets(), m.num_vertices()).unwrap();
            let crossings = extract_crossings(d.fine(), d.working(), d.cells());
            audit_crossings(d.fine(), d.working(), d.triplets(), &crossings).unwrap();
        }
    }

    #[test]
    fn zero_weight_matches_qem_reference() {
        let m = icosphere::<f64>(2);
        let tracked = decimate_to(&m, 80, 0.0, 0).unwrap();
        let seq: Vec<usize> = tracked.records.iter().map(|r| r.edge).collect();
        assert_eq!(seq, decimate_qem_reference(&m, 80, 0).unwrap());
    }
}
