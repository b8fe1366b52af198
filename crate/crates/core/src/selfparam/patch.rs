use std::f64::consts::TAU;

use crate::geom::{barycentric, signed_area2, TriangleFrame, Vec2, Vec3};
use crate::linalg::solve_dense;
use crate::mesh::{face_of, HalfedgeMesh};
use crate::planar::is_simple_polygon;
use crate::scalar::Real;

use super::{snap_barycentric, BaryTriplet, SelfParamError};

/// A disk-shaped set of faces with a planar embedding.
///
/// Local vertex `i` is mesh vertex `vertices[i]` at 3D position `pos3[i]`
/// and UV position `uv[i]`. Triangles keep the corner order of their mesh
/// faces.
#[derive(Clone, Debug)]
pub struct FlattenedPatch<T> {
    pub faces: Vec<usize>,
    pub tris: Vec<[usize; 3]>,
    pub vertices: Vec<usize>,
    pub pos3: Vec<Vec3<T>>,
    pub uv: Vec<Vec2<T>>,
    /// Boundary cycle, counter-clockwise, as local indices.
    pub boundary: Vec<usize>,
    /// Local indices of the vertices not on the boundary.
    pub interior: Vec<usize>,
}

impl<T: Real> FlattenedPatch<T> {
    pub fn triangle_uv(&self, t: usize) -> [Vec2<T>; 3] {
        let [a, b, c] = self.tris[t];
        [self.uv[a], self.uv[b], self.uv[c]]
    }

    pub fn triangle_pos3(&self, t: usize) -> [Vec3<T>; 3] {
        let [a, b, c] = self.tris[t];
        [self.pos3[a], self.pos3[b], self.pos3[c]]
    }

    pub fn local_of(&self, mesh_vertex: usize) -> Option<usize> {
        self.vertices.iter().position(|&v| v == mesh_vertex)
    }

    pub fn triangle_of_face(&self, face: usize) -> Option<usize> {
        self.faces.iter().position(|&f| f == face)
    }

    /// Diagonal of the UV bounding box.
    pub fn diameter(&self) -> T {
        let mut lo = self.uv[0];
        let mut hi = self.uv[0];
        for p in &self.uv {
            lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        (hi - lo).norm()
    }

    pub fn uv_area(&self) -> T {
        (0..self.tris.len()).map(|t| {
            let [a, b, c] = self.triangle_uv(t);
            signed_area2(a, b, c)
        }).sum()
    }

    /// LSCM energy of the current UVs against the 3D triangles.
    pub fn conformal_energy(&self) -> T {
        let mut e = T::zero();
        for t in 0..self.tris.len() {
            let Some(rows) = lscm_rows(self.triangle_pos3(t)) else { return T::infinity() };
            for r in rows {
                let mut s = T::zero();
                for (i, &lv) in self.tris[t].iter().enumerate() {
                    s += r[2 * i] * self.uv[lv].x + r[2 * i + 1] * self.uv[lv].y;
                }
                e += s * s;
            }
        }
        e
    }

    /// No flipped or degenerate triangles, a simple boundary, and a full
    /// turn of angle around every interior vertex.
    pub fn check_flip_free(&self) -> Result<(), SelfParamError> {
        let d = self.diameter();
        let min_area = T::lit(1e-14) * d * d;
        for t in 0..self.tris.len() {
            let [a, b, c] = self.triangle_uv(t);
            let ar = signed_area2(a, b, c);
            if !(ar > min_area) {
                return Err(SelfParamError::FlipDetected);
            }
        }
        let ring: Vec<Vec2<T>> = self.boundary.iter().map(|&i| self.uv[i]).collect();
        if !is_simple_polygon(&ring) {
            return Err(SelfParamError::FlipDetected);
        }
        for &v in &self.interior {
            let mut sum = 0.0;
            for (t, tri) in self.tris.iter().enumerate() {
                if let Some(k) = tri.iter().position(|&x| x == v) {
                    let uv = self.triangle_uv(t);
                    let p = uv[k];
                    let e1 = uv[(k + 1) % 3] - p;
                    let e2 = uv[(k + 2) % 3] - p;
                    sum += e1.cross(e2).to_f64_lossy().atan2(e1.dot(e2).to_f64_lossy());
                }
            }
            if (sum - TAU).abs() > 1e-6 {
                return Err(SelfParamError::FlipDetected);
            }
        }
        Ok(())
    }
}

/// The two LSCM residual rows of a triangle, laid out as
/// `[u0, v0, u1, v1, u2, v2]` coefficients.
fn lscm_rows<T: Real>(p: [Vec3<T>; 3]) -> Option<[[T; 6]; 2]> {
    let loc = TriangleFrame::local_triangle(p[0], p[1], p[2])?;
    let area = signed_area2(loc[0], loc[1], loc[2]);
    if !(area > T::zero()) {
        return None;
    }
    let s = T::one() / (T::lit(2.0) * area.sqrt());
    let mut rows = [[T::zero(); 6]; 2];
    for i in 0..3 {
        let e = loc[(i + 2) % 3] - loc[(i + 1) % 3];
        let je = e.perp();
        rows[0][2 * i] = e.x * s;
        rows[0][2 * i + 1] = je.x * s;
        rows[1][2 * i] = e.y * s;
        rows[1][2 * i + 1] = je.y * s;
    }
    Some(rows)
}

/// Least-squares conformal map of a triangle set with pinned vertices.
/// Returns `None` when the system is singular.
pub fn lscm<T: Real>(
    pos3: &[Vec3<T>],
    tris: &[[usize; 3]],
    pins: &[(usize, Vec2<T>)],
) -> Option<Vec<Vec2<T>>> {
    let n = pos3.len();
    let mut col_of = vec![usize::MAX; 2 * n];
    let mut pinned = vec![None; n];
    for &(i, p) in pins {
        pinned[i] = Some(p);
    }
    let mut nf = 0;
    for i in 0..n {
        if pinned[i].is_none() {
            col_of[2 * i] = nf;
            col_of[2 * i + 1] = nf + 1;
            nf += 2;
        }
    }
    let mut ata = vec![T::zero(); nf * nf];
    let mut atb = vec![T::zero(); nf];
    for tri in tris {
        let rows = lscm_rows([pos3[tri[0]], pos3[tri[1]], pos3[tri[2]]])?;
        for r in rows {
            let mut fixed = T::zero();
            let mut free: Vec<(usize, T)> = Vec::with_capacity(6);
            for (k, &lv) in tri.iter().enumerate() {
                match pinned[lv] {
                    Some(p) => fixed += r[2 * k] * p.x + r[2 * k + 1] * p.y,
                    None => {
                        free.push((col_of[2 * lv], r[2 * k]));
                        free.push((col_of[2 * lv + 1], r[2 * k + 1]));
                    }
                }
            }
            for &(ci, vi) in &free {
                atb[ci] -= vi * fixed;
                for &(cj, vj) in &free {
                    ata[ci * nf + cj] += vi * vj;
                }
            }
        }
    }
    let x = if nf > 0 { solve_dense(ata, atb, nf)? } else { Vec::new() };
    Some(
        (0..n)
            .map(|i| match pinned[i] {
                Some(p) => p,
                None => Vec2::new(x[col_of[2 * i]], x[col_of[2 * i + 1]]),
            })
            .collect(),
    )
}

/// Faces around the edge of `h`, with the boundary of their union.
fn edge_patch_topology<T: Real>(mesh: &HalfedgeMesh<T>, h: usize) -> Result<FlattenedPatch<T>, SelfParamError> {
    let a = mesh.origin(h);
    let b = mesh.dest(h);
    let mut faces: Vec<usize> = mesh.vertex_faces(a);
    for f in mesh.vertex_faces(b) {
        if !faces.contains(&f) {
            faces.push(f);
        }
    }
    faces.sort_unstable();
    let mut next_of: Vec<(usize, usize)> = Vec::new();
    for &f in &faces {
        for k in 0..3 {
            let he = 3 * f + k;
            if !faces.contains(&face_of(mesh.twin(he))) {
                next_of.push((mesh.origin(he), mesh.dest(he)));
            }
        }
    }
    let mut ring = Vec::with_capacity(next_of.len());
    let start = next_of.iter().map(|e| e.0).min().ok_or(SelfParamError::NotDisk)?;
    let mut cur = start;
    loop {
        let mut it = next_of.iter().filter(|e| e.0 == cur);
        let (Some(e), None) = (it.next(), it.next()) else { return Err(SelfParamError::NotDisk) };
        ring.push(cur);
        cur = e.1;
        if cur == start {
            break;
        }
        if ring.len() > next_of.len() {
            return Err(SelfParamError::NotDisk);
        }
    }
    if ring.len() != next_of.len() || ring.contains(&a) || ring.contains(&b) {
        return Err(SelfParamError::NotDisk);
    }
    let mut vertices = ring.clone();
    vertices.push(a);
    vertices.push(b);
    let local = |v: usize| vertices.iter().position(|&x| x == v);
    let mut tris = Vec::with_capacity(faces.len());
    for &f in &faces {
        let [x, y, z] = mesh.face_vertices(f);
        match (local(x), local(y), local(z)) {
            (Some(x), Some(y), Some(z)) => tris.push([x, y, z]),
            _ => return Err(SelfParamError::NotDisk),
        }
    }
    let nb = ring.len();
    Ok(FlattenedPatch {
        faces,
        tris,
        pos3: vertices.iter().map(|&v| mesh.position(v)).collect(),
        uv: vec![Vec2::zero(); vertices.len()],
        vertices,
        boundary: (0..nb).collect(),
        interior: vec![nb, nb + 1],
    })
}

/// Flattens the faces around the edge of `h` by LSCM. The lowest-id boundary
/// vertex is pinned at the origin and the boundary vertex farthest from it
/// (in 3D) on the positive x axis at their chord distance.
pub fn lscm_flatten_edge_patch<T: Real>(mesh: &HalfedgeMesh<T>, h: usize) -> Result<FlattenedPatch<T>, SelfParamError> {
    let mut patch = edge_patch_topology(mesh, h)?;
    let b = &patch.boundary;
    let p0 = *b.iter().min_by_key(|&&i| patch.vertices[i]).expect("non-empty boundary");
    let mut p1 = p0;
    let mut best = T::zero();
    for &i in b {
        let d = (patch.pos3[i] - patch.pos3[p0]).norm();
        if d > best || (d == best && patch.vertices[i] < patch.vertices[p1]) {
            best = d;
            p1 = i;
        }
    }
    if p1 == p0 || !(best > T::zero()) {
        return Err(SelfParamError::FlipDetected);
    }
    let pins = [(p0, Vec2::zero()), (p1, Vec2::new(best, T::zero()))];
    patch.uv = lscm(&patch.pos3, &patch.tris, &pins).ok_or(SelfParamError::FlipDetected)?;
    patch.check_flip_free()?;
    Ok(patch)
}

/// Replaces the edge of a flattened edge patch by the single vertex
/// `v_star`. Boundary UVs are kept; the UV of `v_star` minimizes the LSCM
/// energy of the new faces with the boundary fixed.
pub fn flatten_star_patch<T: Real>(
    p: &FlattenedPatch<T>,
    v_star: Vec3<T>,
    removed_faces: [usize; 2],
) -> Result<FlattenedPatch<T>, SelfParamError> {
    let (&la, &lb) = match p.interior.as_slice() {
        [a, b] => (a, b),
        _ => return Err(SelfParamError::NotDisk),
    };
    // `b` is the last local vertex of an edge patch; dropping it keeps every
    // other local index unchanged.
    if lb != p.vertices.len() - 1 {
        return Err(SelfParamError::NotDisk);
    }
    let mut faces = Vec::with_capacity(p.faces.len() - 2);
    let mut tris = Vec::with_capacity(p.faces.len() - 2);
    for (t, &f) in p.faces.iter().enumerate() {
        if removed_faces.contains(&f) {
            continue;
        }
        faces.push(f);
        tris.push(p.tris[t].map(|x| if x == lb { la } else { x }));
    }
    let mut pos3 = p.pos3.clone();
    pos3.pop();
    pos3[la] = v_star;
    let mut uv = p.uv.clone();
    uv.pop();

    // Two unknowns: the UV of `la`.
    let mut m = [T::zero(); 4];
    let mut rhs = [T::zero(); 2];
    for tri in &tris {
        let rows = lscm_rows([pos3[tri[0]], pos3[tri[1]], pos3[tri[2]]]).ok_or(SelfParamError::FlipDetected)?;
        for r in rows {
            let (mut cu, mut cv, mut fixed) = (T::zero(), T::zero(), T::zero());
            for (k, &lv) in tri.iter().enumerate() {
                if lv == la {
                    cu += r[2 * k];
                    cv += r[2 * k + 1];
                } else {
                    fixed += r[2 * k] * uv[lv].x + r[2 * k + 1] * uv[lv].y;
                }
            }
            m[0] += cu * cu;
            m[1] += cu * cv;
            m[2] += cv * cu;
            m[3] += cv * cv;
            rhs[0] -= cu * fixed;
            rhs[1] -= cv * fixed;
        }
    }
    let x = solve_dense(m.to_vec(), rhs.to_vec(), 2).ok_or(SelfParamError::FlipDetected)?;
    uv[la] = Vec2::new(x[0], x[1]);
    let mut vertices = p.vertices.clone();
    vertices.pop();
    let q = FlattenedPatch { faces, tris, vertices, pos3, uv, boundary: p.boundary.clone(), interior: vec![la] };
    q.check_flip_free()?;
    Ok(q)
}

/// Locates `p` in the patch: the lowest-id face whose triangle contains `p`
/// within `1e-9` of the patch diameter, with clamped barycentrics.
pub fn point_locate<T: Real>(patch: &FlattenedPatch<T>, p: Vec2<T>) -> Result<BaryTriplet<T>, SelfParamError> {
    let tol = T::lit(1e-9) * patch.diameter();
    let mut best: Option<(usize, [T; 3])> = None;
    for t in 0..patch.tris.len() {
        let f = patch.faces[t];
        if best.is_some_and(|(bf, _)| bf < f) {
            continue;
        }
        let tri = patch.triangle_uv(t);
        if let Some(w) = contains(&tri, p, tol) {
            best = Some((f, w));
        }
    }
    let (face, w) = best.ok_or(SelfParamError::OutsidePatch)?;
    let w = snap_barycentric(w);
    Ok(BaryTriplet { face, alpha: w[0], beta: w[1] })
}

/// Barycentrics of `p` when it lies in `tri` within distance `tol`.
pub fn contains<T: Real>(tri: &[Vec2<T>; 3], p: Vec2<T>, tol: T) -> Option<[T; 3]> {
    let w = barycentric(p, tri[0], tri[1], tri[2])?;
    let two_a = (tri[1] - tri[0]).cross(tri[2] - tri[0]);
    for i in 0..3 {
        let edge_len = (tri[(i + 2) % 3] - tri[(i + 1) % 3]).norm();
        // Signed distance of `p` from the edge opposite corner `i`.
        if w[i] * two_a / edge_len < -tol {
            return None;
        }
    }
    Some(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::subdivided_cube;

    fn top_interior_edge(m: &HalfedgeMesh<f64>) -> usize {
        let on_top = |v: usize| {
            let p = m.position(v);
            p.z == 1.0 && p.x.abs() < 0.6 && p.y.abs() < 0.6
        };
        (0..m.halfedge_capacity()).find(|&h| on_top(m.origin(h)) && on_top(m.dest(h))).unwrap()
    }

    #[test]
    fn planar_patch_is_similarity() {
        let m = subdivided_cube::<f64>(6);
        let h = top_interior_edge(&m);
        let p = lscm_flatten_edge_patch(&m, h).unwrap();
        assert!(p.conformal_energy() < 1e-10);
        // Pairwise distances scale by one common factor.
        let s = (p.uv[1] - p.uv[0]).norm() / (p.pos3[1] - p.pos3[0]).norm();
        for i in 0..p.uv.len() {
            for j in 0..i {
                let d2 = (p.uv[i] - p.uv[j]).norm();
                let d3 = (p.pos3[i] - p.pos3[j]).norm();
                assert!((d2 - s * d3).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn star_at_endpoint_keeps_endpoint_uv() {
        let m = subdivided_cube::<f64>(6);
        let h = top_interior_edge(&m);
        let p = lscm_flatten_edge_patch(&m, h).unwrap();
        let removed = [face_of(h), face_of(m.twin(h))];
        let la = p.interior[0];
        let q = flatten_star_patch(&p, p.pos3[la], removed).unwrap();
        assert!((q.uv[la] - p.uv[la]).norm() < 1e-10);
        assert_eq!(q.faces.len(), p.faces.len() - 2);
    }

    #[test]
    fn locate_vertex_and_centroid() {
        let m = subdivided_cube::<f64>(6);
        let p = lscm_flatten_edge_patch(&m, top_interior_edge(&m)).unwrap();
        for t in 0..p.tris.len() {
            let [a, b, c] = p.triangle_uv(t);
            let g = point_locate(&p, (a + b + c) / 3.0).unwrap();
            assert_eq!(g.face, p.faces[t]);
            assert!((g.alpha - 1.0 / 3.0).abs() < 1e-12 && (g.beta - 1.0 / 3.0).abs() < 1e-12);
        }
        let t = p.faces.iter().enumerate().min_by_key(|x| x.1).unwrap().0;
        let g = point_locate(&p, p.triangle_uv(t)[0]).unwrap();
        assert_eq!(g.face, p.faces[t]);
        assert_eq!((g.alpha, g.beta), (1.0, 0.0));
        assert!(matches!(point_locate(&p, Vec2::new(100.0, 100.0)), Err(SelfParamError::OutsidePatch)));
    }
}
