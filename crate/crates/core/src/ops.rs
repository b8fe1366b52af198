//! Operators on per-face feature fields: input features, the face
//! convolution, map-based down/upsampling and the multi-resolution fusion
//! transform.
//!
//! Every resampler comes with its adjoint, which is what backpropagation
//! through it needs.

use std::fmt::Write as _;

use thiserror::Error;

use crate::mesh::{HalfedgeMesh, MeshError};
use crate::overlay::OverlapMatrix;
use crate::pyramid::MeshPyramid;
use crate::scalar::Real;
use crate::selfparam::BaryTriplet;

pub const INPUT_CHANNELS: usize = 10;

#[derive(Debug, Error)]
pub enum OpsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("column {0} of the overlap matrix is empty")]
    EmptyColumn(usize),
    #[error("row {0} of the overlap matrix is empty")]
    EmptyRow(usize),
    #[error("no triplet for fine vertex {0}")]
    MissingTriplet(usize),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

pub type Result<T> = std::result::Result<T, OpsError>;

/// Row-major `rows x channels` matrix of per-face features.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureField<T> {
    pub level: usize,
    pub rows: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Real> FeatureField<T> {
    pub fn zeros(level: usize, rows: usize, channels: usize) -> Self {
        Self { level, rows, channels, data: vec![T::zero(); rows * channels] }
    }

    pub fn constant(level: usize, rows: usize, channels: usize, c: T) -> Self {
        Self { level, rows, channels, data: vec![c; rows * channels] }
    }

    pub fn from_vec(level: usize, rows: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * channels {
            return Err(OpsError::ShapeMismatch(format!("{} values for {rows}x{channels}", data.len())));
        }
        Ok(Self { level, rows, channels, data })
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.channels..(i + 1) * self.channels]
    }

    #[inline]
    pub fn get(&self, i: usize, c: usize) -> T {
        self.data[i * self.channels + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, o: &Self) -> T {
        self.data.iter().zip(&o.data).map(|(a, b)| (*a - *b).abs()).fold(T::zero(), T::max)
    }

    /// CSV with header `face_id,c0,...`, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("face_id");
        for c in 0..self.channels {
            let _ = write!(s, ",c{c}");
        }
        s.push('\n');
        for i in 0..self.rows {
            let _ = write!(s, "{i}");
            for x in self.row(i) {
                let _ = write!(s, ",{:.16e}", x.to_f64_lossy());
            }
            s.push('\n');
        }
        s
    }
}

fn check_compact<T: Real>(mesh: &HalfedgeMesh<T>) -> Result<()> {
    if mesh.face_capacity() != mesh.num_faces() || mesh.vertex_capacity() != mesh.num_vertices() {
        return Err(OpsError::ShapeMismatch("mesh has removed elements; compact it first".into()));
    }
    Ok(())
}

/// `(g0, g1, g2)`: symmetric functions of the three curvature values. The
/// values are sorted first so every permutation gives bit-identical sums.
pub fn curvature_invariants<T: Real>(mut k: [T; 3]) -> [T; 3] {
    k.sort_by(|a, b| a.total_cmp_lossy(b));
    let two = T::lit(2.0);
    [
        k[0] + k[1] + k[2],
        (k[0] - k[1]).abs() + (k[1] - k[2]).abs() + (k[2] - k[0]).abs(),
        (k[0] - two * k[1] + k[2]).abs() + (k[1] - two * k[2] + k[0]).abs() + (k[2] - two * k[0] + k[1]).abs(),
    ]
}

/// `k_j` of face `f`: mean of `dot(vertex normal, face normal)` over the two
/// vertices of the edge shared with neighbour `j`.
pub fn face_curvatures<T: Real>(mesh: &HalfedgeMesh<T>, vertex_normals: &[crate::geom::Vec3<T>], f: usize) -> Result<[T; 3]> {
    let n = mesh.face_geometry(f)?.normal;
    let vs = mesh.face_vertices(f);
    let d = vs.map(|v| vertex_normals[v].dot(n));
    Ok([(d[0] + d[1]) * T::lit(0.5), (d[1] + d[2]) * T::lit(0.5), (d[2] + d[0]) * T::lit(0.5)])
}

/// Per face `[Cx, Cy, Cz, a, Nx, Ny, Nz, g0, g1, g2]`.
pub fn input_features<T: Real>(mesh: &HalfedgeMesh<T>, level: usize) -> Result<FeatureField<T>> {
    check_compact(mesh)?;
    let normals: Vec<_> = (0..mesh.num_vertices()).map(|v| mesh.vertex_normal(v)).collect::<std::result::Result<_, _>>()?;
    let mut out = FeatureField::zeros(level, mesh.num_faces(), INPUT_CHANNELS);
    for f in 0..mesh.num_faces() {
        let g = mesh.face_geometry(f)?;
        let inv = curvature_invariants(face_curvatures(mesh, &normals, f)?);
        out.row_mut(f).copy_from_slice(&[
            g.center.x, g.center.y, g.center.z, g.area, g.normal.x, g.normal.y, g.normal.z, inv[0], inv[1], inv[2],
        ]);
    }
    Ok(out)
}

/// Counter-clockwise neighbour faces of every face.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceNeighbors(pub Vec<[usize; 3]>);

impl FaceNeighbors {
    pub fn new<T: Real>(mesh: &HalfedgeMesh<T>) -> Result<Self> {
        check_compact(mesh)?;
        Ok(Self((0..mesh.num_faces()).map(|f| mesh.ordered_neighbor_faces(f)).collect()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Concatenation with face ids offset per part.
    pub fn stack(parts: &[&FaceNeighbors]) -> Self {
        let mut out = Vec::new();
        for p in parts {
            let off = out.len();
            out.extend(p.0.iter().map(|n| n.map(|f| f + off)));
        }
        Self(out)
    }
}

#[inline]
fn sum3_sorted<T: Real>(mut v: [T; 3]) -> T {
    // Fixed order regardless of which neighbour comes first.
    if v[1] < v[0] {
        v.swap(0, 1);
    }
    if v[2] < v[1] {
        v.swap(1, 2);
    }
    if v[1] < v[0] {
        v.swap(0, 1);
    }
    v[0] + v[1] + v[2]
}

/// Per face and channel the four convolution inputs
/// `[h_i, Σ h_j, Σ |h_{j+1} - h_j|, Σ |h_i - h_j|]`, laid out as `4L`
/// channels. Sums are taken in sorted order so any rotation of the
/// neighbour list gives bit-identical results.
pub fn conv_aggregate<T: Real>(field: &FeatureField<T>, nbrs: &FaceNeighbors) -> Result<FeatureField<T>> {
    if nbrs.len() != field.rows {
        return Err(OpsError::ShapeMismatch(format!("{} neighbour lists for {} rows", nbrs.len(), field.rows)));
    }
    let l = field.channels;
    let mut out = FeatureField::zeros(field.level, field.rows, 4 * l);
    for (i, nb) in nbrs.0.iter().enumerate() {
        let (h, a, b, c) = (field.row(i), field.row(nb[0]), field.row(nb[1]), field.row(nb[2]));
        let o = out.row_mut(i);
        for ch in 0..l {
            let (x, y0, y1, y2) = (h[ch], a[ch], b[ch], c[ch]);
            o[ch] = x;
            o[l + ch] = sum3_sorted([y0, y1, y2]);
            o[2 * l + ch] = sum3_sorted([(y1 - y0).abs(), (y2 - y1).abs(), (y0 - y2).abs()]);
            o[3 * l + ch] = sum3_sorted([(x - y0).abs(), (x - y1).abs(), (x - y2).abs()]);
        }
    }
    Ok(out)
}

#[inline]
fn sgn<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Adjoint of [`conv_aggregate`]: maps the gradient of the `4L` aggregate
/// back to the `L` input channels. The derivative of `|x|` at 0 is taken as 0.
pub fn conv_aggregate_adjoint<T: Real>(field: &FeatureField<T>, nbrs: &FaceNeighbors, grad: &FeatureField<T>) -> FeatureField<T> {
    let l = field.channels;
    let mut out = FeatureField::zeros(field.level, field.rows, l);
    for (i, nb) in nbrs.0.iter().enumerate() {
        for ch in 0..l {
            let g = grad.row(i);
            let (g0, g1, g2, g3) = (g[ch], g[l + ch], g[2 * l + ch], g[3 * l + ch]);
            let x = field.get(i, ch);
            let y = nb.map(|j| field.get(j, ch));
            let mut gi = g0;
            let mut gy = [g1; 3];
            for k in 0..3 {
                let s = sgn(y[(k + 1) % 3] - y[k]) * g2;
                gy[(k + 1) % 3] += s;
                gy[k] -= s;
                let t = sgn(x - y[k]) * g3;
                gi += t;
                gy[k] -= t;
            }
            out.data[i * l + ch] += gi;
            for k in 0..3 {
                out.data[nb[k] * l + ch] += gy[k];
            }
        }
    }
    out
}

/// `x W^T + b` with `W` row-major `out x in`.
pub fn linear<T: Real>(x: &FeatureField<T>, w: &[T], b: Option<&[T]>, out_ch: usize) -> Result<FeatureField<T>> {
    let in_ch = x.channels;
    if w.len() != out_ch * in_ch || b.is_some_and(|b| b.len() != out_ch) {
        return Err(OpsError::ShapeMismatch(format!("weights {} for {out_ch}x{in_ch}", w.len())));
    }
    let mut out = FeatureField::zeros(x.level, x.rows, out_ch);
    for i in 0..x.rows {
        let xi = x.row(i);
        let o = out.row_mut(i);
        for (d, od) in o.iter_mut().enumerate() {
            let wr = &w[d * in_ch..(d + 1) * in_ch];
            let mut acc = b.map_or(T::zero(), |b| b[d]);
            for (a, c) in wr.iter().zip(xi) {
                acc += *a * *c;
            }
            *od = acc;
        }
    }
    Ok(out)
}

/// Gradients of [`linear`]: returns `dx` and accumulates into `dw`, `db`.
pub fn linear_backward<T: Real>(x: &FeatureField<T>, w: &[T], grad: &FeatureField<T>, dw: &mut [T], db: Option<&mut [T]>) -> FeatureField<T> {
    let in_ch = x.channels;
    let out_ch = grad.channels;
    let mut dx = FeatureField::zeros(x.level, x.rows, in_ch);
    for i in 0..x.rows {
        let xi = x.row(i);
        let gi = grad.row(i);
        let dxi = &mut dx.data[i * in_ch..(i + 1) * in_ch];
        for d in 0..out_ch {
            let g = gi[d];
            if g == T::zero() {
                continue;
            }
            let wr = &w[d * in_ch..(d + 1) * in_ch];
            let dwr = &mut dw[d * in_ch..(d + 1) * in_ch];
            for c in 0..in_ch {
                dxi[c] += g * wr[c];
                dwr[c] += g * xi[c];
            }
        }
    }
    if let Some(db) = db {
        for i in 0..grad.rows {
            for (d, g) in grad.row(i).iter().enumerate() {
                db[d] += *g;
            }
        }
    }
    dx
}

/// Weights of one face convolution; each `w[k]` is row-major
/// `out_channels x in_channels`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub w: [Vec<T>; 4],
    pub bias: Option<Vec<T>>,
}

impl<T: Real> ConvParams<T> {
    pub fn zeros(in_channels: usize, out_channels: usize, bias: bool) -> Self {
        let z = vec![T::zero(); in_channels * out_channels];
        Self { in_channels, out_channels, w: [z.clone(), z.clone(), z.clone(), z], bias: bias.then(|| vec![T::zero(); out_channels]) }
    }

    /// The four blocks side by side: `out x 4in`, matching [`conv_aggregate`].
    pub fn stacked(&self) -> Vec<T> {
        let (l, d) = (self.in_channels, self.out_channels);
        let mut s = vec![T::zero(); d * 4 * l];
        for o in 0..d {
            for k in 0..4 {
                s[o * 4 * l + k * l..o * 4 * l + (k + 1) * l].copy_from_slice(&self.w[k][o * l..(o + 1) * l]);
            }
        }
        s
    }

    fn check(&self) -> Result<()> {
        let n = self.in_channels * self.out_channels;
        if self.w.iter().any(|w| w.len() != n) || self.bias.as_ref().is_some_and(|b| b.len() != self.out_channels) {
            return Err(OpsError::ShapeMismatch("conv weights do not match their channel counts".into()));
        }
        Ok(())
    }
}

pub fn face_convolution_with<T: Real>(field: &FeatureField<T>, nbrs: &FaceNeighbors, params: &ConvParams<T>) -> Result<FeatureField<T>> {
    params.check()?;
    if field.channels != params.in_channels {
        return Err(OpsError::ShapeMismatch(format!("field has {} channels, conv expects {}", field.channels, params.in_channels)));
    }
    let agg = conv_aggregate(field, nbrs)?;
    linear(&agg, &params.stacked(), params.bias.as_deref(), params.out_channels)
}

pub fn face_convolution<T: Real>(field: &FeatureField<T>, mesh: &HalfedgeMesh<T>, params: &ConvParams<T>) -> Result<FeatureField<T>> {
    face_convolution_with(field, &FaceNeighbors::new(mesh)?, params)
}

/// Resampling between a fine level and the next coarser one.
#[derive(Clone, Debug)]
pub struct Resampler<T> {
    pub a: OverlapMatrix<T>,
    col_sums: Vec<T>,
    row_sums: Vec<T>,
    /// CSR of faces around each coarse vertex.
    cv_ptr: Vec<usize>,
    cv_faces: Vec<usize>,
    coarse_faces: Vec<[usize; 3]>,
    fine_bary: Vec<(usize, [T; 3])>,
    fine_faces: Vec<[usize; 3]>,
}

impl<T: Real> Resampler<T> {
    pub fn new(a: OverlapMatrix<T>, triplets: &[BaryTriplet<T>], fine: &HalfedgeMesh<T>, coarse: &HalfedgeMesh<T>) -> Result<Self> {
        check_compact(fine)?;
        check_compact(coarse)?;
        if a.rows() != fine.num_faces() || a.cols() != coarse.num_faces() {
            return Err(OpsError::ShapeMismatch(format!(
                "matrix {}x{} for levels with {} and {} faces",
                a.rows(),
                a.cols(),
                fine.num_faces(),
                coarse.num_faces()
            )));
        }
        if triplets.len() < fine.num_vertices() {
            return Err(OpsError::MissingTriplet(triplets.len()));
        }
        let col_sums = a.column_sums();
        let row_sums = a.row_sums();
        if let Some(j) = col_sums.iter().position(|s| !(*s > T::zero())) {
            return Err(OpsError::EmptyColumn(j));
        }
        if let Some(i) = row_sums.iter().position(|s| !(*s > T::zero())) {
            return Err(OpsError::EmptyRow(i));
        }
        let mut cv_ptr = vec![0];
        let mut cv_faces = Vec::new();
        for v in 0..coarse.num_vertices() {
            cv_faces.extend(coarse.vertex_faces(v));
            cv_ptr.push(cv_faces.len());
        }
        let fine_bary = triplets[..fine.num_vertices()]
            .iter()
            .map(|t| {
                if t.face >= coarse.num_faces() {
                    Err(OpsError::ShapeMismatch(format!("triplet names coarse face {}", t.face)))
                } else {
                    Ok((t.face, t.weights()))
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            a,
            col_sums,
            row_sums,
            cv_ptr,
            cv_faces,
            coarse_faces: (0..coarse.num_faces()).map(|f| coarse.face_vertices(f)).collect(),
            fine_bary,
            fine_faces: (0..fine.num_faces()).map(|f| fine.face_vertices(f)).collect(),
        })
    }

    /// Resampler between pyramid levels `n + 1` and `n`.
    pub fn from_pyramid(p: &MeshPyramid<T>, n: usize) -> Result<Self> {
        Self::new(p.matrices[n].clone(), &p.maps[n].triplets, &p.levels[n + 1], &p.levels[n])
    }

    /// Block-diagonal union of several resamplers, for batching meshes.
    pub fn stack(parts: &[&Resampler<T>]) -> Result<Self> {
        let (mut entries, mut col_sums, mut row_sums) = (Vec::new(), Vec::new(), Vec::new());
        let (mut cv_ptr, mut cv_faces, mut coarse_faces, mut fine_bary, mut fine_faces) = (vec![0], Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let (mut r0, mut c0, mut cv0, mut fv0) = (0, 0, 0, 0);
        for p in parts {
            entries.extend(p.a.triplets().map(|(i, j, v)| (i + r0, j + c0, v)));
            col_sums.extend_from_slice(&p.col_sums);
            row_sums.extend_from_slice(&p.row_sums);
            let base = cv_faces.len();
            cv_faces.extend(p.cv_faces.iter().map(|f| f + c0));
            cv_ptr.extend(p.cv_ptr[1..].iter().map(|k| k + base));
            coarse_faces.extend(p.coarse_faces.iter().map(|t| t.map(|v| v + cv0)));
            fine_bary.extend(p.fine_bary.iter().map(|(f, w)| (f + c0, *w)));
            fine_faces.extend(p.fine_faces.iter().map(|t| t.map(|v| v + fv0)));
            r0 += p.fine_faces();
            c0 += p.coarse_faces();
            cv0 += p.cv_ptr.len() - 1;
            fv0 += p.fine_bary.len();
        }
        let a = OverlapMatrix::from_entries(r0, c0, entries).map_err(|e| OpsError::ShapeMismatch(e.to_string()))?;
        Ok(Self { a, col_sums, row_sums, cv_ptr, cv_faces, coarse_faces, fine_bary, fine_faces })
    }

    pub fn fine_faces(&self) -> usize {
        self.a.rows()
    }

    pub fn coarse_faces(&self) -> usize {
        self.a.cols()
    }

    fn expect_rows(&self, f: &FeatureField<T>, rows: usize) -> Result<()> {
        if f.rows != rows {
            return Err(OpsError::ShapeMismatch(format!("field has {} rows, expected {rows}", f.rows)));
        }
        Ok(())
    }

    /// `h_j = Σ_i a_ij h_i / Σ_i a_ij`.
    pub fn downsample(&self, f: &FeatureField<T>, level: usize) -> Result<FeatureField<T>> {
        self.expect_rows(f, self.fine_faces())?;
        let c = f.channels;
        let mut out = FeatureField::zeros(level, self.coarse_faces(), c);
        for j in 0..self.coarse_faces() {
            let o = &mut out.data[j * c..(j + 1) * c];
            for (i, a) in self.a.column(j) {
                for (x, y) in o.iter_mut().zip(f.row(i)) {
                    *x += a * *y;
                }
            }
            let s = self.col_sums[j];
            for x in o.iter_mut() {
                *x /= s;
            }
        }
        Ok(out)
    }

    pub fn downsample_adjoint(&self, g: &FeatureField<T>, level: usize) -> Result<FeatureField<T>> {
        self.expect_rows(g, self.coarse_faces())?;
        let c = g.channels;
        let mut out = FeatureField::zeros(level, self.fine_faces(), c);
        for j in 0..self.coarse_faces() {
            let s = self.col_sums[j];
            for (i, a) in self.a.column(j) {
                let w = a / s;
                for (x, y) in out.data[i * c..(i + 1) * c].iter_mut().zip(g.row(j)) {
                    *x += w * *y;
                }
            }
        }
        Ok(out)
    }

    /// `h_i = Σ_j a_ij h_j / Σ_j a_ij`.
    pub fn upsample_area(&self, f: &FeatureField<T>, level: usize) -> Result<FeatureField<T>> {
        self.expect_rows(f, self.coarse_faces())?;
        let c = f.channels;
        let mut out = FeatureField::zeros(level, self.fine_faces(), c);
        for i in 0..self.fine_faces() {
            let o = &mut out.data[i * c..(i + 1) * c];
            if let Some(j) = self.single_support(i) {
                o.copy_from_slice(f.row(j));
                continue;
            }
            for (j, a) in self.a.row(i) {
                for (x, y) in o.iter_mut().zip(f.row(j)) {
                    *x += a * *y;
                }
            }
            let s = self.row_sums[i];
            for x in o.iter_mut() {
                *x /= s;
            }
        }
        Ok(out)
    }

    /// The only coarse face of fine face `i`, when its image lies in one.
    fn single_support(&self, i: usize) -> Option<usize> {
        let mut r = self.a.row(i);
        match (r.next(), r.next()) {
            (Some((j, _)), None) => Some(j),
            _ => None,
        }
    }

    pub fn upsample_area_adjoint(&self, g: &FeatureField<T>, level: usize) -> Result<FeatureField<T>> {
        self.expect_rows(g, self.fine_faces())?;
        let c = g.channels;
        let mut out = FeatureField::zeros(level, self.coarse_faces(), c);
        for i in 0..self.fine_faces() {
            let s = self.row_sums[i];
            for (j, a) in self.a.row(i) {
                let w = a / s;
                for (x, y) in out.data[j * c..(j + 1) * c].iter_mut().zip(g.row(i)) {
                    *x += w * *y;
                }
            }
        }
        Ok(out)
    }

    /// Coarse vertex features as the mean of their incident faces.
    pub fn coarse_vertex_features(&self, f: &FeatureField<T>) -> Vec<T> {
        let c = f.channels;
        let nv = self.cv_ptr.len() - 1;
        let mut hv = vec![T::zero(); nv * c];
        for v in 0..nv {
            let faces = &self.cv_faces[self.cv_ptr[v]..self.cv_ptr[v + 1]];
            let o = &mut hv[v * c..(v + 1) * c];
            for &j in faces {
                for (x, y) in o.iter_mut().zip(f.row(j)) {
                    *x += *y;
                }
            }
            let n = T::from_usize_lossy(faces.len());
            for x in o.iter_mut() {
                *x /= n;
            }
        }
        hv
    }

    /// Fine vertex features by barycentric interpolation of coarse vertex
    /// features at each fine vertex's image.
    pub fn fine_vertex_features(&self, hv: &[T], c: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.fine_bary.len() * c];
        for (v, (face, w)) in self.fine_bary.iter().enumerate() {
            let corners = self.coarse_faces[*face];
            let o = &mut out[v * c..(v + 1) * c];
            for k in 0..3 {
                let src = &hv[corners[k] * c..(corners[k] + 1) * c];
                for (x, y) in o.iter_mut().zip(src) {
                    *x += w[k] * *y;
                }
            }
        }
        out
    }

    /// Vertex averaging on the coarse level, barycentric interpolation at the
    /// fine vertices, then the mean of each fine face's three vertices.
    pub fn upsample_barycentric(&self, f: &FeatureField<T>, level: usize) -> Result<FeatureField<T>> {
        self.expect_rows(f, self.coarse_faces())?;
        let c = f.channels;
        let hv = self.coarse_vertex_features(f);
        let fv = self.fine_vertex_features(&hv, c);
        let third = T::one() / T::lit(3.0);
        let mut out = FeatureField::zeros(level, self.fine_faces(), c);
        for (i, tri) in self.fine_faces.iter().enumerate() {
            let o = &mut out.data[i * c..(i + 1) * c];
            for &v in tri {
                for (x, y) in o.iter_mut().zip(&fv[v * c..(v + 1) * c]) {
                    *x += *y;
                }
            }
            for x in o.iter_mut() {
                *x *= third;
            }
        }
        Ok(out)
    }

    pub fn upsample_barycentric_adjoint(&self, g: &FeatureField<T>, level: usize) -> Result<FeatureField<T>> {
        self.expect_rows(g, self.fine_faces())?;
        let c = g.channels;
        let third = T::one() / T::lit(3.0);
        let mut gfv = vec![T::zero(); self.fine_bary.len() * c];
        for (i, tri) in self.fine_faces.iter().enumerate() {
            for &v in tri {
                for (x, y) in gfv[v * c..(v + 1) * c].iter_mut().zip(g.row(i)) {
                    *x += third * *y;
                }
            }
        }
        let nv = self.cv_ptr.len() - 1;
        let mut ghv = vec![T::zero(); nv * c];
        for (v, (face, w)) in self.fine_bary.iter().enumerate() {
            let corners = self.coarse_faces[*face];
            for k in 0..3 {
                for (x, y) in ghv[corners[k] * c..(corners[k] + 1) * c].iter_mut().zip(&gfv[v * c..(v + 1) * c]) {
                    *x += w[k] * *y;
                }
            }
        }
        let mut out = FeatureField::zeros(level, self.coarse_faces(), c);
        for v in 0..nv {
            let faces = &self.cv_faces[self.cv_ptr[v]..self.cv_ptr[v + 1]];
            let n = T::from_usize_lossy(faces.len());
            for &j in faces {
                for (x, y) in out.data[j * c..(j + 1) * c].iter_mut().zip(&ghv[v * c..(v + 1) * c]) {
                    *x += *y / n;
                }
            }
        }
        Ok(out)
    }
}

pub fn downsample<T: Real>(field: &FeatureField<T>, a: &OverlapMatrix<T>, level: usize) -> Result<FeatureField<T>> {
    if field.rows != a.rows() {
        return Err(OpsError::ShapeMismatch(format!("field has {} rows, matrix {}", field.rows, a.rows())));
    }
    let c = field.channels;
    let mut out = FeatureField::zeros(level, a.cols(), c);
    for j in 0..a.cols() {
        let mut s = T::zero();
        let o = &mut out.data[j * c..(j + 1) * c];
        for (i, w) in a.column(j) {
            s += w;
            for (x, y) in o.iter_mut().zip(field.row(i)) {
                *x += w * *y;
            }
        }
        if !(s > T::zero()) {
            return Err(OpsError::EmptyColumn(j));
        }
        for x in o.iter_mut() {
            *x /= s;
        }
    }
    Ok(out)
}

pub fn upsample_area<T: Real>(field: &FeatureField<T>, a: &OverlapMatrix<T>, level: usize) -> Result<FeatureField<T>> {
    if field.rows != a.cols() {
        return Err(OpsError::ShapeMismatch(format!("field has {} rows, matrix {} columns", field.rows, a.cols())));
    }
    let c = field.channels;
    let mut out = FeatureField::zeros(level, a.rows(), c);
    for i in 0..a.rows() {
        let mut s = T::zero();
        let o = &mut out.data[i * c..(i + 1) * c];
        if let [(j, _)] = a.row(i).collect::<Vec<_>>()[..] {
            // fully inside one coarse face: assigned directly
            o.copy_from_slice(field.row(j));
            continue;
        }
        for (j, w) in a.row(i) {
            s += w;
            for (x, y) in o.iter_mut().zip(field.row(j)) {
                *x += w * *y;
            }
        }
        if !(s > T::zero()) {
            return Err(OpsError::EmptyRow(i));
        }
        for x in o.iter_mut() {
            *x /= s;
        }
    }
    Ok(out)
}

pub fn upsample_barycentric<T: Real>(
    field: &FeatureField<T>,
    a: &OverlapMatrix<T>,
    triplets: &[BaryTriplet<T>],
    coarse: &HalfedgeMesh<T>,
    fine: &HalfedgeMesh<T>,
    level: usize,
) -> Result<FeatureField<T>> {
    Resampler::new(a.clone(), triplets, fine, coarse)?.upsample_barycentric(field, level)
}

/// Per-channel standardization over all rows, then `gamma * x + beta`.
/// Returns the output with the batch mean and `1 / sqrt(var + eps)`.
pub fn batch_norm<T: Real>(x: &FeatureField<T>, gamma: &[T], beta: &[T], eps: T) -> (FeatureField<T>, Vec<T>, Vec<T>) {
    let (mean, var) = channel_stats(x);
    let inv: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
    (normalize_with(x, &mean, &inv, gamma, beta), mean, inv)
}

/// Per-channel mean and biased variance over rows.
pub fn channel_stats<T: Real>(x: &FeatureField<T>) -> (Vec<T>, Vec<T>) {
    let c = x.channels;
    let n = T::from_usize_lossy(x.rows.max(1));
    let mut mean = vec![T::zero(); c];
    for i in 0..x.rows {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += *v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut var = vec![T::zero(); c];
    for i in 0..x.rows {
        for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
            *s += (*v - *m) * (*v - *m);
        }
    }
    for s in var.iter_mut() {
        *s /= n;
    }
    (mean, var)
}

pub fn normalize_with<T: Real>(x: &FeatureField<T>, mean: &[T], inv_std: &[T], gamma: &[T], beta: &[T]) -> FeatureField<T> {
    let mut out = x.clone();
    let c = x.channels;
    for i in 0..x.rows {
        let o = &mut out.data[i * c..(i + 1) * c];
        for ch in 0..c {
            o[ch] = gamma[ch] * (o[ch] - mean[ch]) * inv_std[ch] + beta[ch];
        }
    }
    out
}

pub fn relu<T: Real>(x: &FeatureField<T>) -> FeatureField<T> {
    let mut out = x.clone();
    for v in out.data.iter_mut() {
        *v = v.max(T::zero());
    }
    out
}

/// One fusion round after resampling: projection, normalization, rectifier.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionRound<T> {
    /// Row-major `out x in`; `None` keeps the channels.
    pub projection: Option<(Vec<T>, usize)>,
    /// `(gamma, beta, eps)`; `None` disables normalization.
    pub norm: Option<(Vec<T>, Vec<T>, T)>,
    pub relu: bool,
}

impl<T: Real> FusionRound<T> {
    pub fn apply(&self, x: &FeatureField<T>) -> Result<FeatureField<T>> {
        let mut y = match &self.projection {
            Some((w, out)) => linear(x, w, None, *out)?,
            None => x.clone(),
        };
        if let Some((g, b, eps)) = &self.norm {
            y = batch_norm(&y, g, b, *eps).0;
        }
        if self.relu {
            y = relu(&y);
        }
        Ok(y)
    }
}

/// `h'_r = (1/R) Σ_x T_xr(h_x)` with level 0 the finest. `resamplers[r]`
/// connects level `r` to level `r + 1`; `rounds[x][r]` holds the `|x - r|`
/// rounds applied after each resampling step from `x` towards `r`.
pub fn fusion_transform<T: Real>(
    fields: &[FeatureField<T>],
    resamplers: &[&Resampler<T>],
    rounds: &[Vec<Vec<FusionRound<T>>>],
) -> Result<Vec<FeatureField<T>>> {
    let r_count = fields.len();
    if resamplers.len() + 1 < r_count || rounds.len() != r_count {
        return Err(OpsError::ShapeMismatch("fusion needs one resampler per adjacent pair and rounds per source level".into()));
    }
    let mut out = Vec::with_capacity(r_count);
    for r in 0..r_count {
        let mut acc: Option<FeatureField<T>> = None;
        for x in 0..r_count {
            let chain = &rounds[x][r];
            if chain.len() != x.abs_diff(r) {
                return Err(OpsError::ShapeMismatch(format!("T_{x}{r} needs {} rounds", x.abs_diff(r))));
            }
            let mut h = fields[x].clone();
            let mut lvl = x;
            for round in chain {
                h = if lvl < r {
                    lvl += 1;
                    resamplers[lvl - 1].downsample(&h, lvl)?
                } else {
                    lvl -= 1;
                    resamplers[lvl].upsample_barycentric(&h, lvl)?
                };
                h = round.apply(&h)?;
            }
            acc = Some(match acc {
                None => h,
                Some(mut a) => {
                    if a.channels != h.channels || a.rows != h.rows {
                        return Err(OpsError::ShapeMismatch(format!("T_{x}{r} yields {}x{}, expected {}x{}", h.rows, h.channels, a.rows, a.channels)));
                    }
                    for (p, q) in a.data.iter_mut().zip(&h.data) {
                        *p += *q;
                    }
                    a
                }
            });
        }
        let mut a = acc.expect("at least one level");
        let inv = T::one() / T::from_usize_lossy(r_count);
        for v in a.data.iter_mut() {
            *v *= inv;
        }
        a.level = r;
        out.push(a);
    }
    Ok(out)
}
