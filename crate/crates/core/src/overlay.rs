//! Common refinement of two adjacent pyramid levels and the area overlap
//! matrix used for pooling.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::geom::{TriangleFrame, Vec2};
use crate::mesh::HalfedgeMesh;
use crate::planar::{clip_convex_by_triangle, polygon_area, signed_polygon_area};
use crate::scalar::Real;
use crate::selfparam::{CellVertex, Decimation};

/// Relative per-face area deficit tolerated by the meta mesh.
pub const TILING_TOLERANCE: f64 = 1e-6;
/// Column sums must be this close to 1 before renormalization.
pub const COLUMN_SUM_TOLERANCE: f64 = 1e-6;
/// Overlap ratios below this are dropped.
pub const MIN_RATIO: f64 = 1e-12;
/// Cells below this fraction of their coarse face are dropped.
pub const DEGENERATE_CELL: f64 = 1e-14;

#[derive(Debug, Error)]
pub enum OverlayError {
    #[error("cells of coarse face {face} miss {deficit:e} of its area")]
    TilingGap { face: usize, deficit: f64 },
    #[error("column {column} of the overlap matrix sums to {sum}")]
    ColumnSumViolation { column: usize, sum: f64 },
    #[error("bad matrix market data: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where a meta-mesh vertex comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    FineVertex(usize),
    CoarseVertex(usize),
    Crossing { fine_edge: usize, coarse_halfedge: usize },
    /// Collinear leftover of clipping; carries no topological meaning.
    Other,
}

#[derive(Clone, Debug)]
pub struct MetaCell<T> {
    pub fine_face: usize,
    pub coarse_face: usize,
    /// Counter-clockwise, in the coarse face's frame.
    pub polygon: Vec<Vec2<T>>,
    pub provenance: Vec<Provenance>,
    pub area: T,
}

#[derive(Clone, Debug)]
pub struct MetaMesh<T> {
    pub cells: Vec<MetaCell<T>>,
    /// Area of every coarse face.
    pub coarse_areas: Vec<T>,
    pub num_fine_faces: usize,
}

impl<T: Real> MetaMesh<T> {
    pub fn cells_of(&self, coarse_face: usize) -> impl Iterator<Item = &MetaCell<T>> {
        self.cells.iter().filter(move |c| c.coarse_face == coarse_face)
    }
}

/// Intersection of two counter-clockwise triangles; empty when they are
/// disjoint or only touch.
pub fn triangle_overlay<T: Real>(a: &[Vec2<T>; 3], b: &[Vec2<T>; 3]) -> Vec<Vec2<T>> {
    let diam = a
        .iter()
        .chain(b.iter())
        .flat_map(|p| a.iter().chain(b.iter()).map(move |q| (*p - *q).norm()))
        .fold(T::zero(), T::max);
    clip_convex_by_triangle(a, b, T::lit(1e-12) * diam)
}

fn classify<T: Real>(
    v: &CellVertex<T>,
    fine_face: usize,
    coarse_face: usize,
    fine: &HalfedgeMesh<T>,
    coarse: &HalfedgeMesh<T>,
) -> Provenance {
    if let Some(k) = (0..3).find(|&k| v.fine[k] == T::one()) {
        return Provenance::FineVertex(fine.face_vertices(fine_face)[k]);
    }
    if let Some(k) = (0..3).find(|&k| v.coarse[k] == T::one()) {
        return Provenance::CoarseVertex(coarse.face_vertices(coarse_face)[k]);
    }
    let zeros: Vec<usize> = (0..3).filter(|&k| v.coarse[k] == T::zero()).collect();
    if v.mask.count_ones() == 1 && zeros.len() == 1 {
        let k = v.mask.trailing_zeros() as usize;
        return Provenance::Crossing {
            fine_edge: fine.edge_of(3 * fine_face + k),
            coarse_halfedge: 3 * coarse_face + (zeros[0] + 1) % 3,
        };
    }
    Provenance::Other
}

/// Lays the cells of a finished decimation out in the frames of their coarse
/// faces and checks that they tile every coarse face.
pub fn build_meta_mesh<T: Real>(
    dec: &Decimation<T>,
    fine: &HalfedgeMesh<T>,
    coarse: &HalfedgeMesh<T>,
) -> Result<MetaMesh<T>, OverlayError> {
    let mut cells = Vec::new();
    let mut coarse_areas = Vec::with_capacity(coarse.num_faces());
    for (j, face_cells) in dec.cells.iter().enumerate() {
        let [a, b, c] = coarse.face_positions(j);
        let tri = TriangleFrame::local_triangle(a, b, c).ok_or(OverlayError::TilingGap { face: j, deficit: 1.0 })?;
        let s = signed_polygon_area(&tri);
        coarse_areas.push(s);
        let mut sum = T::zero();
        for cell in face_cells {
            let polygon: Vec<Vec2<T>> =
                cell.verts.iter().map(|v| tri[0] * v.coarse[0] + tri[1] * v.coarse[1] + tri[2] * v.coarse[2]).collect();
            let provenance = cell.verts.iter().map(|v| classify(v, cell.fine_face, j, fine, coarse)).collect();
            let area = polygon_area(&polygon);
            sum += area;
            cells.push(MetaCell { fine_face: cell.fine_face, coarse_face: j, polygon, provenance, area });
        }
        let deficit = ((s - sum) / s).abs().to_f64_lossy();
        if !(deficit <= TILING_TOLERANCE) {
            return Err(OverlayError::TilingGap { face: j, deficit });
        }
    }
    Ok(MetaMesh { cells, coarse_areas, num_fine_faces: fine.num_faces() })
}

/// Sparse `|F_fine| x |F_coarse|` matrix of overlap ratios, stored column
/// major with a row-major index alongside.
#[derive(Clone, Debug, PartialEq)]
pub struct OverlapMatrix<T> {
    rows: usize,
    cols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<T>,
    row_ptr: Vec<usize>,
    /// Per row, `(column, position in values)`.
    row_entries: Vec<(usize, usize)>,
}

/// Unnormalized ratios `(i, j, S(cells i,j) / S(f_j))`, sorted by column then
/// row, with degenerate cells and tiny ratios removed.
pub fn raw_overlap<T: Real>(meta: &MetaMesh<T>) -> Vec<(usize, usize, T)> {
    let mut acc: Vec<(usize, usize, T)> = Vec::new();
    let mut keyed: Vec<(usize, usize, T)> = meta
        .cells
        .iter()
        .filter(|c| c.area >= T::lit(DEGENERATE_CELL) * meta.coarse_areas[c.coarse_face])
        .map(|c| (c.coarse_face, c.fine_face, c.area))
        .collect();
    keyed.sort_by_key(|a| (a.0, a.1));
    for (j, i, a) in keyed {
        match acc.last_mut() {
            Some(last) if last.0 == i && last.1 == j => last.2 += a,
            _ => acc.push((i, j, a)),
        }
    }
    for e in acc.iter_mut() {
        e.2 /= meta.coarse_areas[e.1];
    }
    acc.retain(|e| e.2 >= T::lit(MIN_RATIO));
    acc
}

/// Column sums of a coordinate list.
pub fn column_sums<T: Real>(entries: &[(usize, usize, T)], cols: usize) -> Vec<T> {
    let mut s = vec![T::zero(); cols];
    for &(_, j, v) in entries {
        s[j] += v;
    }
    s
}

pub fn build_overlap_matrix<T: Real>(meta: &MetaMesh<T>, coarse: &HalfedgeMesh<T>) -> Result<OverlapMatrix<T>, OverlayError> {
    let raw = raw_overlap(meta);
    OverlapMatrix::normalized(meta.num_fine_faces, coarse.num_faces(), raw)
}

impl<T: Real> OverlapMatrix<T> {
    /// Checks column sums against 1 and rescales them to exactly 1.
    pub fn normalized(rows: usize, cols: usize, mut entries: Vec<(usize, usize, T)>) -> Result<Self, OverlayError> {
        let sums = column_sums(&entries, cols);
        for (j, s) in sums.iter().enumerate() {
            let d = (*s - T::one()).abs().to_f64_lossy();
            if !(d <= COLUMN_SUM_TOLERANCE) {
                return Err(OverlayError::ColumnSumViolation { column: j, sum: s.to_f64_lossy() });
            }
        }
        for e in entries.iter_mut() {
            e.2 /= sums[e.1];
        }
        Self::from_entries(rows, cols, entries)
    }

    /// Builds the matrix from coordinate triples without rescaling.
    pub fn from_entries(rows: usize, cols: usize, mut entries: Vec<(usize, usize, T)>) -> Result<Self, OverlayError> {
        entries.sort_by_key(|a| (a.1, a.0));
        for w in entries.windows(2) {
            if (w[0].0, w[0].1) == (w[1].0, w[1].1) {
                return Err(OverlayError::Parse(format!("duplicate entry ({}, {})", w[0].0, w[0].1)));
            }
        }
        let mut col_ptr = vec![0usize; cols + 1];
        for &(i, j, v) in &entries {
            if i >= rows || j >= cols {
                return Err(OverlayError::Parse(format!("entry ({i}, {j}) outside {rows}x{cols}")));
            }
            if !(v > T::zero() && v <= T::one() + T::lit(COLUMN_SUM_TOLERANCE)) {
                return Err(OverlayError::Parse(format!("entry ({i}, {j}) = {v} outside (0, 1]")));
            }
            col_ptr[j + 1] += 1;
        }
        for j in 0..cols {
            col_ptr[j + 1] += col_ptr[j];
        }
        let row_idx: Vec<usize> = entries.iter().map(|e| e.0).collect();
        let values: Vec<T> = entries.iter().map(|e| e.2).collect();
        let mut row_ptr = vec![0usize; rows + 1];
        for &i in &row_idx {
            row_ptr[i + 1] += 1;
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        let mut fill = row_ptr.clone();
        let mut row_entries = vec![(0usize, 0usize); values.len()];
        for j in 0..cols {
            for p in col_ptr[j]..col_ptr[j + 1] {
                let i = row_idx[p];
                row_entries[fill[i]] = (j, p);
                fill[i] += 1;
            }
        }
        Ok(Self { rows, cols, col_ptr, row_idx, values, row_ptr, row_entries })
    }

    pub fn identity(n: usize) -> Self {
        Self::from_entries(n, n, (0..n).map(|i| (i, i, T::one())).collect()).expect("identity is valid")
    }

    /// Number of fine faces.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of coarse faces.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(row, value)` pairs of column `j`, by increasing row.
    pub fn column(&self, j: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        (self.col_ptr[j]..self.col_ptr[j + 1]).map(move |p| (self.row_idx[p], self.values[p]))
    }

    /// `(column, value)` pairs of row `i`, by increasing column.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        self.row_entries[self.row_ptr[i]..self.row_ptr[i + 1]].iter().map(move |&(j, p)| (j, self.values[p]))
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.column(j).find(|e| e.0 == i).map_or(T::zero(), |e| e.1)
    }

    /// Coordinate triples `(i, j, value)` in column-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.cols).flat_map(move |j| self.column(j).map(move |(i, v)| (i, j, v)))
    }

    pub fn column_sums(&self) -> Vec<T> {
        (0..self.cols).map(|j| self.column(j).map(|e| e.1).sum()).collect()
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.rows).map(|i| self.row(i).map(|e| e.1).sum()).collect()
    }

    pub fn to_matrix_market(&self) -> String {
        let mut s = String::with_capacity(32 * self.nnz() + 64);
        s.push_str("%%MatrixMarket matrix coordinate real general\n");
        let _ = writeln!(s, "{} {} {}", self.rows, self.cols, self.nnz());
        for (i, j, v) in self.triplets() {
            let _ = writeln!(s, "{} {} {:.16e}", i + 1, j + 1, v.to_f64_lossy());
        }
        s
    }

    pub fn from_matrix_market(text: &str) -> Result<Self, OverlayError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| OverlayError::Parse("empty input".into()))?;
        let h: Vec<String> = header.split_whitespace().map(|t| t.to_ascii_lowercase()).collect();
        if h.len() < 5 || h[0] != "%%matrixmarket" || h[1] != "matrix" || h[2] != "coordinate" || h[3] != "real" || h[4] != "general" {
            return Err(OverlayError::Parse(format!("unsupported header `{header}`")));
        }
        let mut data = lines.filter(|l| !l.trim_start().starts_with('%') && !l.trim().is_empty());
        let size = data.next().ok_or_else(|| OverlayError::Parse("missing size line".into()))?;
        let dims = parse_fields::<usize>(size, 3)?;
        let (rows, cols, nnz) = (dims[0], dims[1], dims[2]);
        let mut entries = Vec::with_capacity(nnz);
        for line in data {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(OverlayError::Parse(format!("bad entry line `{line}`")));
            }
            let i: usize = f[0].parse().map_err(|_| OverlayError::Parse(format!("bad row `{}`", f[0])))?;
            let j: usize = f[1].parse().map_err(|_| OverlayError::Parse(format!("bad column `{}`", f[1])))?;
            let v: f64 = f[2].parse().map_err(|_| OverlayError::Parse(format!("bad value `{}`", f[2])))?;
            if i == 0 || j == 0 {
                return Err(OverlayError::Parse("indices are 1-based".into()));
            }
            entries.push((i - 1, j - 1, T::lit(v)));
        }
        if entries.len() != nnz {
            return Err(OverlayError::Parse(format!("expected {nnz} entries, found {}", entries.len())));
        }
        Self::from_entries(rows, cols, entries)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), OverlayError> {
        std::fs::write(path, self.to_matrix_market())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, OverlayError> {
        Self::from_matrix_market(&std::fs::read_to_string(path)?)
    }
}

fn parse_fields<N: std::str::FromStr>(line: &str, n: usize) -> Result<Vec<N>, OverlayError> {
    let v: Vec<N> = line
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| OverlayError::Parse(format!("bad number `{t}`"))))
        .collect::<Result<_, _>>()?;
    if v.len() != n {
        return Err(OverlayError::Parse(format!("expected {n} fields in `{line}`")));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::icosphere;
    use crate::selfparam::decimate_to;

    fn v(x: f64, y: f64) -> Vec2<f64> {
        Vec2::new(x, y)
    }

    #[test]
    fn triangle_with_itself() {
        let t = [v(0.1, 0.2), v(1.3, 0.4), v(0.5, 1.7)];
        let p = triangle_overlay(&t, &t);
        let a = signed_polygon_area(&t);
        assert!((polygon_area(&p) - a).abs() < 1e-15);
    }

    #[test]
    fn disjoint_triangles() {
        let a = [v(0.0, 0.0), v(1.0, 0.0), v(0.0, 1.0)];
        let b = [v(2.0, 2.0), v(3.0, 2.0), v(2.0, 3.0)];
        assert!(triangle_overlay(&a, &b).is_empty());
    }

    #[test]
    fn identity_level_pair() {
        let m = icosphere::<f64>(1);
        let d = decimate_to(&m, m.num_faces(), 0.1, 0).unwrap();
        let meta = build_meta_mesh(&d, &m, &d.coarse).unwrap();
        assert_eq!(meta.cells.len(), m.num_faces());
        assert!(meta.cells.iter().all(|c| c.fine_face == c.coarse_face));
        let a = build_overlap_matrix(&meta, &d.coarse).unwrap();
        assert_eq!(a, OverlapMatrix::identity(m.num_faces()));
    }

    #[test]
    fn halves() {
        // Coarse face split by its median into two fine faces.
        let entries = vec![(0, 0, 0.5), (1, 0, 0.5)];
        let a = OverlapMatrix::<f64>::normalized(2, 1, entries).unwrap();
        assert_eq!(a.get(0, 0), 0.5);
        assert_eq!(a.get(1, 0), 0.5);
        assert_eq!(a.row(1).collect::<Vec<_>>(), vec![(0, 0.5)]);
    }

    #[test]
    fn column_sum_violation() {
        let e = OverlapMatrix::<f64>::normalized(2, 1, vec![(0, 0, 0.5), (1, 0, 0.4)]);
        assert!(matches!(e, Err(OverlayError::ColumnSumViolation { column: 0, .. })));
    }

    #[test]
    fn matrix_market_round_trip() {
        let a = OverlapMatrix::<f64>::normalized(3, 2, vec![(0, 0, 0.3), (1, 0, 0.7), (1, 1, 1.0 / 3.0), (2, 1, 2.0 / 3.0)]).unwrap();
        let text = a.to_matrix_market();
        assert!(text.starts_with("%%MatrixMarket matrix coordinate real general\n3 2 4\n1 1 "));
        let b = OverlapMatrix::<f64>::from_matrix_market(&text).unwrap();
        assert_eq!(a, b);
        assert!(OverlapMatrix::<f64>::from_matrix_market("%%MatrixMarket matrix array real general\n").is_err());
    }
}
