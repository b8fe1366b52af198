//! Multi-level pyramids: construction, augmentation and the on-disk format.
//!
//! Levels are indexed coarse to fine: `levels[0]` is the coarsest mesh and
//! `levels[K]` the finest. `maps[n]` and `matrices[n]` connect level `n + 1`
//! to level `n`.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use std::collections::BTreeMap;

use crate::geom::{signed_area2, TriangleFrame, Vec3};
use crate::mesh::{parse_obj, write_obj, HalfedgeMesh, MeshError};
use crate::overlay::{build_meta_mesh, build_overlap_matrix, OverlapMatrix, OverlayError, COLUMN_SUM_TOLERANCE, DEGENERATE_CELL, MIN_RATIO, TILING_TOLERANCE};
use crate::planar::signed_polygon_area;
use crate::scalar::Real;
use crate::selfparam::{decimate_to, BaryTriplet, EdgeCrossing, SelfParamError, DEFAULT_DISTORTION_WEIGHT};

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_VARIANTS: usize = 3;

#[derive(Debug, Error)]
pub enum PyramidError {
    #[error("invalid pyramid config: {0}")]
    InvalidConfig(String),
    #[error("manifest format version {found}, expected {expected}")]
    FormatVersionMismatch { found: u32, expected: u32 },
    #[error("checksum mismatch: {0}")]
    ChecksumMismatch(String),
    #[error("bad pyramid file {file}: {msg}")]
    Format { file: String, msg: String },
    #[error(transparent)]
    SelfParam(#[from] SelfParamError),
    #[error(transparent)]
    Overlay(#[from] OverlayError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, PyramidError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Standard deviation of the uniform scale factor around 1.
    pub scale_sigma: f64,
    pub scale: bool,
    /// Quarter-turn Euler rotations.
    pub rotate: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { scale_sigma: 0.1, scale: true, rotate: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PyramidConfig {
    /// Face targets, finest first, strictly descending.
    pub level_face_targets: Vec<usize>,
    /// Distortion weight.
    pub w: f64,
    pub seed: u64,
    #[serde(default)]
    pub augment: Option<AugmentConfig>,
    /// Number of pyramids built by [`build_variants`].
    #[serde(default = "default_variants")]
    pub variants: usize,
}

fn default_variants() -> usize {
    DEFAULT_VARIANTS
}

impl PyramidConfig {
    pub fn new(level_face_targets: Vec<usize>) -> Self {
        Self { level_face_targets, w: DEFAULT_DISTORTION_WEIGHT, seed: 0, augment: None, variants: DEFAULT_VARIANTS }
    }

    /// Targets `faces, faces / rate, ...` for `depth` levels.
    pub fn with_rate(faces: usize, rate: usize, depth: usize) -> Self {
        let mut t = Vec::with_capacity(depth);
        let mut f = faces;
        for _ in 0..depth {
            t.push(f);
            f /= rate.max(1);
        }
        Self::new(t)
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.level_face_targets;
        if t.is_empty() {
            return Err(PyramidError::InvalidConfig("no level targets".into()));
        }
        if t.windows(2).any(|w| w[1] >= w[0]) {
            return Err(PyramidError::InvalidConfig(format!("targets {t:?} are not strictly descending")));
        }
        if *t.last().expect("non-empty") < 4 {
            return Err(PyramidError::InvalidConfig("last target below 4 faces".into()));
        }
        if !(0.0..=1.0).contains(&self.w) {
            return Err(PyramidError::InvalidConfig(format!("weight {} outside [0, 1]", self.w)));
        }
        if let Some(a) = &self.augment {
            if !(a.scale_sigma >= 0.0 && a.scale_sigma.is_finite()) {
                return Err(PyramidError::InvalidConfig("scale sigma must be finite and non-negative".into()));
            }
        }
        Ok(())
    }
}

/// Map from level `n + 1` to level `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelMap<T> {
    /// One per vertex of level `n + 1`, on faces of level `n`.
    pub triplets: Vec<BaryTriplet<T>>,
    pub crossings: Vec<EdgeCrossing<T>>,
    /// Meta-mesh cells grouped by coarse face.
    pub cells: Vec<OverlayCell<T>>,
    /// [`sequence_sha256`] of the collapses that produced level `n`.
    pub collapse_sha256: String,
}

/// One meta-mesh cell: a convex piece of a fine face inside a coarse face,
/// counter-clockwise, each corner given by its first two barycentrics in the
/// coarse face.
#[derive(Clone, Debug, PartialEq)]
pub struct OverlayCell<T> {
    pub coarse_face: usize,
    pub fine_face: usize,
    pub corners: Vec<[T; 2]>,
}

#[derive(Clone, Debug)]
pub struct MeshPyramid<T> {
    pub levels: Vec<HalfedgeMesh<T>>,
    pub maps: Vec<LevelMap<T>>,
    pub matrices: Vec<OverlapMatrix<T>>,
    pub config: PyramidConfig,
    /// SHA-256 of the input mesh in OBJ form.
    pub input_sha256: String,
}

impl<T: Real> MeshPyramid<T> {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn finest(&self) -> &HalfedgeMesh<T> {
        self.levels.last().expect("pyramid has a level")
    }

    pub fn coarsest(&self) -> &HalfedgeMesh<T> {
        &self.levels[0]
    }

    /// SHA-256 over the per-map collapse digests, finest pair first, one per
    /// line.
    pub fn collapse_digest(&self) -> String {
        let text: String = self.maps.iter().rev().map(|m| format!("{}\n", m.collapse_sha256)).collect();
        sha256_hex(text.as_bytes())
    }

    /// Runs every check of [`MeshPyramid::invariant_checks`] and reports the
    /// first failure.
    pub fn validate(&self) -> std::result::Result<(), String> {
        match self.invariant_checks().into_iter().find(|c| !c.passed) {
            Some(c) => Err(format!("{}: {}", c.name, c.detail)),
            None => Ok(()),
        }
    }

    /// The full invariant suite: structure, column sums, tiling of every
    /// coarse face by the stored cells, triplet reconstruction, crossing
    /// paths and constant preservation of the resampling operators.
    pub fn invariant_checks(&self) -> Vec<Check> {
        let structure = self.check_structure();
        let ok = structure.is_ok();
        let mut out = vec![Check::new("structure", structure)];
        let skip = || Err("skipped: structure check failed".to_string());
        out.push(Check::new("column_sums", if ok { self.check_column_sums() } else { skip() }));
        out.push(Check::new("tiling", if ok { self.check_tiling() } else { skip() }));
        out.push(Check::new("triplets", if ok { self.check_triplets() } else { skip() }));
        out.push(Check::new("crossings", if ok { self.check_crossings() } else { skip() }));
        out.push(Check::new("constant_preservation", if ok { self.check_constants() } else { skip() }));
        out
    }

    fn check_structure(&self) -> std::result::Result<(), String> {
        if self.maps.len() + 1 != self.levels.len() || self.matrices.len() + 1 != self.levels.len() {
            return Err("maps and matrices must connect consecutive levels".into());
        }
        let targets = &self.config.level_face_targets;
        for (n, m) in self.levels.iter().enumerate() {
            m.check_invariants().map_err(|e| format!("level {n}: {e}"))?;
            let k = self.levels.len() - 1 - n;
            if k < targets.len() && m.num_faces() > targets[k] {
                return Err(format!("level {n} has {} faces, target {}", m.num_faces(), targets[k]));
            }
        }
        for n in 0..self.matrices.len() {
            let (fine, coarse) = (&self.levels[n + 1], &self.levels[n]);
            if fine.num_faces() <= coarse.num_faces() {
                return Err(format!("level {} is not finer than level {n}", n + 1));
            }
            let a = &self.matrices[n];
            if a.rows() != fine.num_faces() || a.cols() != coarse.num_faces() {
                return Err(format!("A_{n} is {}x{}, levels have {} and {} faces", a.rows(), a.cols(), fine.num_faces(), coarse.num_faces()));
            }
            if let Some(c) = self.maps[n].cells.iter().find(|c| c.coarse_face >= a.cols() || c.fine_face >= a.rows() || c.corners.len() < 3) {
                return Err(format!("map {n}: cell ({}, {}) with {} corners is out of range", c.fine_face, c.coarse_face, c.corners.len()));
            }
        }
        Ok(())
    }

    fn check_column_sums(&self) -> std::result::Result<(), String> {
        for (n, a) in self.matrices.iter().enumerate() {
            if let Some((i, j, v)) = a.triplets().find(|&(_, _, v)| !(v > T::zero() && v <= T::one())) {
                return Err(format!("A_{n} entry ({i}, {j}) = {v} outside (0, 1]"));
            }
            for (j, s) in a.column_sums().iter().enumerate() {
                if !((*s - T::one()).abs() <= T::lit(COLUMN_SUM_TOLERANCE)) {
                    return Err(format!("A_{n} column {j} sums to {s}"));
                }
            }
            if let Some(i) = a.row_sums().iter().position(|s| !(*s > T::zero())) {
                return Err(format!("A_{n} row {i} is empty"));
            }
        }
        Ok(())
    }

    /// Cells must be convex and counter-clockwise, tile their coarse face to
    /// [`TILING_TOLERANCE`], cover every fine face, and reproduce the matrix
    /// entries they induce.
    fn check_tiling(&self) -> std::result::Result<(), String> {
        for (n, map) in self.maps.iter().enumerate() {
            let (fine, coarse, a) = (&self.levels[n + 1], &self.levels[n], &self.matrices[n]);
            let mut frames = Vec::with_capacity(coarse.num_faces());
            for j in 0..coarse.num_faces() {
                let [p, q, r] = coarse.face_positions(j);
                frames.push(TriangleFrame::local_triangle(p, q, r).ok_or_else(|| format!("level {n} face {j} is degenerate"))?);
            }
            let areas: Vec<T> = frames.iter().map(|t| signed_polygon_area(t)).collect();
            let mut covered = vec![T::zero(); coarse.num_faces()];
            let mut seen = vec![false; fine.num_faces()];
            let mut ratios: BTreeMap<(usize, usize), T> = BTreeMap::new();
            for c in &map.cells {
                let tri = &frames[c.coarse_face];
                let poly: Vec<_> = c.corners.iter().map(|&[x, y]| tri[0] * x + tri[1] * y + tri[2] * (T::one() - x - y)).collect();
                let s = areas[c.coarse_face];
                let slack = T::lit(1e-9) * s;
                for k in 0..poly.len() {
                    let (u, v, w) = (poly[k], poly[(k + 1) % poly.len()], poly[(k + 2) % poly.len()]);
                    if signed_area2(u, v, w) < -slack {
                        return Err(format!("map {n}: cell ({}, {}) is not convex and counter-clockwise", c.fine_face, c.coarse_face));
                    }
                }
                let area = signed_polygon_area(&poly);
                covered[c.coarse_face] += area;
                seen[c.fine_face] = true;
                if area >= T::lit(DEGENERATE_CELL) * s {
                    *ratios.entry((c.fine_face, c.coarse_face)).or_insert(T::zero()) += area / s;
                }
            }
            for (j, (got, s)) in covered.iter().zip(&areas).enumerate() {
                let deficit = ((*s - *got) / *s).abs();
                if !(deficit <= T::lit(TILING_TOLERANCE)) {
                    return Err(format!("map {n}: cells of coarse face {j} miss {:e} of its area", deficit.to_f64_lossy()));
                }
            }
            if let Some(i) = seen.iter().position(|s| !s) {
                return Err(format!("map {n}: fine face {i} has no cell"));
            }
            ratios.retain(|_, v| *v >= T::lit(MIN_RATIO));
            let tol = T::lit(2.0 * COLUMN_SUM_TOLERANCE);
            for (i, j, v) in a.triplets() {
                let r = ratios.remove(&(i, j)).unwrap_or(T::zero());
                if !((r - v).abs() <= tol) {
                    return Err(format!("map {n}: A entry ({i}, {j}) = {v}, cells give {r}"));
                }
            }
            if let Some(((i, j), r)) = ratios.into_iter().find(|(_, r)| *r > tol) {
                return Err(format!("map {n}: cells cover {r} of coarse face {j} by fine face {i}, matrix has no entry"));
            }
        }
        Ok(())
    }

    /// Every fine vertex has exactly one triplet, on a live coarse face, whose
    /// point lies in that face to 1e-9 of the bounding box diagonal.
    fn check_triplets(&self) -> std::result::Result<(), String> {
        for (n, map) in self.maps.iter().enumerate() {
            let (fine, coarse) = (&self.levels[n + 1], &self.levels[n]);
            crate::selfparam::audit_triplets(coarse, &map.triplets, fine.num_vertices()).map_err(|e| format!("map {n}: {e}"))?;
            let tol = T::lit(1e-9) * coarse.bbox_diagonal();
            for (v, t) in map.triplets.iter().enumerate() {
                let [p, q, r] = coarse.face_positions(t.face);
                let w = t.weights();
                let inside = w.iter().map(|&x| if x < T::zero() { -x } else if x > T::one() { x - T::one() } else { T::zero() }).fold(T::zero(), T::max);
                let scale = (q - p).norm().max((r - q).norm()).max((p - r).norm());
                if !(inside * scale <= tol) {
                    return Err(format!("map {n}: vertex {v} lies {:e} outside face {}", (inside * scale).to_f64_lossy(), t.face));
                }
            }
        }
        Ok(())
    }

    fn check_crossings(&self) -> std::result::Result<(), String> {
        for (n, map) in self.maps.iter().enumerate() {
            crate::selfparam::audit_crossings(&self.levels[n + 1], &self.levels[n], &map.triplets, &map.crossings).map_err(|e| format!("map {n}: {e}"))?;
        }
        Ok(())
    }

    /// Constant fields survive downsampling and both upsamplings to 1e-12.
    fn check_constants(&self) -> std::result::Result<(), String> {
        let c = T::lit(0.734_511_2);
        let tol = T::lit(1e-12);
        for n in 0..self.matrices.len() {
            let r = crate::ops::Resampler::from_pyramid(self, n).map_err(|e| format!("map {n}: {e}"))?;
            let fine = crate::ops::FeatureField::constant(n + 1, r.fine_faces(), 2, c);
            let coarse = crate::ops::FeatureField::constant(n, r.coarse_faces(), 2, c);
            let down = r.downsample(&fine, n).map_err(|e| e.to_string())?;
            let area = r.upsample_area(&coarse, n + 1).map_err(|e| e.to_string())?;
            let bary = r.upsample_barycentric(&coarse, n + 1).map_err(|e| e.to_string())?;
            for (name, f, want) in [("downsample", &down, &coarse), ("upsample_area", &area, &fine), ("upsample_barycentric", &bary, &fine)] {
                let err = f.max_abs_diff(want);
                if !(err <= tol) {
                    return Err(format!("map {n}: {name} moves a constant by {:e}", err.to_f64_lossy()));
                }
            }
        }
        Ok(())
    }
}

/// Outcome of one named invariant check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, r: std::result::Result<(), String>) -> Self {
        match r {
            Ok(()) => Self { name, passed: true, detail: String::new() },
            Err(detail) => Self { name, passed: false, detail },
        }
    }
}

/// SHA-256 of an edge id sequence written one id per line.
pub fn sequence_sha256(edges: &[usize]) -> String {
    let text: String = edges.iter().map(|e| format!("{e}\n")).collect();
    sha256_hex(text.as_bytes())
}

pub fn mesh_sha256<T: Real>(mesh: &HalfedgeMesh<T>) -> String {
    sha256_hex(write_obj(mesh).as_bytes())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn build_pyramid<T: Real>(mesh: &HalfedgeMesh<T>, config: &PyramidConfig) -> Result<MeshPyramid<T>> {
    config.validate()?;
    let targets = &config.level_face_targets;
    if mesh.num_faces() < targets[0] {
        return Err(PyramidError::InvalidConfig(format!("mesh has {} faces, first target is {}", mesh.num_faces(), targets[0])));
    }
    let w = T::lit(config.w);
    let (mut current, _) = mesh.compact()?;
    if current.num_faces() > targets[0] {
        current = decimate_to(&current, targets[0], w, config.seed)?.coarse;
    }
    let mut levels = vec![current];
    let mut maps = Vec::new();
    let mut matrices = Vec::new();
    for &t in &targets[1..] {
        let fine = levels.last().expect("at least one level");
        let dec = decimate_to(fine, t, w, config.seed)?;
        let meta = build_meta_mesh(&dec, fine, &dec.coarse)?;
        matrices.push(build_overlap_matrix(&meta, &dec.coarse)?);
        let cells = dec
            .cells
            .iter()
            .enumerate()
            .flat_map(|(j, cs)| {
                cs.iter().map(move |c| OverlayCell { coarse_face: j, fine_face: c.fine_face, corners: c.verts.iter().map(|v| [v.coarse[0], v.coarse[1]]).collect() })
            })
            .collect();
        let edges: Vec<usize> = dec.records.iter().map(|r| r.edge).collect();
        maps.push(LevelMap { triplets: dec.triplets, crossings: dec.crossings, cells, collapse_sha256: sequence_sha256(&edges) });
        levels.push(dec.coarse);
    }
    levels.reverse();
    maps.reverse();
    matrices.reverse();
    Ok(MeshPyramid { levels, maps, matrices, config: config.clone(), input_sha256: mesh_sha256(mesh) })
}

/// `config.variants` pyramids. Variant 0 is the plain mesh with
/// `config.seed`; variant `k` uses seed `config.seed + k` both for the
/// augmentation (when configured) and for the collapse order.
pub fn build_variants<T: Real>(mesh: &HalfedgeMesh<T>, config: &PyramidConfig) -> Result<Vec<MeshPyramid<T>>> {
    (0..config.variants.max(1)).map(|k| build_variant(mesh, config, k)).collect()
}

/// Variant `k` of [`build_variants`]; variants are independent of each other.
pub fn build_variant<T: Real>(mesh: &HalfedgeMesh<T>, config: &PyramidConfig, k: usize) -> Result<MeshPyramid<T>> {
    let seed = config.seed.wrapping_add(k as u64);
    let cfg = PyramidConfig { seed, ..config.clone() };
    match &config.augment {
        Some(a) if k > 0 => build_pyramid(&Augmentation::sample(seed, a).apply(mesh), &cfg),
        _ => build_pyramid(mesh, &cfg),
    }
}

/// A similarity made of a uniform scale and quarter turns about x, y, z
/// (applied in that order).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Augmentation {
    pub scale: f64,
    pub turns: [u8; 3],
}

impl Augmentation {
    pub fn sample(seed: u64, cfg: &AugmentConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(1.0, cfg.scale_sigma).expect("sigma validated");
        let s: f64 = normal.sample(&mut rng);
        let turns = [rng.random_range(0..4u8), rng.random_range(0..4u8), rng.random_range(0..4u8)];
        Self { scale: if cfg.scale { s.clamp(0.5, 1.5) } else { 1.0 }, turns: if cfg.rotate { turns } else { [0; 3] } }
    }

    pub fn apply_point<T: Real>(&self, p: Vec3<T>) -> Vec3<T> {
        let mut q = p;
        for _ in 0..self.turns[0] {
            q = Vec3::new(q.x, -q.z, q.y);
        }
        for _ in 0..self.turns[1] {
            q = Vec3::new(q.z, q.y, -q.x);
        }
        for _ in 0..self.turns[2] {
            q = Vec3::new(-q.y, q.x, q.z);
        }
        q * T::lit(self.scale)
    }

    pub fn apply<T: Real>(&self, mesh: &HalfedgeMesh<T>) -> HalfedgeMesh<T> {
        mesh.map_positions(|p| self.apply_point(p))
    }
}

/// Random scale and quarter-turn rotation, deterministic in `seed`.
pub fn augment_mesh<T: Real>(mesh: &HalfedgeMesh<T>, seed: u64) -> HalfedgeMesh<T> {
    Augmentation::sample(seed, &AugmentConfig::default()).apply(mesh)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelEntry {
    pub index: usize,
    pub faces: usize,
    pub vertices: usize,
    pub mesh: FileEntry,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapEntry {
    /// Connects level `index + 1` to level `index`.
    pub index: usize,
    pub nnz: usize,
    pub meta_cells: usize,
    pub collapse_sha256: String,
    pub matrix: FileEntry,
    pub triplets: FileEntry,
    pub crossings: FileEntry,
    pub cells: FileEntry,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: PyramidConfig,
    pub input_sha256: String,
    pub levels: Vec<LevelEntry>,
    pub maps: Vec<MapEntry>,
}

pub fn triplets_csv<T: Real>(triplets: &[BaryTriplet<T>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["vertex_id", "face_id", "alpha", "beta"])?;
    for (v, t) in triplets.iter().enumerate() {
        w.write_record([v.to_string(), t.face.to_string(), fmt17(t.alpha), fmt17(t.beta)])?;
    }
    finish_csv(w)
}

pub fn crossings_csv<T: Real>(crossings: &[EdgeCrossing<T>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["fine_edge", "coarse_halfedge", "lambda1", "lambda2"])?;
    for c in crossings {
        w.write_record([c.fine_edge.to_string(), c.coarse_halfedge.to_string(), fmt17(c.lambda1), fmt17(c.lambda2)])?;
    }
    finish_csv(w)
}

pub fn cells_csv<T: Real>(cells: &[OverlayCell<T>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["cell", "coarse_face", "fine_face", "alpha", "beta"])?;
    for (k, c) in cells.iter().enumerate() {
        for [a, b] in &c.corners {
            w.write_record([k.to_string(), c.coarse_face.to_string(), c.fine_face.to_string(), fmt17(*a), fmt17(*b)])?;
        }
    }
    finish_csv(w)
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| PyramidError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is ascii"))
}

fn fmt17<T: Real>(x: T) -> String {
    format!("{:.16e}", x.to_f64_lossy())
}

fn parse_triplets<T: Real>(text: &str, file: &str) -> Result<Vec<BaryTriplet<T>>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (k, row) in r.deserialize::<(usize, usize, f64, f64)>().enumerate() {
        let (v, face, alpha, beta) = row?;
        if v != k {
            return Err(PyramidError::Format { file: file.into(), msg: format!("row {k} names vertex {v}") });
        }
        out.push(BaryTriplet { face, alpha: T::lit(alpha), beta: T::lit(beta) });
    }
    Ok(out)
}

fn parse_crossings<T: Real>(text: &str) -> Result<Vec<EdgeCrossing<T>>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize::<(usize, usize, f64, f64)>()
        .map(|row| {
            let (fine_edge, coarse_halfedge, l1, l2) = row?;
            Ok(EdgeCrossing { fine_edge, coarse_halfedge, lambda1: T::lit(l1), lambda2: T::lit(l2) })
        })
        .collect()
}

fn parse_cells<T: Real>(text: &str, file: &str) -> Result<Vec<OverlayCell<T>>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut out: Vec<OverlayCell<T>> = Vec::new();
    for row in r.deserialize::<(usize, usize, usize, f64, f64)>() {
        let (k, coarse_face, fine_face, a, b) = row?;
        if k + 1 == out.len() {
            let last = out.last_mut().expect("checked length");
            if last.coarse_face != coarse_face || last.fine_face != fine_face {
                return Err(PyramidError::Format { file: file.into(), msg: format!("cell {k} changes faces between rows") });
            }
            last.corners.push([T::lit(a), T::lit(b)]);
        } else if k == out.len() {
            out.push(OverlayCell { coarse_face, fine_face, corners: vec![[T::lit(a), T::lit(b)]] });
        } else {
            return Err(PyramidError::Format { file: file.into(), msg: format!("cell {k} out of order") });
        }
    }
    Ok(out)
}

fn write_entry(dir: &Path, file: String, content: &str) -> Result<FileEntry> {
    fs::write(dir.join(&file), content)?;
    Ok(FileEntry { sha256: sha256_hex(content.as_bytes()), file })
}

/// Writes the manifest, meshes, matrices and maps into `dir` (created when
/// missing).
pub fn save_pyramid<T: Real>(pyramid: &MeshPyramid<T>, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut levels = Vec::new();
    for (n, m) in pyramid.levels.iter().enumerate() {
        let mesh = write_entry(dir, format!("level_{n}.obj"), &write_obj(m))?;
        levels.push(LevelEntry { index: n, faces: m.num_faces(), vertices: m.num_vertices(), mesh });
    }
    let mut maps = Vec::new();
    for (n, (map, a)) in pyramid.maps.iter().zip(&pyramid.matrices).enumerate() {
        maps.push(MapEntry {
            index: n,
            nnz: a.nnz(),
            meta_cells: map.cells.len(),
            collapse_sha256: map.collapse_sha256.clone(),
            matrix: write_entry(dir, format!("A_{n}.mtx"), &a.to_matrix_market())?,
            triplets: write_entry(dir, format!("map_{n}_triplets.csv"), &triplets_csv(&map.triplets)?)?,
            crossings: write_entry(dir, format!("map_{n}_crossings.csv"), &crossings_csv(&map.crossings)?)?,
            cells: write_entry(dir, format!("map_{n}_cells.csv"), &cells_csv(&map.cells)?)?,
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config: pyramid.config.clone(),
        input_sha256: pyramid.input_sha256.clone(),
        levels,
        maps,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join("manifest.json"), text)?;
    Ok(manifest)
}

fn read_checked(dir: &Path, entry: &FileEntry) -> Result<String> {
    if entry.file.contains(['/', '\\']) || entry.file.starts_with('.') {
        return Err(PyramidError::Format { file: entry.file.clone(), msg: "file must be a plain name inside the pyramid directory".into() });
    }
    let text = fs::read_to_string(dir.join(&entry.file))?;
    let got = sha256_hex(text.as_bytes());
    if got != entry.sha256 {
        return Err(PyramidError::ChecksumMismatch(format!("{}: manifest {}, file {}", entry.file, entry.sha256, got)));
    }
    Ok(text)
}

pub fn load_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let text = fs::read_to_string(dir.as_ref().join("manifest.json"))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let found = value.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != FORMAT_VERSION {
        return Err(PyramidError::FormatVersionMismatch { found, expected: FORMAT_VERSION });
    }
    Ok(serde_json::from_value(value)?)
}

/// Reads a pyramid written by [`save_pyramid`], verifying every checksum
/// and the element counts recorded in the manifest.
pub fn load_pyramid<T: Real>(dir: impl AsRef<Path>) -> Result<MeshPyramid<T>> {
    let dir = dir.as_ref();
    let manifest = load_manifest(dir)?;
    if manifest.maps.len() + 1 != manifest.levels.len() {
        return Err(PyramidError::Format { file: "manifest.json".into(), msg: "maps must connect consecutive levels".into() });
    }
    let mut levels = Vec::new();
    for (n, e) in manifest.levels.iter().enumerate() {
        if e.index != n {
            return Err(PyramidError::Format { file: "manifest.json".into(), msg: format!("level {n} listed as {}", e.index) });
        }
        let m: HalfedgeMesh<T> = parse_obj(&read_checked(dir, &e.mesh)?)?;
        if m.num_faces() != e.faces || m.num_vertices() != e.vertices {
            return Err(PyramidError::ChecksumMismatch(format!(
                "{}: manifest records {} faces and {} vertices, file has {} and {}",
                e.mesh.file,
                e.faces,
                e.vertices,
                m.num_faces(),
                m.num_vertices()
            )));
        }
        levels.push(m);
    }
    let mut maps = Vec::new();
    let mut matrices = Vec::new();
    for (n, e) in manifest.maps.iter().enumerate() {
        if e.index != n {
            return Err(PyramidError::Format { file: "manifest.json".into(), msg: format!("map {n} listed as {}", e.index) });
        }
        let a = OverlapMatrix::<T>::from_matrix_market(&read_checked(dir, &e.matrix)?)?;
        if a.nnz() != e.nnz || a.rows() != levels[n + 1].num_faces() || a.cols() != levels[n].num_faces() {
            return Err(PyramidError::ChecksumMismatch(format!("{}: shape or entry count differs from the manifest", e.matrix.file)));
        }
        let triplets = parse_triplets(&read_checked(dir, &e.triplets)?, &e.triplets.file)?;
        if triplets.len() != levels[n + 1].num_vertices() {
            return Err(PyramidError::ChecksumMismatch(format!("{}: {} rows for {} vertices", e.triplets.file, triplets.len(), levels[n + 1].num_vertices())));
        }
        let crossings = parse_crossings(&read_checked(dir, &e.crossings)?)?;
        let cells = parse_cells(&read_checked(dir, &e.cells)?, &e.cells.file)?;
        if cells.len() != e.meta_cells {
            return Err(PyramidError::ChecksumMismatch(format!("{}: {} cells, manifest records {}", e.cells.file, cells.len(), e.meta_cells)));
        }
        matrices.push(a);
        maps.push(LevelMap { triplets, crossings, cells, collapse_sha256: e.collapse_sha256.clone() });
    }
    Ok(MeshPyramid { levels, maps, matrices, config: manifest.config, input_sha256: manifest.input_sha256 })
}
