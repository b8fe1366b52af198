#![allow(clippy::needless_range_loop)]

use std::sync::OnceLock;

use meshpyr::mesh::{icosphere, subdivided_cube, HalfedgeMesh};
use meshpyr::ops::*;
use meshpyr::overlay::OverlapMatrix;
use meshpyr::pyramid::{build_pyramid, MeshPyramid, PyramidConfig};
use meshpyr::selfparam::TrackedDecimation;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pyramid() -> &'static MeshPyramid<f64> {
    static P: OnceLock<MeshPyramid<f64>> = OnceLock::new();
    P.get_or_init(|| build_pyramid(&icosphere(3), &PyramidConfig::new(vec![1280, 320, 80, 20])).unwrap())
}

/// Resamplers finest first: `rs[r]` connects network level `r` to `r + 1`.
fn resamplers() -> &'static Vec<Resampler<f64>> {
    static R: OnceLock<Vec<Resampler<f64>>> = OnceLock::new();
    R.get_or_init(|| {
        let p = pyramid();
        (0..p.matrices.len()).rev().map(|n| Resampler::from_pyramid(p, n).unwrap()).collect()
    })
}

fn random_field(rng: &mut ChaCha8Rng, level: usize, rows: usize, ch: usize) -> FeatureField<f64> {
    FeatureField::from_vec(level, rows, ch, (0..rows * ch).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn dense(a: &OverlapMatrix<f64>) -> Vec<Vec<f64>> {
    let mut d = vec![vec![0.0; a.cols()]; a.rows()];
    for (i, j, v) in a.triplets() {
        d[i][j] = v;
    }
    d
}

fn dot(a: &FeatureField<f64>, b: &FeatureField<f64>) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum()
}

#[test]
fn flat_faces_have_unit_curvature() {
    let m: HalfedgeMesh<f64> = subdivided_cube(4);
    let f = input_features(&m, 0).unwrap();
    let flat_vertex = |v: usize| {
        let n = m.vertex_normal(v).unwrap();
        m.vertex_faces(v).iter().all(|&g| m.face_geometry(g).unwrap().normal.dot(n) > 1.0 - 1e-15)
    };
    let mut checked = 0;
    for face in m.faces() {
        if m.face_vertices(face).iter().all(|&v| flat_vertex(v)) {
            let r = f.row(face);
            assert!((r[7] - 3.0).abs() < 1e-12 && r[8].abs() < 1e-12 && r[9].abs() < 1e-12);
            checked += 1;
        }
    }
    assert!(checked > 0);
}

#[test]
fn icosphere_features_radial() {
    let m: HalfedgeMesh<f64> = icosphere(4);
    let f = input_features(&m, 0).unwrap();
    assert!(f.is_finite());
    assert_eq!((f.rows, f.channels), (5120, 10));
    let cos5 = 5f64.to_radians().cos();
    for i in 0..f.rows {
        let r = f.row(i);
        let c = meshpyr::Vec3::new(r[0], r[1], r[2]).normalized().unwrap();
        let n = meshpyr::Vec3::new(r[4], r[5], r[6]);
        assert!(c.dot(n) > cos5);
        assert!(r[3] > 0.0);
    }
}

#[test]
fn constant_field_convolution() {
    let m: HalfedgeMesh<f64> = icosphere(2);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (l, d) = (3, 2);
    let mut p = ConvParams::zeros(l, d, true);
    for k in 0..4 {
        p.w[k] = (0..l * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    }
    p.bias = Some(vec![0.25, -0.5]);
    let c = [0.3, -1.2, 2.0];
    let mut field = FeatureField::zeros(0, m.num_faces(), l);
    for i in 0..field.rows {
        field.row_mut(i).copy_from_slice(&c);
    }
    let out = face_convolution(&field, &m, &p).unwrap();
    for o in 0..d {
        let expect: f64 = (0..l).map(|k| (p.w[0][o * l + k] + 3.0 * p.w[1][o * l + k]) * c[k]).sum::<f64>() + p.bias.as_ref().unwrap()[o];
        for i in 0..out.rows {
            assert!((out.get(i, o) - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn convolution_rotation_invariant_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for sub in 1..=3 {
        let m: HalfedgeMesh<f64> = icosphere(sub);
        let nb = FaceNeighbors::new(&m).unwrap();
        let field = random_field(&mut rng, 0, m.num_faces(), 4);
        let mut p = ConvParams::zeros(4, 3, true);
        for k in 0..4 {
            p.w[k] = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        }
        let base = face_convolution_with(&field, &nb, &p).unwrap();
        for shift in 1..3 {
            let rot = FaceNeighbors(nb.0.iter().map(|n| [n[shift % 3], n[(shift + 1) % 3], n[(shift + 2) % 3]]).collect());
            assert_eq!(face_convolution_with(&field, &rot, &p).unwrap().data, base.data);
        }
    }
}

#[test]
fn convolution_matches_formula() {
    let m: HalfedgeMesh<f64> = icosphere(1);
    let nb = FaceNeighbors::new(&m).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let field = random_field(&mut rng, 0, m.num_faces(), 2);
    let mut p = ConvParams::zeros(2, 2, false);
    for k in 0..4 {
        p.w[k] = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    }
    let out = face_convolution_with(&field, &nb, &p).unwrap();
    for i in 0..m.num_faces() {
        let n = nb.0[i];
        for o in 0..2 {
            let mut e = 0.0;
            for c in 0..2 {
                let h = |f: usize| field.get(f, c);
                let s1: f64 = n.iter().map(|&j| h(j)).sum();
                let s2: f64 = (0..3).map(|j| (h(n[(j + 1) % 3]) - h(n[j])).abs()).sum();
                let s3: f64 = n.iter().map(|&j| (h(i) - h(j)).abs()).sum();
                e += p.w[0][o * 2 + c] * h(i) + p.w[1][o * 2 + c] * s1 + p.w[2][o * 2 + c] * s2 + p.w[3][o * 2 + c] * s3;
            }
            assert!((out.get(i, o) - e).abs() < 1e-12);
        }
    }
}

#[test]
fn downsample_two_halves() {
    let a = OverlapMatrix::<f64>::normalized(2, 1, vec![(0, 0, 0.5), (1, 0, 0.5)]).unwrap();
    let f = FeatureField::from_vec(1, 2, 1, vec![1.0, 3.0]).unwrap();
    assert_eq!(downsample(&f, &a, 0).unwrap().data, vec![2.0]);
}

#[test]
fn resamplers_match_dense_oracles() {
    let p = pyramid();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for n in 0..p.matrices.len() {
        let a = &p.matrices[n];
        let d = dense(a);
        let fine = random_field(&mut rng, n + 1, a.rows(), 3);
        let coarse = random_field(&mut rng, n, a.cols(), 3);
        let down = downsample(&fine, a, n).unwrap();
        let up = upsample_area(&coarse, a, n + 1).unwrap();
        for j in 0..a.cols() {
            let s: f64 = (0..a.rows()).map(|i| d[i][j]).sum();
            for c in 0..3 {
                let v: f64 = (0..a.rows()).map(|i| d[i][j] * fine.get(i, c)).sum::<f64>() / s;
                assert!((down.get(j, c) - v).abs() < 1e-12);
            }
        }
        for i in 0..a.rows() {
            let s: f64 = d[i].iter().sum();
            for c in 0..3 {
                let v: f64 = (0..a.cols()).map(|j| d[i][j] * coarse.get(j, c)).sum::<f64>() / s;
                assert!((up.get(i, c) - v).abs() < 1e-12);
            }
        }
        // single-support rows copy the coarse value
        for i in 0..a.rows() {
            let row: Vec<_> = a.row(i).collect();
            if row.len() == 1 {
                assert_eq!(up.row(i), coarse.row(row[0].0));
            }
        }
        let r = Resampler::from_pyramid(p, n).unwrap();
        assert!(r.downsample(&fine, n).unwrap().max_abs_diff(&down) < 1e-15);
        assert!(r.upsample_area(&coarse, n + 1).unwrap().max_abs_diff(&up) < 1e-15);
        let bary = upsample_barycentric(&coarse, a, &p.maps[n].triplets, &p.levels[n], &p.levels[n + 1], n + 1).unwrap();
        assert!(r.upsample_barycentric(&coarse, n + 1).unwrap().max_abs_diff(&bary) < 1e-15);
    }
}

#[test]
fn adjoints_are_transposes() {
    let p = pyramid();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for n in 0..p.matrices.len() {
        let r = Resampler::from_pyramid(p, n).unwrap();
        let x = random_field(&mut rng, n + 1, r.fine_faces(), 2);
        let y = random_field(&mut rng, n, r.coarse_faces(), 2);
        let lhs = dot(&r.downsample(&x, n).unwrap(), &y);
        assert!((lhs - dot(&x, &r.downsample_adjoint(&y, n + 1).unwrap())).abs() < 1e-10);
        let lhs = dot(&r.upsample_area(&y, n + 1).unwrap(), &x);
        assert!((lhs - dot(&y, &r.upsample_area_adjoint(&x, n).unwrap())).abs() < 1e-10);
        let lhs = dot(&r.upsample_barycentric(&y, n + 1).unwrap(), &x);
        assert!((lhs - dot(&y, &r.upsample_barycentric_adjoint(&x, n).unwrap())).abs() < 1e-10);
    }
}

#[test]
fn barycentric_upsample_vertex_and_linear_cases() {
    let m: HalfedgeMesh<f64> = subdivided_cube(4);
    let coplanar = |v: usize| {
        let n0 = m.face_cross(m.vertex_faces(v)[0]).normalized().unwrap();
        m.vertex_faces(v).iter().all(|&f| m.face_cross(f).normalized().unwrap().dot(n0) > 1.0 - 1e-12)
    };
    let e = m
        .edges()
        .find(|&e| {
            let [a, b] = m.edge_vertices(e);
            coplanar(a) && coplanar(b)
        })
        .unwrap();
    let mut d = TrackedDecimation::new(&m, 0.1, 0);
    d.collapse_edge(e).unwrap();
    let dec = d.finish().unwrap();
    let meta = meshpyr::overlay::build_meta_mesh(&dec, &m, &dec.coarse).unwrap();
    let a = meshpyr::overlay::build_overlap_matrix(&meta, &dec.coarse).unwrap();
    let r = Resampler::new(a, &dec.triplets, &m, &dec.coarse).unwrap();

    let lin = |p: meshpyr::Vec3<f64>| 0.7 * p.x - 1.3 * p.y + 0.4 * p.z + 0.2;
    let hv: Vec<f64> = (0..dec.coarse.num_vertices()).map(|v| lin(dec.coarse.position(v))).collect();
    let fv = r.fine_vertex_features(&hv, 1);
    for v in 0..m.num_vertices() {
        assert!((fv[v] - lin(m.position(v))).abs() < 1e-9);
        let t = dec.triplets[v];
        if let Some(k) = t.weights().iter().position(|&w| w == 1.0) {
            assert_eq!(fv[v], hv[dec.coarse.face_vertices(t.face)[k]]);
        }
    }
}

#[test]
fn fusion_single_level_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let f = random_field(&mut rng, 0, 1280, 3);
    let out = fusion_transform(std::slice::from_ref(&f), &[], &[vec![vec![]]]).unwrap();
    assert_eq!(out, vec![f]);
}

fn identity_rounds(r_count: usize, relu: bool) -> Vec<Vec<Vec<FusionRound<f64>>>> {
    (0..r_count)
        .map(|x| (0..r_count).map(|r| vec![FusionRound { projection: None, norm: None, relu }; x.abs_diff(r)]).collect())
        .collect()
}

#[test]
fn fusion_preserves_constants() {
    let rs: Vec<&Resampler<f64>> = resamplers().iter().collect();
    let sizes = [1280, 320, 80, 20];
    let fields: Vec<_> = (0..4).map(|r| FeatureField::constant(r, sizes[r], 2, -0.75)).collect();
    let out = fusion_transform(&fields, &rs, &identity_rounds(4, false)).unwrap();
    for (r, o) in out.iter().enumerate() {
        assert_eq!(o.rows, sizes[r]);
        assert!(o.data.iter().all(|v| (v + 0.75).abs() < 1e-12));
    }
}

#[test]
fn fusion_matches_manual_composition() {
    let rs: Vec<&Resampler<f64>> = resamplers().iter().collect();
    let sizes = [1280, 320, 80, 20];
    let widths = [2, 4, 8, 16];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let fields: Vec<_> = (0..4).map(|r| random_field(&mut rng, r, sizes[r], widths[r])).collect();
    let mut rounds: Vec<Vec<Vec<FusionRound<f64>>>> = vec![vec![Vec::new(); 4]; 4];
    for x in 0..4 {
        for r in 0..4 {
            let mut lvl = x;
            while lvl != r {
                let next = if lvl < r { lvl + 1 } else { lvl - 1 };
                let (i, o) = (widths[lvl], widths[next]);
                let w: Vec<f64> = (0..i * o).map(|_| rng.random_range(-0.5..0.5)).collect();
                let g: Vec<f64> = (0..o).map(|_| rng.random_range(0.5..1.5)).collect();
                let b: Vec<f64> = (0..o).map(|_| rng.random_range(-0.1..0.1)).collect();
                rounds[x][r].push(FusionRound { projection: Some((w, o)), norm: Some((g, b, 1e-5)), relu: true });
                lvl = next;
            }
        }
    }
    let out = fusion_transform(&fields, &rs, &rounds).unwrap();
    for r in 0..4 {
        let mut acc = FeatureField::zeros(r, sizes[r], widths[r]);
        for x in 0..4 {
            let mut h = fields[x].clone();
            let mut lvl = x;
            for round in &rounds[x][r] {
                if lvl < r {
                    h = rs[lvl].downsample(&h, lvl + 1).unwrap();
                    lvl += 1;
                } else {
                    h = rs[lvl - 1].upsample_barycentric(&h, lvl - 1).unwrap();
                    lvl -= 1;
                }
                let (w, o) = round.projection.as_ref().unwrap();
                h = linear(&h, w, None, *o).unwrap();
                let (g, b, eps) = round.norm.as_ref().unwrap();
                h = batch_norm(&h, g, b, *eps).0;
                h = relu(&h);
            }
            for (a, v) in acc.data.iter_mut().zip(&h.data) {
                *a += v;
            }
        }
        for a in acc.data.iter_mut() {
            *a /= 4.0;
        }
        assert!(out[r].max_abs_diff(&acc) < 1e-12);
    }
}

#[test]
fn fusion_rejects_mismatched_widths() {
    let rs: Vec<&Resampler<f64>> = resamplers().iter().collect();
    let fields = vec![FeatureField::<f64>::zeros(0, 1280, 2), FeatureField::zeros(1, 320, 4)];
    assert!(fusion_transform(&fields, &rs[..1], &identity_rounds(2, true)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn g_features_permutation_invariant(k in proptest::array::uniform3(-1.0f64..1.0)) {
        let g = curvature_invariants(k);
        for p in [[0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
            let h = curvature_invariants([k[p[0]], k[p[1]], k[p[2]]]);
            prop_assert!((0..3).all(|i| (g[i] - h[i]).abs() <= 1e-15));
        }
    }

    #[test]
    fn resamplers_linear_constant_bounded(seed in 0u64..1000, level in 0usize..3, c in -5.0f64..5.0, s in -3.0f64..3.0) {
        let r = &resamplers()[level];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (nf, nc) = (r.fine_faces(), r.coarse_faces());
        let x = random_field(&mut rng, 0, nf, 2);
        let y = random_field(&mut rng, 0, nf, 2);
        let u = random_field(&mut rng, 1, nc, 2);
        let v = random_field(&mut rng, 1, nc, 2);
        let mut xy = x.clone();
        for (a, b) in xy.data.iter_mut().zip(&y.data) { *a = *a * s + b; }
        let mut uv = u.clone();
        for (a, b) in uv.data.iter_mut().zip(&v.data) { *a = *a * s + b; }

        let dx = r.downsample(&x, 1).unwrap();
        let dy = r.downsample(&y, 1).unwrap();
        let dxy = r.downsample(&xy, 1).unwrap();
        for i in 0..dx.data.len() { prop_assert!((dxy.data[i] - (s * dx.data[i] + dy.data[i])).abs() < 1e-12); }
        for up in [Resampler::upsample_area, Resampler::upsample_barycentric] {
            let a = up(r, &u, 0).unwrap();
            let b = up(r, &v, 0).unwrap();
            let ab = up(r, &uv, 0).unwrap();
            for i in 0..a.data.len() { prop_assert!((ab.data[i] - (s * a.data[i] + b.data[i])).abs() < 1e-12); }
            let k = up(r, &FeatureField::constant(1, nc, 2, c), 0).unwrap();
            prop_assert!(k.data.iter().all(|t| (t - c).abs() < 1e-12));
        }
        let k = r.downsample(&FeatureField::constant(0, nf, 2, c), 1).unwrap();
        prop_assert!(k.data.iter().all(|t| (t - c).abs() < 1e-12));

        for j in 0..nc {
            for ch in 0..2 {
                let vals: Vec<f64> = r.a.column(j).map(|(i, _)| x.get(i, ch)).collect();
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(dx.get(j, ch) >= lo - 1e-12 && dx.get(j, ch) <= hi + 1e-12);
            }
        }
    }
}
