use std::fs;

use meshpyr::mesh::{icosphere, torus, HalfedgeMesh};
use meshpyr::overlay::{build_meta_mesh, build_overlap_matrix};
use meshpyr::pyramid::*;
use meshpyr::selfparam::{decimate_qem_reference, decimate_to, replay_collapses};

fn icosphere_pyramid() -> MeshPyramid<f64> {
    build_pyramid(&icosphere(4), &PyramidConfig::new(vec![5120, 1280, 320])).unwrap()
}

#[test]
fn three_level_icosphere() {
    let p = icosphere_pyramid();
    assert_eq!(p.depth(), 3);
    assert_eq!(p.matrices.len(), 2);
    assert_eq!(p.finest().num_faces(), 5120);
    assert!(p.levels[1].num_faces() <= 1280 && p.coarsest().num_faces() <= 320);
    for a in &p.matrices {
        for s in a.column_sums() {
            assert!((s - 1.0).abs() <= 1e-6);
        }
    }
    p.validate().unwrap();
}

#[test]
fn rebuild_is_bit_identical() {
    let a = icosphere_pyramid();
    let b = icosphere_pyramid();
    for (x, y) in a.levels.iter().zip(&b.levels) {
        assert_eq!(x.positions(), y.positions());
        assert_eq!(x.triangles(), y.triangles());
    }
    assert_eq!(a.matrices, b.matrices);
    assert_eq!(a.maps, b.maps);
}

#[test]
fn save_load_save_identical() {
    let p = icosphere_pyramid();
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    save_pyramid(&p, d1.path()).unwrap();
    let q: MeshPyramid<f64> = load_pyramid(d1.path()).unwrap();
    q.validate().unwrap();
    save_pyramid(&q, d2.path()).unwrap();
    let mut names: Vec<_> = fs::read_dir(d1.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 1 + 3 + 2 * 4);
    for n in names {
        assert_eq!(fs::read(d1.path().join(&n)).unwrap(), fs::read(d2.path().join(&n)).unwrap(), "{n:?}");
    }
    assert_eq!(q.matrices, p.matrices);
    assert_eq!(q.maps, p.maps);
}

#[test]
fn corrupted_manifest_detected() {
    let p = build_pyramid(&icosphere::<f64>(3), &PyramidConfig::new(vec![1280, 320])).unwrap();
    let d = tempfile::tempdir().unwrap();
    save_pyramid(&p, d.path()).unwrap();
    let path = d.path().join("manifest.json");
    let text = fs::read_to_string(&path).unwrap();
    fs::write(&path, text.replacen("\"faces\": 320", "\"faces\": 321", 1)).unwrap();
    assert!(matches!(load_pyramid::<f64>(d.path()), Err(PyramidError::ChecksumMismatch(_))));

    fs::write(&path, text.replacen("\"format_version\": 1", "\"format_version\": 9", 1)).unwrap();
    assert!(matches!(load_pyramid::<f64>(d.path()), Err(PyramidError::FormatVersionMismatch { found: 9, .. })));

    fs::write(&path, &text).unwrap();
    let obj = d.path().join("level_0.obj");
    let mut mesh = fs::read_to_string(&obj).unwrap();
    mesh.push_str("# edited\n");
    fs::write(&obj, mesh).unwrap();
    assert!(matches!(load_pyramid::<f64>(d.path()), Err(PyramidError::ChecksumMismatch(_))));
}

#[test]
fn torus_pyramid_rate_four() {
    let m: HalfedgeMesh<f64> = torus(64, 32, 1.0, 0.4);
    let p = build_pyramid(&m, &PyramidConfig::with_rate(4096, 4, 3)).unwrap();
    assert_eq!(p.depth(), 3);
    p.validate().unwrap();
}

#[test]
fn scale_only_augmentation() {
    let m: HalfedgeMesh<f64> = icosphere(2);
    let cfg = AugmentConfig { rotate: false, ..Default::default() };
    let aug = Augmentation::sample(11, &cfg);
    assert_eq!(aug.turns, [0, 0, 0]);
    let out = aug.apply(&m);
    for (a, b) in [(0usize, 1usize), (3, 17), (5, 40)] {
        let d0 = (m.position(a) - m.position(b)).norm();
        let d1 = (out.position(a) - out.position(b)).norm();
        assert!((d1 - aug.scale * d0).abs() <= 1e-14 * d1.max(1.0));
    }
}

#[test]
fn rotation_only_augmentation_keeps_areas() {
    let m: HalfedgeMesh<f64> = torus(24, 12, 1.0, 0.3);
    let cfg = AugmentConfig { scale: false, ..Default::default() };
    for seed in 0..8 {
        let aug = Augmentation::sample(seed, &cfg);
        assert_eq!(aug.scale, 1.0);
        let out = aug.apply(&m);
        for f in m.faces() {
            assert!((out.face_area(f) - m.face_area(f)).abs() <= 1e-12);
        }
    }
    assert_eq!(augment_mesh(&m, 5).positions(), augment_mesh(&m, 5).positions());
}

#[test]
fn rotation_keeps_sparsity_with_pinned_sequence() {
    let m: HalfedgeMesh<f64> = icosphere(3);
    let rot = Augmentation { scale: 1.0, turns: [1, 0, 2] };
    let turned = rot.apply(&m);
    let base = decimate_to(&m, 320, 0.1, 0).unwrap();
    let sequence: Vec<usize> = base.records.iter().map(|r| r.edge).collect();
    let pinned = replay_collapses(&turned, &sequence, 0.1).unwrap();
    let pattern = |fine: &HalfedgeMesh<f64>, d: &meshpyr::selfparam::Decimation<f64>| -> Vec<(usize, usize)> {
        let meta = build_meta_mesh(d, fine, &d.coarse).unwrap();
        build_overlap_matrix(&meta, &d.coarse).unwrap().triplets().map(|(i, j, _)| (i, j)).collect()
    };
    assert_eq!(pattern(&m, &base), pattern(&turned, &pinned));
}

#[test]
fn variants_differ_by_seed() {
    let m: HalfedgeMesh<f64> = icosphere(3);
    let mut cfg = PyramidConfig::new(vec![1280, 320]);
    cfg.augment = Some(AugmentConfig::default());
    let vs = build_variants(&m, &cfg).unwrap();
    assert_eq!(vs.len(), DEFAULT_VARIANTS);
    assert_eq!(vs[0].config.seed, 0);
    assert_eq!(vs[2].config.seed, 2);
    for v in &vs {
        v.validate().unwrap();
    }
}

#[test]
fn invariant_suite_flags_injected_faults() {
    let p = build_pyramid(&icosphere::<f64>(3), &PyramidConfig::new(vec![1280, 320])).unwrap();
    let checks = p.invariant_checks();
    assert!(checks.iter().all(|c| c.passed), "{checks:?}");
    let failed = |q: &MeshPyramid<f64>| q.invariant_checks().into_iter().filter(|c| !c.passed).map(|c| c.name).collect::<Vec<_>>();

    let mut q = p.clone();
    q.maps[0].cells.pop();
    assert!(failed(&q).contains(&"tiling"));

    let mut q = p.clone();
    q.maps[0].triplets[5].alpha += 0.5;
    assert!(failed(&q).contains(&"triplets"));
}

#[test]
fn zero_weight_sequence_matches_qem_reference() {
    let m = icosphere::<f64>(3);
    let mut cfg = PyramidConfig::new(vec![1280, 320, 80]);
    cfg.w = 0.0;
    let p = build_pyramid(&m, &cfg).unwrap();
    let (mut fine, _) = m.compact().unwrap();
    for (n, &t) in cfg.level_face_targets[1..].iter().enumerate() {
        let seq = decimate_qem_reference(&fine, t, cfg.seed).unwrap();
        assert_eq!(sequence_sha256(&seq), p.maps[p.maps.len() - 1 - n].collapse_sha256);
        fine = replay_collapses(&fine, &seq, 0.0).unwrap().coarse;
    }
}
