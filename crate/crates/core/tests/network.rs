#![allow(clippy::needless_range_loop)]

use meshpyr::mesh::icosphere;
use meshpyr::network::*;
use meshpyr::ops::FeatureField;
use meshpyr::pyramid::{build_pyramid, MeshPyramid, PyramidConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy_pyramid() -> MeshPyramid<f64> {
    build_pyramid(&icosphere(1), &PyramidConfig::new(vec![80, 20])).unwrap()
}

fn octant_labels(p: &MeshPyramid<f64>) -> Vec<usize> {
    let fine = p.finest();
    fine.faces()
        .map(|f| {
            let c = fine.face_geometry(f).unwrap().center;
            usize::from(c.x >= 0.0) + 2 * usize::from(c.y >= 0.0) + 4 * usize::from(c.z >= 0.0)
        })
        .collect()
}

fn random_labels(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0..k)).collect()
}

#[test]
fn output_shape_and_eval_determinism() {
    let p = toy_pyramid();
    let input = NetInput::from_pyramid(&p, 2).unwrap();
    let (net, params) = Network::init::<f64>(&NetworkConfig::new(2, 2, 5), 3).unwrap();
    let a = net.forward(&params, &input, Mode::Eval).unwrap();
    let b = net.forward(&params, &input, Mode::Eval).unwrap();
    assert_eq!((a.rows, a.channels), (80, 5));
    assert_eq!(a.data, b.data);
    assert!(a.is_finite());
}

#[test]
fn depth_mismatch_reported() {
    let p = toy_pyramid();
    assert!(matches!(NetInput::from_pyramid(&p, 3), Err(NetError::DepthMismatch { needed: 3, available: 2 })));
    let input = NetInput::from_pyramid(&p, 1).unwrap();
    let (net, params) = Network::init::<f64>(&NetworkConfig::new(2, 2, 3), 0).unwrap();
    assert!(matches!(net.forward(&params, &input, Mode::Eval), Err(NetError::DepthMismatch { .. })));
}

/// Counts from the architecture description, level by level.
fn closed_form_count(c: usize, levels: usize, blocks: &[usize], units: usize, classes: usize) -> usize {
    let w = |r: usize| c << r;
    let dense = |i: usize, o: usize| i * o + 2 * o;
    let conv = |i: usize, o: usize| 4 * i * o + 2 * o;
    let s = 4 * c;
    let mut n = dense(10, s);
    n += dense(s, c) + conv(c, c) + dense(c, 4 * c);
    n += 3 * (dense(4 * c, c) + conv(c, c) + dense(c, 4 * c));
    for (i, &b) in blocks.iter().enumerate() {
        let stage_levels = i + 2;
        n += if i == 0 { dense(4 * c, w(0)) + dense(4 * c, w(1)) } else { dense(w(stage_levels - 2), w(stage_levels - 1)) };
        let per_block: usize = (0..stage_levels).map(|r| units * 2 * conv(w(r), w(r))).sum::<usize>()
            + (0..stage_levels)
                .flat_map(|x| (0..stage_levels).map(move |r| (x, r)))
                .map(|(x, r)| {
                    let path: Vec<usize> = if x < r { (x..=r).collect() } else { (r..=x).rev().collect() };
                    path.windows(2).map(|p| dense(w(p[0]), w(p[1]))).sum::<usize>()
                })
                .sum::<usize>();
        n += b * per_block;
    }
    let head: usize = (0..levels).map(w).sum();
    n + head * classes + classes
}

#[test]
fn parameter_count_matches_closed_form() {
    let cfg = NetworkConfig::new(4, 3, 8);
    let (_, params) = Network::init::<f64>(&cfg, 0).unwrap();
    assert_eq!(params.num_parameters(), closed_form_count(4, 3, &[1, 4], 4, 8));
    let cfg = NetworkConfig::new(2, 4, 3);
    let (_, params) = Network::init::<f64>(&cfg, 0).unwrap();
    assert_eq!(params.num_parameters(), closed_form_count(2, 4, &[1, 4, 3], 4, 3));
}

#[test]
fn cross_entropy_oracles() {
    let k = 7;
    let uniform = FeatureField::constant(0, 5, k, 0.3);
    let l: f64 = cross_entropy(&uniform, &[0, 1, 2, 3, 6]).unwrap();
    assert!((l - (k as f64).ln()).abs() < 1e-14);

    let mut sharp = FeatureField::zeros(0, 3, 4);
    for i in 0..3 {
        sharp.row_mut(i)[i] = 200.0;
    }
    assert!(cross_entropy(&sharp, &[0, 1, 2]).unwrap() < 1e-80);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let data: Vec<f64> = (0..40 * 6).map(|_| rng.random_range(-4.0..4.0)).collect();
    let scores = FeatureField::from_vec(0, 40, 6, data).unwrap();
    let labels = random_labels(40, 6, 2);
    let mut direct = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = scores.row(i);
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        direct -= (row[y].exp() / z).ln();
    }
    direct /= 40.0;
    assert!((cross_entropy(&scores, &labels).unwrap() - direct).abs() <= 1e-12);

    assert!(matches!(cross_entropy(&scores, &[9; 40]), Err(NetError::LabelOutOfRange { label: 9, classes: 6 })));
}

#[test]
fn single_class_has_zero_gradients() {
    let p = toy_pyramid();
    let input = NetInput::from_pyramid(&p, 2).unwrap();
    let (net, params) = Network::init::<f64>(&NetworkConfig::new(2, 2, 1), 1).unwrap();
    let pass = net.backprop(&params, &input, &[0; 80]).unwrap();
    assert_eq!(pass.loss, 0.0);
    assert!(pass.grads.flat(&params).iter().all(|g| *g == 0.0));
}

#[test]
fn dead_path_has_zero_gradient() {
    let p = toy_pyramid();
    let input = NetInput::from_pyramid(&p, 2).unwrap();
    let cfg = NetworkConfig::new(2, 2, 3);
    let (net, mut params) = Network::init::<f64>(&cfg, 4).unwrap();
    // Silence the classifier columns fed by level 1; the last fusion into
    // level 1 then has no path to the loss.
    let w = params.tensor_mut("classifier.weight").unwrap();
    let head = cfg.head_width();
    for row in w.data.chunks_mut(head) {
        for v in &mut row[cfg.width(0)..] {
            *v = 0.0;
        }
    }
    let pass = net.backprop(&params, &input, &random_labels(80, 3, 5)).unwrap();
    let mut dead = 0;
    for (t, g) in params.tensors.iter().zip(&pass.grads.0) {
        if t.name.starts_with("stage2.block0.fuse0to1") {
            dead += 1;
            assert!(g.iter().all(|v| *v == 0.0), "{}", t.name);
        }
        if !t.trainable {
            assert!(g.iter().all(|v| *v == 0.0));
        }
    }
    assert!(dead > 0);
    assert!(pass.grads.flat(&params).iter().any(|g| *g != 0.0));
}

#[test]
fn gradients_match_finite_differences() {
    let p = toy_pyramid();
    let input = NetInput::from_pyramid(&p, 2).unwrap();
    let (net, params) = Network::init::<f64>(&NetworkConfig::new(2, 2, 3), 7).unwrap();
    let labels = random_labels(80, 3, 107);
    let report = check_gradients(&net, &params, &input, &labels, 1e-5, 1e-4).unwrap();
    assert_eq!(report.parameters, params.num_parameters());
    assert!(report.worst <= 1e-4, "{report:?}");
}

#[test]
fn smooth_piece_matches_loss_away_from_kinks() {
    let p = toy_pyramid();
    let input = NetInput::from_pyramid(&p, 2).unwrap();
    let (net, params) = Network::init::<f64>(&NetworkConfig::new(2, 2, 3), 1).unwrap();
    let labels = random_labels(80, 3, 3);
    let pattern = net.kink_pattern(&params, &input, Mode::Train).unwrap();
    let a = net.loss(&params, &input, &labels, Mode::Train).unwrap();
    let b = net.loss_on_piece(&params, &input, &labels, Mode::Train, &pattern).unwrap();
    assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    assert_eq!(pattern.differences(&pattern), 0);
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let p = toy_pyramid();
    let input = NetInput::from_pyramid(&p, 2).unwrap();
    let (net, params) = Network::init::<f64>(&NetworkConfig::new(2, 2, 3), 0).unwrap();
    let samples = vec![Sample { input, labels: random_labels(80, 3, 1) }];
    let cfg = TrainConfig { lr: 0.0, epochs: 3, ..Default::default() };
    let out = train(&net, params.clone(), &samples, &[], &cfg).unwrap();
    assert_eq!(out.params.trainable_flat(), params.trainable_flat());
    assert_eq!(out.metrics.len(), 3);
}

#[test]
fn single_face_loss_decreases() {
    let p = toy_pyramid();
    let input = NetInput::from_pyramid(&p, 2).unwrap();
    let (net, params) = Network::init::<f64>(&NetworkConfig::new(2, 2, 2), 2).unwrap();
    let mut labels = vec![IGNORE_LABEL; 80];
    labels[17] = 1;
    let samples = vec![Sample { input, labels }];
    let cfg = TrainConfig { lr: 1e-8, epochs: 10, ..Default::default() };
    let out = train(&net, params, &samples, &[], &cfg).unwrap();
    for w in out.metrics.windows(2) {
        assert!(w[1].loss < w[0].loss, "{:?}", out.metrics);
    }
}

#[test]
fn training_is_deterministic() {
    let p = toy_pyramid();
    let input = NetInput::from_pyramid(&p, 2).unwrap();
    let labels = octant_labels(&p);
    let samples = vec![Sample { input: input.clone(), labels: labels.clone() }, Sample { input, labels }];
    let cfg = TrainConfig { epochs: 3, batch_size: 1, seed: 5, ..Default::default() };
    let run = || {
        let (net, params) = Network::init::<f64>(&NetworkConfig::new(2, 2, 8), 5).unwrap();
        train(&net, params, &samples, &samples[..1], &cfg).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(metrics_csv(&a.metrics), metrics_csv(&b.metrics));
    assert_eq!(a.params, b.params);
}

#[test]
fn normalized_activations_are_standardized() {
    let p = toy_pyramid();
    let input = NetInput::from_pyramid(&p, 2).unwrap();
    let cfg = NetworkConfig::new(2, 2, 3);
    let (net, params) = Network::init::<f64>(&cfg, 8).unwrap();
    // With gamma = 1 and beta = 0 the stem output before the rectifier is
    // the normalized field itself; recover it from the stem weights.
    let w = &params.tensor("stem.weight").unwrap().data;
    let lifted = meshpyr::ops::linear(&input.features, w, None, cfg.stem_width).unwrap();
    let (normed, _, _) = meshpyr::ops::batch_norm(&lifted, &[1.0; 8], &[0.0; 8], cfg.bn_eps);
    let (mean, var) = meshpyr::ops::channel_stats(&normed);
    for (m, v) in mean.iter().zip(&var) {
        assert!(m.abs() <= 1e-6);
        assert!((v - 1.0).abs() <= 1e-4, "{v}");
    }
    // The training pass sees the same statistics: its running mean update
    // is momentum times the batch mean.
    let pass = net.backprop(&params, &input, &random_labels(80, 3, 0)).unwrap();
    let idx = params.index_of("stem.norm.running_mean").unwrap();
    let (batch_mean, _) = meshpyr::ops::channel_stats(&lifted);
    let (_, new) = pass.running.iter().find(|(i, _)| *i == idx).unwrap();
    for (a, b) in new.iter().zip(&batch_mean) {
        assert!((a - cfg.bn_momentum * b).abs() <= 1e-15);
    }
}

#[test]
fn constant_input_gives_constant_scores() {
    let p = toy_pyramid();
    let mut input = NetInput::from_pyramid(&p, 2).unwrap();
    let row = input.features.row(0).to_vec();
    for i in 0..input.features.rows {
        input.features.row_mut(i).copy_from_slice(&row);
    }
    let (net, params) = Network::init::<f64>(&NetworkConfig::new(2, 2, 4), 6).unwrap();
    // Eval mode only: batch statistics of a constant field have zero
    // variance and amplify rounding noise.
    {
        let s = net.forward(&params, &input, Mode::Eval).unwrap();
        for i in 1..s.rows {
            for c in 0..s.channels {
                assert!((s.get(i, c) - s.get(0, c)).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn checkpoint_round_trip() {
    let (_, params) = Network::init::<f64>(&NetworkConfig::new(2, 3, 4), 11).unwrap();
    let d = tempfile::tempdir().unwrap();
    let path = d.path().join("w.bin");
    save_checkpoint(&params, &path).unwrap();
    let back: NetParams<f64> = load_checkpoint(&path).unwrap();
    assert_eq!(back, params);
    Network::for_params(&back).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 3);
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(load_checkpoint::<f64>(&path), Err(NetError::Checkpoint(_))));
}

#[test]
fn batching_matches_stacked_faces() {
    let p = toy_pyramid();
    let input = NetInput::from_pyramid(&p, 2).unwrap();
    let both = NetInput::batch(&[&input, &input]).unwrap();
    assert_eq!(both.faces(0), 160);
    assert_eq!(both.faces(1), 2 * input.faces(1));
    let (net, params) = Network::init::<f64>(&NetworkConfig::new(2, 2, 3), 0).unwrap();
    let one = net.forward(&params, &input, Mode::Train).unwrap();
    let two = net.forward(&params, &both, Mode::Train).unwrap();
    // Duplicated meshes leave batch statistics unchanged.
    for i in 0..80 {
        for c in 0..3 {
            assert!((two.get(i, c) - one.get(i, c)).abs() <= 1e-12);
            assert!((two.get(80 + i, c) - one.get(i, c)).abs() <= 1e-12);
        }
    }
}

#[test]
fn recalibration_sets_exact_statistics() {
    let p = toy_pyramid();
    let input = NetInput::from_pyramid(&p, 2).unwrap();
    let cfg = NetworkConfig::new(2, 2, 3);
    let (net, mut params) = Network::init::<f64>(&cfg, 2).unwrap();
    let samples = vec![Sample { input: input.clone(), labels: random_labels(80, 3, 0) }];
    recalibrate(&net, &mut params, &samples).unwrap();
    let w = &params.tensor("stem.weight").unwrap().data;
    let lifted = meshpyr::ops::linear(&input.features, w, None, cfg.stem_width).unwrap();
    let (mean, var) = meshpyr::ops::channel_stats(&lifted);
    let rm = &params.tensor("stem.norm.running_mean").unwrap().data;
    let rv = &params.tensor("stem.norm.running_var").unwrap().data;
    for c in 0..cfg.stem_width {
        assert!((rm[c] - mean[c]).abs() <= 1e-14);
        assert!((rv[c] - var[c] * 80.0 / 79.0).abs() <= 1e-14);
    }
}

#[test]
fn octant_labels_cover_all_classes() {
    let p = toy_pyramid();
    let mut seen = [false; 8];
    for l in octant_labels(&p) {
        seen[l] = true;
    }
    assert!(seen.iter().all(|s| *s));
}

mod properties {
    use super::*;
    use rand::Rng;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn batch_norm_standardizes(rows in 20usize..200, ch in 1usize..6, seed in any::<u64>(), scale in 0.1f64..50.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..rows * ch).map(|_| scale * rng.random_range(-1.0..1.0) + 3.0).collect();
            let x = FeatureField::from_vec(0, rows, ch, data).unwrap();
            let (y, _, _) = meshpyr::ops::batch_norm(&x, &vec![1.0; ch], &vec![0.0; ch], NetworkConfig::new(1, 1, 1).bn_eps);
            let (mean, var) = meshpyr::ops::channel_stats(&y);
            for (m, v) in mean.iter().zip(&var) {
                prop_assert!(m.abs() <= 1e-6);
                prop_assert!((v - 1.0).abs() <= 1e-4);
            }
        }

        #[test]
        fn cross_entropy_shift_invariant(seed in any::<u64>(), shift in -30.0f64..30.0, k in 2usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..10 * k).map(|_| rng.random_range(-5.0..5.0)).collect();
            let a = FeatureField::from_vec(0, 10, k, data.clone()).unwrap();
            let b = FeatureField::from_vec(0, 10, k, data.iter().map(|v| v + shift).collect()).unwrap();
            let labels = random_labels(10, k, seed ^ 1);
            let (la, lb) = (cross_entropy(&a, &labels).unwrap(), cross_entropy(&b, &labels).unwrap());
            prop_assert!((la - lb).abs() <= 1e-12);
            prop_assert!(la >= 0.0);
        }

        #[test]
        fn ignored_faces_do_not_count(seed in any::<u64>(), keep in 1usize..10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..10 * 3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let s = FeatureField::from_vec(0, 10, 3, data).unwrap();
            let labels = random_labels(10, 3, seed);
            let mut masked = labels.clone();
            for l in masked.iter_mut().skip(keep) {
                *l = IGNORE_LABEL;
            }
            let head = FeatureField::from_vec(0, keep, 3, s.data[..keep * 3].to_vec()).unwrap();
            let a = cross_entropy(&s, &masked).unwrap();
            let b = cross_entropy(&head, &labels[..keep]).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
