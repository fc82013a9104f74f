use hcsc_core::conv::conv_full;
use hcsc_core::model::{box_filter, laplace, HierarchicalModel, LayerConfig};
use hcsc_core::SignalTensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mnist_layers(depth: usize) -> Vec<LayerConfig> {
    vec![LayerConfig::default(); depth]
}

#[test]
fn laplace_draws_have_unit_mean_magnitude() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 1_000_000;
    let (mut abs, mut sum) = (0.0, 0.0);
    for _ in 0..n {
        let v = laplace(&mut rng, 1.0);
        abs += v.abs();
        sum += v;
    }
    let (mean_abs, mean) = (abs / n as f64, sum / n as f64);
    assert!((mean_abs - 1.0).abs() <= 0.01, "E|u| = {mean_abs}");
    assert!(mean.abs() <= 0.01, "E u = {mean}");

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let scaled: f64 = (0..200_000).map(|_| laplace(&mut rng, 0.25).abs()).sum::<f64>() / 200_000.0;
    assert!((scaled - 0.25).abs() <= 0.005, "E|u| = {scaled} for diversity 0.25");
    assert_eq!(laplace(&mut rng, 0.0), 0.0);
}

#[test]
fn parameter_counts() {
    let one = HierarchicalModel::init(1, mnist_layers(1), false, 0).unwrap();
    assert_eq!(one.trainable_param_count(), 800);
    let tied = HierarchicalModel::init(1, mnist_layers(3), true, 0).unwrap();
    assert_eq!(tied.trainable_param_count(), 800);
    let untied = HierarchicalModel::init(1, mnist_layers(3), false, 0).unwrap();
    assert_eq!(untied.trainable_param_count(), 2400);
    let trainable_scale = LayerConfig {
        scale_filter_trainable: true,
        ..LayerConfig::default()
    };
    let m = HierarchicalModel::init(1, vec![trainable_scale], false, 0).unwrap();
    assert_eq!(m.trainable_param_count(), 825);
}

#[test]
fn box_filter_and_initial_atoms_are_unit_norm() {
    let f = box_filter(1, 1, 5, 5);
    assert!(f.data().iter().all(|&v| (v - 0.2).abs() < 1e-7));
    let f = box_filter(3, 2, 4, 4);
    for c in 0..2 {
        assert!((f.atom_norm(c) - 1.0).abs() < 1e-6);
    }
    let m = HierarchicalModel::init(1, mnist_layers(2), false, 9).unwrap();
    for l in 1..=2 {
        for c in 0..32 {
            assert!((m.b(l).atom_norm(c) - 1.0).abs() < 1e-5);
        }
    }
}

#[test]
fn tied_layers_share_one_bank() {
    let m = HierarchicalModel::init(1, mnist_layers(3), true, 4).unwrap();
    assert_eq!(m.detail_banks().len(), 1);
    assert_eq!(m.b(1), m.b(3));
    assert_eq!(m.a(2), m.a(3));
    assert_eq!(m.code_size(3, (28, 28)), Some((16, 16)));
    assert_eq!(m.input_size((16, 16)), (28, 28));
    assert_eq!(m.code_size(3, (10, 10)), None);
}

#[test]
fn tied_models_need_matching_channels() {
    let wide = LayerConfig {
        scale_channels: 2,
        ..LayerConfig::default()
    };
    // input has 1 channel, but layer 2 would see 2 channels under the shared bank
    assert!(HierarchicalModel::init(1, vec![wide.clone(), wide], true, 0).is_err());
    assert!(HierarchicalModel::init(1, Vec::new(), false, 0).is_err());
}

#[test]
fn synthesis_is_the_recursion_and_is_linear() {
    let m = HierarchicalModel::init(1, mnist_layers(2), false, 3).unwrap();
    let (top, details) = m.sample_priors((6, 6), 17);
    assert_eq!(top.shape(), (1, 6, 6));
    assert_eq!(details[1].shape(), (32, 6, 6));
    assert_eq!(details[0].shape(), (32, 10, 10));
    let out = m.synthesize(&top, &details, None).unwrap();
    assert_eq!(out.len(), 2);
    assert_eq!(out[1].shape(), (1, 14, 14));

    // by hand
    let mut x1 = conv_full(m.a(2), &top).unwrap();
    x1.axpy(1.0, &conv_full(m.b(2), &details[1]).unwrap());
    let mut x0 = conv_full(m.a(1), &x1).unwrap();
    x0.axpy(1.0, &conv_full(m.b(1), &details[0]).unwrap());
    assert!(out[0].sub(&x1).norm_l2() <= 1e-5 * x1.norm_l2());
    assert!(out[1].sub(&x0).norm_l2() <= 1e-5 * x0.norm_l2());

    // linear in (x_L, u) jointly
    let (top2, details2) = m.sample_priors((6, 6), 18);
    let mut top_sum = top.clone();
    top_sum.axpy(2.0, &top2);
    let sum_details: Vec<SignalTensor> = details
        .iter()
        .zip(&details2)
        .map(|(d, e)| {
            let mut s = d.clone();
            s.axpy(2.0, e);
            s
        })
        .collect();
    let lhs = m.synthesize(&top_sum, &sum_details, None).unwrap();
    let mut rhs = out[1].clone();
    rhs.axpy(2.0, &m.synthesize(&top2, &details2, None).unwrap()[1]);
    assert!(lhs[1].sub(&rhs).norm_l2() <= 1e-5 * rhs.norm_l2());
}

#[test]
fn synthesis_noise_is_seeded() {
    let cfg = LayerConfig {
        sigma_eps: 0.5,
        ..LayerConfig::default()
    };
    let m = HierarchicalModel::init(1, vec![cfg], false, 0).unwrap();
    let (top, details) = m.sample_priors((8, 8), 1);
    let clean = m.synthesize(&top, &details, None).unwrap();
    let a = m.synthesize(&top, &details, Some(5)).unwrap();
    let b = m.synthesize(&top, &details, Some(5)).unwrap();
    assert_eq!(a, b);
    let noise = a[0].sub(&clean[0]);
    let sd = (noise.norm_l2_sq() / noise.len() as f64).sqrt();
    assert!((sd - 0.5).abs() < 0.1, "noise sd {sd}");
}

#[test]
fn bad_hyperparameters_are_config_errors() {
    let bad = LayerConfig {
        lambda: -1.0,
        ..LayerConfig::default()
    };
    let err = HierarchicalModel::init(1, vec![bad], false, 0).unwrap_err();
    assert_eq!(err.class(), "config");
}
