use hcsc_core::conv::{self, reference};
use hcsc_core::tensor::{inner_product, soft_threshold};
use hcsc_core::{FilterBank, SignalTensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_signal<T: hcsc_core::Real>(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> SignalTensor<T> {
    SignalTensor::from_fn(c, h, w, |_, _, _| T::from_f64(rng.random_range(-1.0..1.0)))
}

fn random_bank<T: hcsc_core::Real>(rng: &mut ChaCha8Rng, o: usize, i: usize, kh: usize, kw: usize) -> FilterBank<T> {
    FilterBank::from_fn(o, i, kh, kw, |_, _, _, _| T::from_f64(rng.random_range(-1.0..1.0)))
}

fn max_rel_diff(a: &[f32], b: &[f32]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, &v| m.max((v as f64).abs())).max(1.0);
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y as f64).abs() / scale)
        .fold(0.0, f64::max)
}

/// (out, in, kh, kw, h, w, seed) with the code at least one pixel wide.
fn shapes() -> impl Strategy<Value = (usize, usize, usize, usize, usize, usize, u64)> {
    (
        1usize..4,
        1usize..5,
        1usize..6,
        1usize..6,
        1usize..9,
        1usize..9,
        any::<u64>(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn conv_full_and_corr_valid_are_adjoint((o, i, kh, kw, h, w, seed) in shapes()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_bank::<f32>(&mut rng, o, i, kh, kw);
        let x = random_signal::<f32>(&mut rng, i, h, w);
        let (ho, wo) = conv::full_size(h, w, kh, kw);
        let y = random_signal::<f32>(&mut rng, o, ho, wo);
        let ax = conv::conv_full(&a, &x).unwrap();
        let aty = conv::corr_valid(&y, &a).unwrap();
        let lhs = inner_product(&ax, &y);
        let rhs = inner_product(&x, &aty);
        prop_assert!((lhs - rhs).abs() <= 1e-5 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
    }

    #[test]
    fn shape_laws((o, i, kh, kw, h, w, seed) in shapes()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_bank::<f32>(&mut rng, o, i, kh, kw);
        let x = random_signal::<f32>(&mut rng, i, h, w);
        let y = conv::conv_full(&a, &x).unwrap();
        prop_assert_eq!(y.shape(), (o, h + kh - 1, w + kw - 1));
        let back = conv::corr_valid(&y, &a).unwrap();
        prop_assert_eq!(back.shape(), (i, h, w));
        let g = conv::corr_filter_grad(&y, &x, kh, kw).unwrap();
        prop_assert_eq!(g.shape(), (o, i, kh, kw));
    }

    #[test]
    fn conv_full_is_linear((o, i, kh, kw, h, w, seed) in shapes(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_bank::<f64>(&mut rng, o, i, kh, kw);
        let x = random_signal::<f64>(&mut rng, i, h, w);
        let y = random_signal::<f64>(&mut rng, i, h, w);
        let mut combo = x.clone();
        combo.scale(alpha);
        combo.axpy(beta, &y);
        let lhs = conv::conv_full(&a, &combo).unwrap();
        let mut rhs = conv::conv_full(&a, &x).unwrap();
        rhs.scale(alpha);
        rhs.axpy(beta, &conv::conv_full(&a, &y).unwrap());
        let diff = lhs.sub(&rhs).norm_l2();
        prop_assert!(diff <= 1e-6 * (1.0 + rhs.norm_l2()));
    }

    #[test]
    fn fast_kernels_match_direct_sums((o, i, kh, kw, h, w, seed) in shapes()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_bank::<f32>(&mut rng, o, i, kh, kw);
        let x = random_signal::<f32>(&mut rng, i, h, w);
        let fast = conv::conv_full(&a, &x).unwrap();
        let slow = reference::conv_full(&a, &x).unwrap();
        prop_assert!(max_rel_diff(fast.data(), slow.data()) <= 1e-6);

        let y = random_signal::<f32>(&mut rng, o, h + kh - 1, w + kw - 1);
        let fast = conv::corr_valid(&y, &a).unwrap();
        let slow = reference::corr_valid(&y, &a).unwrap();
        prop_assert!(max_rel_diff(fast.data(), slow.data()) <= 1e-6);

        let fast = conv::corr_filter_grad(&y, &x, kh, kw).unwrap();
        let slow = reference::corr_filter_grad(&y, &x, kh, kw).unwrap();
        prop_assert!(max_rel_diff(fast.data(), slow.data()) <= 1e-6);
    }

    #[test]
    fn soft_threshold_is_nonexpansive(seed in any::<u64>(), lambda in 0.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_signal::<f64>(&mut rng, 2, 4, 4);
        let b = random_signal::<f64>(&mut rng, 2, 4, 4);
        let sa = soft_threshold(&a, lambda).unwrap();
        let sb = soft_threshold(&b, lambda).unwrap();
        prop_assert!(sa.sub(&sb).norm_l2() <= a.sub(&b).norm_l2() + 1e-12);
    }
}

#[test]
fn adjoint_small_example_by_hand() {
    // 1x3x3 y, 1x1x2x2 A, 1x2x2 x
    let a = FilterBank::from_vec(1, 1, 2, 2, vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
    let x = SignalTensor::from_vec(1, 2, 2, vec![0.5, -1.0, 2.0, 0.25]).unwrap();
    let y = SignalTensor::from_vec(1, 3, 3, vec![1.0, 0.0, -2.0, 3.0, 1.5, 0.5, -1.0, 2.0, 1.0]).unwrap();
    let lhs = inner_product(&conv::conv_full(&a, &x).unwrap(), &y);
    let rhs = inner_product(&x, &conv::corr_valid(&y, &a).unwrap());
    assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
}

#[test]
fn mnist_layer_one_shapes() {
    let a = FilterBank::<f32>::zeros(1, 1, 5, 5);
    let b = FilterBank::<f32>::zeros(1, 32, 5, 5);
    let x = SignalTensor::<f32>::zeros(1, 24, 24);
    assert_eq!(conv::conv_full(&a, &x).unwrap().shape(), (1, 28, 28));
    let r = SignalTensor::<f32>::zeros(1, 28, 28);
    assert_eq!(conv::corr_valid(&r, &a).unwrap().shape(), (1, 24, 24));
    assert_eq!(conv::corr_valid(&r, &b).unwrap().shape(), (32, 24, 24));
}
