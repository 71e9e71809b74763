use fqpe_core::autodiff::Tape;
use fqpe_core::dic::CorrectionOrder;
use fqpe_core::harness::{degrade, psnr, DegradationParams};
use fqpe_core::pipeline::{enhance, init_weights, RunConfig};
use fqpe_core::pyramid::{decompose_with, reconstruct_with, LowpassKernel};
use fqpe_core::Tensor;
use proptest::prelude::*;

fn image(c: usize, h: usize, w: usize, values: &[f32]) -> Tensor {
    Tensor::from_fn(&[c, h, w], |i| values[i % values.len()]).unwrap()
}

fn normalized_kernel() -> impl Strategy<Value = LowpassKernel> {
    prop::sample::select(vec![3usize, 5, 7])
        .prop_flat_map(|n| prop::collection::vec(0.05f64..1.0, n))
        .prop_map(|taps| {
            let s: f64 = taps.iter().sum();
            LowpassKernel::new(taps.iter().map(|t| t / s).collect()).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn reconstruction_is_exact_for_any_normalized_kernel(
        kernel in normalized_kernel(),
        levels in 2usize..=6,
        extra_h in 0usize..20,
        extra_w in 0usize..20,
        values in prop::collection::vec(0.0f32..1.0, 1..200),
    ) {
        let min = 1 << (levels - 1);
        let img = image(3, min + extra_h, min + extra_w, &values);
        let pyr = decompose_with(&img, levels, &kernel).unwrap();
        let back = reconstruct_with(&pyr, &kernel).unwrap();
        prop_assert!(back.max_abs_diff(&img).unwrap() < 1e-5);
    }

    #[test]
    fn reshape_round_trip_is_bit_exact(
        c in 1usize..5, h in 1usize..7, w in 1usize..7,
        values in prop::collection::vec(-10.0f32..10.0, 1..64),
    ) {
        let img = image(c, h, w, &values);
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(img.clone());
        let flat = tape.flatten_spatial(x).unwrap();
        let back = tape.unflatten_spatial(flat, h, w).unwrap();
        prop_assert_eq!(tape.value(back), &img);
        let r = tape.reshape(x, &[c * h * w]).unwrap();
        let r = tape.reshape(r, &[c, h, w]).unwrap();
        prop_assert_eq!(tape.value(r), &img);
    }

    #[test]
    fn squashing_activations_stay_open(values in prop::collection::vec(-50.0f32..50.0, 1..64)) {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::new(&[values.len()], values).unwrap());
        let s = tape.sigmoid(x).unwrap();
        let t = tape.tanh(x).unwrap();
        prop_assert!(tape.value(s).data().iter().all(|&v| v > 0.0 && v < 1.0));
        prop_assert!(tape.value(t).data().iter().all(|&v| v > -1.0 && v < 1.0));
    }

    #[test]
    fn degradation_stays_in_unit_range(
        darken in 1.0f32..5.0, read in 0.0f32..0.2, shot in 0.0f32..0.2, seed: u64,
        values in prop::collection::vec(0.0f32..1.0, 1..64),
    ) {
        let img = image(3, 4, 4, &values);
        let p = DegradationParams { darken_exponent: darken, read_noise_sigma: read, shot_noise_scale: shot, seed };
        let d = degrade(&img, &p).unwrap();
        prop_assert!(d.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert_eq!(&d, &degrade(&img, &p).unwrap());
        if d != img {
            prop_assert!(psnr(&d, &img).unwrap() >= 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn enhancement_is_deterministic_and_shape_preserving(
        seed: u64,
        levels in prop::sample::select(vec![2usize, 3, 4]),
        local_first: bool,
        values in prop::collection::vec(0.0f32..1.0, 1..64),
    ) {
        let order = if local_first { CorrectionOrder::LocalToGlobal } else { CorrectionOrder::GlobalToLocal };
        let cfg = RunConfig { levels, order, ..RunConfig::default() };
        let w = init_weights(seed, &cfg).unwrap();
        let img = image(3, 19, 16, &values);
        let a = enhance(&img, &w).unwrap();
        prop_assert_eq!(a.shape(), img.shape());
        prop_assert_eq!(a, enhance(&img, &w).unwrap());
    }
}
