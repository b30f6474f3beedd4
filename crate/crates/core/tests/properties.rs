use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rshaze::autograd::ParamStore;
use rshaze::data::{decode_checkpoint, encode_checkpoint, quantize, Split};
use rshaze::ops::{conv2d, crop, pixel_shuffle, pixel_unshuffle, reflect_pad, softmax_lastdim, ConvSpec};
use rshaze::train::{cosine_lr, hflip, rot90};
use rshaze::{NetConfig, Tensor};

fn tensor(seed: u64, shape: [usize; 4]) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-2.0..2.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shuffle_inverts_unshuffle(seed: u64, n in 1usize..3, c in 1usize..4, r in 1usize..4, h in 1usize..4, w in 1usize..4) {
        let x = tensor(seed, [n, c, h * r, w * r]);
        let down = pixel_unshuffle(&x, r).unwrap();
        prop_assert_eq!(down.shape().dims(), [n, c * r * r, h, w]);
        prop_assert_eq!(pixel_shuffle(&down, r).unwrap(), x);
    }

    #[test]
    fn crop_undoes_reflect_pad(seed: u64, h in 2usize..9, w in 2usize..9, ph in 0usize..2, pw in 0usize..2) {
        let x = tensor(seed, [1, 2, h, w]);
        let (ph, pw) = (ph * (h - 1), pw * (w - 1));
        let padded = reflect_pad(&x, ph, pw).unwrap();
        prop_assert_eq!(crop(&padded, h, w).unwrap(), x);
    }

    #[test]
    fn softmax_rows_are_distributions(seed: u64, rows in 1usize..6, cols in 1usize..9, scale in 0.01f64..20.0) {
        let x = tensor(seed, [1, 1, rows, cols]).map(|v| v * 50.0);
        let y = softmax_lastdim(&x, scale).unwrap();
        for row in y.data().chunks(cols) {
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_is_linear_in_its_input(seed: u64, k in 0usize..3, dilation in 1usize..3, depthwise: bool) {
        let k = 2 * k + 1;
        let groups = if depthwise { 4 } else { 1 };
        let spec = ConvSpec::new(4, 4, k).dilation(dilation).groups(groups).padding(dilation * (k - 1) / 2).bias(false);
        let a = tensor(seed, [1, 4, 7, 6]);
        let b = tensor(seed.wrapping_add(1), [1, 4, 7, 6]);
        let w = tensor(seed.wrapping_add(2), spec.weight_shape().dims());
        let sum = a.zip_map(&b, "add", |x, y| x + 3.0 * y).unwrap();
        let lhs = conv2d(&sum, &w, None, &spec).unwrap();
        let (ca, cb) = (conv2d(&a, &w, None, &spec).unwrap(), conv2d(&b, &w, None, &spec).unwrap());
        let rhs = ca.zip_map(&cb, "add", |x, y| x + 3.0 * y).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
    }

    #[test]
    fn flips_and_turns_preserve_values(seed: u64, h in 1usize..6, w in 1usize..6) {
        let x = tensor(seed, [1, 3, h, w]);
        let sorted = |t: &Tensor<f64>| {
            let mut v = t.data().to_vec();
            v.sort_by(f64::total_cmp);
            v
        };
        prop_assert_eq!(sorted(&hflip(&x)), sorted(&x));
        prop_assert_eq!(sorted(&rot90(&x)), sorted(&x));
        prop_assert_eq!(rot90(&rot90(&x)), hflip(&hflip(&rot90(&rot90(&x)))));
    }

    #[test]
    fn cosine_stays_between_its_bounds(total in 1usize..5000, frac in 0.0f64..=1.0, lo in 0.0f64..1e-4, span in 0.0f64..1e-2) {
        let t = ((total as f64) * frac) as usize;
        let hi = lo + span;
        let lr = cosine_lr(t, total, hi, lo).unwrap();
        prop_assert!(lr >= lo && lr <= hi);
    }

    #[test]
    fn split_counts_partition_the_pairs(n in 0usize..2000, train in 0.0f64..10.0, val in 0.0f64..10.0, test in 0.01f64..10.0) {
        let (a, b, c) = Split { train, val, test }.counts(n).unwrap();
        prop_assert_eq!(a + b + c, n);
    }

    #[test]
    fn quantization_error_is_half_a_level(v in -0.5f64..1.5) {
        let q = f64::from(quantize(v)) / 255.0;
        prop_assert!((q - v.clamp(0.0, 1.0)).abs() <= 0.5 / 255.0 + 1e-12);
    }

    #[test]
    fn checkpoints_round_trip_arbitrary_stores(seed: u64, sizes in prop::collection::vec((1usize..4, 1usize..5), 1..6)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::<f32>::new();
        for (i, &(a, b)) in sizes.iter().enumerate() {
            let t = Tensor::from_fn([a, b, 1, 2], |_| rng.gen_range(-1e3..1e3));
            store.add(format!("p{i}"), t).unwrap();
        }
        let bytes = encode_checkpoint(&NetConfig::tiny(), &store);
        let (cfg, back) = decode_checkpoint(&bytes).unwrap();
        prop_assert_eq!(&cfg, &NetConfig::tiny());
        prop_assert!(back.bit_eq(&store));
        prop_assert_eq!(encode_checkpoint(&cfg, &back), bytes);
    }
}
