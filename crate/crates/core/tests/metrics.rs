use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rshaze::metrics::{mean_scores, mse, psnr, psnr_from_mse, score, ssim, Scores};
use rshaze::Tensor;

fn uniform(seed: u64, shape: [usize; 4]) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(0.0..1.0))
}

#[test]
fn psnr_reference_values() {
    assert!((psnr_from_mse(0.0024) - 26.1979).abs() < 1e-4);
    assert!((psnr_from_mse(0.01) - 20.0).abs() < 1e-12);
    assert_eq!(psnr_from_mse(0.0), f64::INFINITY);
    let a = Tensor::<f64>::full([1, 3, 4, 4], 0.3);
    let b = Tensor::<f64>::full([1, 3, 4, 4], 0.4);
    assert!((mse(&a, &b).unwrap() - 0.01).abs() < 1e-15);
    assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-10);
}

#[test]
fn psnr_is_symmetric_and_falls_with_noise() {
    let clean = uniform(0, [1, 3, 16, 16]);
    let noise = uniform(1, [1, 3, 16, 16]).map(|v| v - 0.5);
    let mut last = f64::INFINITY;
    for amp in [0.01, 0.05, 0.1, 0.3] {
        let noisy = Tensor::from_fn([1, 3, 16, 16], |[n, c, y, x]| {
            clean.at(n, c, y, x) + amp * noise.at(n, c, y, x)
        });
        let p = psnr(&clean, &noisy).unwrap();
        assert_eq!(p, psnr(&noisy, &clean).unwrap());
        assert!(p < last);
        last = p;
    }
}

#[test]
fn mismatched_shapes_are_errors() {
    let a = Tensor::<f64>::zeros([1, 3, 12, 12]);
    let b = Tensor::<f64>::zeros([1, 3, 12, 13]);
    assert!(mse(&a, &b).is_err());
    assert!(ssim(&a, &b).is_err());
}

#[test]
fn ssim_of_identical_images_is_one() {
    let a = uniform(2, [2, 3, 20, 17]);
    assert_eq!(ssim(&a, &a).unwrap(), 1.0);
}

#[test]
fn ssim_of_constant_images_has_closed_form() {
    let c1 = 0.01f64.powi(2);
    for (ma, mb) in [(0.2, 0.7), (0.5, 0.5), (0.0, 1.0)] {
        let a = Tensor::<f64>::full([1, 3, 16, 16], ma);
        let b = Tensor::<f64>::full([1, 3, 16, 16], mb);
        let expected = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        assert!((ssim(&a, &b).unwrap() - expected).abs() < 1e-12);
    }
}

#[test]
fn ssim_of_independent_noise_is_small() {
    let a = uniform(3, [1, 3, 48, 48]);
    let b = uniform(4, [1, 3, 48, 48]);
    let s = ssim(&a, &b).unwrap();
    assert!(s.abs() < 0.2, "{s}");
}

/// Direct 2-D windowed SSIM of one plane, no separability.
fn reference_ssim(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
    let norm: f64 = g.iter().sum::<f64>().powi(2);
    let (c1, c2) = (1e-4, 9e-4);
    let mut total = 0.0;
    for y in 0..=h - 11 {
        for x in 0..=w - 11 {
            let (mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let k = g[i] * g[j] / norm;
                    let (p, q) = (a[(y + i) * w + x + j], b[(y + i) * w + x + j]);
                    ma += k * p;
                    mb += k * q;
                    aa += k * p * p;
                    bb += k * q * q;
                    ab += k * p * q;
                }
            }
            let (va, vb, cov) = (aa - ma * ma, bb - mb * mb, ab - ma * mb);
            total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    total / ((h - 10) * (w - 10)) as f64
}

#[test]
fn ssim_matches_direct_windowed_computation() {
    let a = uniform(5, [2, 3, 14, 19]);
    let b = Tensor::from_fn([2, 3, 14, 19], |[n, c, y, x]| {
        0.7 * a.at(n, c, y, x) + 0.1 * ((x + y) % 3) as f64
    });
    let mut expected = 0.0;
    for n in 0..2 {
        for c in 0..3 {
            expected += reference_ssim(a.plane(n, c), b.plane(n, c), 14, 19);
        }
    }
    expected /= 6.0;
    assert!((ssim(&a, &b).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn scores_are_averaged_per_image() {
    let clean = uniform(6, [1, 3, 12, 12]);
    let near = clean.map(|v| v + 0.01);
    let far = clean.map(|v| v + 0.1);
    let s = [score(&near, &clean).unwrap(), score(&far, &clean).unwrap()];
    let mean = mean_scores(&s).unwrap();
    assert!((mean.psnr - 30.0).abs() < 1e-9);
    assert!((mean.mse - (1e-4 + 1e-2) / 2.0).abs() < 1e-12);
    assert!(mean_scores(&[]).is_none());
    let _: Scores = mean;
}
