//! Full-reference image quality: MSE, PSNR and SSIM with a peak value of 1.
//!
//! Every metric covers the whole image with no border crop. Batched inputs
//! are scored as one pool of pixels for MSE; SSIM averages the per-channel
//! scores of every image in the batch.

use crate::error::{Error, Result};
use crate::tensor::{ensure_same_shape, Element, Tensor};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

pub fn mse<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    ensure_same_shape("mse", a.shape(), b.shape())?;
    if a.numel() == 0 {
        return Err(Error::invalid("mse", "empty image"));
    }
    let total: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.to_f64_lossy() - y.to_f64_lossy();
            d * d
        })
        .sum();
    Ok(total / a.numel() as f64)
}

/// `10 log10(1 / mse)`; infinite for a zero error.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

pub fn psnr<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    mse(a, b).map(psnr_from_mse)
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let centre = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - centre;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = w.iter().sum();
    w.map(|v| v / total)
}

/// Valid-mode separable filtering of one `h x w` plane.
fn blur(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| taps[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over every valid 11x11 Gaussian window of one channel.
fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, taps: &[f64]) -> f64 {
    let sq = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = blur(a, h, w, taps);
    let mu_b = blur(b, h, w, taps);
    let aa = blur(&sq(a, a), h, w, taps);
    let bb = blur(&sq(b, b), h, w, taps);
    let ab = blur(&sq(a, b), h, w, taps);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2))
        })
        .sum();
    total / n as f64
}

/// Mean over channels (and images) of windowed SSIM.
pub fn ssim<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    ensure_same_shape("ssim", a.shape(), b.shape())?;
    let s = a.shape();
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        return Err(Error::invalid(
            "ssim",
            format!(
                "image {}x{} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window",
                s.h, s.w
            ),
        ));
    }
    let taps = gaussian_window();
    let mut total = 0.0;
    for n in 0..s.n {
        for c in 0..s.c {
            let pa: Vec<f64> = a.plane(n, c).iter().map(|v| v.to_f64_lossy()).collect();
            let pb: Vec<f64> = b.plane(n, c).iter().map(|v| v.to_f64_lossy()).collect();
            total += ssim_plane(&pa, &pb, s.h, s.w, &taps);
        }
    }
    Ok(total / (s.n * s.c) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub psnr: f64,
    pub ssim: f64,
    pub mse: f64,
}

pub fn score<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Scores> {
    let mse = mse(a, b)?;
    Ok(Scores {
        psnr: psnr_from_mse(mse),
        ssim: ssim(a, b)?,
        mse,
    })
}

/// Per-image means; PSNR is averaged per image, not derived from the mean
/// MSE.
pub fn mean_scores(scores: &[Scores]) -> Option<Scores> {
    if scores.is_empty() {
        return None;
    }
    let n = scores.len() as f64;
    Some(Scores {
        psnr: scores.iter().map(|s| s.psnr).sum::<f64>() / n,
        ssim: scores.iter().map(|s| s.ssim).sum::<f64>() / n,
        mse: scores.iter().map(|s| s.mse).sum::<f64>() / n,
    })
}
