//! Channel layer normalization and adaptive average pooling.

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Saved statistics for the layer-norm backward pass.
#[derive(Clone)]
pub struct LayerNormCache<T> {
    /// Normalized input before the affine transform.
    pub xhat: Tensor<T>,
    /// `1 / sqrt(var + eps)` per `(n, y, x)` position.
    pub rstd: Vec<T>,
}

fn check_affine<T: Element>(x: Shape, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<()> {
    let want = Shape::new(1, x.c, 1, 1);
    for p in [gamma, beta] {
        if p.shape() != want {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: p.shape(),
                rhs: want,
            });
        }
    }
    Ok(())
}

/// Normalizes the channel vector at every spatial position, then applies a
/// per-channel affine map.
pub fn layer_norm_channels<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, LayerNormCache<T>)> {
    let s = x.shape();
    check_affine(s, gamma, beta)?;
    let plane = s.plane();
    let inv_c = T::one() / T::lit(s.c as f64);
    let mut xhat = Tensor::zeros(s);
    let mut out = Tensor::zeros(s);
    let mut rstd = vec![T::zero(); s.n * plane];
    let xd = x.data();
    let (gd, bd) = (gamma.data(), beta.data());

    let mut mean = vec![T::zero(); plane];
    let mut var = vec![T::zero(); plane];
    for n in 0..s.n {
        let base = n * s.c * plane;
        mean.fill(T::zero());
        var.fill(T::zero());
        for c in 0..s.c {
            for (m, &v) in mean.iter_mut().zip(&xd[base + c * plane..base + (c + 1) * plane]) {
                *m = *m + v;
            }
        }
        mean.iter_mut().for_each(|m| *m = *m * inv_c);
        for c in 0..s.c {
            let row = &xd[base + c * plane..base + (c + 1) * plane];
            for ((v2, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                let d = v - m;
                *v2 = *v2 + d * d;
            }
        }
        let r = &mut rstd[n * plane..(n + 1) * plane];
        for (r, &v) in r.iter_mut().zip(&var) {
            *r = T::one() / (v * inv_c + eps).sqrt();
        }
        for c in 0..s.c {
            let range = base + c * plane..base + (c + 1) * plane;
            let (g, b) = (gd[c], bd[c]);
            let xh = &mut xhat.data_mut()[range.clone()];
            for (((h, &v), &m), &r) in xh.iter_mut().zip(&xd[range.clone()]).zip(&mean).zip(r.iter()) {
                *h = (v - m) * r;
            }
            let xh = &xhat.data()[range.clone()];
            for (o, &h) in out.data_mut()[range].iter_mut().zip(xh) {
                *o = g * h + b;
            }
        }
    }
    Ok((out, LayerNormCache { xhat, rstd }))
}

/// Returns `(d x, d gamma, d beta)`.
pub fn layer_norm_channels_backward<T: Element>(
    grad: &Tensor<T>,
    gamma: &Tensor<T>,
    cache: &LayerNormCache<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let s = grad.shape();
    let plane = s.plane();
    let cf = T::lit(s.c as f64);
    let mut dx = Tensor::zeros(s);
    let mut dgamma = Tensor::zeros(gamma.shape());
    let mut dbeta = Tensor::zeros(gamma.shape());
    let gd = grad.data();
    let xh = cache.xhat.data();

    let mut sum_d = vec![T::zero(); plane];
    let mut sum_dx = vec![T::zero(); plane];
    for n in 0..s.n {
        let base = n * s.c * plane;
        sum_d.fill(T::zero());
        sum_dx.fill(T::zero());
        for c in 0..s.c {
            let g = gamma.data()[c];
            let range = base + c * plane..base + (c + 1) * plane;
            let mut dg = T::zero();
            let mut db = T::zero();
            for (((sd, sdx), &gv), &h) in sum_d
                .iter_mut()
                .zip(sum_dx.iter_mut())
                .zip(&gd[range.clone()])
                .zip(&xh[range])
            {
                let d = gv * g;
                *sd = *sd + d;
                *sdx = *sdx + d * h;
                dg = dg + gv * h;
                db = db + gv;
            }
            dgamma.data_mut()[c] = dgamma.data()[c] + dg;
            dbeta.data_mut()[c] = dbeta.data()[c] + db;
        }
        let r = &cache.rstd[n * plane..(n + 1) * plane];
        for c in 0..s.c {
            let g = gamma.data()[c];
            let range = base + c * plane..base + (c + 1) * plane;
            let out = &mut dx.data_mut()[range.clone()];
            for (i, o) in out.iter_mut().enumerate() {
                let d = gd[range.start + i] * g;
                *o = r[i] / cf * (cf * d - sum_d[i] - xh[range.start + i] * sum_dx[i]);
            }
        }
    }
    (dx, dgamma, dbeta)
}

fn bin(i: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let start = i * in_len / out_len;
    let end = ((i + 1) * in_len).div_ceil(out_len);
    (start, end)
}

/// Adaptive average pooling to `(out_h, out_w)` with the usual
/// floor/ceil bin boundaries; `(1, 1)` is the global spatial mean.
pub fn adaptive_avg_pool<T: Element>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.h == 0 || s.w == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::invalid(
            "adaptive_avg_pool",
            format!("empty spatial dims in {s}"),
        ));
    }
    let mut out = Tensor::zeros(s.with_hw(out_h, out_w));
    for n in 0..s.n {
        for c in 0..s.c {
            let p = x.plane(n, c);
            for oy in 0..out_h {
                let (y0, y1) = bin(oy, s.h, out_h);
                for ox in 0..out_w {
                    let (x0, x1) = bin(ox, s.w, out_w);
                    let mut acc = T::zero();
                    for y in y0..y1 {
                        for v in &p[y * s.w + x0..y * s.w + x1] {
                            acc = acc + *v;
                        }
                    }
                    let count = T::lit(((y1 - y0) * (x1 - x0)) as f64);
                    out.set(n, c, oy, ox, acc / count);
                }
            }
        }
    }
    Ok(out)
}

pub fn adaptive_avg_pool_backward<T: Element>(grad: &Tensor<T>, input: Shape) -> Tensor<T> {
    let (oh, ow) = (grad.shape().h, grad.shape().w);
    let mut dx = Tensor::zeros(input);
    for n in 0..input.n {
        for c in 0..input.c {
            for oy in 0..oh {
                let (y0, y1) = bin(oy, input.h, oh);
                for ox in 0..ow {
                    let (x0, x1) = bin(ox, input.w, ow);
                    let share = grad.at(n, c, oy, ox) / T::lit(((y1 - y0) * (x1 - x0)) as f64);
                    for y in y0..y1 {
                        for x in x0..x1 {
                            let i = dx.offset(n, c, y, x);
                            dx.data_mut()[i] = dx.data()[i] + share;
                        }
                    }
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn affine(c: usize, g: f64, b: f64) -> (Tensor<f64>, Tensor<f64>) {
        (Tensor::full([1, c, 1, 1], g), Tensor::full([1, c, 1, 1], b))
    }

    #[test]
    fn constant_channels_normalize_to_zero() {
        let x = Tensor::<f64>::from_fn([1, 4, 3, 3], |[_, _, y, x]| (y * 3 + x) as f64);
        let (g, b) = affine(4, 1.0, 0.0);
        let (y, _) = layer_norm_channels(&x, &g, &b, LAYER_NORM_EPS).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn zero_gamma_gives_beta() {
        let x = Tensor::<f64>::from_fn([2, 3, 2, 2], |[n, c, y, x]| (n + 2 * c + y * x) as f64);
        let (g, b) = affine(3, 0.0, 5.0);
        let (y, _) = layer_norm_channels(&x, &g, &b, LAYER_NORM_EPS).unwrap();
        assert!(y.data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn two_channel_vector() {
        let x = Tensor::<f64>::from_vec([1, 2, 1, 1], vec![1.0, 3.0]).unwrap();
        let (g, b) = affine(2, 1.0, 0.0);
        let (y, _) = layer_norm_channels(&x, &g, &b, 0.0).unwrap();
        assert_eq!(y.data(), &[-1.0, 1.0]);
    }

    #[test]
    fn pooling_examples() {
        let x = Tensor::<f64>::full([1, 2, 5, 3], 0.25);
        assert!(adaptive_avg_pool(&x, 1, 1).unwrap().data().iter().all(|&v| v == 0.25));

        let x = Tensor::<f64>::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(adaptive_avg_pool(&x, 1, 1).unwrap().data(), &[2.5]);

        let x = Tensor::<f64>::from_fn([2, 3, 1, 1], |[n, c, _, _]| (n * 3 + c) as f64);
        assert_eq!(adaptive_avg_pool(&x, 1, 1).unwrap(), x);

        assert!(adaptive_avg_pool(&Tensor::<f64>::zeros([1, 1, 0, 3]), 1, 1).is_err());
    }

    #[test]
    fn uneven_bins_overlap() {
        // 5 -> 2 bins: [0, 3) and [2, 5)
        let x = Tensor::<f64>::from_vec([1, 1, 1, 5], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(adaptive_avg_pool(&x, 1, 2).unwrap().data(), &[2.0, 4.0]);
    }
}
