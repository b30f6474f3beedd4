//! Batched matrix products and row softmax over the trailing two dims.
//!
//! A tensor of shape `(n, c, m, k)` is read as `n * c` independent `m x k`
//! matrices; a plain matrix is `(1, 1, m, k)`.

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

fn batch_of(s: Shape) -> usize {
    s.n * s.c
}

pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.n != sb.n || sa.c != sb.c || sa.w != sb.h {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            lhs: sa,
            rhs: sb,
        });
    }
    let (m, k, p) = (sa.h, sa.w, sb.w);
    let out_shape = Shape::new(sa.n, sa.c, m, p);
    let mut out = Tensor::zeros(out_shape);
    let (ad, bd) = (a.data(), b.data());
    let od = out.data_mut();
    for bi in 0..batch_of(sa) {
        let am = &ad[bi * m * k..(bi + 1) * m * k];
        let bm = &bd[bi * k * p..(bi + 1) * k * p];
        let om = &mut od[bi * m * p..(bi + 1) * m * p];
        for i in 0..m {
            let orow = &mut om[i * p..(i + 1) * p];
            for l in 0..k {
                let av = am[i * k + l];
                if av == T::zero() {
                    continue;
                }
                for (o, &bv) in orow.iter_mut().zip(&bm[l * p..(l + 1) * p]) {
                    *o = *o + av * bv;
                }
            }
        }
    }
    Ok(out)
}

/// Swaps the trailing two dims of every matrix in the batch.
pub fn transpose<T: Element>(a: &Tensor<T>) -> Tensor<T> {
    let s = a.shape();
    let (m, k) = (s.h, s.w);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, k, m));
    let ad = a.data();
    let od = out.data_mut();
    for bi in 0..batch_of(s) {
        let base = bi * m * k;
        for i in 0..m {
            for j in 0..k {
                od[base + j * m + i] = ad[base + i * k + j];
            }
        }
    }
    out
}

/// Row-wise `softmax(scale * x)` over the last dim, max-subtracted.
pub fn softmax_lastdim<T: Element>(x: &Tensor<T>, scale: T) -> Result<Tensor<T>> {
    let w = x.shape().w;
    if w == 0 {
        return Err(Error::invalid("softmax", "empty rows"));
    }
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(w) {
        let max = row.iter().map(|&v| v * scale).fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v * scale - max).exp();
            total = total + *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    Ok(out)
}

/// Backward of [`softmax_lastdim`] given its output `y`; returns
/// `(d input, d scale)`.
pub fn softmax_lastdim_backward<T: Element>(
    x: &Tensor<T>,
    y: &Tensor<T>,
    grad: &Tensor<T>,
    scale: T,
) -> (Tensor<T>, T) {
    let w = y.shape().w;
    let mut dx = Tensor::zeros(y.shape());
    let mut dscale = T::zero();
    let rows = y
        .data()
        .chunks(w)
        .zip(grad.data().chunks(w))
        .zip(x.data().chunks(w))
        .zip(dx.data_mut().chunks_mut(w));
    for (((yr, gr), xr), dr) in rows {
        let dot = yr.iter().zip(gr).fold(T::zero(), |a, (&y, &g)| a + y * g);
        for (((d, &y), &g), &xv) in dr.iter_mut().zip(yr).zip(gr).zip(xr) {
            let dz = y * (g - dot);
            *d = scale * dz;
            dscale = dscale + xv * dz;
        }
    }
    (dx, dscale)
}
