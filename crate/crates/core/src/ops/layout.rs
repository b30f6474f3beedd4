//! Pure data-movement ops: pixel (un)shuffle, channel concat/slice,
//! reflect padding and cropping.

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

/// Space-to-channel: `(n, c, h, w) -> (n, c*r*r, h/r, w/r)`, with
/// `out[n, c*r*r + i*r + j, y, x] = in[n, c, y*r + i, x*r + j]`.
pub fn pixel_unshuffle<T: Element>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if r == 0 || !s.h.is_multiple_of(r) || !s.w.is_multiple_of(r) {
        return Err(Error::invalid(
            "pixel_unshuffle",
            format!("spatial dims {}x{} not divisible by {r}", s.h, s.w),
        ));
    }
    let (oh, ow) = (s.h / r, s.w / r);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c * r * r, oh, ow));
    for n in 0..s.n {
        for c in 0..s.c {
            for i in 0..r {
                for j in 0..r {
                    let oc = c * r * r + i * r + j;
                    for y in 0..oh {
                        for xx in 0..ow {
                            out.set(n, oc, y, xx, x.at(n, c, y * r + i, xx * r + j));
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Channel-to-space, the exact inverse of [`pixel_unshuffle`].
pub fn pixel_shuffle<T: Element>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if r == 0 || !s.c.is_multiple_of(r * r) {
        return Err(Error::invalid(
            "pixel_shuffle",
            format!("{} channels not divisible by {}", s.c, r * r),
        ));
    }
    let oc = s.c / (r * r);
    let mut out = Tensor::zeros(Shape::new(s.n, oc, s.h * r, s.w * r));
    for n in 0..s.n {
        for c in 0..oc {
            for i in 0..r {
                for j in 0..r {
                    let ic = c * r * r + i * r + j;
                    for y in 0..s.h {
                        for xx in 0..s.w {
                            out.set(n, c, y * r + i, xx * r + j, x.at(n, ic, y, xx));
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn concat_channels<T: Element>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::invalid("concat", "nothing to concatenate"))?
        .shape();
    for t in xs {
        let s = t.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::ShapeMismatch {
                op: "concat",
                lhs: first,
                rhs: s,
            });
        }
    }
    let c: usize = xs.iter().map(|t| t.shape().c).sum();
    let mut data = Vec::with_capacity(first.n * c * first.plane());
    for n in 0..first.n {
        for t in xs {
            let per = t.shape().c * first.plane();
            data.extend_from_slice(&t.data()[n * per..(n + 1) * per]);
        }
    }
    Tensor::from_vec(first.with_c(c), data)
}

/// Channels `[start, start + len)`.
pub fn slice_channels<T: Element>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if start + len > s.c || len == 0 {
        return Err(Error::invalid(
            "slice_channels",
            format!("range {start}..{} outside {} channels", start + len, s.c),
        ));
    }
    let plane = s.plane();
    let mut data = Vec::with_capacity(s.n * len * plane);
    for n in 0..s.n {
        let base = (n * s.c + start) * plane;
        data.extend_from_slice(&x.data()[base..base + len * plane]);
    }
    Tensor::from_vec(s.with_c(len), data)
}

pub fn split_channels<T: Element>(x: &Tensor<T>, sizes: &[usize]) -> Result<Vec<Tensor<T>>> {
    if sizes.iter().sum::<usize>() != x.shape().c {
        return Err(Error::invalid(
            "split_channels",
            format!("sizes {sizes:?} do not sum to {} channels", x.shape().c),
        ));
    }
    let mut start = 0;
    sizes
        .iter()
        .map(|&len| {
            let part = slice_channels(x, start, len);
            start += len;
            part
        })
        .collect()
}

/// Writes `part` into channels `[start, ..)` of a zero tensor shaped `full`.
pub(crate) fn embed_channels<T: Element>(part: &Tensor<T>, full: Shape, start: usize) -> Tensor<T> {
    let mut out = Tensor::zeros(full);
    let plane = full.plane();
    let len = part.shape().c;
    for n in 0..full.n {
        let dst = (n * full.c + start) * plane;
        let src = n * len * plane;
        out.data_mut()[dst..dst + len * plane].copy_from_slice(&part.data()[src..src + len * plane]);
    }
    out
}

/// Mirror index without repeating the edge sample (`-1 -> 1`, `len -> len-2`).
pub fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Reflect-pads the bottom and right edges.
pub fn reflect_pad<T: Element>(x: &Tensor<T>, pad_h: usize, pad_w: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.h == 0 || s.w == 0 {
        return Err(Error::invalid("reflect_pad", "empty spatial dims"));
    }
    let out = Tensor::from_fn(s.with_hw(s.h + pad_h, s.w + pad_w), |[n, c, y, xx]| {
        x.at(n, c, reflect_index(y as isize, s.h), reflect_index(xx as isize, s.w))
    });
    Ok(out)
}

pub(crate) fn reflect_pad_backward<T: Element>(grad: &Tensor<T>, input: Shape) -> Tensor<T> {
    let g = grad.shape();
    let mut dx = Tensor::zeros(input);
    for n in 0..g.n {
        for c in 0..g.c {
            for y in 0..g.h {
                let sy = reflect_index(y as isize, input.h);
                for xx in 0..g.w {
                    let sx = reflect_index(xx as isize, input.w);
                    let i = dx.offset(n, c, sy, sx);
                    dx.data_mut()[i] = dx.data()[i] + grad.at(n, c, y, xx);
                }
            }
        }
    }
    dx
}

/// Keeps the top-left `h x w` window.
pub fn crop<T: Element>(x: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if h > s.h || w > s.w {
        return Err(Error::invalid("crop", format!("{h}x{w} exceeds {}x{}", s.h, s.w)));
    }
    Ok(Tensor::from_fn(s.with_hw(h, w), |[n, c, y, xx]| x.at(n, c, y, xx)))
}

pub(crate) fn crop_backward<T: Element>(grad: &Tensor<T>, input: Shape) -> Tensor<T> {
    let g = grad.shape();
    let mut dx = Tensor::zeros(input);
    for n in 0..g.n {
        for c in 0..g.c {
            for y in 0..g.h {
                for xx in 0..g.w {
                    dx.set(n, c, y, xx, grad.at(n, c, y, xx));
                }
            }
        }
    }
    dx
}

/// Crops the window at `(top, left)`; used for training patches.
pub fn crop_at<T: Element>(x: &Tensor<T>, top: usize, left: usize, h: usize, w: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if top + h > s.h || left + w > s.w {
        return Err(Error::invalid(
            "crop",
            format!("window {h}x{w} at ({top}, {left}) exceeds {}x{}", s.h, s.w),
        ));
    }
    Ok(Tensor::from_fn(s.with_hw(h, w), |[n, c, y, xx]| {
        x.at(n, c, top + y, left + xx)
    }))
}
