//! Grouped/dilated 2-D convolution with zero padding.
//!
//! All three kernels (forward, input gradient, weight gradient) unfold the
//! input of one group into a `taps x positions` column matrix, a chunk of
//! output rows at a time, so the inner loops are long contiguous axpy/dot
//! runs. For each kernel tap the output positions that read a real
//! (non-padding) input pixel form a rectangle; only those are copied.
//! Pointwise convolutions read the input in place.

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub groups: usize,
    pub stride: usize,
    pub padding: usize,
    pub bias: bool,
}

impl ConvSpec {
    /// A stride-1, "same"-padded, ungrouped convolution with bias.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel,
            dilation: 1,
            groups: 1,
            stride: 1,
            padding: kernel.saturating_sub(1) / 2,
            bias: true,
        }
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self::new(in_channels, out_channels, 1)
    }

    /// Sets the dilation and recomputes "same" padding `d * (k - 1) / 2`.
    pub fn dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self.padding = dilation * self.kernel.saturating_sub(1) / 2;
        self
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid("conv2d", msg));
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return bad(format!("kernel {} must be odd and positive", self.kernel));
        }
        if self.dilation == 0 || self.stride == 0 || self.groups == 0 {
            return bad("dilation, stride and groups must be positive".into());
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        if !self.in_channels.is_multiple_of(self.groups) || !self.out_channels.is_multiple_of(self.groups) {
            return bad(format!(
                "channels {}->{} not divisible by groups {}",
                self.in_channels, self.out_channels, self.groups
            ));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel,
            self.kernel,
        )
    }

    pub fn bias_shape(&self) -> Shape {
        Shape::new(1, self.out_channels, 1, 1)
    }

    /// Trainable scalars: weights plus optional bias.
    pub fn param_count(&self) -> usize {
        self.weight_shape().numel() + if self.bias { self.out_channels } else { 0 }
    }

    /// Output size along one spatial axis, or `None` if the dilated kernel
    /// does not fit the padded input.
    pub fn out_len(&self, len: usize) -> Option<usize> {
        let span = self.dilation * (self.kernel - 1) + 1;
        let padded = len + 2 * self.padding;
        (padded >= span).then(|| (padded - span) / self.stride + 1)
    }

    pub fn out_shape(&self, input: Shape) -> Result<Shape> {
        self.validate()?;
        if input.c != self.in_channels {
            return Err(Error::invalid(
                "conv2d",
                format!("input has {} channels, spec expects {}", input.c, self.in_channels),
            ));
        }
        match (self.out_len(input.h), self.out_len(input.w)) {
            (Some(h), Some(w)) => Ok(Shape::new(input.n, self.out_channels, h, w)),
            _ => Err(Error::invalid(
                "conv2d",
                format!(
                    "kernel {} (dilation {}) larger than padded input {}x{}",
                    self.kernel, self.dilation, input.h, input.w
                ),
            )),
        }
    }

    /// Multiply-add FLOPs (counted as 2 per MAC) for one forward pass.
    pub fn flops(&self, out: Shape) -> u64 {
        2 * (self.kernel * self.kernel) as u64
            * (self.in_channels / self.groups) as u64
            * self.out_channels as u64
            * (out.n * out.h * out.w) as u64
    }
}

/// One kernel tap's valid output range along an axis: output indices
/// `lo..hi` read input index `o * stride + offset`.
#[derive(Clone, Copy)]
struct Span {
    lo: usize,
    hi: usize,
    offset: isize,
}

fn tap_span(tap: usize, spec: &ConvSpec, in_len: usize, out_len: usize) -> Span {
    let offset = (tap * spec.dilation) as isize - spec.padding as isize;
    let s = spec.stride as isize;
    let out_len = out_len as isize;
    // smallest o with o*s + offset >= 0
    let lo = if offset >= 0 { 0 } else { ((-offset) + s - 1) / s }.min(out_len);
    // one past the largest o with o*s + offset <= in_len - 1
    let last = in_len as isize - 1 - offset;
    let hi = if last < 0 { 0 } else { (last / s + 1).min(out_len) };
    Span {
        lo: lo as usize,
        hi: hi.max(lo) as usize,
        offset,
    }
}

/// Output rows per unfolded chunk are chosen to keep the column buffer
/// near this many elements.
const CHUNK_ELEMS: usize = 1 << 16;

/// The im2col layout of one group: row `r = (icl * k + ky) * k + kx` holds
/// the input pixel each output position reads through tap `(ky, kx)` of
/// input channel `icl`, or zero where that tap lands in padding.
struct Unfold {
    spec: ConvSpec,
    input: Shape,
    out: Shape,
    spans_y: Vec<Span>,
    spans_x: Vec<Span>,
    rows_per_chunk: usize,
}

impl Unfold {
    fn new(spec: &ConvSpec, input: Shape, out: Shape) -> Self {
        let k = spec.kernel;
        Unfold {
            spec: *spec,
            input,
            out,
            spans_y: (0..k).map(|t| tap_span(t, spec, input.h, out.h)).collect(),
            spans_x: (0..k).map(|t| tap_span(t, spec, input.w, out.w)).collect(),
            rows_per_chunk: (CHUNK_ELEMS / (out.w * k * k).max(1)).clamp(1, out.h.max(1)),
        }
    }

    /// A 1x1, stride-1, unpadded conv reads its input unchanged.
    fn is_identity(&self) -> bool {
        self.spec.kernel == 1 && self.spec.stride == 1 && self.spec.padding == 0
    }

    fn taps(&self) -> usize {
        self.spec.in_channels / self.spec.groups * self.spec.kernel * self.spec.kernel
    }

    /// Whether tap `ky * k + kx` reads any real pixel for output rows
    /// `y0..y1`. Column rows of inactive taps are left untouched.
    fn active(&self, y0: usize, y1: usize) -> Vec<bool> {
        let mut active = Vec::with_capacity(self.spans_y.len() * self.spans_x.len());
        for sy in &self.spans_y {
            let rows = sy.lo.max(y0) < sy.hi.min(y1);
            active.extend(self.spans_x.iter().map(|sx| rows && sx.lo < sx.hi));
        }
        active
    }

    fn chunks(&self) -> impl Iterator<Item = (usize, usize)> {
        let (h, step) = (self.out.h, self.rows_per_chunk);
        (0..h).step_by(step).map(move |y0| (y0, (y0 + step).min(h)))
    }

    /// Fills `col` (`taps x (y1 - y0) * out.w`) from the group's input
    /// planes `x` for output rows `y0..y1`.
    fn gather<T: Element>(&self, x: &[T], y0: usize, y1: usize, col: &mut [T]) {
        let (k, s) = (self.spec.kernel, self.spec.stride);
        let (iw, ow) = (self.input.w, self.out.w);
        let iplane = self.input.plane();
        let len = (y1 - y0) * ow;
        let active = self.active(y0, y1);
        for (icl, plane) in x.chunks_exact(iplane).enumerate() {
            for (ky, sy) in self.spans_y.iter().enumerate() {
                for (kx, sx) in self.spans_x.iter().enumerate() {
                    if !active[ky * k + kx] {
                        continue;
                    }
                    let r = (icl * k + ky) * k + kx;
                    let row = &mut col[r * len..(r + 1) * len];
                    row.fill(T::zero());
                    for oy in sy.lo.max(y0)..sy.hi.min(y1) {
                        let iy = ((oy * s) as isize + sy.offset) as usize;
                        let src = &plane[iy * iw..(iy + 1) * iw];
                        let dst = &mut row[(oy - y0) * ow..(oy - y0 + 1) * ow];
                        if s == 1 {
                            let i0 = (sx.lo as isize + sx.offset) as usize;
                            dst[sx.lo..sx.hi].copy_from_slice(&src[i0..i0 + sx.hi - sx.lo]);
                        } else {
                            for ox in sx.lo..sx.hi {
                                dst[ox] = src[((ox * s) as isize + sx.offset) as usize];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Unfold::gather`]: accumulates `col` into `dx`.
    fn scatter<T: Element>(&self, col: &[T], y0: usize, y1: usize, dx: &mut [T]) {
        let (k, s) = (self.spec.kernel, self.spec.stride);
        let (iw, ow) = (self.input.w, self.out.w);
        let iplane = self.input.plane();
        let len = (y1 - y0) * ow;
        let active = self.active(y0, y1);
        for (icl, plane) in dx.chunks_exact_mut(iplane).enumerate() {
            for (ky, sy) in self.spans_y.iter().enumerate() {
                for (kx, sx) in self.spans_x.iter().enumerate() {
                    if !active[ky * k + kx] {
                        continue;
                    }
                    let r = (icl * k + ky) * k + kx;
                    let row = &col[r * len..(r + 1) * len];
                    for oy in sy.lo.max(y0)..sy.hi.min(y1) {
                        let iy = ((oy * s) as isize + sy.offset) as usize;
                        let dst = &mut plane[iy * iw..(iy + 1) * iw];
                        let src = &row[(oy - y0) * ow..(oy - y0 + 1) * ow];
                        if s == 1 {
                            let i0 = (sx.lo as isize + sx.offset) as usize;
                            axpy(&mut dst[i0..i0 + sx.hi - sx.lo], T::one(), &src[sx.lo..sx.hi]);
                        } else {
                            for ox in sx.lo..sx.hi {
                                let ix = ((ox * s) as isize + sx.offset) as usize;
                                dst[ix] = dst[ix] + src[ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[inline]
fn axpy<T: Element>(y: &mut [T], a: T, x: &[T]) {
    for (y, &x) in y.iter_mut().zip(x) {
        *y = *y + a * x;
    }
}

#[inline]
fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
}

fn check_weight<T: Element>(spec: &ConvSpec, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<()> {
    if w.shape() != spec.weight_shape() {
        return Err(Error::ShapeMismatch {
            op: "conv2d weight",
            lhs: w.shape(),
            rhs: spec.weight_shape(),
        });
    }
    match (spec.bias, b) {
        (true, Some(b)) if b.numel() == spec.out_channels => Ok(()),
        (false, None) => Ok(()),
        (true, Some(b)) => Err(Error::ShapeMismatch {
            op: "conv2d bias",
            lhs: b.shape(),
            rhs: spec.bias_shape(),
        }),
        (true, None) => Err(Error::invalid("conv2d", "spec requires a bias")),
        (false, Some(_)) => Err(Error::invalid("conv2d", "spec has no bias")),
    }
}

/// Slices of image `n`, group `g` of an NCHW buffer with `c` channels.
fn group_range(n: usize, g: usize, c: usize, per_group: usize, plane: usize) -> std::ops::Range<usize> {
    let start = (n * c + g * per_group) * plane;
    start..start + per_group * plane
}

pub fn conv2d<T: Element>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>, spec: &ConvSpec) -> Result<Tensor<T>> {
    let out_shape = spec.out_shape(x.shape())?;
    check_weight(spec, w, b)?;
    let ishape = x.shape();
    let u = Unfold::new(spec, ishape, out_shape);
    let (cin_g, cout_g) = (spec.in_channels / spec.groups, spec.out_channels / spec.groups);
    let taps = u.taps();
    let kk = spec.kernel * spec.kernel;
    let ow = out_shape.w;
    let (iplane, oplane) = (ishape.plane(), out_shape.plane());
    let mut out = Tensor::zeros(out_shape);
    let mut col = Vec::new();
    let wd = w.data();

    for n in 0..ishape.n {
        for g in 0..spec.groups {
            let xg = &x.data()[group_range(n, g, ishape.c, cin_g, iplane)];
            let og = &mut out.data_mut()[group_range(n, g, out_shape.c, cout_g, oplane)];
            for (y0, y1) in u.chunks() {
                let len = (y1 - y0) * ow;
                let active = u.active(y0, y1);
                let (cols, stride, base): (&[T], usize, usize) = if u.is_identity() {
                    (xg, iplane, y0 * ow)
                } else {
                    col.resize(taps * len, T::zero());
                    u.gather(xg, y0, y1, &mut col);
                    (&col, len, 0)
                };
                for (ocl, oplane_g) in og.chunks_exact_mut(oplane).enumerate() {
                    let oc = g * cout_g + ocl;
                    let orow = &mut oplane_g[y0 * ow..y1 * ow];
                    orow.fill(b.map_or(T::zero(), |b| b.data()[oc]));
                    for (r, &wv) in wd[oc * taps..(oc + 1) * taps].iter().enumerate() {
                        if wv != T::zero() && active[r % kk] {
                            axpy(orow, wv, &cols[r * stride + base..][..len]);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

fn check_grad_shape<T: Element>(grad_out: &Tensor<T>, expected: Shape) -> Result<()> {
    if grad_out.shape() != expected {
        return Err(Error::ShapeMismatch {
            op: "conv2d backward",
            lhs: grad_out.shape(),
            rhs: expected,
        });
    }
    Ok(())
}

/// Gradient of [`conv2d`] with respect to its input.
pub fn conv2d_grad_input<T: Element>(
    grad_out: &Tensor<T>,
    w: &Tensor<T>,
    spec: &ConvSpec,
    input_shape: Shape,
) -> Result<Tensor<T>> {
    let out_shape = spec.out_shape(input_shape)?;
    check_grad_shape(grad_out, out_shape)?;
    let u = Unfold::new(spec, input_shape, out_shape);
    let (cin_g, cout_g) = (spec.in_channels / spec.groups, spec.out_channels / spec.groups);
    let taps = u.taps();
    let kk = spec.kernel * spec.kernel;
    let ow = out_shape.w;
    let (iplane, oplane) = (input_shape.plane(), out_shape.plane());
    let mut dx = Tensor::zeros(input_shape);
    let mut col = Vec::new();
    let wd = w.data();

    for n in 0..input_shape.n {
        for g in 0..spec.groups {
            let gg = &grad_out.data()[group_range(n, g, out_shape.c, cout_g, oplane)];
            let dxg = &mut dx.data_mut()[group_range(n, g, input_shape.c, cin_g, iplane)];
            if u.is_identity() {
                for (ocl, grow) in gg.chunks_exact(oplane).enumerate() {
                    let oc = g * cout_g + ocl;
                    for (r, drow) in dxg.chunks_exact_mut(iplane).enumerate() {
                        axpy(drow, wd[oc * taps + r], grow);
                    }
                }
                continue;
            }
            for (y0, y1) in u.chunks() {
                let len = (y1 - y0) * ow;
                let active = u.active(y0, y1);
                col.resize(taps * len, T::zero());
                for (r, crow) in col.chunks_exact_mut(len).enumerate() {
                    if active[r % kk] {
                        crow.fill(T::zero());
                    }
                }
                for (ocl, grow) in gg.chunks_exact(oplane).enumerate() {
                    let oc = g * cout_g + ocl;
                    let grow = &grow[y0 * ow..y1 * ow];
                    for (r, crow) in col.chunks_exact_mut(len).enumerate() {
                        let wv = wd[oc * taps + r];
                        if wv != T::zero() && active[r % kk] {
                            axpy(crow, wv, grow);
                        }
                    }
                }
                u.scatter(&col, y0, y1, dxg);
            }
        }
    }
    Ok(dx)
}

/// Gradients of [`conv2d`] with respect to the weight and (if present) bias.
pub fn conv2d_grad_params<T: Element>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
    let ishape = x.shape();
    let out_shape = spec.out_shape(ishape)?;
    check_grad_shape(grad_out, out_shape)?;
    let u = Unfold::new(spec, ishape, out_shape);
    let (cin_g, cout_g) = (spec.in_channels / spec.groups, spec.out_channels / spec.groups);
    let taps = u.taps();
    let kk = spec.kernel * spec.kernel;
    let ow = out_shape.w;
    let (iplane, oplane) = (ishape.plane(), out_shape.plane());
    let mut dw = Tensor::zeros(spec.weight_shape());
    let mut col = Vec::new();

    for n in 0..ishape.n {
        for g in 0..spec.groups {
            let xg = &x.data()[group_range(n, g, ishape.c, cin_g, iplane)];
            let gg = &grad_out.data()[group_range(n, g, out_shape.c, cout_g, oplane)];
            for (y0, y1) in u.chunks() {
                let len = (y1 - y0) * ow;
                let active = u.active(y0, y1);
                let (cols, stride, base): (&[T], usize, usize) = if u.is_identity() {
                    (xg, iplane, y0 * ow)
                } else {
                    col.resize(taps * len, T::zero());
                    u.gather(xg, y0, y1, &mut col);
                    (&col, len, 0)
                };
                for (ocl, grow) in gg.chunks_exact(oplane).enumerate() {
                    let oc = g * cout_g + ocl;
                    let grow = &grow[y0 * ow..y1 * ow];
                    let dwo = &mut dw.data_mut()[oc * taps..(oc + 1) * taps];
                    for (r, d) in dwo.iter_mut().enumerate().filter(|(r, _)| active[r % kk]) {
                        *d = *d + dot(grow, &cols[r * stride + base..][..len]);
                    }
                }
            }
        }
    }

    let db = spec.bias.then(|| {
        let mut db = Tensor::zeros(spec.bias_shape());
        for n in 0..ishape.n {
            for oc in 0..spec.out_channels {
                let s = grad_out.plane(n, oc).iter().fold(T::zero(), |a, &v| a + v);
                db.data_mut()[oc] = db.data()[oc] + s;
            }
        }
        db
    });
    Ok((dw, db))
}
