use crate::autograd::Var;
use crate::error::Result;
use crate::metrics::{gaussian_window, SSIM_C1, SSIM_C2, SSIM_WINDOW};
use crate::ops::ConvSpec;
use crate::tensor::{ensure_same_shape, Element, Tensor};

/// Windowed SSIM on the tape, averaged over images, channels and windows.
/// Agrees with [`crate::metrics::ssim`].
pub fn ssim<'t, T: Element>(pred: Var<'t, T>, target: Var<'t, T>) -> Result<Var<'t, T>> {
    ensure_same_shape("ssim", pred.shape(), target.shape())?;
    let tape = pred.tape();
    let c = pred.shape().c;
    let g = gaussian_window();
    let kernel = Tensor::from_fn([c, 1, SSIM_WINDOW, SSIM_WINDOW], |[_, _, y, x]| T::lit(g[y] * g[x]));
    let spec = ConvSpec::new(c, c, SSIM_WINDOW).groups(c).padding(0).bias(false);
    let blur = |v: Var<'t, T>| v.conv2d(tape.constant(kernel.clone()), None, spec);

    let (mx, my) = (blur(pred)?, blur(target)?);
    let (mxx, myy, mxy) = (mx.mul(mx)?, my.mul(my)?, mx.mul(my)?);
    let vx = blur(pred.mul(pred)?)?.sub(mxx)?;
    let vy = blur(target.mul(target)?)?.sub(myy)?;
    let cov = blur(pred.mul(target)?)?.sub(mxy)?;
    let num = mxy
        .mul_scalar(T::lit(2.0))?
        .add_scalar(T::lit(SSIM_C1))?
        .mul(cov.mul_scalar(T::lit(2.0))?.add_scalar(T::lit(SSIM_C2))?)?;
    let den = mxx
        .add(myy)?
        .add_scalar(T::lit(SSIM_C1))?
        .mul(vx.add(vy)?.add_scalar(T::lit(SSIM_C2))?)?;
    num.div(den)?.mean()
}

/// `l1 + weight * (1 - ssim)`; plain L1 when `weight` is zero.
pub fn restoration_loss<'t, T: Element>(pred: Var<'t, T>, target: Var<'t, T>, ssim_weight: f64) -> Result<Var<'t, T>> {
    let l1 = pred.l1_loss(target)?;
    if ssim_weight == 0.0 {
        return Ok(l1);
    }
    let dissim = ssim(pred, target)?
        .mul_scalar(T::lit(-ssim_weight))?
        .add_scalar(T::lit(ssim_weight))?;
    l1.add(dissim)
}
