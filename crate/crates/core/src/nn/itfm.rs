//! Intra-level transposed fusion.
//!
//! Fuses a skip feature with the upsampled decoder feature at the same
//! resolution. Queries and keys come from the pooled, normalized pair, so
//! the channel attention map costs `O(c^2 * pool)` regardless of image size;
//! the attention then mixes the channels of a projection of both inputs.

use crate::autograd::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{matmul_report, scalar_report, Builder, Conv, Init, LayerNorm, LayerReport};
use crate::ops::ConvSpec;
use crate::tensor::{Element, Shape};

#[derive(Debug, Clone)]
pub struct Itfm {
    pub name: String,
    pub channels: usize,
    pub pool: (usize, usize),
    pub ln_skip: LayerNorm,
    pub ln_dec: LayerNorm,
    /// 2c -> 2c, split evenly into queries and keys.
    pub qk_proj: Conv,
    /// 2c -> c on the raw concatenated inputs.
    pub v_proj: Conv,
    pub out_proj: Conv,
    pub alpha: ParamId,
}

/// Intermediate values of one ITFM pass.
pub struct ItfmTrace<'t, T> {
    /// `(n, 1, c, c)` row-stochastic channel attention.
    pub attention: Var<'t, T>,
    /// Attention applied to the values, before the output projection.
    pub mixed: Var<'t, T>,
    pub out: Var<'t, T>,
}

impl Itfm {
    pub fn new<T: Element>(b: &mut Builder<'_, T>, name: &str, channels: usize, pool: (usize, usize)) -> Result<Self> {
        let c = channels;
        b.scope(name, |b| {
            Ok(Itfm {
                name: b.prefix().to_string(),
                channels,
                pool,
                ln_skip: b.layer_norm("ln_skip", c)?,
                ln_dec: b.layer_norm("ln_dec", c)?,
                qk_proj: b.conv("qk_proj", ConvSpec::pointwise(2 * c, 2 * c), Init::Kaiming)?,
                v_proj: b.conv("v_proj", ConvSpec::pointwise(2 * c, c), Init::Kaiming)?,
                out_proj: b.conv("out_proj", ConvSpec::pointwise(c, c), Init::Zero)?,
                alpha: b.scalar("alpha", 1.0 / (c as f64).sqrt())?,
            })
        })
    }

    pub fn forward<'t, T: Element>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        skip: Var<'t, T>,
        dec: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        Ok(self.forward_traced(tape, store, skip, dec)?.out)
    }

    pub fn forward_traced<'t, T: Element>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        skip: Var<'t, T>,
        dec: Var<'t, T>,
    ) -> Result<ItfmTrace<'t, T>> {
        let s = skip.shape();
        if s != dec.shape() || s.c != self.channels {
            return Err(Error::ShapeMismatch {
                op: "itfm",
                lhs: s,
                rhs: dec.shape(),
            });
        }
        let c = self.channels;
        let (ph, pw) = self.pool;
        let z = tape.concat(&[
            self.ln_skip.forward(tape, store, skip)?,
            self.ln_dec.forward(tape, store, dec)?,
        ])?;
        let qk = self.qk_proj.forward(tape, store, z.avg_pool(ph, pw)?)?;
        let qk = qk.split_channels(&[c, c])?;
        let q = qk[0].reshape([s.n, 1, c, ph * pw])?;
        let k = qk[1].reshape([s.n, 1, c, ph * pw])?;
        let logits = q.matmul(k.transpose()?)?;
        let attention = logits.softmax_scaled(tape.param(store, self.alpha))?;

        let v = self.v_proj.forward(tape, store, tape.concat(&[skip, dec])?)?;
        let v = v.reshape([s.n, 1, c, s.h * s.w])?;
        let mixed = attention.matmul(v)?.reshape(s)?;
        let out = self.out_proj.forward(tape, store, mixed)?;
        Ok(ItfmTrace { attention, mixed, out })
    }

    pub fn describe(&self, input: Shape, report: &mut Vec<LayerReport>) -> Result<Shape> {
        let c = self.channels;
        let (ph, pw) = self.pool;
        self.ln_skip.describe(report);
        self.ln_dec.describe(report);
        self.qk_proj.describe(input.with_c(2 * c).with_hw(ph, pw), report)?;
        report.push(matmul_report(format!("{}.qk", self.name), c, ph * pw, c, input.n));
        report.push(scalar_report(format!("{}.alpha", self.name)));
        self.v_proj.describe(input.with_c(2 * c), report)?;
        report.push(matmul_report(
            format!("{}.av", self.name),
            c,
            c,
            input.h * input.w,
            input.n,
        ));
        self.out_proj.describe(input.with_c(c), report)
    }
}
