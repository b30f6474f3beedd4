//! Cross-level interaction between a feature map and the one at half its
//! resolution.
//!
//! The finer input is pixel-unshuffled to the coarser grid so both produce
//! `d`-channel queries/keys over the same positions. A single `d x d`
//! attention map `A` then enhances the finer values and its transpose the
//! coarser values, each through a residual projection.

use crate::autograd::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{matmul_report, scalar_report, Builder, Conv, Init, LayerNorm, LayerReport};
use crate::ops::ConvSpec;
use crate::tensor::{Element, Shape};

#[derive(Debug, Clone)]
pub struct Cmim {
    pub name: String,
    pub hi_channels: usize,
    pub lo_channels: usize,
    pub dim: usize,
    pub ln_hi: LayerNorm,
    pub ln_lo: LayerNorm,
    pub q_proj: Conv,
    pub k_proj: Conv,
    pub v_hi_proj: Conv,
    pub out_hi_proj: Conv,
    pub v_lo_proj: Conv,
    pub out_lo_proj: Conv,
    pub alpha: ParamId,
}

pub struct CmimTrace<'t, T> {
    /// `(n, 1, d, d)` attention shared by both levels.
    pub attention: Var<'t, T>,
    pub hi: Var<'t, T>,
    pub lo: Var<'t, T>,
}

impl Cmim {
    /// `dim` is the shared attention width.
    pub fn new<T: Element>(
        b: &mut Builder<'_, T>,
        name: &str,
        hi_channels: usize,
        lo_channels: usize,
        dim: usize,
    ) -> Result<Self> {
        let (c, cl, d) = (hi_channels, lo_channels, dim);
        b.scope(name, |b| {
            Ok(Cmim {
                name: b.prefix().to_string(),
                hi_channels,
                lo_channels,
                dim,
                ln_hi: b.layer_norm("ln_hi", c)?,
                ln_lo: b.layer_norm("ln_lo", cl)?,
                q_proj: b.conv("q_proj", ConvSpec::pointwise(4 * c, d), Init::Kaiming)?,
                k_proj: b.conv("k_proj", ConvSpec::pointwise(cl, d), Init::Kaiming)?,
                v_hi_proj: b.conv("v_hi_proj", ConvSpec::pointwise(c, d), Init::Kaiming)?,
                out_hi_proj: b.conv("out_hi_proj", ConvSpec::pointwise(d, c), Init::Zero)?,
                v_lo_proj: b.conv("v_lo_proj", ConvSpec::pointwise(cl, d), Init::Kaiming)?,
                out_lo_proj: b.conv("out_lo_proj", ConvSpec::pointwise(d, cl), Init::Zero)?,
                alpha: b.scalar("alpha", 1.0 / (d as f64).sqrt())?,
            })
        })
    }

    fn check(&self, hi: Shape, lo: Shape) -> Result<()> {
        let mismatch = || Error::ShapeMismatch {
            op: "cmim",
            lhs: hi,
            rhs: lo,
        };
        if !hi.h.is_multiple_of(2) || !hi.w.is_multiple_of(2) {
            return Err(Error::invalid("cmim", format!("odd spatial dims in {hi}")));
        }
        if hi.n != lo.n || hi.h != 2 * lo.h || hi.w != 2 * lo.w {
            return Err(mismatch());
        }
        if hi.c != self.hi_channels || lo.c != self.lo_channels {
            return Err(mismatch());
        }
        Ok(())
    }

    /// The shared attention map for a pair of inputs.
    pub fn attention<'t, T: Element>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        hi: Var<'t, T>,
        lo: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let (hs, ls) = (hi.shape(), lo.shape());
        self.check(hs, ls)?;
        let d = self.dim;
        let tokens = ls.h * ls.w;
        let q = self.ln_hi.forward(tape, store, hi)?.pixel_unshuffle(2)?;
        let q = self.q_proj.forward(tape, store, q)?.reshape([hs.n, 1, d, tokens])?;
        let k = self.ln_lo.forward(tape, store, lo)?;
        let k = self.k_proj.forward(tape, store, k)?.reshape([ls.n, 1, d, tokens])?;
        q.matmul(k.transpose()?)?.softmax_scaled(tape.param(store, self.alpha))
    }

    /// Enhances the finer input with `A` and the coarser with `A^T`.
    pub fn enhance_hi<'t, T: Element>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        attention: Var<'t, T>,
        hi: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let s = hi.shape();
        let v = self
            .v_hi_proj
            .forward(tape, store, hi)?
            .reshape([s.n, 1, self.dim, s.h * s.w])?;
        let mixed = attention.matmul(v)?.reshape(s.with_c(self.dim))?;
        hi.add(self.out_hi_proj.forward(tape, store, mixed)?)
    }

    pub fn enhance_lo<'t, T: Element>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        attention: Var<'t, T>,
        lo: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let s = lo.shape();
        let v = self
            .v_lo_proj
            .forward(tape, store, lo)?
            .reshape([s.n, 1, self.dim, s.h * s.w])?;
        let mixed = attention.transpose()?.matmul(v)?.reshape(s.with_c(self.dim))?;
        lo.add(self.out_lo_proj.forward(tape, store, mixed)?)
    }

    pub fn forward_traced<'t, T: Element>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        hi: Var<'t, T>,
        lo: Var<'t, T>,
    ) -> Result<CmimTrace<'t, T>> {
        let attention = self.attention(tape, store, hi, lo)?;
        Ok(CmimTrace {
            attention,
            hi: self.enhance_hi(tape, store, attention, hi)?,
            lo: self.enhance_lo(tape, store, attention, lo)?,
        })
    }

    pub fn forward<'t, T: Element>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        hi: Var<'t, T>,
        lo: Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let t = self.forward_traced(tape, store, hi, lo)?;
        Ok((t.hi, t.lo))
    }

    pub fn describe(&self, hi: Shape, lo: Shape, report: &mut Vec<LayerReport>) -> Result<()> {
        self.check(hi, lo)?;
        let d = self.dim;
        let tokens = lo.h * lo.w;
        self.ln_hi.describe(report);
        self.ln_lo.describe(report);
        self.q_proj.describe(lo.with_c(4 * self.hi_channels), report)?;
        self.k_proj.describe(lo, report)?;
        report.push(matmul_report(format!("{}.qk", self.name), d, tokens, d, hi.n));
        report.push(scalar_report(format!("{}.alpha", self.name)));
        self.v_hi_proj.describe(hi, report)?;
        report.push(matmul_report(format!("{}.av_hi", self.name), d, d, hi.h * hi.w, hi.n));
        self.out_hi_proj.describe(hi.with_c(d), report)?;
        self.v_lo_proj.describe(lo, report)?;
        report.push(matmul_report(format!("{}.av_lo", self.name), d, d, tokens, lo.n));
        self.out_lo_proj.describe(lo.with_c(d), report)?;
        Ok(())
    }
}
