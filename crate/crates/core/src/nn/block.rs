//! Skip-path learning blocks: the multi-view progressive extraction block
//! and the partial-convolution baseline it replaces.

use crate::autograd::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Activation, Builder, Conv, Init, LayerReport};
use crate::ops::ConvSpec;
use crate::tensor::{Element, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BlockKind {
    #[default]
    Mpeb,
    Fnb,
}

impl BlockKind {
    pub fn name(self) -> &'static str {
        match self {
            BlockKind::Mpeb => "mpeb",
            BlockKind::Fnb => "fnb",
        }
    }
}

impl std::str::FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mpeb" => Ok(BlockKind::Mpeb),
            "fnb" => Ok(BlockKind::Fnb),
            other => Err(Error::Config(format!("unknown block kind `{other}`"))),
        }
    }
}

fn quarter(op: &'static str, channels: usize) -> Result<usize> {
    if channels == 0 || !channels.is_multiple_of(4) {
        return Err(Error::invalid(op, format!("{channels} channels not divisible by 4")));
    }
    Ok(channels / 4)
}

/// Pointwise expand x2, activation, pointwise project back. The projection
/// starts at zero so the enclosing residual block is an identity.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub expand: Conv,
    pub project: Conv,
    pub activation: Activation,
}

impl Mlp {
    pub fn new<T: Element>(b: &mut Builder<'_, T>, channels: usize, activation: Activation) -> Result<Self> {
        let c = channels;
        Ok(Mlp {
            expand: b.conv("mlp.expand", ConvSpec::pointwise(c, 2 * c), Init::Kaiming)?,
            project: b.conv("mlp.project", ConvSpec::pointwise(2 * c, c), Init::Zero)?,
            activation,
        })
    }

    pub fn forward<'t, T: Element>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let h = self.activation.apply(self.expand.forward(tape, store, x)?)?;
        self.project.forward(tape, store, h)
    }

    fn describe(&self, input: Shape, report: &mut Vec<LayerReport>) -> Result<Shape> {
        let mid = self.expand.describe(input, report)?;
        self.project.describe(mid, report)
    }
}

/// Four channel quarters through convolutions of kernel 1, 3, 5, 7; the
/// first is a plain pointwise conv, the rest are depthwise with dilation 3.
#[derive(Debug, Clone)]
pub struct Mpeb {
    pub channels: usize,
    pub branches: [Conv; 4],
    pub mlp: Mlp,
}

impl Mpeb {
    /// `(kernel, dilation, groups)` of branch `i` in `0..4` for a quarter
    /// width `q`.
    pub fn branch_schedule(i: usize, q: usize) -> (usize, usize, usize) {
        if i == 0 {
            (1, 1, 1)
        } else {
            (2 * i + 1, 3, q)
        }
    }

    pub fn branch_spec(i: usize, q: usize) -> ConvSpec {
        let (k, d, g) = Self::branch_schedule(i, q);
        ConvSpec::new(q, q, k).dilation(d).groups(g)
    }

    pub fn new<T: Element>(
        b: &mut Builder<'_, T>,
        name: &str,
        channels: usize,
        activation: Activation,
    ) -> Result<Self> {
        let q = quarter("mpeb", channels)?;
        b.scope(name, |b| {
            let mut conv = |i: usize| b.conv(&format!("branch{}", i + 1), Self::branch_spec(i, q), Init::Kaiming);
            let branches = [conv(0)?, conv(1)?, conv(2)?, conv(3)?];
            Ok(Mpeb {
                channels,
                branches,
                mlp: Mlp::new(b, channels, activation)?,
            })
        })
    }

    pub fn forward<'t, T: Element>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let q = self.channels / 4;
        let parts = x.split_channels(&[q; 4])?;
        let views = parts
            .into_iter()
            .zip(&self.branches)
            .map(|(p, conv)| conv.forward(tape, store, p))
            .collect::<Result<Vec<_>>>()?;
        x.add(self.mlp.forward(tape, store, tape.concat(&views)?)?)
    }

    pub fn describe(&self, input: Shape, report: &mut Vec<LayerReport>) -> Result<Shape> {
        let part = input.with_c(self.channels / 4);
        for conv in &self.branches {
            conv.describe(part, report)?;
        }
        self.mlp.describe(input, report)
    }
}

/// Partial convolution: a 3x3 conv on the first quarter of channels, the
/// other three quarters passed through, then the same residual MLP.
#[derive(Debug, Clone)]
pub struct Fnb {
    pub channels: usize,
    pub partial: Conv,
    pub mlp: Mlp,
}

impl Fnb {
    pub fn new<T: Element>(
        b: &mut Builder<'_, T>,
        name: &str,
        channels: usize,
        activation: Activation,
    ) -> Result<Self> {
        let q = quarter("fnb", channels)?;
        b.scope(name, |b| {
            Ok(Fnb {
                channels,
                partial: b.conv("partial", ConvSpec::new(q, q, 3), Init::Kaiming)?,
                mlp: Mlp::new(b, channels, activation)?,
            })
        })
    }

    /// The partial-convolution stage alone.
    pub fn mix<'t, T: Element>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let q = self.channels / 4;
        let parts = x.split_channels(&[q, self.channels - q])?;
        tape.concat(&[self.partial.forward(tape, store, parts[0])?, parts[1]])
    }

    pub fn forward<'t, T: Element>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let mixed = self.mix(tape, store, x)?;
        x.add(self.mlp.forward(tape, store, mixed)?)
    }

    pub fn describe(&self, input: Shape, report: &mut Vec<LayerReport>) -> Result<Shape> {
        self.partial.describe(input.with_c(self.channels / 4), report)?;
        self.mlp.describe(input, report)
    }
}

#[derive(Debug, Clone)]
pub enum Block {
    Mpeb(Mpeb),
    Fnb(Fnb),
}

impl Block {
    pub fn new<T: Element>(
        b: &mut Builder<'_, T>,
        kind: BlockKind,
        name: &str,
        channels: usize,
        activation: Activation,
    ) -> Result<Self> {
        Ok(match kind {
            BlockKind::Mpeb => Block::Mpeb(Mpeb::new(b, name, channels, activation)?),
            BlockKind::Fnb => Block::Fnb(Fnb::new(b, name, channels, activation)?),
        })
    }

    pub fn forward<'t, T: Element>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        match self {
            Block::Mpeb(m) => m.forward(tape, store, x),
            Block::Fnb(f) => f.forward(tape, store, x),
        }
    }

    pub fn describe(&self, input: Shape, report: &mut Vec<LayerReport>) -> Result<Shape> {
        match self {
            Block::Mpeb(m) => m.describe(input, report),
            Block::Fnb(f) => f.describe(input, report),
        }
    }
}
