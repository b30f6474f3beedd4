//! Parameterized layers and the network's building blocks.

mod block;
mod cmim;
mod itfm;

pub use block::{Block, BlockKind, Fnb, Mlp, Mpeb};
pub use cmim::{Cmim, CmimTrace};
pub use itfm::{Itfm, ItfmTrace};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::ops::ConvSpec;
use crate::tensor::{Element, Shape, Tensor};

/// One row of a network description: a layer's trainable scalars and its
/// forward FLOPs at the described input size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerReport {
    pub name: String,
    pub kind: &'static str,
    pub params: usize,
    pub flops: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform in `+-1/sqrt(fan_in)` for weights and biases.
    Kaiming,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Gelu,
    Relu,
}

impl Activation {
    pub fn apply<'t, T: Element>(self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        match self {
            Activation::Gelu => x.gelu(),
            Activation::Relu => x.relu(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Gelu => "gelu",
            Activation::Relu => "relu",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gelu" => Ok(Activation::Gelu),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

/// Registers parameters under a dotted name prefix with deterministic
/// initialization.
pub struct Builder<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a, T: Element> Builder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut ChaCha8Rng) -> Self {
        Builder {
            store,
            rng,
            prefix: String::new(),
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    /// Runs `f` with `name` appended to the prefix.
    pub fn scope<R>(&mut self, name: &str, f: impl FnOnce(&mut Builder<'_, T>) -> R) -> R {
        let prefix = self.full_name(name);
        let mut inner = Builder {
            store: &mut *self.store,
            rng: &mut *self.rng,
            prefix,
        };
        f(&mut inner)
    }

    fn uniform(&mut self, shape: Shape, bound: f64) -> Tensor<T> {
        let rng = &mut *self.rng;
        Tensor::from_fn(shape, |_| T::lit(rng.gen_range(-bound..=bound)))
    }

    pub fn tensor(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        let full = self.full_name(name);
        self.store.add(full, value)
    }

    pub fn conv(&mut self, name: &str, spec: ConvSpec, init: Init) -> Result<Conv> {
        spec.validate()?;
        let full = self.full_name(name);
        let fan_in = (spec.in_channels / spec.groups) * spec.kernel * spec.kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let (w, b) = match init {
            Init::Kaiming => (
                self.uniform(spec.weight_shape(), bound),
                spec.bias.then(|| self.uniform(spec.bias_shape(), bound)),
            ),
            Init::Zero => (
                Tensor::zeros(spec.weight_shape()),
                spec.bias.then(|| Tensor::zeros(spec.bias_shape())),
            ),
        };
        let weight = self.store.add(format!("{full}.weight"), w)?;
        let bias = b.map(|b| self.store.add(format!("{full}.bias"), b)).transpose()?;
        Ok(Conv {
            name: full,
            weight,
            bias,
            spec,
        })
    }

    pub fn layer_norm(&mut self, name: &str, channels: usize) -> Result<LayerNorm> {
        let full = self.full_name(name);
        let gamma = self
            .store
            .add(format!("{full}.gamma"), Tensor::ones([1, channels, 1, 1]))?;
        let beta = self
            .store
            .add(format!("{full}.beta"), Tensor::zeros([1, channels, 1, 1]))?;
        Ok(LayerNorm {
            name: full,
            gamma,
            beta,
            channels,
        })
    }

    pub fn scalar(&mut self, name: &str, value: f64) -> Result<ParamId> {
        self.tensor(name, Tensor::scalar(T::lit(value)))
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub name: String,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: ConvSpec,
}

impl Conv {
    pub fn forward<'t, T: Element>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|b| tape.param(store, b));
        x.conv2d(w, b, self.spec)
    }

    /// Appends this layer's row and returns its output shape.
    pub fn describe(&self, input: Shape, report: &mut Vec<LayerReport>) -> Result<Shape> {
        let out = self.spec.out_shape(input)?;
        report.push(LayerReport {
            name: self.name.clone(),
            kind: "conv",
            params: self.spec.param_count(),
            flops: self.spec.flops(out),
        });
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub name: String,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub channels: usize,
}

impl LayerNorm {
    pub fn forward<'t, T: Element>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        x.layer_norm(tape.param(store, self.gamma), tape.param(store, self.beta))
    }

    pub fn describe(&self, report: &mut Vec<LayerReport>) {
        report.push(LayerReport {
            name: self.name.clone(),
            kind: "layer_norm",
            params: 2 * self.channels,
            flops: 0,
        });
    }
}

pub(crate) fn matmul_report(name: String, m: usize, k: usize, n: usize, batch: usize) -> LayerReport {
    LayerReport {
        name,
        kind: "matmul",
        params: 0,
        flops: 2 * (m * k * n * batch) as u64,
    }
}

pub(crate) fn scalar_report(name: String) -> LayerReport {
    LayerReport {
        name,
        kind: "scalar",
        params: 1,
        flops: 0,
    }
}

/// Soft residual connection: the 4-channel head output supplies a gate `K`
/// and bias `B`, giving `K * hazy - B + hazy`.
pub fn src_apply<'t, T: Element>(head_out: Var<'t, T>, hazy: Var<'t, T>) -> Result<Var<'t, T>> {
    head_out.soft_residual(hazy)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    #[test]
    fn builder_names_and_init() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut b = Builder::new(&mut store, &mut rng);
        let conv = b
            .scope("enc", |b| b.conv("stem", ConvSpec::new(3, 8, 3), Init::Kaiming))
            .unwrap();
        let zero = b.conv("head", ConvSpec::new(8, 4, 3), Init::Zero).unwrap();
        b.layer_norm("ln", 8).unwrap();
        assert_eq!(conv.name, "enc.stem");
        assert_eq!(
            store.names().collect::<Vec<_>>(),
            [
                "enc.stem.weight",
                "enc.stem.bias",
                "head.weight",
                "head.bias",
                "ln.gamma",
                "ln.beta"
            ]
        );
        let bound = 1.0 / 27f64.sqrt();
        assert!(store.value(conv.weight).data().iter().all(|v| v.abs() <= bound));
        assert!(store.value(zero.weight).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stem_param_count() {
        assert_eq!(ConvSpec::new(3, 24, 3).param_count(), 672);
    }

    #[test]
    fn activation_parse() {
        assert_eq!("gelu".parse::<Activation>().unwrap(), Activation::Gelu);
        assert!("tanh".parse::<Activation>().is_err());
    }
}
