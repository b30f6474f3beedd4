//! The finite-difference gradient suite: every differentiable op, every
//! block, and a tiny full network.
//!
//! Each case draws random inputs and parameters from its seed and reduces
//! the output to a scalar with a fixed random weighting, so no coordinate
//! sits on a symmetric zero-gradient plateau.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{grad_check, GradCheckReport, ParamStore, Tape, Var};
use crate::error::Result;
use crate::network::{Net, NetConfig};
use crate::nn::{Activation, Builder, Cmim, Fnb, Itfm, Mpeb};
use crate::ops::ConvSpec;
use crate::tensor::{Shape, Tensor};

pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

/// Smallest `|pred - target|` allowed at an L1 check point; the loss has a
/// kink at zero.
pub const L1_MARGIN: f64 = 1e-3;

type CaseFn = fn(u64) -> Result<GradCheckReport>;

#[derive(Clone)]
pub struct Case {
    pub name: String,
    run: CaseFn,
}

impl Case {
    fn new(name: impl Into<String>, run: CaseFn) -> Self {
        Case { name: name.into(), run }
    }

    pub fn run(&self, seed: u64) -> Result<GradCheckReport> {
        (self.run)(seed)
    }
}

#[derive(Debug)]
pub struct Outcome {
    pub case: String,
    pub seed: u64,
    pub report: Result<GradCheckReport>,
}

impl Outcome {
    pub fn passed(&self, tolerance: f64) -> bool {
        matches!(&self.report, Ok(r) if r.max_rel_error < tolerance)
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: impl Into<Shape>, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Values with magnitude in `[0.1, 1)` and random sign.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: impl Into<Shape>) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v = rng.gen_range(0.1..1.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

/// Grad-checks `sum(f(..) * W)` for a random constant `W`.
fn check_weighted<F>(store: &ParamStore<f64>, rng: &mut ChaCha8Rng, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &ParamStore<f64>) -> Result<Var<'t, f64>>,
{
    let shape = {
        let tape = Tape::new();
        f(&tape, store)?.shape()
    };
    let weights = uniform(rng, shape, -1.0, 1.0);
    grad_check(store, |tape, s| f(tape, s)?.mul(tape.constant(weights.clone()))?.sum())
}

/// Inputs named `x0, x1, ..` drawn uniformly from `[-1, 1)`.
fn inputs(rng: &mut ChaCha8Rng, shapes: &[[usize; 4]]) -> ParamStore<f64> {
    let mut store = ParamStore::new();
    for (i, &s) in shapes.iter().enumerate() {
        store
            .add(format!("x{i}"), uniform(rng, s, -1.0, 1.0))
            .expect("input names are distinct");
    }
    store
}

fn op_case<F>(seed: u64, shapes: &[[usize; 4]], f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let store = inputs(&mut rng, shapes);
    run_op(&store, &mut rng, f)
}

fn run_op<F>(store: &ParamStore<f64>, rng: &mut ChaCha8Rng, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    check_weighted(store, rng, |tape, s| {
        let xs: Vec<Var<'_, f64>> = s.iter().map(|(id, _)| tape.param(s, id)).collect();
        f(tape, &xs)
    })
}

fn conv_case(seed: u64, x: [usize; 4], spec: ConvSpec) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = inputs(&mut rng, &[x, spec.weight_shape().dims()]);
    if spec.bias {
        store.add("bias", uniform(&mut rng, spec.bias_shape(), -1.0, 1.0))?;
    }
    run_op(&store, &mut rng, move |_, v| v[0].conv2d(v[1], v.get(2).copied(), spec))
}

/// Builds a block's parameters, perturbs them off their identity-at-init
/// values, and appends the block inputs.
fn block_store<B>(
    seed: u64,
    inputs: &[[usize; 4]],
    build: impl FnOnce(&mut Builder<'_, f64>) -> Result<B>,
) -> Result<(ParamStore<f64>, B, ChaCha8Rng)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let block = build(&mut Builder::new(&mut store, &mut rng))?;
    store.perturb(&mut rng, 0.5);
    for (i, &s) in inputs.iter().enumerate() {
        store.add(format!("input{i}"), uniform(&mut rng, s, -1.0, 1.0))?;
    }
    Ok((store, block, rng))
}

fn itfm_case(seed: u64) -> Result<GradCheckReport> {
    let s = [1, 8, 4, 4];
    let (store, m, mut rng) = block_store(seed, &[s, s], |b| Itfm::new(b, "itfm", 8, (1, 1)))?;
    let (a, b) = (store.id("input0")?, store.id("input1")?);
    check_weighted(&store, &mut rng, |tape, st| {
        m.forward(tape, st, tape.param(st, a), tape.param(st, b))
    })
}

fn cmim_case(seed: u64) -> Result<GradCheckReport> {
    let (store, m, mut rng) = block_store(seed, &[[1, 4, 4, 4], [1, 8, 2, 2]], |b| Cmim::new(b, "cmim", 4, 8, 4))?;
    let (hi, lo) = (store.id("input0")?, store.id("input1")?);
    check_weighted(&store, &mut rng, |tape, st| {
        let (h, l) = m.forward(tape, st, tape.param(st, hi), tape.param(st, lo))?;
        // Both outputs flattened into one map so a single weighting covers them.
        tape.concat(&[h.reshape([1, 64, 1, 1])?, l.reshape([1, 32, 1, 1])?])
    })
}

fn mpeb_case(seed: u64) -> Result<GradCheckReport> {
    let s = [1, 8, 7, 7];
    let (store, m, mut rng) = block_store(seed, &[s], |b| Mpeb::new(b, "mpeb", 8, Activation::Gelu))?;
    let x = store.id("input0")?;
    check_weighted(&store, &mut rng, |tape, st| m.forward(tape, st, tape.param(st, x)))
}

fn fnb_case(seed: u64) -> Result<GradCheckReport> {
    let s = [1, 8, 5, 5];
    let (store, m, mut rng) = block_store(seed, &[s], |b| Fnb::new(b, "fnb", 8, Activation::Gelu))?;
    let x = store.id("input0")?;
    check_weighted(&store, &mut rng, |tape, st| m.forward(tape, st, tape.param(st, x)))
}

fn l1_case(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let pred = uniform(&mut rng, [2, 3, 4, 4], 0.0, 1.0);
    let offset = away_from_zero(&mut rng, pred.shape());
    let target = pred.zip_map(&offset, "l1_case", |p, o| p + o)?;
    let id = store.add("pred", pred)?;
    grad_check(&store, |tape, s| {
        tape.param(s, id).l1_loss(tape.constant(target.clone()))
    })
}

/// L1 loss of a tiny network against a target kept at least
/// [`L1_MARGIN`] away from the prediction.
pub fn network_check(cfg: &NetConfig, seed: u64, input: [usize; 4]) -> Result<GradCheckReport> {
    let (mut store, net) = Net::build::<f64>(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    store.perturb(&mut rng, 0.2);
    let hazy = uniform(&mut rng, input, 0.0, 1.0);
    let pred = net.infer(&store, &hazy)?;
    let offset = away_from_zero(&mut rng, pred.shape()).map(|v| v * 0.2);
    let target = pred.zip_map(&offset, "network_check", |p, o| p + o)?;
    debug_assert!(offset.data().iter().all(|v| v.abs() >= L1_MARGIN));
    grad_check(&store, |tape, s| {
        let out = net.forward(tape, s, tape.constant(hazy.clone()))?;
        out.l1_loss(tape.constant(target.clone()))
    })
}

fn network_case(seed: u64) -> Result<GradCheckReport> {
    network_check(&NetConfig::tiny(), seed, [1, 3, 16, 16])
}

fn baseline_network_case(seed: u64) -> Result<GradCheckReport> {
    network_check(&NetConfig::baseline(8, vec![1, 1]), seed, [1, 3, 6, 6])
}

fn mpeb_branch(i: usize) -> ConvSpec {
    Mpeb::branch_spec(i, 2)
}

/// All suite cases in a fixed order.
pub fn suite() -> Vec<Case> {
    const S: [usize; 4] = [2, 3, 4, 5];
    vec![
        Case::new("add", |seed| op_case(seed, &[S, S], |_, v| v[0].add(v[1]))),
        Case::new("sub", |seed| op_case(seed, &[S, S], |_, v| v[0].sub(v[1]))),
        Case::new("mul", |seed| op_case(seed, &[S, S], |_, v| v[0].mul(v[1]))),
        Case::new("div", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = inputs(&mut rng, &[S]);
            store.add("x1", away_from_zero(&mut rng, S))?;
            run_op(&store, &mut rng, |_, v| v[0].div(v[1]))
        }),
        Case::new("add_scalar", |seed| op_case(seed, &[S], |_, v| v[0].add_scalar(0.3))),
        Case::new("mul_scalar", |seed| op_case(seed, &[S], |_, v| v[0].mul_scalar(-1.7))),
        Case::new("gelu", |seed| op_case(seed, &[S], |_, v| v[0].gelu())),
        Case::new("relu", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            store.add("x0", away_from_zero(&mut rng, S))?;
            run_op(&store, &mut rng, |_, v| v[0].relu())
        }),
        Case::new("conv2d k1", |seed| conv_case(seed, [2, 2, 6, 6], mpeb_branch(0))),
        Case::new("conv2d k3 d3 depthwise", |seed| {
            conv_case(seed, [2, 2, 6, 6], mpeb_branch(1))
        }),
        Case::new("conv2d k5 d3 depthwise", |seed| {
            conv_case(seed, [1, 2, 7, 7], mpeb_branch(2))
        }),
        Case::new("conv2d k7 d3 depthwise", |seed| {
            conv_case(seed, [1, 2, 9, 9], mpeb_branch(3))
        }),
        Case::new("conv2d k3 grouped", |seed| {
            conv_case(seed, [1, 4, 5, 5], ConvSpec::new(4, 6, 3).groups(2))
        }),
        Case::new("conv2d k3 stride2", |seed| {
            conv_case(seed, [1, 3, 6, 7], ConvSpec::new(3, 4, 3).stride(2).padding(1))
        }),
        Case::new("conv2d k3 no bias", |seed| {
            conv_case(seed, [1, 3, 5, 5], ConvSpec::new(3, 2, 3).bias(false))
        }),
        Case::new("matmul", |seed| {
            op_case(seed, &[[2, 1, 3, 4], [2, 1, 4, 5]], |_, v| v[0].matmul(v[1]))
        }),
        Case::new("transpose", |seed| {
            op_case(seed, &[[2, 1, 3, 4]], |_, v| v[0].transpose())
        }),
        Case::new("softmax", |seed| {
            op_case(seed, &[[2, 1, 3, 4]], |_, v| v[0].softmax(0.7))
        }),
        Case::new("softmax_scaled", |seed| {
            op_case(seed, &[[2, 1, 3, 4], [1, 1, 1, 1]], |_, v| v[0].softmax_scaled(v[1]))
        }),
        Case::new("layer_norm", |seed| {
            op_case(seed, &[[2, 4, 3, 3], [1, 4, 1, 1], [1, 4, 1, 1]], |_, v| {
                v[0].layer_norm(v[1], v[2])
            })
        }),
        Case::new("avg_pool 1x1", |seed| {
            op_case(seed, &[[2, 3, 4, 5]], |_, v| v[0].avg_pool(1, 1))
        }),
        Case::new("avg_pool 2x3", |seed| {
            op_case(seed, &[[1, 2, 5, 7]], |_, v| v[0].avg_pool(2, 3))
        }),
        Case::new("pixel_unshuffle", |seed| {
            op_case(seed, &[[1, 2, 4, 6]], |_, v| v[0].pixel_unshuffle(2))
        }),
        Case::new("pixel_shuffle", |seed| {
            op_case(seed, &[[1, 8, 2, 3]], |_, v| v[0].pixel_shuffle(2))
        }),
        Case::new("concat", |seed| {
            op_case(seed, &[[1, 2, 3, 3], [1, 3, 3, 3]], |tape, v| {
                tape.concat(&[v[0], v[1], v[0]])
            })
        }),
        Case::new("split_channels", |seed| {
            op_case(seed, &[[1, 5, 3, 3]], |_, v| {
                let parts = v[0].split_channels(&[2, 3])?;
                parts[1].slice_channels(0, 2)?.mul(parts[0])
            })
        }),
        Case::new("reshape", |seed| {
            op_case(seed, &[[1, 2, 3, 4]], |_, v| v[0].reshape([1, 1, 4, 6])?.transpose())
        }),
        Case::new("reflect_pad", |seed| {
            op_case(seed, &[[1, 2, 3, 4]], |_, v| v[0].reflect_pad(2, 3))
        }),
        Case::new("crop", |seed| op_case(seed, &[[1, 2, 5, 6]], |_, v| v[0].crop(3, 4))),
        Case::new("sum", |seed| op_case(seed, &[S], |_, v| v[0].sum())),
        Case::new("mean", |seed| op_case(seed, &[S], |_, v| v[0].mean())),
        Case::new("l1_loss", l1_case),
        Case::new("src", |seed| {
            op_case(seed, &[[2, 4, 3, 3], [2, 3, 3, 3]], |_, v| v[0].soft_residual(v[1]))
        }),
        Case::new("ssim", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            store.add("x0", uniform(&mut rng, [2, 2, 12, 13], 0.0, 1.0))?;
            store.add("x1", uniform(&mut rng, [2, 2, 12, 13], 0.0, 1.0))?;
            run_op(&store, &mut rng, |_, v| crate::train::ssim(v[0], v[1]))
        }),
        Case::new("itfm", itfm_case),
        Case::new("cmim", cmim_case),
        Case::new("mpeb", mpeb_case),
        Case::new("fnb", fnb_case),
        Case::new("network baseline", baseline_network_case),
        Case::new("network", network_case),
    ]
}

/// Runs every case on every seed, in order, calling `progress` after each.
pub fn run_suite(cases: &[Case], seeds: &[u64], mut progress: impl FnMut(&Outcome)) -> Vec<Outcome> {
    let mut out = Vec::with_capacity(cases.len() * seeds.len());
    for case in cases {
        for &seed in seeds {
            let outcome = Outcome {
                case: case.name.clone(),
                seed,
                report: case.run(seed),
            };
            progress(&outcome);
            out.push(outcome);
        }
    }
    out
}
