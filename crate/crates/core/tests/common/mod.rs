//! Brute-force reference kernels shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rshaze::ops::ConvSpec;
use rshaze::{Shape, Tensor};

pub fn uniform(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Visits every `(n, o, oy, ox, i, iy, ix, ky, kx)` product term of a
/// convolution whose input tap lands inside the image.
fn for_each_term(spec: &ConvSpec, input: Shape, mut f: impl FnMut([usize; 4], [usize; 4], [usize; 4])) -> Shape {
    let k = spec.kernel;
    let out = out_shape(spec, input);
    let (oh, ow) = (out.h, out.w);
    let cin = spec.in_channels / spec.groups;
    let cout = spec.out_channels / spec.groups;
    for n in 0..input.n {
        for o in 0..spec.out_channels {
            let g = o / cout;
            for oy in 0..oh {
                for ox in 0..ow {
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * spec.stride + ky * spec.dilation) as isize - spec.padding as isize;
                                let ix = (ox * spec.stride + kx * spec.dilation) as isize - spec.padding as isize;
                                if iy < 0 || ix < 0 || iy >= input.h as isize || ix >= input.w as isize {
                                    continue;
                                }
                                f(
                                    [n, o, oy, ox],
                                    [n, g * cin + ci, iy as usize, ix as usize],
                                    [o, ci, ky, kx],
                                );
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn out_shape(spec: &ConvSpec, input: Shape) -> Shape {
    let span = spec.dilation * (spec.kernel - 1) + 1;
    let len = |l: usize| (l + 2 * spec.padding - span) / spec.stride + 1;
    Shape::new(input.n, spec.out_channels, len(input.h), len(input.w))
}

pub fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, spec: &ConvSpec) -> Tensor<f64> {
    let mut out = Tensor::zeros(out_shape(spec, x.shape()));
    for_each_term(spec, x.shape(), |[n, o, oy, ox], [_, c, iy, ix], [_, ci, ky, kx]| {
        let v = out.at(n, o, oy, ox) + x.at(n, c, iy, ix) * w.at(o, ci, ky, kx);
        out.set(n, o, oy, ox, v);
    });
    if let Some(b) = b {
        let s = out.shape();
        out = Tensor::from_fn(s, |[n, o, y, x]| out.at(n, o, y, x) + b.data()[o]);
    }
    out
}

pub fn naive_grad_input(g: &Tensor<f64>, w: &Tensor<f64>, spec: &ConvSpec, input: Shape) -> Tensor<f64> {
    let mut dx = Tensor::zeros(input);
    for_each_term(spec, input, |[n, o, oy, ox], [_, c, iy, ix], [_, ci, ky, kx]| {
        let v = dx.at(n, c, iy, ix) + g.at(n, o, oy, ox) * w.at(o, ci, ky, kx);
        dx.set(n, c, iy, ix, v);
    });
    dx
}

pub fn naive_grad_params(g: &Tensor<f64>, x: &Tensor<f64>, spec: &ConvSpec) -> (Tensor<f64>, Tensor<f64>) {
    let ws = Shape::new(
        spec.out_channels,
        spec.in_channels / spec.groups,
        spec.kernel,
        spec.kernel,
    );
    let mut dw = Tensor::zeros(ws);
    for_each_term(spec, x.shape(), |[n, o, oy, ox], [_, c, iy, ix], [_, ci, ky, kx]| {
        let v = dw.at(o, ci, ky, kx) + g.at(n, o, oy, ox) * x.at(n, c, iy, ix);
        dw.set(o, ci, ky, kx, v);
    });
    let s = g.shape();
    let db = Tensor::from_fn([1, s.c, 1, 1], |[_, o, _, _]| {
        let mut t = 0.0;
        for n in 0..s.n {
            t += g.plane(n, o).iter().sum::<f64>();
        }
        t
    });
    (dw, db)
}

/// `(input shape, spec)` pairs covering kernels, dilations, groups, strides
/// and paddings, all no larger than `4 x 8 x 9 x 9`.
pub fn conv_cases() -> Vec<(Shape, ConvSpec)> {
    let mut cases = Vec::new();
    for (n, c, h, w) in [(1, 4, 9, 9), (2, 8, 7, 9), (4, 8, 9, 9), (3, 4, 5, 8)] {
        for k in [1, 3, 5] {
            for dilation in [1, 2, 3] {
                for groups in [1, 2, c] {
                    for stride in [1, 2] {
                        let out_c = if groups == c { c } else { 2 * groups };
                        let base = ConvSpec::new(c, out_c, k)
                            .dilation(dilation)
                            .groups(groups)
                            .stride(stride);
                        for padding in [0, dilation * (k - 1) / 2, k] {
                            let spec = base.padding(padding);
                            if dilation * (k - 1) + 1 > h.min(w) + 2 * padding {
                                continue;
                            }
                            cases.push((Shape::new(n, c, h, w), spec));
                        }
                    }
                }
            }
        }
    }
    cases
}

pub struct OracleReport {
    pub cases: usize,
    pub worst: f64,
}

/// Max abs difference of forward, input and parameter gradients against
/// the brute-force kernels over every case.
pub fn check_conv_against_oracle(seed: u64) -> OracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases = conv_cases();
    let mut worst = 0.0f64;
    for (i, &(input, spec)) in cases.iter().enumerate() {
        let spec = spec.bias(i % 2 == 0);
        let x = uniform(&mut rng, input);
        let w = uniform(&mut rng, spec.weight_shape());
        let b = spec.bias.then(|| uniform(&mut rng, spec.bias_shape()));
        let y = rshaze::ops::conv2d(&x, &w, b.as_ref(), &spec).unwrap();
        let expected = naive_conv(&x, &w, b.as_ref(), &spec);
        worst = worst.max(y.max_abs_diff(&expected).unwrap());

        let g = uniform(&mut rng, y.shape());
        let dx = rshaze::ops::conv::conv2d_grad_input(&g, &w, &spec, input).unwrap();
        worst = worst.max(dx.max_abs_diff(&naive_grad_input(&g, &w, &spec, input)).unwrap());

        let (dw, db) = rshaze::ops::conv::conv2d_grad_params(&g, &x, &spec).unwrap();
        let (ew, eb) = naive_grad_params(&g, &x, &spec);
        worst = worst.max(dw.max_abs_diff(&ew).unwrap());
        match db {
            Some(db) => worst = worst.max(db.reshape(eb.shape()).unwrap().max_abs_diff(&eb).unwrap()),
            None => assert!(!spec.bias),
        }
    }
    OracleReport {
        cases: cases.len(),
        worst,
    }
}

pub mod overfit {
    use std::time::{Duration, Instant};

    use rshaze::data::{synthetic_pairs, SyntheticSpec};
    use rshaze::train::{evaluate_psnr, fit, NoCallbacks, TrainConfig};
    use rshaze::{Net, NetConfig, TrainLog};

    pub const PAIRS: usize = 4;
    pub const SIZE: usize = 32;
    pub const STEPS: usize = 500;
    pub const LR: f64 = 2e-3;

    /// Full-batch training of the tiny network on four synthetic pairs;
    /// one step per epoch, no augmentation.
    pub fn config(seed: u64, epochs: usize, lr_max: f64) -> TrainConfig {
        TrainConfig {
            epochs,
            patch: SIZE,
            batch: PAIRS,
            lr_max,
            flip: false,
            rotate: false,
            seed,
            ..TrainConfig::default()
        }
    }

    pub struct Run {
        pub log: TrainLog,
        pub psnr: f64,
        pub elapsed: Duration,
    }

    pub fn run(seed: u64, epochs: usize, lr_max: f64) -> Run {
        let start = Instant::now();
        let spec = SyntheticSpec {
            count: PAIRS,
            height: SIZE,
            width: SIZE,
            preset: None,
            seed,
        };
        let pairs = synthetic_pairs(&spec).unwrap();
        let (mut store, net) = Net::build::<f32>(&NetConfig::tiny(), seed).unwrap();
        let log = fit(
            &net,
            &mut store,
            &pairs,
            &[],
            &config(seed, epochs, lr_max),
            &mut NoCallbacks,
        )
        .unwrap();
        let psnr = evaluate_psnr(&net, &store, &pairs).unwrap();
        Run {
            log,
            psnr,
            elapsed: start.elapsed(),
        }
    }

    pub fn strictly_decreasing(log: &TrainLog, steps: usize) -> bool {
        log.records[..steps].windows(2).all(|w| w[1].loss < w[0].loss)
    }
}

/// Closed-form parameter counts of the ablation steps.
pub mod hand {
    use rshaze::nn::BlockKind;
    use rshaze::{FusionKind, NetConfig};

    /// ITFM minus the concat-conv fusion it replaces.
    pub fn itfm_gain(c: usize) -> usize {
        let itfm = 4 * c + (4 * c * c + 2 * c) + (2 * c * c + c) + (c * c + c) + 1;
        itfm - (2 * c * c + c)
    }

    pub fn cmim(hi: usize, lo: usize, d: usize) -> usize {
        let norms = 2 * hi + 2 * lo;
        let q = 4 * hi * d + d;
        let k = lo * d + d;
        let hi_path = (hi * d + d) + (d * hi + hi);
        let lo_path = (lo * d + d) + (d * lo + lo);
        norms + q + k + hi_path + lo_path + 1
    }

    /// MPEB minus FNB at `c` channels.
    pub fn mpeb_gain(c: usize) -> usize {
        let q = c / 4;
        let mpeb_branches = (q * q + q) + [3, 5, 7].iter().map(|k| q * k * k + q).sum::<usize>();
        let fnb_partial = q * q * 9 + q;
        mpeb_branches - fnb_partial
    }

    /// A four-channel head instead of three.
    pub fn src_gain(c: usize) -> usize {
        9 * c + 1
    }

    /// Baseline, +ITFM, +CMIM, +MPEB, +SRC with three levels of one block.
    pub fn ladder(c: usize) -> Vec<NetConfig> {
        let mut cfg = NetConfig::baseline(c, vec![1, 1, 1]);
        let mut steps = vec![cfg.clone()];
        cfg.fusion = FusionKind::Itfm;
        steps.push(cfg.clone());
        cfg.cmim = true;
        steps.push(cfg.clone());
        cfg.block = BlockKind::Mpeb;
        steps.push(cfg.clone());
        cfg.src = true;
        steps.push(cfg);
        steps
    }

    pub fn ladder_deltas(c: usize) -> [usize; 4] {
        [
            itfm_gain(c) + itfm_gain(2 * c),
            cmim(c, 2 * c, c) + cmim(2 * c, 4 * c, 2 * c),
            mpeb_gain(c) + mpeb_gain(2 * c) + mpeb_gain(4 * c),
            src_gain(c),
        ]
    }
}
