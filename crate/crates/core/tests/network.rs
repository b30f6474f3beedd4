mod common;

use common::hand;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rshaze::autograd::Tape;
use rshaze::{count_params, Net, NetConfig, Shape, Tensor};

fn hazy(seed: u64, shape: [usize; 4]) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(0.0..1.0))
}

fn perturbed(config: &NetConfig, seed: u64) -> (rshaze::autograd::ParamStore<f64>, Net) {
    let (mut store, net) = Net::build::<f64>(config, seed).unwrap();
    store.perturb(&mut ChaCha8Rng::seed_from_u64(seed + 100), 0.1);
    (store, net)
}

#[test]
fn same_seed_builds_identical_weights() {
    let cfg = NetConfig::tiny();
    let (a, _) = Net::build::<f32>(&cfg, 7).unwrap();
    let (b, _) = Net::build::<f32>(&cfg, 7).unwrap();
    let (c, _) = Net::build::<f32>(&cfg, 8).unwrap();
    assert!(a.bit_eq(&b));
    assert!(!a.bit_eq(&c));
}

#[test]
fn forward_is_deterministic() {
    let (store, net) = perturbed(&NetConfig::tiny(), 1);
    let x = hazy(1, [1, 3, 16, 16]);
    assert_eq!(
        net.infer(&store, &x).unwrap().data(),
        net.infer(&store, &x).unwrap().data()
    );
}

#[test]
fn output_matches_input_shape_for_any_size() {
    let (store, net) = perturbed(&NetConfig::tiny(), 2);
    for shape in [[1, 3, 50, 50], [2, 3, 64, 64], [1, 3, 13, 22]] {
        let out = net.infer(&store, &hazy(2, shape)).unwrap();
        assert_eq!(out.shape(), Shape::from(shape));
        assert!(out.data().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn rejects_non_rgb_input() {
    let (store, net) = Net::build::<f64>(&NetConfig::tiny(), 0).unwrap();
    assert!(net.infer(&store, &hazy(0, [1, 4, 16, 16])).is_err());
}

#[test]
fn fresh_network_returns_its_input() {
    for cfg in [NetConfig::tiny(), NetConfig::baseline(8, vec![1, 1, 1])] {
        let (store, net) = Net::build::<f64>(&cfg, 3).unwrap();
        let x = hazy(3, [1, 3, 24, 20]);
        let out = net.infer(&store, &x).unwrap();
        let worst = out
            .data()
            .iter()
            .zip(x.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-6, "{worst}");
    }
}

#[test]
fn gradients_reach_every_parameter_after_perturbation() {
    let (mut store, net) = perturbed(&NetConfig::tiny(), 4);
    let tape = Tape::new();
    let x = tape.constant(hazy(4, [1, 3, 16, 16]));
    let loss = net.forward(&tape, &store, x).unwrap().sum().unwrap();
    tape.backward(loss, &mut store).unwrap();
    for (_, p) in store.iter() {
        assert!(p.grad.data().iter().any(|&g| g != 0.0), "{} has no gradient", p.name);
    }
}

fn params(cfg: &NetConfig) -> usize {
    count_params(&Net::build::<f32>(cfg, 0).unwrap().0)
}

#[test]
fn baseline_param_count_by_hand() {
    let stem = 3 * 8 * 9 + 8;
    let downs = (8 * 16 * 9 + 16) + (16 * 32 * 9 + 32);
    // FNB(c): 3x3 conv on c/4 channels plus a 2x expansion MLP
    let fnb = |c: usize| (c / 4) * (c / 4) * 9 + c / 4 + 4 * c * c + 3 * c;
    let ups = (16 * 32 + 32) + (32 * 64 + 64);
    let fuse = (16 * 8 + 8) + (32 * 16 + 16);
    let head = 8 * 3 * 9 + 3;
    let total = stem + downs + fnb(8) + fnb(16) + fnb(32) + ups + fuse + head;
    assert_eq!(total, 15885);
    assert_eq!(params(&NetConfig::baseline(8, vec![1, 1, 1])), total);
}

#[test]
fn ablation_ladder_deltas_match_hand_counts() {
    let counts: Vec<usize> = hand::ladder(8).iter().map(params).collect();
    let deltas: Vec<usize> = counts.windows(2).map(|w| w[1] - w[0]).collect();
    assert_eq!(deltas, hand::ladder_deltas(8));
    assert_eq!(deltas, [1770, 4154, 532, 73]);
    assert_eq!(counts[4], 22414);
    assert_eq!(counts[4], params(&NetConfig::tiny()));
}

#[test]
fn describe_totals_match_the_store() {
    for cfg in hand::ladder(8).into_iter().chain([NetConfig::default()]) {
        let (store, net) = Net::build::<f32>(&cfg, 0).unwrap();
        let report = net.describe(1, 16, 16).unwrap();
        assert_eq!(report.iter().map(|r| r.params).sum::<usize>(), count_params(&store));
        assert_eq!(
            report.iter().map(|r| r.flops).sum::<u64>(),
            net.count_flops(1, 16, 16).unwrap()
        );
    }
}

#[test]
fn default_stem_has_672_params() {
    let (_, net) = Net::build::<f32>(&NetConfig::default(), 0).unwrap();
    let report = net.describe(1, 16, 16).unwrap();
    assert_eq!(report[0].name, "enc.stem");
    assert_eq!(report[0].params, 3 * 24 * 9 + 24);
    assert_eq!(report[0].params, 672);
    assert_eq!(report[0].flops, 2 * 9 * 3 * 24 * 256);
}

#[test]
fn flops_grow_with_batch() {
    let (_, net) = Net::build::<f32>(&NetConfig::tiny(), 0).unwrap();
    let one = net.count_flops(1, 16, 16).unwrap();
    assert_eq!(net.count_flops(3, 16, 16).unwrap(), 3 * one);
    assert!(net.count_flops(1, 32, 32).unwrap() > 3 * one);
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = NetConfig::tiny();
    cfg.base_channels = 6;
    assert!(Net::build::<f32>(&cfg, 0).is_err());
    let mut cfg = NetConfig::tiny();
    cfg.depths.clear();
    assert!(Net::build::<f32>(&cfg, 0).is_err());
}

#[test]
fn config_text_round_trips() {
    let mut cfg = NetConfig::tiny();
    cfg.pool = (2, 3);
    cfg.src = false;
    let back = NetConfig::from_key_values(&cfg.to_key_values()).unwrap();
    assert_eq!(back, cfg);
}
