//! Config file loading and flag overrides.

use std::fmt::Display;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use clap::Args;
use rshaze::config::KeyValues;
use rshaze::{NetConfig, TrainConfig};

pub const SEED_ENV: &str = "RSHAZE_SEED";

#[derive(Args, Default)]
pub struct NetFlags {
    /// Channels at the finest level (multiple of 4).
    #[arg(long)]
    channels: Option<usize>,
    /// Blocks per level, finest first, e.g. 2,2,4.
    #[arg(long)]
    depths: Option<String>,
    /// Learning block: mpeb or fnb.
    #[arg(long)]
    block: Option<String>,
    /// Decoder fusion: itfm or conv.
    #[arg(long)]
    fusion: Option<String>,
    #[arg(long)]
    cmim: Option<bool>,
    #[arg(long)]
    src: Option<bool>,
    /// Pooled query/key size of the fusion, HxW.
    #[arg(long)]
    pool: Option<String>,
    /// gelu or relu.
    #[arg(long)]
    activation: Option<String>,
}

#[derive(Args, Default)]
pub struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patch: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Peak learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_min: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Global gradient norm limit; 0 disables.
    #[arg(long)]
    grad_clip: Option<f64>,
    #[arg(long)]
    ssim_weight: Option<f64>,
    #[arg(long)]
    flip: Option<bool>,
    #[arg(long)]
    rotate: Option<bool>,
    /// Seed for weights, data and training; falls back to RSHAZE_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Save a checkpoint every N epochs; 0 saves only the final one.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    val_every: Option<usize>,
}

fn put(kv: &mut KeyValues, key: &str, value: Option<impl Display>) {
    if let Some(v) = value {
        kv.set(key, v);
    }
}

impl NetFlags {
    fn overrides(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        put(&mut kv, "channels", self.channels);
        put(&mut kv, "depths", self.depths.as_ref());
        put(&mut kv, "block", self.block.as_ref());
        put(&mut kv, "fusion", self.fusion.as_ref());
        put(&mut kv, "cmim", self.cmim);
        put(&mut kv, "src", self.src);
        put(&mut kv, "pool", self.pool.as_ref());
        put(&mut kv, "activation", self.activation.as_ref());
        kv
    }
}

impl TrainFlags {
    fn overrides(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        put(&mut kv, "epochs", self.epochs);
        put(&mut kv, "patch", self.patch);
        put(&mut kv, "batch", self.batch);
        put(&mut kv, "lr_max", self.lr);
        put(&mut kv, "lr_min", self.lr_min);
        put(&mut kv, "weight_decay", self.weight_decay);
        put(&mut kv, "grad_clip", self.grad_clip);
        put(&mut kv, "ssim_weight", self.ssim_weight);
        put(&mut kv, "flip", self.flip);
        put(&mut kv, "rotate", self.rotate);
        put(&mut kv, "seed", self.seed);
        put(&mut kv, "checkpoint_every", self.checkpoint_every);
        put(&mut kv, "val_every", self.val_every);
        kv
    }
}

fn read_config(path: Option<&Path>) -> Result<KeyValues> {
    let Some(path) = path else {
        return Ok(KeyValues::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let kv = KeyValues::parse(&text).with_context(|| format!("config {}", path.display()))?;
    let known: Vec<&str> = NetConfig::KEYS
        .iter()
        .chain(TrainConfig::KEYS.iter())
        .copied()
        .collect();
    kv.reject_unknown(&known)
        .with_context(|| format!("config {}", path.display()))?;
    Ok(kv)
}

/// `RSHAZE_SEED`, if set.
pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .with_context(|| format!("{SEED_ENV}=`{v}` is not an unsigned integer")),
        Err(_) => Ok(None),
    }
}

/// Flag, then `RSHAZE_SEED`, then 0.
pub fn seed_or_env(flag: Option<u64>) -> Result<u64> {
    Ok(match flag {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    })
}

fn net_only(kv: &KeyValues) -> KeyValues {
    let mut out = KeyValues::default();
    for k in NetConfig::KEYS {
        put(&mut out, k, kv.get(k));
    }
    out
}

/// Flags override the config file, which overrides the defaults.
pub fn net_config(file: Option<&Path>, flags: &NetFlags) -> Result<NetConfig> {
    let mut kv = read_config(file)?;
    kv.merge(&flags.overrides());
    Ok(NetConfig::from_key_values(&net_only(&kv))?)
}

/// As [`net_config`], plus training settings; the seed falls back to
/// `RSHAZE_SEED` when neither the flags nor the file set it.
pub fn train_configs(file: Option<&Path>, net: &NetFlags, train: &TrainFlags) -> Result<(NetConfig, TrainConfig)> {
    let mut kv = read_config(file)?;
    kv.merge(&net.overrides());
    kv.merge(&train.overrides());
    if kv.get("seed").is_none() {
        put(&mut kv, "seed", env_seed()?);
    }
    let net_cfg = NetConfig::from_key_values(&net_only(&kv))?;
    let mut train_cfg = TrainConfig::default();
    train_cfg.apply(&kv)?;
    train_cfg.validate()?;
    Ok((net_cfg, train_cfg))
}

/// Network and training settings as one config file.
pub fn config_text(net: &NetConfig, train: &TrainConfig) -> String {
    let mut kv = net.to_key_values();
    kv.merge(&train.to_key_values());
    kv.to_text()
}

/// `"HxW"` or a single side.
pub fn parse_size(s: &str) -> Result<(usize, usize)> {
    let (h, w) = rshaze::network::parse_pool(s).with_context(|| format!("bad size `{s}`"))?;
    anyhow::ensure!(h > 0 && w > 0, "size must be positive, got `{s}`");
    Ok((h, w))
}

pub fn parse_weights(s: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .with_context(|| format!("bad split weight `{p}`"))
        })
        .collect::<Result<_>>()?;
    match parts[..] {
        [a, b, c] => Ok([a, b, c]),
        _ => anyhow::bail!("split needs three weights, got `{s}`"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cfg");
        fs::write(&path, "channels = 8\ndepths = 1,1,1\nepochs = 3\nseed = 4\n").unwrap();
        let net = NetFlags {
            channels: Some(12),
            ..NetFlags::default()
        };
        let train = TrainFlags {
            epochs: Some(9),
            ..TrainFlags::default()
        };
        let (n, t) = train_configs(Some(&path), &net, &train).unwrap();
        assert_eq!(
            (n.base_channels, n.depths.clone(), t.epochs, t.seed),
            (12, vec![1, 1, 1], 9, 4)
        );
        let text = config_text(&n, &t);
        fs::write(&path, &text).unwrap();
        let (n2, t2) = train_configs(Some(&path), &NetFlags::default(), &TrainFlags::default()).unwrap();
        assert_eq!((n2, t2), (n, t));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cfg");
        fs::write(&path, "chanels = 8\n").unwrap();
        let err = net_config(Some(&path), &NetFlags::default()).unwrap_err();
        assert!(format!("{err:#}").contains("chanels"));
    }

    #[test]
    fn sizes_and_weights() {
        assert_eq!(parse_size("50x64").unwrap(), (50, 64));
        assert_eq!(parse_size("32").unwrap(), (32, 32));
        assert!(parse_size("0x3").is_err());
        assert_eq!(parse_weights("8,1,1").unwrap(), [8.0, 1.0, 1.0]);
        assert!(parse_weights("1,2").is_err());
    }
}
