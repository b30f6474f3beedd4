//! Training: loss, Adam with cosine annealing, paired augmentation and the
//! epoch loop.

mod augment;
mod loss;
mod optim;

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{ParamStore, Tape};
use crate::config::{parse_bool, KeyValues};
use crate::data::ImagePair;
use crate::error::{Error, Result};
use crate::metrics::psnr;
use crate::network::Net;
use crate::ops::layout::crop_at;
use crate::tensor::Tensor;

pub use augment::{augment, hflip, rot90, Transform};
pub use loss::{restoration_loss, ssim};
pub use optim::{adam_step, clip_grad_norm, cosine_lr, AdamConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Side of the square training crops.
    pub patch: usize,
    pub batch: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub adam: AdamConfig,
    /// Global gradient-norm bound; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Weight of the `1 - ssim` term added to L1.
    pub ssim_weight: f64,
    pub flip: bool,
    pub rotate: bool,
    pub seed: u64,
    /// Epochs between checkpoint callbacks; 0 never.
    pub checkpoint_every: usize,
    /// Epochs between validation passes; 0 never.
    pub val_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1000,
            patch: 512,
            batch: 14,
            lr_max: 2e-4,
            lr_min: 1e-8,
            adam: AdamConfig::default(),
            grad_clip: None,
            ssim_weight: 0.0,
            flip: true,
            rotate: true,
            seed: 0,
            checkpoint_every: 0,
            val_every: 0,
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 16] = [
        "epochs",
        "patch",
        "batch",
        "lr_max",
        "lr_min",
        "beta1",
        "beta2",
        "eps",
        "weight_decay",
        "grad_clip",
        "ssim_weight",
        "flip",
        "rotate",
        "seed",
        "checkpoint_every",
        "val_every",
    ];

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.patch == 0 || !self.patch.is_multiple_of(4) {
            return bad(format!("patch must be a positive multiple of 4, got {}", self.patch));
        }
        if self.batch == 0 {
            return bad("batch must be positive".into());
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr_max && self.lr_max.is_finite()) {
            return bad(format!(
                "need 0 <= lr_min <= lr_max, got {} and {}",
                self.lr_min, self.lr_max
            ));
        }
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.adam;
        if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2)) {
            return bad(format!("adam betas must lie in [0, 1), got {beta1} and {beta2}"));
        }
        if !(eps > 0.0) || !(weight_decay >= 0.0) {
            return bad("eps must be positive and weight_decay non-negative".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("grad_clip must be positive, got {c}"));
            }
        }
        if !(self.ssim_weight >= 0.0) {
            return bad(format!("ssim_weight must be non-negative, got {}", self.ssim_weight));
        }
        if self.ssim_weight > 0.0 && self.patch < crate::metrics::SSIM_WINDOW {
            return bad(format!(
                "ssim loss needs patches of at least {}",
                crate::metrics::SSIM_WINDOW
            ));
        }
        Ok(())
    }

    /// Applies the recognized keys of `kv`; `grad_clip = 0` disables clipping.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        fn set<V: std::str::FromStr>(kv: &KeyValues, key: &str, slot: &mut V) -> Result<()>
        where
            V::Err: fmt::Display,
        {
            if let Some(v) = kv.parse_opt(key)? {
                *slot = v;
            }
            Ok(())
        }
        set(kv, "epochs", &mut self.epochs)?;
        set(kv, "patch", &mut self.patch)?;
        set(kv, "batch", &mut self.batch)?;
        set(kv, "lr_max", &mut self.lr_max)?;
        set(kv, "lr_min", &mut self.lr_min)?;
        set(kv, "beta1", &mut self.adam.beta1)?;
        set(kv, "beta2", &mut self.adam.beta2)?;
        set(kv, "eps", &mut self.adam.eps)?;
        set(kv, "weight_decay", &mut self.adam.weight_decay)?;
        if let Some(c) = kv.parse_opt::<f64>("grad_clip")? {
            self.grad_clip = (c != 0.0).then_some(c);
        }
        set(kv, "ssim_weight", &mut self.ssim_weight)?;
        if let Some(v) = kv.get("flip") {
            self.flip = parse_bool(v)?;
        }
        if let Some(v) = kv.get("rotate") {
            self.rotate = parse_bool(v)?;
        }
        set(kv, "seed", &mut self.seed)?;
        set(kv, "checkpoint_every", &mut self.checkpoint_every)?;
        set(kv, "val_every", &mut self.val_every)?;
        Ok(())
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("epochs", self.epochs);
        kv.set("patch", self.patch);
        kv.set("batch", self.batch);
        kv.set("lr_max", self.lr_max);
        kv.set("lr_min", self.lr_min);
        kv.set("beta1", self.adam.beta1);
        kv.set("beta2", self.adam.beta2);
        kv.set("eps", self.adam.eps);
        kv.set("weight_decay", self.adam.weight_decay);
        kv.set("grad_clip", self.grad_clip.unwrap_or(0.0));
        kv.set("ssim_weight", self.ssim_weight);
        kv.set("flip", self.flip);
        kv.set("rotate", self.rotate);
        kv.set("seed", self.seed);
        kv.set("checkpoint_every", self.checkpoint_every);
        kv.set("val_every", self.val_every);
        kv
    }
}

/// One optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    /// 1-based.
    pub epoch: usize,
    /// 1-based, counted across epochs.
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    /// Mean per-image PSNR of the batch prediction before the update.
    pub psnr: f64,
    /// Mean validation PSNR, on the last step of a validation epoch.
    pub val_psnr: Option<f64>,
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} step={} lr={:.6e} loss={:.6e} psnr={:.4}",
            self.epoch, self.step, self.lr, self.loss, self.psnr
        )?;
        if let Some(v) = self.val_psnr {
            write!(f, " val_psnr={v:.4}")?;
        }
        Ok(())
    }
}

pub trait Callbacks {
    fn on_record(&mut self, _record: &LogRecord) {}

    /// Called after epoch `epoch` (1-based) when a checkpoint is due.
    fn on_checkpoint(&mut self, _epoch: usize, _store: &ParamStore<f32>) -> Result<()> {
        Ok(())
    }
}

pub struct NoCallbacks;

impl Callbacks for NoCallbacks {}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    pub fn initial_loss(&self) -> Option<f64> {
        self.records.first().map(|r| r.loss)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }
}

/// Clamped network output for a `(n, 3, h, w)` batch.
pub fn predict(net: &Net, store: &ParamStore<f32>, hazy: &Tensor<f32>) -> Result<Tensor<f32>> {
    Ok(net.infer(store, hazy)?.map(|v| v.clamp(0.0, 1.0)))
}

fn mean_psnr(pred: &Tensor<f32>, target: &Tensor<f32>) -> Result<f64> {
    let n = pred.shape().n;
    let mut total = 0.0;
    for i in 0..n {
        total += psnr(&pred.batch_slice(i, 1)?, &target.batch_slice(i, 1)?)?;
    }
    Ok(total / n as f64)
}

/// Mean per-image PSNR of the clamped prediction over `pairs`.
pub fn evaluate_psnr(net: &Net, store: &ParamStore<f32>, pairs: &[ImagePair]) -> Result<f64> {
    let mut total = 0.0;
    for p in pairs {
        total += psnr(&predict(net, store, &p.hazy)?, &p.clean)?;
    }
    Ok(total / pairs.len() as f64)
}

/// A random `patch x patch` crop of both images at the same location.
fn random_crop(pair: &ImagePair, patch: usize, rng: &mut impl Rng) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let s = pair.hazy.shape();
    if s.h < patch || s.w < patch {
        return Err(Error::Dataset(format!(
            "{}: {}x{} image is smaller than the {patch}x{patch} patch",
            pair.id, s.h, s.w
        )));
    }
    let top = rng.gen_range(0..=s.h - patch);
    let left = rng.gen_range(0..=s.w - patch);
    Ok((
        crop_at(&pair.hazy, top, left, patch, patch)?,
        crop_at(&pair.clean, top, left, patch, patch)?,
    ))
}

/// Trains `store` in place. Every epoch visits each training pair once in
/// shuffled order, one random crop per pair; the learning rate follows the
/// cosine schedule per epoch.
pub fn fit(
    net: &Net,
    store: &mut ParamStore<f32>,
    train: &[ImagePair],
    val: &[ImagePair],
    cfg: &TrainConfig,
    callbacks: &mut dyn Callbacks,
) -> Result<TrainLog> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Dataset("no training pairs".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr_max, cfg.lr_min)?;
        order.shuffle(&mut rng);
        let batches: Vec<&[usize]> = order.chunks(cfg.batch).collect();
        let validate = cfg.val_every > 0 && (epoch + 1) % cfg.val_every == 0 && !val.is_empty();
        for (b, batch) in batches.iter().enumerate() {
            let mut hazy = Vec::with_capacity(batch.len());
            let mut clean = Vec::with_capacity(batch.len());
            for &i in *batch {
                let (h, c) = random_crop(&train[i], cfg.patch, &mut rng)?;
                let t = Transform::sample(&mut rng, cfg.flip, cfg.rotate);
                hazy.push(t.apply(&h));
                clean.push(t.apply(&c));
            }
            let (hazy, clean) = (Tensor::stack(&hazy)?, Tensor::stack(&clean)?);
            step += 1;

            let tape = Tape::with_finite_checks(false);
            let pred = net.forward(&tape, store, tape.constant(hazy))?;
            let loss = restoration_loss(pred, tape.constant(clean.clone()), cfg.ssim_weight)?;
            let loss_value = f64::from(loss.item()?);
            if !loss_value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    loss: loss_value,
                    epoch: epoch + 1,
                    step,
                });
            }
            let batch_psnr = mean_psnr(&pred.value().map(|v| v.clamp(0.0, 1.0)), &clean)?;
            tape.backward(loss, store)?;
            if let Some(max) = cfg.grad_clip {
                clip_grad_norm(store, max);
            }
            adam_step(store, lr, step, &cfg.adam)?;

            let val_psnr = if validate && b + 1 == batches.len() {
                Some(evaluate_psnr(net, store, val)?)
            } else {
                None
            };
            let record = LogRecord {
                epoch: epoch + 1,
                step,
                lr,
                loss: loss_value,
                psnr: batch_psnr,
                val_psnr,
            };
            callbacks.on_record(&record);
            log.records.push(record);
        }
        if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
            callbacks.on_checkpoint(epoch + 1, store)?;
        }
    }
    Ok(log)
}
