//! Adam, global-norm clipping and the cosine learning-rate schedule.

use crate::autograd::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Element;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty folded into the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// One bias-corrected Adam update using the gradients in `store`. `t` is
/// the 1-based step index.
pub fn adam_step<T: Element>(store: &mut ParamStore<T>, lr: f64, t: usize, cfg: &AdamConfig) -> Result<()> {
    if store.is_empty() {
        return Err(Error::invalid("adam_step", "no parameters to update"));
    }
    if t == 0 {
        return Err(Error::invalid("adam_step", "step index is 1-based"));
    }
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    for p in store.iter_mut() {
        let values = p.value.data_mut();
        let grads = p.grad.data();
        let (ms, vs) = (p.m.data_mut(), p.v.data_mut());
        for i in 0..values.len() {
            let theta = values[i].to_f64_lossy();
            let g = grads[i].to_f64_lossy() + cfg.weight_decay * theta;
            let m = b1 * ms[i].to_f64_lossy() + (1.0 - b1) * g;
            let v = b2 * vs[i].to_f64_lossy() + (1.0 - b2) * g * g;
            ms[i] = T::lit(m);
            vs[i] = T::lit(v);
            values[i] = T::lit(theta - lr * (m / c1) / ((v / c2).sqrt() + cfg.eps));
        }
    }
    Ok(())
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Element>(store: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let norm = store
        .iter()
        .flat_map(|(_, p)| p.grad.data().iter().map(|g| g.to_f64_lossy().powi(2)))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = T::lit(max_norm / norm);
        for p in store.iter_mut() {
            for g in p.grad.data_mut() {
                *g = *g * scale;
            }
        }
    }
    norm
}

/// Cosine annealing from `lr_max` at `t = 0` to `lr_min` at `t = total`.
/// Written as a convex combination so both endpoints are exact.
pub fn cosine_lr(t: usize, total: usize, lr_max: f64, lr_min: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::invalid("cosine_lr", "schedule length is zero"));
    }
    if t > total {
        return Err(Error::invalid(
            "cosine_lr",
            format!("step {t} beyond schedule length {total}"),
        ));
    }
    let w = 0.5 * (1.0 + (std::f64::consts::PI * t as f64 / total as f64).cos());
    Ok(lr_max * w + lr_min * (1.0 - w))
}
