use std::f64::consts::PI;

use indexmap::IndexMap;

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::numerics::Tensor;

/// Learning rate at optimizer step `step` (0-based): linear warmup from
/// `warmup_start_frac · lr_peak` to `lr_peak`, then cosine decay reaching 0
/// at the final step. Runs too short for the full warmup spend their first
/// half warming up.
pub fn lr_schedule(step: usize, steps_per_epoch: usize, cfg: &TrainConfig) -> f64 {
    let total = (cfg.epochs * steps_per_epoch).max(1);
    let warmup = (cfg.warmup_epochs * steps_per_epoch).min((total - 1) / 2);
    let peak = cfg.lr_peak;
    if step < warmup {
        let f = cfg.warmup_start_frac;
        return peak * (f + (1.0 - f) * step as f64 / warmup as f64);
    }
    let span = (total - 1 - warmup).max(1);
    let progress = ((step - warmup) as f64 / span as f64).min(1.0);
    peak * 0.5 * (1.0 + (PI * progress).cos())
}

/// Rescale every gradient by `max_norm / ‖g‖` when the global L2 norm
/// exceeds `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [(String, Tensor)], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|(_, g)| g.norm_sq()).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// Adam moments with decoupled weight decay.
#[derive(Clone, Debug, Default)]
pub struct AdamW {
    step: u64,
    moments: IndexMap<String, (Tensor, Tensor)>,
}

impl AdamW {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// `θ ← θ − lr·wd·θ`, then `θ ← θ − lr·m̂/(√v̂ + ε)`. Nothing is modified
    /// if any gradient is non-finite or mis-shaped.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[(String, Tensor)], lr: f64, cfg: &TrainConfig) -> Result<()> {
        for (name, g) in grads {
            let p = params.get(name)?;
            if p.shape() != g.shape() {
                return Err(Error::shape("adamw gradient", p.shape(), g.shape()));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
        }
        self.step += 1;
        let [b1, b2] = cfg.betas;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let decay = 1.0 - lr * cfg.weight_decay;
        for (name, g) in grads {
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
            let p = params.get_mut(name)?;
            let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
            for (i, &gi) in g.data().iter().enumerate() {
                md[i] = b1 * md[i] + (1.0 - b1) * gi;
                vd[i] = b2 * vd[i] + (1.0 - b2) * gi * gi;
                let update = (md[i] / c1) / ((vd[i] / c2).sqrt() + cfg.adam_eps);
                pd[i] = pd[i] * decay - lr * update;
            }
        }
        Ok(())
    }
}
