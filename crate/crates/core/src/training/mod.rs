//! Loss, optimizer, schedule, metrics and the training loop.

mod gradcheck;
mod loss;
mod metrics;
mod optim;
mod train;

use serde::{Deserialize, Serialize};

pub use gradcheck::{model_grad_check, GRADCHECK_MAX_PARAMS};
pub use loss::{smoothed_ce, smoothed_ce_value};
pub use metrics::{binary_auroc, compute_metrics, softmax_rows, MeanStd, MetricsReport, MetricsSummary};
pub use optim::{clip_grad_norm, lr_schedule, AdamW};
pub use train::{evaluate, train_loop, EpochRecord, History, TrainOutcome, EVAL_CHUNK};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_peak: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub warmup_start_frac: f64,
    pub clip_norm: f64,
    pub label_smoothing: f64,
    pub seed: u64,
    pub betas: [f64; 2],
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 512,
            lr_peak: 5e-4,
            weight_decay: 0.1,
            warmup_epochs: 5,
            warmup_start_frac: 0.01,
            clip_norm: 4.0,
            label_smoothing: 0.02,
            seed: 41,
            betas: [0.9, 0.999],
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(self.lr_peak >= 0.0 && self.lr_peak.is_finite()) || !(self.weight_decay >= 0.0) {
            return bad(format!("lr_peak {} and weight_decay {} must be nonnegative", self.lr_peak, self.weight_decay));
        }
        if !(0.0..=1.0).contains(&self.warmup_start_frac) {
            return bad(format!("warmup_start_frac must lie in [0, 1], got {}", self.warmup_start_frac));
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip_norm must be positive, got {}", self.clip_norm));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad(format!("label_smoothing must lie in [0, 1), got {}", self.label_smoothing));
        }
        if !self.betas.iter().all(|b| (0.0..1.0).contains(b)) || !(self.adam_eps > 0.0) {
            return bad(format!("invalid Adam constants betas={:?} eps={}", self.betas, self.adam_eps));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
