use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{clip_grad_norm, compute_metrics, lr_schedule, smoothed_ce, AdamW, MetricsReport, TrainConfig};
use crate::data::WindowSet;
use crate::error::{Error, Result};
use crate::model::{MedMamba, Mode};
use crate::numerics::{Rng, Tape, Tensor};

/// Samples per forward pass during evaluation.
pub const EVAL_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Rate used for the last step of the epoch.
    pub lr: f64,
    /// Sample-weighted mean training loss.
    pub train_loss: f64,
    /// Mean pre-clipping gradient norm.
    pub grad_norm: f64,
    pub val: MetricsReport,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub const CSV_HEADER: &'static str =
        "epoch,lr,train_loss,grad_norm,val_acc,val_precision,val_recall,val_f1,val_auroc";

    /// Timing is left out so that reruns produce identical files.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let auroc = r.val.auroc.map(|a| a.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.epoch, r.lr, r.train_loss, r.grad_norm, r.val.accuracy, r.val.precision, r.val.recall, r.val.f1, auroc
            );
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the highest validation macro-F1
    /// (the earliest such epoch).
    pub best: MedMamba,
    pub best_epoch: usize,
    pub history: History,
    /// Parameters after the last epoch.
    pub last: MedMamba,
}

pub fn evaluate(model: &MedMamba, set: &WindowSet) -> Result<MetricsReport> {
    let logits = model.predict(&set.windows, EVAL_CHUNK)?;
    compute_metrics(&logits, &set.labels)
}

fn check_set(model: &MedMamba, set: &WindowSet, what: &str) -> Result<()> {
    let cfg = &model.config;
    if set.is_empty() {
        return Err(Error::Data(format!("{what} split has no windows")));
    }
    let s = set.windows.shape();
    if s[1] != cfg.window || s[2] != cfg.channels {
        return Err(Error::Config(format!(
            "{what} windows are (C={}, L={}) but the model expects (C={}, L={})",
            s[2], s[1], cfg.channels, cfg.window
        )));
    }
    if let Some(&y) = set.labels.iter().find(|&&y| y >= cfg.classes) {
        return Err(Error::Data(format!("{what} label {y} is out of range for K={}", cfg.classes)));
    }
    Ok(())
}

/// Seeded mini-batch training with per-epoch validation.
///
/// Each epoch shuffles with a permutation derived from `(seed, epoch)`; each
/// step draws its dropout masks from `(seed, step)`. `on_epoch` sees every
/// record as it is produced.
pub fn train_loop(
    mut model: MedMamba,
    train: &WindowSet,
    val: &WindowSet,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_set(&model, train, "training")?;
    check_set(&model, val, "validation")?;
    let n = train.len();
    let bs = cfg.batch_size.min(n);
    let steps_per_epoch = n.div_ceil(bs);
    let root = Rng::new(cfg.seed);
    let shuffle_root = root.fork_named("shuffle");
    let dropout_root = root.fork_named("dropout");
    let trainable: Vec<String> = model.params.trainable().map(|(k, _)| k.to_string()).collect();

    let mut opt = AdamW::new();
    let mut history = History::default();
    let mut best: Option<(f64, usize, MedMamba)> = None;
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let order = shuffle_root.fork(epoch as u64).permutation(n);
        let (mut loss_sum, mut norm_sum, mut lr) = (0.0, 0.0, 0.0);
        for (b, idx) in order.chunks(bs).enumerate() {
            lr = lr_schedule(step, steps_per_epoch, cfg);
            let (x, y) = train.batch(idx);
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape, true);
            let xv = tape.constant(x);
            let mode = Mode::Train(dropout_root.fork(step as u64));
            let out = model.forward(&mut tape, &bound, xv, &mode)?;
            let loss = smoothed_ce(&mut tape, out.logits, &y, cfg.label_smoothing)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}, batch {}", b + 1)));
            }
            let grads = tape.backward(loss);
            let mut named: Vec<(String, Tensor)> = trainable
                .iter()
                .map(|k| Ok((k.clone(), grads.get_or_zeros(&tape, bound.get(k)?))))
                .collect::<Result<_>>()?;
            norm_sum += clip_grad_norm(&mut named, cfg.clip_norm);
            opt.step(&mut model.params, &named, lr, cfg)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}, batch {}: {e}", b + 1)))?;
            model.update_running_stats(&out.bn_stats)?;
            loss_sum += value * idx.len() as f64;
            step += 1;
        }
        let val_metrics = evaluate(&model, val)?;
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / n as f64,
            grad_norm: norm_sum / steps_per_epoch as f64,
            val: val_metrics,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.4} val acc {:.4} f1 {:.4} ({:.1}s)",
            record.train_loss,
            record.val.accuracy,
            record.val.f1,
            record.seconds
        );
        on_epoch(&record);
        if best.as_ref().is_none_or(|(f1, _, _)| record.val.f1 > *f1) {
            best = Some((record.val.f1, epoch, model.clone()));
        }
        history.records.push(record);
    }
    let (_, best_epoch, best_model) = best.ok_or_else(|| Error::Config("epochs must be at least 1".into()))?;
    Ok(TrainOutcome {
        best: best_model,
        best_epoch,
        history,
        last: model,
    })
}
