use super::smoothed_ce;
use crate::error::{Error, Result};
use crate::model::{gradcheck_point, Bound, MedMamba, ModelConfig, Mode};
use crate::numerics::{grad_check, GradCheckReport, Rng, Tensor};

/// Finite differences cost two forward passes per parameter.
pub const GRADCHECK_MAX_PARAMS: usize = 10_000;

/// End-to-end check of the training loss gradient for every trainable
/// tensor, in train mode with fixed dropout masks, on a batch of two.
pub fn model_grad_check(cfg: &ModelConfig, seed: u64, tol: f64) -> Result<GradCheckReport> {
    cfg.validate()?;
    let root = Rng::new(seed);
    let mut model = MedMamba::new(cfg.clone(), &root.fork_named("init"))?;
    if model.num_params() > GRADCHECK_MAX_PARAMS {
        return Err(Error::Config(format!(
            "gradient check is limited to {GRADCHECK_MAX_PARAMS} parameters; this configuration has {}",
            model.num_params()
        )));
    }
    model.params = gradcheck_point(&model.params, &root.fork_named("point"));
    let mut xr = root.fork_named("input");
    let len = 2 * cfg.window * cfg.channels;
    let x = Tensor::from_vec(&[2, cfg.window, cfg.channels], (0..len).map(|_| xr.normal()).collect());
    let labels: Vec<usize> = (0..2).map(|i| i % cfg.classes).collect();
    let mode = Mode::Train(root.fork_named("masks"));
    let names: Vec<String> = model.params.trainable().map(|(k, _)| k.to_string()).collect();
    let params: Vec<(String, Tensor)> = model.params.trainable().map(|(k, t)| (k.to_string(), t.clone())).collect();

    grad_check(
        |tape, vars| {
            let mut pairs: Vec<_> = names.iter().cloned().zip(vars.iter().copied()).collect();
            for (k, t) in model.params.iter() {
                if !model.params.is_trainable(k) {
                    pairs.push((k.to_string(), tape.constant(t.clone())));
                }
            }
            let bound = Bound::from_pairs(pairs);
            let xv = tape.constant(x.clone());
            let out = model.forward(tape, &bound, xv, &mode)?;
            smoothed_ce(tape, out.logits, &labels, 0.02)
        },
        &params,
        tol,
    )
}
