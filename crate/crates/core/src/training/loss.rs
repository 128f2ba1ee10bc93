use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

fn targets(labels: &[usize], k: usize, eps: f64) -> Result<Tensor> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::Config(format!("label smoothing must lie in [0, 1), got {eps}")));
    }
    let mut q = Tensor::full(&[labels.len(), k], eps / k as f64);
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::Data(format!("label {y} at row {i} is out of range for {k} classes")));
        }
        q.set(&[i, y], 1.0 - eps + eps / k as f64);
    }
    Ok(q)
}

/// Mean over the batch of `−Σ_k q_k log softmax(z)_k` with
/// `q = (1 − ε)·onehot + ε/K`.
pub fn smoothed_ce(tape: &mut Tape, logits: Var, labels: &[usize], eps: f64) -> Result<Var> {
    let shape = tape.shape(logits).to_vec();
    if shape.len() != 2 || shape[0] != labels.len() || shape[0] == 0 {
        return Err(Error::shape("smoothed_ce logits [B, K]", &shape, &[labels.len(), 0]));
    }
    let q = tape.constant(targets(labels, shape[1], eps)?);
    let logp = tape.log_softmax(logits);
    let weighted = tape.mul(logp, q)?;
    let total = tape.sum_all(weighted);
    Ok(tape.scale(total, -1.0 / labels.len() as f64))
}

/// [`smoothed_ce`] on plain values.
pub fn smoothed_ce_value(logits: &Tensor, labels: &[usize], eps: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let z = tape.constant(logits.clone());
    let loss = smoothed_ce(&mut tape, z, labels, eps)?;
    Ok(tape.value(loss).item())
}
