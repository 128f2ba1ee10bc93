//! Central finite-difference verification of tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

const BASE_STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub name: String,
    pub numel: usize,
    /// `‖g_ad − g_fd‖ / max(‖g_ad‖, ‖g_fd‖, 1e-12)`
    pub rel_error: f64,
    pub max_abs_diff: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tol_rel: f64,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradCheckEntry> {
        self.entries.iter().filter(|e| !e.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }
}

/// Compare reverse-mode gradients of the scalar `f` with central differences
/// using step `1e-5 · (|θ| + 1)` for each element of each named parameter.
///
/// `f` must be deterministic: it is evaluated `2·Σ numel + 1` times.
pub fn grad_check<F>(f: F, params: &[(String, Tensor)], tol_rel: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out);

    let mut values: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    let mut entries = Vec::with_capacity(params.len());
    for (pi, (name, _)) in params.iter().enumerate() {
        let g_ad = grads.get_or_zeros(&tape, vars[pi]);
        if !g_ad.all_finite() {
            return Err(Error::NonFinite(format!("analytic gradient of {name}")));
        }
        let mut g_fd = vec![0.0; g_ad.len()];
        for (i, slot) in g_fd.iter_mut().enumerate() {
            let theta = values[pi].data()[i];
            let h = BASE_STEP * (theta.abs() + 1.0);
            values[pi].data_mut()[i] = theta + h;
            let up = eval(&values)?;
            values[pi].data_mut()[i] = theta - h;
            let down = eval(&values)?;
            values[pi].data_mut()[i] = theta;
            *slot = (up - down) / (2.0 * h);
            if !slot.is_finite() {
                return Err(Error::NonFinite(format!("finite difference of {name}[{i}]")));
            }
        }
        let g_fd = Tensor::from_vec(g_ad.shape(), g_fd);
        let diff = g_ad.zip_map(&g_fd, |a, b| a - b)?;
        let denom = g_ad.norm().max(g_fd.norm()).max(1e-12);
        let rel_error = diff.norm() / denom;
        entries.push(GradCheckEntry {
            name: name.clone(),
            numel: g_ad.len(),
            rel_error,
            max_abs_diff: diff.max_abs(),
            passed: rel_error <= tol_rel,
        });
    }
    Ok(GradCheckReport { tol_rel, entries })
}
