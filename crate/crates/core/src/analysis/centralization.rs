use serde::Serialize;

use super::linalg::sym_eigen;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Eigenvalues below this fraction of the largest are numerically zero.
const RANK_CUTOFF: f64 = 1e-13;

#[derive(Clone, Debug, Serialize)]
pub struct CentralizationReport {
    pub sci: f64,
    pub dic: f64,
    /// Outgoing influence `s_i` of each channel.
    pub influence: Vec<f64>,
    /// `A = Y Zᵀ`, `[S, S]`.
    #[serde(skip)]
    pub transition: Tensor,
}

fn channels_by_time(x: &Tensor, min_t: usize, what: &str) -> Result<(usize, usize)> {
    match x.shape() {
        &[s, t] if s >= 1 && t >= min_t => Ok((s, t)),
        shape => Err(Error::Data(format!(
            "{what} needs a [channels, time] array with at least {min_t} timesteps, got {shape:?}"
        ))),
    }
}

/// Sample covariance `(1/(T−1)) (X − X̄)(X − X̄)ᵀ` of `x[S, T]`.
pub fn covariance(x: &Tensor) -> Result<Tensor> {
    let (s, t) = channels_by_time(x, 2, "covariance")?;
    let d = x.data();
    let centered: Vec<f64> = (0..s)
        .flat_map(|i| {
            let row = &d[i * t..(i + 1) * t];
            let mean = row.iter().sum::<f64>() / t as f64;
            row.iter().map(move |v| v - mean)
        })
        .collect();
    let mut cov = Tensor::zeros(&[s, s]);
    for i in 0..s {
        for j in i..s {
            let v: f64 = (0..t).map(|k| centered[i * t + k] * centered[j * t + k]).sum::<f64>() / (t - 1) as f64;
            cov.set(&[i, j], v);
            cov.set(&[j, i], v);
        }
    }
    Ok(cov)
}

/// Spectral centralization `λ_max(Σ) / Tr(Σ)` of `x[S, T]`.
///
/// The trace is taken as the sum of eigenvalues with numerically zero ones
/// dropped, so exactly rank-one covariances give exactly 1.
pub fn sci(x: &Tensor) -> Result<f64> {
    let cov = covariance(x)?;
    let trace: f64 = (0..cov.shape()[0]).map(|i| cov.at(&[i, i])).sum();
    if !(trace > 0.0) {
        return Err(Error::Domain("SCI is undefined for constant input (zero total variance)".into()));
    }
    let e = sym_eigen(&cov)?;
    let top = e.values[0];
    let kept: f64 = e.values.iter().filter(|&&l| l > RANK_CUTOFF * top).sum();
    let s = x.shape()[0] as f64;
    Ok((top / kept).clamp(1.0 / s, 1.0))
}

/// Lag-one cross moment `A = Y Zᵀ` with `Z = x[:, 0..T−1]`, `Y = x[:, 1..T]`.
pub fn transition_moment(x: &Tensor) -> Result<Tensor> {
    let (s, t) = channels_by_time(x, 3, "DIC")?;
    let d = x.data();
    let mut a = Tensor::zeros(&[s, s]);
    for j in 0..s {
        for i in 0..s {
            let v: f64 = (0..t - 1).map(|k| d[j * t + k + 1] * d[i * t + k]).sum();
            a.set(&[j, i], v);
        }
    }
    Ok(a)
}

/// Dynamic influence centralization of `x[S, T]`: `(max s − s̄)/s̄` with
/// `s_i = Σ_j |A_ji|`, the influence of channel `i` on every channel.
pub fn dic(x: &Tensor) -> Result<(f64, Vec<f64>, Tensor)> {
    let a = transition_moment(x)?;
    let s = a.shape()[0];
    let influence: Vec<f64> = (0..s).map(|i| (0..s).map(|j| a.at(&[j, i]).abs()).sum()).collect();
    // Offset from the minimum so that equal influences give max − mean = 0 exactly.
    let min = influence.iter().cloned().fold(f64::INFINITY, f64::min);
    let mean = min + influence.iter().map(|v| v - min).sum::<f64>() / s as f64;
    if !(mean > 0.0) {
        return Err(Error::Domain("DIC is undefined when every influence is zero".into()));
    }
    let max = influence.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(((max - mean) / mean, influence, a))
}

pub fn centralization(x: &Tensor) -> Result<CentralizationReport> {
    let sci = sci(x)?;
    let (dic, influence, transition) = dic(x)?;
    Ok(CentralizationReport {
        sci,
        dic,
        influence,
        transition,
    })
}
