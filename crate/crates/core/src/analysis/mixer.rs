//! Linear-mixer analysis under a Gaussian signal-plus-nuisance model.

use super::linalg::{check_symmetric, inv_sqrt_spd, log_det_spd, sandwich, sym_eigen};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

/// Covariances of `x = s + n (+ e)` with `e ~ N(0, σ² I)` sensor noise.
#[derive(Clone, Debug)]
pub struct MixerProblem {
    pub sigma_s: Tensor,
    pub sigma_n: Tensor,
    pub sigma2: f64,
    /// Output rank of the mixer.
    pub r: usize,
}

impl MixerProblem {
    pub fn channels(&self) -> usize {
        self.sigma_s.shape()[0]
    }

    pub fn validate(&self) -> Result<()> {
        check_symmetric(&self.sigma_s, 1e-10)?;
        check_symmetric(&self.sigma_n, 1e-10)?;
        let c = self.channels();
        if self.sigma_n.shape() != [c, c] {
            return Err(Error::shape("mixer problem", self.sigma_s.shape(), self.sigma_n.shape()));
        }
        if !(self.sigma2 >= 0.0) {
            return Err(Error::Domain(format!("sigma2 must be nonnegative, got {}", self.sigma2)));
        }
        if self.r == 0 || self.r > c {
            return Err(Error::Config(format!("rank r must lie in [1, {c}], got {}", self.r)));
        }
        Ok(())
    }

    /// `Σ_n + σ² I`
    pub fn nuisance(&self) -> Tensor {
        let c = self.channels();
        let mut w = self.sigma_n.clone();
        for i in 0..c {
            w.set(&[i, i], w.at(&[i, i]) + self.sigma2);
        }
        w
    }
}

/// Result of comparing the nuisance-to-signal ratio before and after mixing.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSuppression {
    pub eps: f64,
    pub gamma: f64,
    /// `‖Mn‖/‖Ms‖`
    pub lhs: f64,
    /// `γ/(1−ε) · ‖n‖/‖s‖`
    pub rhs: f64,
    pub holds: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn apply(m: &Tensor, v: &[f64]) -> Result<Vec<f64>> {
    let (r, c) = (m.shape()[0], m.shape()[1]);
    if v.len() != c {
        return Err(Error::shape("mixer action", m.shape(), &[v.len()]));
    }
    Ok((0..r).map(|i| (0..c).map(|j| m.at(&[i, j]) * v[j]).sum()).collect())
}

/// Measure `ε`, `γ` from the action of `m` on `s` and `n` and check the bound.
pub fn noise_suppression_bound(m: &Tensor, s: &[f64], n: &[f64]) -> Result<NoiseSuppression> {
    if m.ndim() != 2 {
        return Err(Error::shape("noise_suppression_bound", m.shape(), &[0, s.len()]));
    }
    let (ms, mn) = (apply(m, s)?, apply(m, n)?);
    let (ns, nn, nms, nmn) = (norm(s), norm(n), norm(&ms), norm(&mn));
    if !(ns > 0.0) {
        return Err(Error::Domain("signal component has zero norm".into()));
    }
    if !(nms > 0.0) {
        return Err(Error::Domain("degenerate mixer: the signal is annihilated (‖Ms‖ = 0)".into()));
    }
    let eps = (1.0 - nms / ns).max(0.0);
    let gamma = if nn > 0.0 { nmn / nn } else { 0.0 };
    let lhs = nmn / nms;
    let rhs = gamma / (1.0 - eps) * (nn / ns);
    Ok(NoiseSuppression {
        eps,
        gamma,
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-12 * rhs.max(1.0),
    })
}

/// Gaussian mutual information `I(Mx; s)` with sensor noise entering before
/// the mixer:
/// `½ [ln det M(Σ_s + Σ_n + σ²I)Mᵀ − ln det M(Σ_n + σ²I)Mᵀ]`.
pub fn mixer_mi(m: &Tensor, p: &MixerProblem) -> Result<f64> {
    p.validate()?;
    if m.ndim() != 2 || m.shape()[1] != p.channels() {
        return Err(Error::shape("mixer_mi", m.shape(), p.sigma_s.shape()));
    }
    let w = p.nuisance();
    let total = w.zip_map(&p.sigma_s, |a, b| a + b)?;
    Ok(0.5 * (log_det_spd(&sandwich(m, &total)?)? - log_det_spd(&sandwich(m, &w)?)?))
}

/// The same quantity with the `σ²I` term added after mixing:
/// `½ [ln det(M(Σ_s + Σ_n)Mᵀ + σ²I) − ln det(MΣ_nMᵀ + σ²I)]`.
/// Equal to [`mixer_mi`] whenever `M Mᵀ = I`.
pub fn mixer_mi_output_noise(m: &Tensor, p: &MixerProblem) -> Result<f64> {
    p.validate()?;
    if m.ndim() != 2 || m.shape()[1] != p.channels() {
        return Err(Error::shape("mixer_mi_output_noise", m.shape(), p.sigma_s.shape()));
    }
    let r = m.shape()[0];
    let add_noise = |mut t: Tensor| {
        for i in 0..r {
            t.set(&[i, i], t.at(&[i, i]) + p.sigma2);
        }
        t
    };
    let total = p.sigma_n.zip_map(&p.sigma_s, |a, b| a + b)?;
    let num = add_noise(sandwich(m, &total)?);
    let den = add_noise(sandwich(m, &p.sigma_n)?);
    Ok(0.5 * (log_det_spd(&num)? - log_det_spd(&den)?))
}

#[derive(Clone, Debug)]
pub struct OptimalMixer {
    /// `[r, C]`, satisfying `M (Σ_n + σ²I) Mᵀ = I_r`.
    pub m: Tensor,
    /// `½ Σ_{i ≤ r} ln(1 + λ_i(K))`
    pub mi: f64,
    /// All eigenvalues of the whitened signal covariance `K`, descending.
    pub eigenvalues: Vec<f64>,
}

/// Whiten the nuisance, then keep the top-`r` eigendirections of the
/// whitened signal covariance `K = W^{-1/2} Σ_s W^{-1/2}`.
pub fn optimal_mixer(p: &MixerProblem) -> Result<OptimalMixer> {
    p.validate()?;
    let w_is = inv_sqrt_spd(&p.nuisance())?;
    let k = sandwich(&w_is, &p.sigma_s)?;
    let e = sym_eigen(&k)?;
    let c = p.channels();
    let mut ur_t = Tensor::zeros(&[p.r, c]);
    for i in 0..p.r {
        for j in 0..c {
            ur_t.set(&[i, j], e.vectors.at(&[j, i]));
        }
    }
    let mi = 0.5 * e.values[..p.r].iter().map(|&l| l.max(0.0).ln_1p()).sum::<f64>();
    Ok(OptimalMixer {
        m: ur_t.matmul(&w_is)?,
        mi,
        eigenvalues: e.values,
    })
}

/// `U_rᵀ W^{-1/2}` for an arbitrary orthonormal `u[C, r]`: a feasible mixer.
pub fn whitened_mixer(u: &Tensor, p: &MixerProblem) -> Result<Tensor> {
    let w_is = inv_sqrt_spd(&p.nuisance())?;
    u.transpose(0, 1).matmul(&w_is)
}

/// Orthonormal `[C, r]` frame from Gram–Schmidt on Gaussian columns.
pub fn random_orthonormal(c: usize, r: usize, rng: &mut Rng) -> Result<Tensor> {
    if r == 0 || r > c {
        return Err(Error::Config(format!("cannot draw {r} orthonormal columns in dimension {c}")));
    }
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(r);
    while cols.len() < r {
        let mut v: Vec<f64> = (0..c).map(|_| rng.normal()).collect();
        for _ in 0..2 {
            for u in &cols {
                let d: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(x, y)| *x -= d * y);
            }
        }
        let nv = norm(&v);
        if nv > 1e-8 {
            cols.push(v.into_iter().map(|x| x / nv).collect());
        }
    }
    let mut u = Tensor::zeros(&[c, r]);
    for (j, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            u.set(&[i, j], v);
        }
    }
    Ok(u)
}

/// `G Gᵀ / rank` for Gaussian `G[C, rank]`: positive semidefinite, of the
/// given rank almost surely.
pub fn random_psd(c: usize, rank: usize, rng: &mut Rng) -> Tensor {
    let g = Tensor::from_vec(&[c, rank], (0..c * rank).map(|_| rng.normal()).collect());
    let mut out = g.matmul(&g.transpose(0, 1)).expect("conforming shapes");
    let scale = 1.0 / rank.max(1) as f64;
    for v in out.data_mut() {
        *v *= scale;
    }
    // exact symmetry
    for i in 0..c {
        for j in 0..i {
            let v = out.at(&[j, i]);
            out.set(&[i, j], v);
        }
    }
    out
}
