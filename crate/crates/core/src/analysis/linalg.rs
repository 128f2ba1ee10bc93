//! Small dense symmetric linear algebra: cyclic Jacobi eigensolver,
//! Cholesky log-determinant and inverse square roots.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

const MAX_SWEEPS: usize = 100;

/// Eigenvalues (descending) and matching unit eigenvectors stored as
/// columns of `vectors`.
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Tensor,
}

fn square(a: &Tensor, op: &'static str) -> Result<usize> {
    match a.shape() {
        [n, m] if n == m => Ok(*n),
        s => Err(Error::shape(op, s, s)),
    }
}

/// Reject matrices whose asymmetry exceeds `tol · max(1, max|a|)`.
pub fn check_symmetric(a: &Tensor, tol: f64) -> Result<()> {
    let n = square(a, "check_symmetric")?;
    let scale = a.max_abs().max(1.0);
    for i in 0..n {
        for j in i + 1..n {
            let d = (a.at(&[i, j]) - a.at(&[j, i])).abs();
            if d > tol * scale {
                return Err(Error::Domain(format!(
                    "matrix is not symmetric: |a[{i},{j}] - a[{j},{i}]| = {d:.3e}"
                )));
            }
        }
    }
    Ok(())
}

/// Cyclic Jacobi rotations until the off-diagonal mass is negligible.
pub fn sym_eigen(a: &Tensor) -> Result<SymEigen> {
    let n = square(a, "sym_eigen")?;
    if !a.all_finite() {
        return Err(Error::NonFinite("eigensolver input".into()));
    }
    check_symmetric(a, 1e-10)?;
    // symmetrize exactly so rounding noise cannot drive the rotations
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = 0.5 * (a.at(&[i, j]) + a.at(&[j, i]));
        }
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let total: f64 = m.iter().map(|x| x * x).sum();
    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum();
        if off <= 1e-30 * total || off == 0.0 {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let (app, aqq) = (m[p * n + p], m[q * n + q]);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::Decomposition(format!(
            "Jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = Tensor::zeros(&[n, n]);
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vectors.set(&[row, col], v[row * n + src]);
        }
    }
    Ok(SymEigen { values, vectors })
}

/// Lower-triangular `L` with `a = L Lᵀ`.
pub fn cholesky(a: &Tensor) -> Result<Tensor> {
    let n = square(a, "cholesky")?;
    let mut l = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.at(&[i, j]);
            for k in 0..j {
                s -= l.at(&[i, k]) * l.at(&[j, k]);
            }
            if i == j {
                if !(s > 0.0) {
                    return Err(Error::Decomposition(format!(
                        "matrix is not positive definite (pivot {i} = {s:.3e})"
                    )));
                }
                l.set(&[i, i], s.sqrt());
            } else {
                l.set(&[i, j], s / l.at(&[j, j]));
            }
        }
    }
    Ok(l)
}

/// `ln det a` for symmetric positive definite `a`.
pub fn log_det_spd(a: &Tensor) -> Result<f64> {
    let l = cholesky(a)?;
    let n = l.shape()[0];
    Ok((0..n).map(|i| 2.0 * l.at(&[i, i]).ln()).sum())
}

/// Eigenvalues below this are raised to it before inversion.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// `a^{-1/2}` through the eigendecomposition of symmetric positive definite `a`.
pub fn inv_sqrt_spd(a: &Tensor) -> Result<Tensor> {
    let e = sym_eigen(a)?;
    let n = e.values.len();
    if let Some(&min) = e.values.last() {
        if !(min > 0.0) {
            return Err(Error::Decomposition(format!(
                "matrix is not positive definite (smallest eigenvalue {min:.3e})"
            )));
        }
    }
    let mut out = Tensor::zeros(&[n, n]);
    for (k, &lam) in e.values.iter().enumerate() {
        let w = 1.0 / lam.max(EIGEN_FLOOR).sqrt();
        for i in 0..n {
            let vi = e.vectors.at(&[i, k]) * w;
            for j in 0..n {
                let cur = out.at(&[i, j]);
                out.set(&[i, j], cur + vi * e.vectors.at(&[j, k]));
            }
        }
    }
    Ok(out)
}

/// `a · b · aᵀ`
pub fn sandwich(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.matmul(b)?.matmul(&a.transpose(0, 1))
}
