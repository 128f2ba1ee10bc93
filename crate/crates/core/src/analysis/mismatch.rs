use crate::error::{Error, Result};

fn check_strides(strides: &[usize]) -> Result<()> {
    if strides.is_empty() || strides[0] == 0 {
        return Err(Error::Config("strides must be a non-empty list of positive integers".into()));
    }
    if strides.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config(format!("strides must be strictly ascending, got {strides:?}")));
    }
    Ok(())
}

/// `min_m |ln τ − ln s_m|` for an event of support `tau ∈ [s_1, s_M]`.
pub fn scale_mismatch(tau: f64, strides: &[usize]) -> Result<f64> {
    check_strides(strides)?;
    let (lo, hi) = (strides[0] as f64, *strides.last().expect("non-empty") as f64);
    if !(tau >= lo && tau <= hi) {
        return Err(Error::Domain(format!("event support {tau} lies outside [{lo}, {hi}]")));
    }
    let lt = tau.ln();
    Ok(strides
        .iter()
        .map(|&s| (lt - (s as f64).ln()).abs())
        .fold(f64::INFINITY, f64::min))
}

/// Half the largest adjacent gap on the log-scale axis.
pub fn worst_case_mismatch(strides: &[usize]) -> Result<f64> {
    check_strides(strides)?;
    Ok(strides
        .windows(2)
        .map(|w| 0.5 * (w[1] as f64 / w[0] as f64).ln())
        .fold(0.0, f64::max))
}
