use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{conv_output_len, Padding};

/// Architecture hyperparameters. Field names are the serialized names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Input channels `C`.
    pub channels: usize,
    /// Window length `L` in timesteps.
    pub window: usize,
    /// Number of classes `K`.
    pub classes: usize,
    /// Hidden width `D`.
    pub d_model: usize,
    /// Blocks per scale.
    pub n_layer: usize,
    /// SSM expansion, `d_inner = expand · D`.
    pub expand: usize,
    /// FFN expansion, `d_ffn = ffn_expand · D`.
    pub ffn_expand: usize,
    /// SSM state size `N`.
    pub d_state: usize,
    pub strides: Vec<usize>,
    /// Channel-mixer expansion `ρ`.
    pub rho: usize,
    pub p_do: f64,
    pub p_dp: f64,
    pub p_ch: f64,
    pub ln_eps: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    /// Depthwise kernel inside each block (odd, centered).
    pub conv_kernel: usize,
    /// Share `A_log` between scan directions.
    pub shared_a: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: 8,
            window: 256,
            classes: 2,
            d_model: 128,
            n_layer: 3,
            expand: 2,
            ffn_expand: 4,
            d_state: 16,
            strides: vec![5, 10, 25],
            rho: 2,
            p_do: 0.1,
            p_dp: 0.1,
            p_ch: 0.1,
            ln_eps: 1e-5,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            conv_kernel: 5,
            shared_a: false,
        }
    }
}

impl ModelConfig {
    /// The small configuration used for finite-difference checks.
    pub fn tiny() -> Self {
        ModelConfig {
            channels: 3,
            window: 30,
            classes: 2,
            d_model: 8,
            n_layer: 1,
            expand: 2,
            ffn_expand: 2,
            d_state: 4,
            strides: vec![3, 5],
            rho: 2,
            ..ModelConfig::default()
        }
    }

    pub fn d_inner(&self) -> usize {
        self.expand * self.d_model
    }

    pub fn d_ffn(&self) -> usize {
        self.ffn_expand * self.d_model
    }

    pub fn n_scales(&self) -> usize {
        self.strides.len()
    }

    /// `floor((L − s)/s) + 1` tokens per scale.
    pub fn token_counts(&self) -> Result<Vec<usize>> {
        self.strides
            .iter()
            .enumerate()
            .map(|(m, &s)| {
                conv_output_len(self.window, s, s, Padding::None).ok_or(Error::TooShort {
                    scale: m,
                    len: self.window,
                    stride: s,
                })
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.channels == 0 || self.window == 0 {
            return bad(format!("channels ({}) and window ({}) must be positive", self.channels, self.window));
        }
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.d_model == 0 || self.d_model % 4 != 0 {
            return bad(format!("d_model must be a positive multiple of 4, got {}", self.d_model));
        }
        if self.n_layer == 0 || self.expand == 0 || self.ffn_expand == 0 || self.d_state == 0 || self.rho == 0 {
            return bad("n_layer, expand, ffn_expand, d_state and rho must be positive".into());
        }
        if self.strides.is_empty() {
            return bad("at least one stride is required".into());
        }
        if let Some(&s) = self.strides.iter().find(|&&s| s == 0) {
            return bad(format!("stride {s} must be at least 1"));
        }
        self.token_counts()?;
        for (name, p) in [("p_do", self.p_do), ("p_dp", self.p_dp), ("p_ch", self.p_ch)] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1), got {p}"));
            }
        }
        if !(self.ln_eps > 0.0 && self.bn_eps > 0.0) {
            return bad("normalization eps must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad(format!("bn_momentum must lie in [0, 1], got {}", self.bn_momentum));
        }
        if self.conv_kernel % 2 == 0 {
            return bad(format!("conv_kernel must be odd, got {}", self.conv_kernel));
        }
        Ok(())
    }
}
