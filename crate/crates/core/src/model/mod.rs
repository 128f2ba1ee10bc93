//! The classifier: channel dropout and mixing, multi-rate stems, stacked
//! bidirectional scan blocks per scale, attention pooling and fusion.
//!
//! Parameter names (`{m}` is the scale index, `{i}` the block index):
//!
//! | prefix | tensors |
//! |---|---|
//! | `mixer.` | `ln.gamma`, `ln.beta`, `w1 [ρC, C]`, `w2 [C, ρC]` |
//! | `stem{m}.` | `conv.w [D, C, s_m]`, `bn.{gamma,beta,running_mean,running_var}`, `pos [L_m, D]` |
//! | `block{m}.{i}.` | `norm.*`, `in_proj.{w,b}`, `dwconv.{w,b}`, `ssm_fwd.*`, `ssm_bwd.*`, `out_norm.*`, `out_proj.{w,b}`, `ffn.norm.*`, `ffn.{w_gate,w_up,w_down}` |
//! | `…ssm_{fwd,bwd}.` | `A_log`, `w_delta`, `b_delta`, `w_b`, `w_c`, `d_skip` |
//! | `pool{m}.` | `w1 [D/4, D]`, `w2 [D/4]` |
//! | head | `fuse.norm.*`, `fuse.{w,b}`, `head.norm.*`, `head.{w,b}` |

pub mod checkpoint;
pub mod config;
pub mod layers;
pub mod params;

use std::path::Path;

pub use checkpoint::{load_checkpoint, save_checkpoint, Dtype, TensorEntry};
pub use config::ModelConfig;
pub use layers::{argmax, forward, BnStats, ForwardOutput, Mode};
pub use params::{init_params, is_buffer_name, Bound, ParamStore, Scope};

use crate::error::Result;
use crate::numerics::{Rng, Tape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct MedMamba {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl MedMamba {
    pub fn new(config: ModelConfig, rng: &Rng) -> Result<Self> {
        let params = init_params(&config, rng)?;
        Ok(MedMamba { config, params })
    }

    pub fn num_params(&self) -> usize {
        self.params.num_trainable()
    }

    pub fn bind(&self, tape: &mut Tape, differentiable: bool) -> Bound {
        self.params.bind(tape, differentiable)
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: crate::numerics::Var, mode: &Mode) -> Result<ForwardOutput> {
        forward(tape, &self.config, &self.params, bound, x, mode)
    }

    /// Eval-mode logits `[B, K]` for `x[B, L, C]`, processed `chunk` samples
    /// at a time.
    pub fn predict(&self, x: &Tensor, chunk: usize) -> Result<Tensor> {
        let s = x.shape();
        if s.len() != 3 {
            return Err(crate::Error::shape("predict input [B, L, C]", s, &[0, self.config.window, self.config.channels]));
        }
        let (b, per) = (s[0], s[1] * s[2]);
        let chunk = chunk.max(1);
        let mut out = Vec::with_capacity(b * self.config.classes);
        for start in (0..b).step_by(chunk) {
            let n = chunk.min(b - start);
            let xb = Tensor::new(&[n, s[1], s[2]], x.data()[start * per..(start + n) * per].to_vec())?;
            let mut tape = Tape::new();
            let bound = self.bind(&mut tape, false);
            let xv = tape.constant(xb);
            let fo = self.forward(&mut tape, &bound, xv, &Mode::Eval)?;
            out.extend_from_slice(tape.value(fo.logits).data());
        }
        Tensor::new(&[b, self.config.classes], out)
    }

    /// Fold train-mode batch statistics into the running estimates.
    pub fn update_running_stats(&mut self, stats: &[BnStats]) -> Result<()> {
        let mom = self.config.bn_momentum;
        for s in stats {
            for (suffix, batch) in [("running_mean", &s.mean), ("running_var", &s.var)] {
                let run = self.params.get_mut(&format!("stem{}.bn.{suffix}", s.scale))?;
                *run = run.zip_map(batch, |r, b| (1.0 - mom) * r + mom * b)?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.config, &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (config, params) = load_checkpoint(path)?;
        config.validate()?;
        Ok(MedMamba { config, params })
    }
}

/// A parameter point away from initialization for finite-difference checks.
///
/// At initialization many gradients sit near 1e-12 (small output projections,
/// step sizes near 1e-3), below what central differences resolve. Here every
/// trainable tensor gets `N(0, 0.3²)` noise and step biases are redrawn around
/// zero so that `Δ ≈ softplus(0)`.
pub fn gradcheck_point(params: &ParamStore, rng: &Rng) -> ParamStore {
    let mut out = params.clone();
    let names: Vec<String> = params.trainable().map(|(n, _)| n.to_string()).collect();
    for name in names {
        let mut r = rng.fork_named(&name);
        let t = out.get_mut(&name).expect("name taken from the store");
        if name.ends_with(".b_delta") {
            *t = t.map(|_| 0.0);
        }
        for v in t.data_mut() {
            *v += 0.3 * r.normal();
        }
    }
    out
}
