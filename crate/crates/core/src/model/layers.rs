use super::config::ModelConfig;
use super::params::{Bound, ParamStore, Scope};
use crate::error::{Error, Result};
use crate::numerics::{Padding, Rng, Tape, Tensor, Var};
use crate::ssm::bidirectional_scan_on_tape;

/// Train mode carries the stream that every stochastic site forks from.
#[derive(Clone, Debug)]
pub enum Mode {
    Eval,
    Train(Rng),
}

impl Mode {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }

    /// Independent stream for a named stochastic site, `None` in eval mode.
    pub fn stream(&self, site: &str) -> Option<Rng> {
        match self {
            Mode::Eval => None,
            Mode::Train(rng) => Some(rng.fork_named(site)),
        }
    }
}

fn check_rate(name: &str, p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in [0, 1), got {p}")))
    }
}

/// Drop whole channels of `x[B, L, C]`, the same channels at every timestep.
/// Returns the output and the 0/1 keep mask `[B, C]`.
pub fn channel_dropout(tape: &mut Tape, x: Var, p: f64, rng: Option<Rng>) -> Result<(Var, Tensor)> {
    check_rate("p_ch", p)?;
    let s = tape.shape(x).to_vec();
    if s.len() != 3 {
        return Err(Error::shape("channel_dropout", &s, &[0, 0, 0]));
    }
    let (b, c) = (s[0], s[2]);
    let Some(mut rng) = rng.filter(|_| p > 0.0) else {
        return Ok((x, Tensor::ones(&[b, c])));
    };
    let keep: Vec<f64> = (0..b * c)
        .map(|_| if rng.bernoulli(1.0 - p) { 1.0 } else { 0.0 })
        .collect();
    let scale = 1.0 / (1.0 - p);
    let factor = tape.constant(Tensor::from_vec(&[b, 1, c], keep.iter().map(|k| k * scale).collect()));
    Ok((tape.mul(x, factor)?, Tensor::from_vec(&[b, c], keep)))
}

/// Inverted elementwise dropout.
pub fn dropout(tape: &mut Tape, x: Var, p: f64, rng: Option<Rng>) -> Result<Var> {
    check_rate("dropout rate", p)?;
    let Some(mut rng) = rng.filter(|_| p > 0.0) else {
        return Ok(x);
    };
    let scale = 1.0 / (1.0 - p);
    let shape = tape.shape(x).to_vec();
    let len = shape.iter().product();
    let mask = Tensor::from_vec(
        &shape,
        (0..len).map(|_| if rng.bernoulli(1.0 - p) { scale } else { 0.0 }).collect(),
    );
    let m = tape.constant(mask);
    tape.mul(x, m)
}

/// Stochastic depth: zero the whole branch per sample, rescale survivors.
pub fn drop_path(tape: &mut Tape, x: Var, p: f64, rng: Option<Rng>) -> Result<Var> {
    check_rate("p_dp", p)?;
    let Some(mut rng) = rng.filter(|_| p > 0.0) else {
        return Ok(x);
    };
    let shape = tape.shape(x).to_vec();
    let mut mshape = vec![1; shape.len()];
    mshape[0] = shape[0];
    let scale = 1.0 / (1.0 - p);
    let mask = Tensor::from_vec(
        &mshape,
        (0..shape[0]).map(|_| if rng.bernoulli(1.0 - p) { scale } else { 0.0 }).collect(),
    );
    let m = tape.constant(mask);
    tape.mul(x, m)
}

fn layer_norm(tape: &mut Tape, x: Var, s: &Scope<'_>, eps: f64) -> Result<Var> {
    tape.layernorm(x, s.get("gamma")?, s.get("beta")?, eps)
}

/// `x + W₂ Dropout(GELU(W₁ LN(x)))` across channels at each timestep.
pub fn channel_mix(
    tape: &mut Tape,
    x: Var,
    s: &Scope<'_>,
    p_do: f64,
    rng: Option<Rng>,
    eps: f64,
) -> Result<Var> {
    let h = layer_norm(tape, x, &s.sub("ln"), eps)?;
    let h = tape.linear(h, s.get("w1")?, None)?;
    let h = tape.gelu(h);
    let h = dropout(tape, h, p_do, rng)?;
    let h = tape.linear(h, s.get("w2")?, None)?;
    tape.add(x, h)
}

/// Patch embedding at one stride: non-overlapping conv, batch norm, GELU,
/// positional embedding. Returns tokens `[B, L_m, D]` and, when batch
/// statistics were used, `(mean, unbiased var)` for the running estimates.
pub fn embed_scale(
    tape: &mut Tape,
    x: Var,
    s: &Scope<'_>,
    scale: usize,
    stride: usize,
    running: Option<(&Tensor, &Tensor)>,
    eps: f64,
) -> Result<(Var, Option<(Tensor, Tensor)>)> {
    let len = tape.shape(x)[1];
    if len < stride {
        return Err(Error::TooShort { scale, len, stride });
    }
    let xt = tape.transpose(x, 1, 2);
    let h = tape.conv1d(xt, s.get("conv.w")?, stride, Padding::None)?;
    let bn = s.sub("bn");
    let (h, stats) = tape.batchnorm1d(h, bn.get("gamma")?, bn.get("beta")?, running, eps)?;
    let h = tape.gelu(h);
    let h = tape.transpose(h, 1, 2);
    let h = tape.add(h, s.get("pos")?)?;
    Ok((h, stats))
}

/// Pre-norm bidirectional selective-scan block with a SiLU gate.
pub fn bimamba_block(
    tape: &mut Tape,
    h: Var,
    s: &Scope<'_>,
    cfg: &ModelConfig,
    rng: Option<Rng>,
) -> Result<Var> {
    let di = cfg.d_inner();
    let n = layer_norm(tape, h, &s.sub("norm"), cfg.ln_eps)?;
    let z = tape.linear(n, s.get("in_proj.w")?, Some(s.get("in_proj.b")?))?;
    let x_ssm = tape.slice(z, 2, 0, di)?;
    let g = tape.slice(z, 2, di, di)?;
    let x_ssm = tape.depthwise_conv_time(x_ssm, s.get("dwconv.w")?, s.get("dwconv.b")?)?;
    let x_ssm = tape.silu(x_ssm);
    let p_fwd = s.ssm("ssm_fwd")?;
    let p_bwd = if cfg.shared_a {
        let b = s.sub("ssm_bwd");
        crate::ssm::SsmParams {
            a_log: p_fwd.a_log,
            w_delta: b.get("w_delta")?,
            b_delta: b.get("b_delta")?,
            w_b: b.get("w_b")?,
            w_c: b.get("w_c")?,
            d_skip: b.get("d_skip")?,
        }
    } else {
        s.ssm("ssm_bwd")?
    };
    let y = bidirectional_scan_on_tape(tape, x_ssm, &p_fwd, &p_bwd, cfg.shared_a)?;
    let y = layer_norm(tape, y, &s.sub("out_norm"), cfg.ln_eps)?;
    let gate = tape.silu(g);
    let y = tape.mul(y, gate)?;
    let out = tape.linear(y, s.get("out_proj.w")?, Some(s.get("out_proj.b")?))?;
    let out = drop_path(tape, out, cfg.p_dp, rng)?;
    tape.add(h, out)
}

/// `h + DropPath(W_down(SiLU(W_gate LN(h)) ⊙ W_up LN(h)))`
pub fn gated_ffn(
    tape: &mut Tape,
    h: Var,
    s: &Scope<'_>,
    cfg: &ModelConfig,
    rng: Option<Rng>,
) -> Result<Var> {
    let n = layer_norm(tape, h, &s.sub("norm"), cfg.ln_eps)?;
    let gate = tape.linear(n, s.get("w_gate")?, None)?;
    let gate = tape.silu(gate);
    let up = tape.linear(n, s.get("w_up")?, None)?;
    let inner = tape.mul(gate, up)?;
    let out = tape.linear(inner, s.get("w_down")?, None)?;
    let out = drop_path(tape, out, cfg.p_dp, rng)?;
    tape.add(h, out)
}

/// Softmax-weighted token average of `h[B, L_m, D]`.
/// Returns `(r[B, D], alpha[B, L_m])`.
pub fn attention_pool(tape: &mut Tape, h: Var, s: &Scope<'_>) -> Result<(Var, Var)> {
    let shape = tape.shape(h).to_vec();
    if shape.len() != 3 || shape[1] == 0 {
        return Err(Error::shape("attention_pool", &shape, &[0, 1, 0]));
    }
    let (b, lm) = (shape[0], shape[1]);
    let u = tape.linear(h, s.get("w1")?, None)?;
    let u = tape.tanh(u);
    let w2 = s.get("w2")?;
    let w2_len = tape.shape(w2)[0];
    let w2 = tape.reshape(w2, &[1, w2_len])?;
    let scores = tape.linear(u, w2, None)?;
    let scores = tape.reshape(scores, &[b, lm])?;
    let alpha = tape.softmax(scores, 1);
    let a3 = tape.reshape(alpha, &[b, lm, 1])?;
    let weighted = tape.mul(h, a3)?;
    let r = tape.sum_axis(weighted, 1, false);
    Ok((r, alpha))
}

/// Concatenate per-scale descriptors and map them to class logits `[B, K]`.
pub fn fuse_and_classify(tape: &mut Tape, rs: &[Var], bound: &Bound, n_scales: usize, eps: f64) -> Result<Var> {
    if rs.len() != n_scales {
        return Err(Error::Config(format!(
            "expected {n_scales} scale descriptors, got {}",
            rs.len()
        )));
    }
    let z = tape.concat(rs, 1)?;
    let z = layer_norm(tape, z, &bound.scope("fuse.norm."), eps)?;
    let z = tape.linear(z, bound.get("fuse.w")?, Some(bound.get("fuse.b")?))?;
    let z = tape.gelu(z);
    let z = layer_norm(tape, z, &bound.scope("head.norm."), eps)?;
    tape.linear(z, bound.get("head.w")?, Some(bound.get("head.b")?))
}

/// Batch statistics observed at one stem in train mode.
#[derive(Clone, Debug)]
pub struct BnStats {
    pub scale: usize,
    pub mean: Tensor,
    pub var: Tensor,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `[B, K]`
    pub logits: Var,
    /// One `[B, L_m]` attention vector per scale.
    pub attention: Vec<Var>,
    pub bn_stats: Vec<BnStats>,
}

/// Full network on `x[B, L, C]`.
///
/// `store` supplies batch-norm running statistics for eval mode; `bound`
/// holds the tape handles of the same parameters.
pub fn forward(
    tape: &mut Tape,
    cfg: &ModelConfig,
    store: &ParamStore,
    bound: &Bound,
    x: Var,
    mode: &Mode,
) -> Result<ForwardOutput> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 3 || shape[1] != cfg.window || shape[2] != cfg.channels || shape[0] == 0 {
        return Err(Error::shape("forward input [B, L, C]", &shape, &[0, cfg.window, cfg.channels]));
    }
    if !tape.value(x).all_finite() {
        return Err(Error::NonFinite("model input".into()));
    }
    let (h, _) = channel_dropout(tape, x, cfg.p_ch, mode.stream("channel_dropout"))?;
    let h = channel_mix(tape, h, &bound.scope("mixer."), cfg.p_do, mode.stream("mixer.dropout"), cfg.ln_eps)?;

    let mut rs = Vec::with_capacity(cfg.n_scales());
    let mut attention = Vec::with_capacity(cfg.n_scales());
    let mut bn_stats = Vec::new();
    for (m, &stride) in cfg.strides.iter().enumerate() {
        let stem = bound.scope(format!("stem{m}."));
        let running = if mode.is_train() {
            None
        } else {
            Some((
                store.get(&format!("stem{m}.bn.running_mean"))?,
                store.get(&format!("stem{m}.bn.running_var"))?,
            ))
        };
        let (mut t, stats) = embed_scale(tape, h, &stem, m, stride, running, cfg.bn_eps)?;
        if let Some((mean, var)) = stats {
            bn_stats.push(BnStats { scale: m, mean, var });
        }
        for i in 0..cfg.n_layer {
            let prefix = format!("block{m}.{i}");
            let blk = bound.scope(format!("{prefix}."));
            t = bimamba_block(tape, t, &blk, cfg, mode.stream(&format!("{prefix}.drop_path.ssm")))?;
            t = gated_ffn(tape, t, &blk.sub("ffn"), cfg, mode.stream(&format!("{prefix}.drop_path.ffn")))?;
        }
        let (r, alpha) = attention_pool(tape, t, &bound.scope(format!("pool{m}.")))?;
        let r = dropout(tape, r, cfg.p_do, mode.stream(&format!("pool{m}.dropout")))?;
        rs.push(r);
        attention.push(alpha);
    }
    let logits = fuse_and_classify(tape, &rs, bound, cfg.n_scales(), cfg.ln_eps)?;
    Ok(ForwardOutput {
        logits,
        attention,
        bn_stats,
    })
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
