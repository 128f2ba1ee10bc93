use indexmap::IndexMap;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tape, Tensor, Var};
use crate::ssm::{s4d_init, SsmParams};

/// Named tensors in a stable order. Non-trainable entries are buffers
/// (batch-norm running statistics, input normalization).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: IndexMap<String, Entry>,
}

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    value: Tensor,
    trainable: bool,
}

/// Names ending in these suffixes are buffers rather than parameters.
pub const BUFFER_SUFFIXES: [&str; 2] = [".running_mean", ".running_var"];
/// Prefix for tensors that travel with a model but are not part of it.
pub const AUX_PREFIX: &str = "aux.";

pub fn is_buffer_name(name: &str) -> bool {
    name.starts_with(AUX_PREFIX) || BUFFER_SUFFIXES.iter().any(|s| name.ends_with(s))
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert or replace; trainability follows the naming convention.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        let trainable = !is_buffer_name(&name);
        self.entries.insert(name, Entry { value, trainable });
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|e| &e.value)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .map(|e| &mut e.value)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), &e.value))
    }

    pub fn trainable(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries
            .iter()
            .filter(|(_, e)| e.trainable)
            .map(|(k, e)| (k.as_str(), &e.value))
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.entries.get(name).is_some_and(|e| e.trainable)
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.trainable().map(|(_, t)| t.len()).sum()
    }

    /// Put every tensor on the tape. Trainable entries become leaves when
    /// `differentiable` is set, everything else is constant.
    pub fn bind(&self, tape: &mut Tape, differentiable: bool) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|(k, e)| {
                let v = if differentiable && e.trainable {
                    tape.leaf(e.value.clone())
                } else {
                    tape.constant(e.value.clone())
                };
                (k.clone(), v)
            })
            .collect();
        Bound { vars }
    }
}

/// Tape handles for a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: IndexMap<String, Var>,
}

impl Bound {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        Bound {
            vars: pairs.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn scope(&self, prefix: impl Into<String>) -> Scope<'_> {
        Scope {
            bound: self,
            prefix: prefix.into(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Name-prefixed view into [`Bound`].
#[derive(Clone, Debug)]
pub struct Scope<'a> {
    bound: &'a Bound,
    prefix: String,
}

impl<'a> Scope<'a> {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.bound.get(&format!("{}{name}", self.prefix))
    }

    pub fn sub(&self, name: &str) -> Scope<'a> {
        Scope {
            bound: self.bound,
            prefix: format!("{}{name}.", self.prefix),
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn ssm(&self, name: &str) -> Result<SsmParams<Var>> {
        let s = self.sub(name);
        Ok(SsmParams {
            a_log: s.get("A_log")?,
            w_delta: s.get("w_delta")?,
            b_delta: s.get("b_delta")?,
            w_b: s.get("w_b")?,
            w_c: s.get("w_c")?,
            d_skip: s.get("d_skip")?,
        })
    }
}

const INIT_STD: f64 = 0.02;

fn trunc(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let len = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| rng.trunc_normal(INIT_STD)).collect())
}

fn normal(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let len = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| rng.normal() * INIT_STD).collect())
}

fn layer_norm(store: &mut ParamStore, prefix: &str, width: usize) {
    store.insert(format!("{prefix}.gamma"), Tensor::ones(&[width]));
    store.insert(format!("{prefix}.beta"), Tensor::zeros(&[width]));
}

/// Fresh parameters for `cfg`. Every tensor draws from its own named
/// stream, so adding or removing a tensor leaves the others unchanged.
pub fn init_params(cfg: &ModelConfig, rng: &Rng) -> Result<ParamStore> {
    cfg.validate()?;
    let (c, d, k) = (cfg.channels, cfg.d_model, cfg.classes);
    let (di, df, m) = (cfg.d_inner(), cfg.d_ffn(), cfg.n_scales());
    let tokens = cfg.token_counts()?;
    let mut p = ParamStore::new();
    let stream = |name: &str| rng.fork_named(name);

    layer_norm(&mut p, "mixer.ln", c);
    p.insert("mixer.w1", trunc(&mut stream("mixer.w1"), &[cfg.rho * c, c]));
    p.insert("mixer.w2", trunc(&mut stream("mixer.w2"), &[c, cfg.rho * c]));

    for (mi, (&s, &lm)) in cfg.strides.iter().zip(&tokens).enumerate() {
        let stem = format!("stem{mi}");
        p.insert(format!("{stem}.conv.w"), trunc(&mut stream(&format!("{stem}.conv.w")), &[d, c, s]));
        layer_norm(&mut p, &format!("{stem}.bn"), d);
        p.insert(format!("{stem}.bn.running_mean"), Tensor::zeros(&[d]));
        p.insert(format!("{stem}.bn.running_var"), Tensor::ones(&[d]));
        p.insert(format!("{stem}.pos"), normal(&mut stream(&format!("{stem}.pos")), &[lm, d]));

        for li in 0..cfg.n_layer {
            let b = format!("block{mi}.{li}");
            let w = |name: &str, shape: &[usize], p: &mut ParamStore| {
                let full = format!("{b}.{name}");
                let t = trunc(&mut stream(&full), shape);
                p.insert(full, t);
            };
            layer_norm(&mut p, &format!("{b}.norm"), d);
            w("in_proj.w", &[2 * di, d], &mut p);
            p.insert(format!("{b}.in_proj.b"), Tensor::zeros(&[2 * di]));
            w("dwconv.w", &[di, cfg.conv_kernel], &mut p);
            p.insert(format!("{b}.dwconv.b"), Tensor::zeros(&[di]));
            for dir in ["ssm_fwd", "ssm_bwd"] {
                let name = format!("{b}.{dir}");
                let sp = s4d_init(di, cfg.d_state, &mut stream(&name))?;
                for (field, t) in SsmParams::<Tensor>::FIELD_NAMES.iter().zip(sp.fields()) {
                    if cfg.shared_a && dir == "ssm_bwd" && *field == "A_log" {
                        continue;
                    }
                    p.insert(format!("{name}.{field}"), t.clone());
                }
            }
            layer_norm(&mut p, &format!("{b}.out_norm"), di);
            w("out_proj.w", &[d, di], &mut p);
            p.insert(format!("{b}.out_proj.b"), Tensor::zeros(&[d]));
            layer_norm(&mut p, &format!("{b}.ffn.norm"), d);
            w("ffn.w_gate", &[df, d], &mut p);
            w("ffn.w_up", &[df, d], &mut p);
            w("ffn.w_down", &[d, df], &mut p);
        }
        p.insert(format!("pool{mi}.w1"), trunc(&mut stream(&format!("pool{mi}.w1")), &[d / 4, d]));
        p.insert(format!("pool{mi}.w2"), trunc(&mut stream(&format!("pool{mi}.w2")), &[d / 4]));
    }

    layer_norm(&mut p, "fuse.norm", m * d);
    p.insert("fuse.w", trunc(&mut stream("fuse.w"), &[d, m * d]));
    p.insert("fuse.b", Tensor::zeros(&[d]));
    layer_norm(&mut p, "head.norm", d);
    p.insert("head.w", trunc(&mut stream("head.w"), &[k, d]));
    p.insert("head.b", Tensor::zeros(&[k]));
    Ok(p)
}
