//! Run configuration: built-in defaults, then `$MEDMAMBA_SEED`, then a JSON
//! file, then command line flags.

use std::fs;
use std::path::{Path, PathBuf};

use medmamba::data::Recording;
use medmamba::model::ModelConfig;
use medmamba::training::TrainConfig;
use medmamba::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::args::{DataFlags, ModelFlags, TrainArgs};

pub const DEFAULT_SEED: u64 = 41;
pub const SEED_ENV: &str = "MEDMAMBA_SEED";

/// `$MEDMAMBA_SEED` if set, else 41. A malformed value is a usage error.
pub fn env_seed() -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Defaults to the window length (non-overlapping windows).
    pub hop: Option<usize>,
    pub fractions: [f64; 3],
    pub stratify: bool,
    /// Kept apart from the training seed so every seed sees the same split.
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            hop: None,
            fractions: [0.6, 0.2, 0.2],
            stratify: true,
            split_seed: DEFAULT_SEED,
        }
    }
}

impl DataConfig {
    pub fn apply(&mut self, flags: &DataFlags) -> Result<()> {
        if let Some(h) = flags.hop {
            self.hop = Some(h);
        }
        if let Some(f) = &flags.fractions {
            self.fractions = <[f64; 3]>::try_from(f.as_slice())
                .map_err(|_| Error::Config(format!("--fractions needs 3 values, got {}", f.len())))?;
        }
        if let Some(s) = flags.split_seed {
            self.split_seed = s;
        }
        if flags.no_stratify {
            self.stratify = false;
        }
        Ok(())
    }

    pub fn hop_for(&self, window: usize) -> usize {
        self.hop.unwrap_or(window)
    }
}

/// Everything needed to reproduce a training run; written as `config.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    model: Option<Value>,
    train: Option<Value>,
    data: Option<Value>,
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Overlay the keys of `patch` onto the serialized form of `base`.
fn overlay<T: Serialize + for<'de> Deserialize<'de>>(base: &T, patch: Option<Value>, what: &str) -> Result<T> {
    let Some(patch) = patch else {
        return Ok(serde_json::from_value(serde_json::to_value(base)?)?);
    };
    let Value::Object(patch) = patch else {
        return Err(Error::Config(format!("config section \"{what}\" must be an object")));
    };
    let mut merged = serde_json::to_value(base)?;
    if let Value::Object(m) = &mut merged {
        m.extend(patch);
    }
    serde_json::from_value(merged).map_err(|e| Error::Config(format!("config section \"{what}\": {e}")))
}

/// Parse `41..45` (inclusive) or `41,42,43`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("cannot parse seeds {s:?}; use 41..45 or 41,42,43"));
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if a > b {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        s.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?
    };
    let mut uniq = seeds.clone();
    uniq.sort_unstable();
    uniq.dedup();
    if seeds.is_empty() || uniq.len() != seeds.len() {
        return Err(bad());
    }
    Ok(seeds)
}

fn apply_model_flags(m: &mut ModelConfig, f: &ModelFlags) {
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = f.$field.clone() { m.$field = v; } )* };
    }
    set!(window, classes, d_model, n_layer, d_state, expand, strides, p_ch, p_do, p_dp);
    if f.shared_a {
        m.shared_a = true;
    }
}

/// A run configuration before the data has been seen.
#[derive(Debug)]
pub struct PendingRun {
    pub config: RunConfig,
    /// False when neither the file nor a flag fixed the class count.
    pub classes_fixed: bool,
}

impl PendingRun {
    pub fn from_args(a: &TrainArgs) -> Result<PendingRun> {
        let file: ConfigFile = match &a.config {
            Some(p) => serde_json::from_value(read_json(p)?)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => ConfigFile::default(),
        };
        let file_sets_classes = file.model.as_ref().and_then(|m| m.get("classes")).is_some();

        let mut model: ModelConfig = overlay(&ModelConfig::default(), file.model, "model")?;
        apply_model_flags(&mut model, &a.model);

        let base_train = TrainConfig {
            seed: env_seed()?,
            ..TrainConfig::default()
        };
        let mut train: TrainConfig = overlay(&base_train, file.train, "train")?;
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => { $( if let Some(v) = a.$flag { train.$field = v; } )* };
        }
        set!(epochs => epochs, batch_size => batch_size, lr => lr_peak, weight_decay => weight_decay,
             warmup_epochs => warmup_epochs, clip_norm => clip_norm, label_smoothing => label_smoothing,
             seed => seed);
        let seeds = match &a.seeds {
            Some(s) => parse_seeds(s)?,
            None => vec![train.seed],
        };
        train.seed = seeds[0];

        let mut data: DataConfig = overlay(&DataConfig::default(), file.data, "data")?;
        data.apply(&a.data)?;

        Ok(PendingRun {
            config: RunConfig {
                manifest: a.manifest.clone(),
                model,
                train,
                data,
                seeds,
            },
            classes_fixed: file_sets_classes || a.model.classes.is_some(),
        })
    }

    /// Fill in `C` (and `K` unless fixed) from the recordings, then validate.
    pub fn resolve(mut self, recs: &[Recording]) -> Result<RunConfig> {
        let first = recs
            .first()
            .ok_or_else(|| Error::Config("manifest lists no recordings".into()))?;
        let cfg = &mut self.config;
        cfg.model.channels = first.channels();
        let max_label = recs.iter().map(|r| r.label).max().unwrap_or(0);
        if !self.classes_fixed {
            cfg.model.classes = (max_label + 1).max(2);
        } else if max_label >= cfg.model.classes {
            return Err(Error::Data(format!(
                "label {max_label} does not fit a {}-class model",
                cfg.model.classes
            )));
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(self.config)
    }
}

/// Look for `name` beside `path`, then one directory up (multi-seed runs
/// keep shared files at the top level).
pub fn find_sibling(path: &Path, name: &str) -> Option<PathBuf> {
    let dir = path.parent()?;
    [Some(dir), dir.parent()]
        .into_iter()
        .flatten()
        .map(|d| d.join(name))
        .find(|p| p.is_file())
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    serde_json::from_value(read_json(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn load_model_config(path: &Path) -> Result<ModelConfig> {
    serde_json::from_value(read_json(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("41..45").unwrap(), vec![41, 42, 43, 44, 45]);
        assert_eq!(parse_seeds("3, 1,2").unwrap(), vec![3, 1, 2]);
        assert_eq!(parse_seeds("7..7").unwrap(), vec![7]);
        for bad in ["", "5..1", "1,1", "a", "1..x", "-1"] {
            assert!(parse_seeds(bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn overlay_replaces_only_named_keys() {
        let base = DataConfig::default();
        let merged: DataConfig = overlay(&base, Some(serde_json::json!({"split_seed": 3})), "data").unwrap();
        assert_eq!(merged, DataConfig { split_seed: 3, ..base.clone() });
        assert!(overlay::<DataConfig>(&base, Some(serde_json::json!({"nope": 1})), "data").is_err());
        assert!(overlay::<DataConfig>(&base, Some(serde_json::json!([1])), "data").is_err());
    }

    #[test]
    fn data_flags_override() {
        let mut d = DataConfig::default();
        d.apply(&DataFlags {
            hop: Some(5),
            fractions: Some(vec![0.5, 0.25, 0.25]),
            split_seed: None,
            no_stratify: true,
        })
        .unwrap();
        assert_eq!((d.hop_for(30), d.fractions, d.stratify, d.split_seed), (5, [0.5, 0.25, 0.25], false, 41));
        let err = d.apply(&DataFlags {
            fractions: Some(vec![1.0]),
            ..DataFlags::default()
        });
        assert!(err.is_err());
    }
}
