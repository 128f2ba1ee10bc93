//! Synthetic classification tasks with known structure.
//!
//! Each subject gets one recording made of `segments` back-to-back
//! segments of `window` samples, drawn independently, so windowing with
//! `hop = window` yields i.i.d. windows that share the subject's label.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::recording::write_recordings;
use super::Recording;
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

pub const SYNTH_SAMPLE_RATE_HZ: f64 = 100.0;
/// Oscillation cycles per window for class 0 and class 1.
pub const CENTRALIZED_CYCLES: [f64; 2] = [4.0, 7.0];
pub const BURST: [f64; 5] = [1.0, -2.0, 2.0, -2.0, 1.0];
/// Bursts are placed inside aligned blocks of this many samples.
pub const BURST_BLOCK: usize = 25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthShape {
    pub subjects: usize,
    pub channels: usize,
    pub window: usize,
    pub segments: usize,
    pub seed: u64,
}

impl SynthShape {
    pub fn new(subjects: usize, channels: usize, window: usize, seed: u64) -> Self {
        SynthShape {
            subjects,
            channels,
            window,
            segments: 8,
            seed,
        }
    }

    fn validate(&self, min_channels: usize, min_window: usize) -> Result<()> {
        if self.subjects == 0 || self.segments == 0 {
            return Err(Error::Config("need at least one subject and one segment".into()));
        }
        if self.channels < min_channels {
            return Err(Error::Config(format!("need at least {min_channels} channels, got {}", self.channels)));
        }
        if self.window < min_window {
            return Err(Error::Config(format!("window must be at least {min_window}, got {}", self.window)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SynthMeta {
    Centralized {
        #[serde(flatten)]
        shape: SynthShape,
        snr: f64,
        informative_channel: usize,
        cycles_per_window: [f64; 2],
        sample_rate_hz: f64,
    },
    Multiscale {
        #[serde(flatten)]
        shape: SynthShape,
        fast_amplitude: f64,
        slow_amplitude: f64,
        bursts_per_window: usize,
        fast_weights: Vec<f64>,
        slow_weights: Vec<f64>,
        sample_rate_hz: f64,
    },
    Noise {
        #[serde(flatten)]
        shape: SynthShape,
        sample_rate_hz: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub recordings: Vec<Recording>,
    pub meta: SynthMeta,
}

impl SynthDataset {
    pub fn n_classes(&self) -> usize {
        match self.meta {
            SynthMeta::Centralized { .. } => 2,
            SynthMeta::Multiscale { .. } => 4,
            SynthMeta::Noise { .. } => 1,
        }
    }

    /// Write CSVs, `manifest.jsonl` and `meta.json`; returns the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let manifest = write_recordings(dir, &self.recordings)?;
        let meta = dir.join("meta.json");
        let text = serde_json::to_string_pretty(&self.meta)?;
        fs::write(&meta, text + "\n").map_err(|e| Error::io(&meta, e))?;
        Ok(manifest)
    }
}

fn subject_id(i: usize) -> String {
    format!("s{i:03}")
}

/// Two classes that differ only in the frequency of an oscillation on one
/// channel; every channel carries unit white noise. `snr` is the signal to
/// noise power ratio on the informative channel.
pub fn synth_centralized(shape: &SynthShape, snr: f64) -> Result<SynthDataset> {
    shape.validate(2, 1)?;
    if !(snr >= 0.0 && snr.is_finite()) {
        return Err(Error::Config(format!("snr must be finite and nonnegative, got {snr}")));
    }
    let root = Rng::new(shape.seed).fork_named("synth_centralized");
    let informative = root.fork_named("informative_channel").below(shape.channels);
    let amp = (2.0 * snr).sqrt();
    let (c, l) = (shape.channels, shape.window);
    let t = l * shape.segments;
    let recordings = (0..shape.subjects)
        .map(|s| {
            let label = s % 2;
            let mut rng = root.fork(s as u64);
            let mut v = Tensor::zeros(&[t, c]);
            let d = v.data_mut();
            for seg in 0..shape.segments {
                let phase = rng.uniform_range(0.0, 2.0 * PI);
                for k in 0..l {
                    let row = &mut d[(seg * l + k) * c..(seg * l + k + 1) * c];
                    for x in row.iter_mut() {
                        *x = rng.normal();
                    }
                    let w = 2.0 * PI * CENTRALIZED_CYCLES[label] * k as f64 / l as f64;
                    row[informative] += amp * (w + phase).sin();
                }
            }
            Recording::new(v, SYNTH_SAMPLE_RATE_HZ, subject_id(s), label)
        })
        .collect::<Result<_>>()?;
    Ok(SynthDataset {
        recordings,
        meta: SynthMeta::Centralized {
            shape: shape.clone(),
            snr,
            informative_channel: informative,
            cycles_per_window: CENTRALIZED_CYCLES,
            sample_rate_hz: SYNTH_SAMPLE_RATE_HZ,
        },
    })
}

pub const MULTISCALE_FAST_AMPLITUDE: f64 = 1.5;
pub const MULTISCALE_SLOW_AMPLITUDE: f64 = 0.5;

/// Four classes `2·slow + fast` from two binary factors:
/// `fast` adds zero-sum 5-sample bursts, each inside one aligned block of
/// 25 samples; `slow` sets the sign of a linear drift across the window.
/// Both are mixed into every channel with fixed positive weights.
pub fn synth_multiscale(shape: &SynthShape) -> Result<SynthDataset> {
    synth_multiscale_with(shape, MULTISCALE_FAST_AMPLITUDE, MULTISCALE_SLOW_AMPLITUDE)
}

pub fn synth_multiscale_with(shape: &SynthShape, fast_amp: f64, slow_amp: f64) -> Result<SynthDataset> {
    shape.validate(1, 100)?;
    let root = Rng::new(shape.seed).fork_named("synth_multiscale");
    let (c, l) = (shape.channels, shape.window);
    let mut wr = root.fork_named("weights");
    let fast_w: Vec<f64> = (0..c).map(|_| wr.uniform_range(0.5, 1.5)).collect();
    let slow_w: Vec<f64> = (0..c).map(|_| wr.uniform_range(0.5, 1.5)).collect();
    let blocks = l / BURST_BLOCK;
    let bursts = (blocks / 3).max(1);
    let t = l * shape.segments;
    let recordings = (0..shape.subjects)
        .map(|s| {
            let label = s % 4;
            let (slow, fast) = (label / 2, label % 2);
            let mut rng = root.fork(s as u64);
            let mut v = Tensor::zeros(&[t, c]);
            let d = v.data_mut();
            for seg in 0..shape.segments {
                let base = seg * l;
                let sign = if slow == 1 { 1.0 } else { -1.0 };
                for k in 0..l {
                    let ramp = sign * slow_amp * (2.0 * k as f64 / (l - 1) as f64 - 1.0);
                    let row = &mut d[(base + k) * c..(base + k + 1) * c];
                    for (j, x) in row.iter_mut().enumerate() {
                        *x = rng.normal() + slow_w[j] * ramp;
                    }
                }
                if fast == 1 {
                    let mut chosen: Vec<usize> = (0..blocks).collect();
                    rng.shuffle(&mut chosen);
                    for &b in &chosen[..bursts] {
                        let start = base + b * BURST_BLOCK + rng.below(BURST_BLOCK - BURST.len() + 1);
                        for (k, shape_v) in BURST.iter().enumerate() {
                            let row = &mut d[(start + k) * c..(start + k + 1) * c];
                            for (j, x) in row.iter_mut().enumerate() {
                                *x += fast_amp * fast_w[j] * shape_v;
                            }
                        }
                    }
                }
            }
            Recording::new(v, SYNTH_SAMPLE_RATE_HZ, subject_id(s), label)
        })
        .collect::<Result<_>>()?;
    Ok(SynthDataset {
        recordings,
        meta: SynthMeta::Multiscale {
            shape: shape.clone(),
            fast_amplitude: fast_amp,
            slow_amplitude: slow_amp,
            bursts_per_window: bursts,
            fast_weights: fast_w,
            slow_weights: slow_w,
            sample_rate_hz: SYNTH_SAMPLE_RATE_HZ,
        },
    })
}

/// Unit white noise with the same layout as [`synth_centralized`], as a
/// control for the centralization metrics. All labels are 0.
pub fn synth_noise(shape: &SynthShape) -> Result<SynthDataset> {
    shape.validate(1, 1)?;
    let root = Rng::new(shape.seed).fork_named("synth_noise");
    let t = shape.window * shape.segments;
    let recordings = (0..shape.subjects)
        .map(|s| {
            let mut rng = root.fork(s as u64);
            let v = Tensor::from_vec(&[t, shape.channels], (0..t * shape.channels).map(|_| rng.normal()).collect());
            Recording::new(v, SYNTH_SAMPLE_RATE_HZ, subject_id(s), 0)
        })
        .collect::<Result<_>>()?;
    Ok(SynthDataset {
        recordings,
        meta: SynthMeta::Noise {
            shape: shape.clone(),
            sample_rate_hz: SYNTH_SAMPLE_RATE_HZ,
        },
    })
}
