use serde::{Deserialize, Serialize};

use super::{Part, Recording, Split};
use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::numerics::Tensor;

/// Standard deviations below this are treated as a constant channel.
pub const STD_FLOOR: f64 = 1e-8;

/// Number of windows `window` produces: `⌊(T − L)/hop⌋ + 1`, or 0 when `L > T`.
pub fn window_count(t: usize, l: usize, hop: usize) -> usize {
    if l == 0 || hop == 0 || l > t {
        0
    } else {
        (t - l) / hop + 1
    }
}

/// Cut `[L, C]` windows starting at `0, hop, 2·hop, …`; a tail shorter than
/// `L` is dropped.
pub fn window(rec: &Recording, l: usize, hop: usize) -> Result<Vec<Tensor>> {
    if l == 0 || hop == 0 {
        return Err(Error::Config(format!("window length and hop must be positive, got L={l}, hop={hop}")));
    }
    let (t, c) = (rec.len(), rec.channels());
    if l > t {
        log::warn!(
            "recording of {} has {t} samples, fewer than the window length {l}; no windows produced",
            rec.subject_id
        );
        return Ok(Vec::new());
    }
    let d = rec.values.data();
    Ok((0..window_count(t, l, hop))
        .map(|w| Tensor::from_vec(&[l, c], d[w * hop * c..(w * hop + l) * c].to_vec()))
        .collect())
}

/// Per-channel affine normalization fitted on training windows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    /// Population standard deviation, before flooring.
    pub std: Vec<f64>,
}

impl NormStats {
    /// Fit on `windows[N, L, C]`.
    pub fn fit(windows: &Tensor) -> Result<NormStats> {
        let &[n, l, c] = windows.shape() else {
            return Err(Error::shape("normalization stats", windows.shape(), &[0, 0, 0]));
        };
        if n * l == 0 {
            return Err(Error::Data("cannot fit normalization on an empty training set".into()));
        }
        let count = (n * l) as f64;
        let d = windows.data();
        let mut mean = vec![0.0; c];
        for row in d.chunks(c) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; c];
        for row in d.chunks(c) {
            for j in 0..c {
                var[j] += (row[j] - mean[j]).powi(2);
            }
        }
        let std = var.into_iter().map(|v| (v / count).sqrt()).collect();
        Ok(NormStats { mean, std })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// `(x − μ)/σ` per channel; channels with `σ < STD_FLOOR` map to 0.
    pub fn apply(&self, windows: &Tensor) -> Result<Tensor> {
        let c = self.channels();
        if windows.is_empty() {
            let mut shape = windows.shape().to_vec();
            if let Some(last) = shape.last_mut() {
                *last = c;
            }
            return Ok(Tensor::zeros(&shape));
        }
        if windows.shape().last() != Some(&c) {
            return Err(Error::shape("normalize", windows.shape(), &[0, 0, c]));
        }
        let inv: Vec<f64> = self.std.iter().map(|&s| if s < STD_FLOOR { 0.0 } else { 1.0 / s }).collect();
        let mut out = windows.clone();
        for row in out.data_mut().chunks_mut(c) {
            for j in 0..c {
                row[j] = if inv[j] == 0.0 { 0.0 } else { (row[j] - self.mean[j]) * inv[j] };
            }
        }
        Ok(out)
    }
}

/// Stacked windows with their labels and owners.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSet {
    /// `[N, L, C]`
    pub windows: Tensor,
    pub labels: Vec<usize>,
    pub subjects: Vec<String>,
    /// Set once normalized.
    pub stats: Option<NormStats>,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Window every recording in order. All recordings must share `C`.
    pub fn from_recordings<'a>(
        recs: impl IntoIterator<Item = &'a Recording>,
        l: usize,
        hop: usize,
    ) -> Result<WindowSet> {
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut subjects = Vec::new();
        let mut channels = None;
        for rec in recs {
            let c = *channels.get_or_insert(rec.channels());
            if rec.channels() != c {
                return Err(Error::Data(format!(
                    "recording of {} has {} channels, expected {c}",
                    rec.subject_id,
                    rec.channels()
                )));
            }
            for w in window(rec, l, hop)? {
                data.extend_from_slice(w.data());
                labels.push(rec.label);
                subjects.push(rec.subject_id.clone());
            }
        }
        let n = labels.len();
        Ok(WindowSet {
            windows: Tensor::from_vec(&[n, l, channels.unwrap_or(0)], data),
            labels,
            subjects,
            stats: None,
        })
    }

    pub fn normalized(&self, stats: &NormStats) -> Result<WindowSet> {
        Ok(WindowSet {
            windows: stats.apply(&self.windows)?,
            labels: self.labels.clone(),
            subjects: self.subjects.clone(),
            stats: Some(stats.clone()),
        })
    }

    /// Rows `idx` as a batch `[B, L, C]` plus labels.
    pub fn batch(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        (self.windows.select_rows(idx), idx.iter().map(|&i| self.labels[i]).collect())
    }
}

/// Fit statistics on `train` only and apply them to every split.
pub fn zscore(train: &WindowSet, others: &[&WindowSet]) -> Result<(WindowSet, Vec<WindowSet>)> {
    let stats = NormStats::fit(&train.windows)?;
    let train = train.normalized(&stats)?;
    let others = others.iter().map(|w| w.normalized(&stats)).collect::<Result<_>>()?;
    Ok((train, others))
}

impl NormStats {
    pub const MEAN_KEY: &'static str = "aux.norm.mean";
    pub const STD_KEY: &'static str = "aux.norm.std";

    /// Store as non-trainable buffers so a checkpoint carries its input
    /// normalization.
    pub fn store_in(&self, params: &mut ParamStore) {
        let c = self.channels();
        params.insert(Self::MEAN_KEY, Tensor::from_vec(&[c], self.mean.clone()));
        params.insert(Self::STD_KEY, Tensor::from_vec(&[c], self.std.clone()));
    }

    pub fn load_from(params: &ParamStore) -> Option<NormStats> {
        let mean = params.get(Self::MEAN_KEY).ok()?.data().to_vec();
        let std = params.get(Self::STD_KEY).ok()?.data().to_vec();
        (mean.len() == std.len()).then_some(NormStats { mean, std })
    }
}

/// Normalized train/val/test windows of one subject split.
#[derive(Clone, Debug)]
pub struct PreparedSplits {
    pub train: WindowSet,
    pub val: WindowSet,
    pub test: WindowSet,
    pub stats: NormStats,
}

/// Window each part of `split` and z-score all of them with training
/// statistics.
pub fn prepare_splits(recs: &[Recording], split: &Split, l: usize, hop: usize) -> Result<PreparedSplits> {
    let part = |p: Part| WindowSet::from_recordings(split.select(recs, p), l, hop);
    let (train, val, test) = (part(Part::Train)?, part(Part::Val)?, part(Part::Test)?);
    let stats = NormStats::fit(&train.windows)?;
    Ok(PreparedSplits {
        train: train.normalized(&stats)?,
        val: val.normalized(&stats)?,
        test: test.normalized(&stats)?,
        stats,
    })
}
