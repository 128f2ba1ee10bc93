use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::argmax;
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Absent when fewer than two classes occur in the labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auroc: Option<f64>,
}

/// Row-wise softmax of `[N, K]` scores.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let k = logits.shape()[1];
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|v| *v = (*v - m).exp());
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    out
}

/// Rank-based AUROC with midranks for ties.
pub fn binary_auroc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&o| positive[o]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Accuracy, macro precision/recall/F1 over the classes that occur in the
/// labels or predictions (0/0 counts as 0), and macro one-vs-rest AUROC of
/// the softmax scores over the classes that occur in the labels.
pub fn compute_metrics(logits: &Tensor, labels: &[usize]) -> Result<MetricsReport> {
    let (n, k) = match logits.shape() {
        &[n, k] if n == labels.len() && n >= 1 && k >= 1 => (n, k),
        s => return Err(Error::shape("compute_metrics logits [N, K]", s, &[labels.len(), 0])),
    };
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Data(format!("label {bad} is out of range for {k} classes")));
    }
    let preds: Vec<usize> = logits.data().chunks(k).map(argmax).collect();
    let mut tp = vec![0usize; k];
    let mut fp = vec![0usize; k];
    let mut fn_ = vec![0usize; k];
    for (&y, &p) in labels.iter().zip(&preds) {
        if y == p {
            tp[y] += 1;
        } else {
            fp[p] += 1;
            fn_[y] += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let seen: BTreeSet<usize> = labels.iter().chain(&preds).copied().collect();
    let (mut ps, mut rs, mut fs) = (0.0, 0.0, 0.0);
    for &c in &seen {
        let p = ratio(tp[c], tp[c] + fp[c]);
        let r = ratio(tp[c], tp[c] + fn_[c]);
        ps += p;
        rs += r;
        fs += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    }
    let m = seen.len() as f64;

    let probs = softmax_rows(logits);
    let present: BTreeSet<usize> = labels.iter().copied().collect();
    let auroc = if present.len() < 2 {
        None
    } else {
        let mut total = 0.0;
        for &c in &present {
            let scores: Vec<f64> = probs.data().chunks(k).map(|row| row[c]).collect();
            let pos: Vec<bool> = labels.iter().map(|&y| y == c).collect();
            total += binary_auroc(&scores, &pos).expect("class present with at least one negative");
        }
        Some(total / present.len() as f64)
    };

    Ok(MetricsReport {
        n,
        accuracy: tp.iter().sum::<usize>() as f64 / n as f64,
        precision: ps / m,
        recall: rs / m,
        f1: fs / m,
        auroc,
    })
}

/// Mean and sample standard deviation of one metric across runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<MeanStd> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(MeanStd { mean, std })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub runs: usize,
    pub accuracy: MeanStd,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auroc: Option<MeanStd>,
}

impl MetricsSummary {
    pub fn of(reports: &[MetricsReport]) -> Option<MetricsSummary> {
        let col = |f: fn(&MetricsReport) -> f64| MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>());
        let aurocs: Option<Vec<f64>> = reports.iter().map(|r| r.auroc).collect();
        Some(MetricsSummary {
            runs: reports.len(),
            accuracy: col(|r| r.accuracy)?,
            precision: col(|r| r.precision)?,
            recall: col(|r| r.recall)?,
            f1: col(|r| r.f1)?,
            auroc: aurocs.and_then(|a| MeanStd::of(&a)),
        })
    }
}
