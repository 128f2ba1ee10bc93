use std::collections::{BTreeMap, BTreeSet};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::Recording;
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Disjoint subject sets. Each list is sorted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn part(&self, p: Part) -> &[String] {
        match p {
            Part::Train => &self.train,
            Part::Val => &self.val,
            Part::Test => &self.test,
        }
    }

    /// Recordings belonging to part `p`, in their original order.
    pub fn select<'a>(&self, recs: &'a [Recording], p: Part) -> Vec<&'a Recording> {
        let ids: BTreeSet<&str> = self.part(p).iter().map(String::as_str).collect();
        recs.iter().filter(|r| ids.contains(r.subject_id.as_str())).collect()
    }
}

/// Largest-remainder apportionment of `n` items by `fractions`; ties in the
/// remainder go to the earlier part.
pub fn apportion(n: usize, fractions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut left = n.saturating_sub(counts.iter().sum());
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Assign whole subjects to train/val/test. With `stratify`, each subject's
/// majority label (lowest on ties) is apportioned separately.
pub fn subject_split(recs: &[Recording], fractions: [f64; 3], seed: u64, stratify: bool) -> Result<Split> {
    if fractions.iter().any(|f| !(*f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions must be nonnegative and sum to 1, got {fractions:?}")));
    }
    let mut votes: IndexMap<&str, BTreeMap<usize, usize>> = IndexMap::new();
    for r in recs {
        *votes.entry(r.subject_id.as_str()).or_default().entry(r.label).or_default() += 1;
    }
    let needed = fractions.iter().filter(|f| **f > 0.0).count();
    if votes.len() < needed {
        return Err(Error::Data(format!("{} subjects cannot fill {needed} splits", votes.len())));
    }
    let mut groups: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for (subject, counts) in &votes {
        let key = if stratify {
            let best = counts.values().max().copied().unwrap_or(0);
            counts.iter().find(|(_, &c)| c == best).map_or(0, |(&l, _)| l)
        } else {
            0
        };
        groups.entry(key).or_default().push(subject);
    }

    let root = Rng::new(seed).fork_named("subject_split");
    let mut parts: [Vec<String>; 3] = Default::default();
    for (key, mut members) in groups {
        members.sort_unstable();
        root.fork(key as u64).shuffle(&mut members);
        let counts = apportion(members.len(), &fractions);
        let mut it = members.into_iter();
        for (part, k) in parts.iter_mut().zip(counts) {
            part.extend(it.by_ref().take(k).map(str::to_owned));
        }
    }
    for (part, f) in parts.iter_mut().zip(fractions) {
        if f > 0.0 && part.is_empty() {
            return Err(Error::Data(format!(
                "stratified split left a part empty with {} subjects; use more subjects or disable stratification",
                votes.len()
            )));
        }
        part.sort_unstable();
    }
    let [train, val, test] = parts;
    Ok(Split { train, val, test })
}
