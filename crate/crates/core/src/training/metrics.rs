use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::streams;
use crate::error::{Error, Result};
use crate::rng;

/// Binary labels obtained by thresholding scores at their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Binarized {
    pub labels: Vec<u8>,
    pub threshold: f64,
    /// All scores equal: every label is 0.
    pub degenerate: bool,
}

/// `label = 1` iff `score > mean(scores)`.
pub fn binarize_labels(scores: &[f64]) -> Result<Binarized> {
    if scores.is_empty() {
        return Err(Error::Data("cannot binarize an empty score list".into()));
    }
    let threshold = scores.iter().sum::<f64>() / scores.len() as f64;
    Ok(binarize_at(scores, threshold))
}

pub(crate) fn binarize_at(scores: &[f64], threshold: f64) -> Binarized {
    let labels: Vec<u8> = scores.iter().map(|&s| u8::from(s > threshold)).collect();
    let degenerate = scores.iter().all(|&s| s == scores[0]);
    if degenerate {
        log::warn!("all {} scores equal {}; target is degenerate (all labels 0)", scores.len(), scores[0]);
    }
    Binarized {
        labels,
        threshold,
        degenerate,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle of `0..n`, then `k` contiguous test blocks whose sizes
/// differ by at most one. Training indices are ascending.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::Parameter(format!("k = {k} folds; need at least 2")));
    }
    if n < k {
        return Err(Error::Data(format!("{n} items cannot fill {k} folds")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::stream(seed, &[streams::FOLDS]));
    let mut start = 0;
    Ok((0..k)
        .map(|i| {
            let size = n / k + usize::from(i < n % k);
            let test = perm[start..start + size].to_vec();
            start += size;
            let mut in_test = vec![false; n];
            test.iter().for_each(|&t| in_test[t] = true);
            Fold {
                train: (0..n).filter(|&j| !in_test[j]).collect(),
                test,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub f1: f64,
    /// Precision + recall was zero, so F1 is reported as 0.
    pub f1_degenerate: bool,
}

/// Accuracy and positive-class F1.
pub fn evaluate(predictions: &[u8], labels: &[u8]) -> Result<Metrics> {
    if predictions.len() != labels.len() || labels.is_empty() {
        return Err(Error::Data(format!(
            "evaluate needs equal non-empty lengths, got {} predictions and {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let n = labels.len() as f64;
    let (mut tp, mut fp, mut fneg, mut correct) = (0.0, 0.0, 0.0, 0.0);
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p != 0, y != 0) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fneg += 1.0,
            (false, false) => {}
        }
        if (p != 0) == (y != 0) {
            correct += 1.0;
        }
    }
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
    let f1_degenerate = precision + recall == 0.0;
    if f1_degenerate {
        log::debug!("F1 undefined (no true positives); reporting 0");
    }
    Ok(Metrics {
        accuracy: correct / n,
        f1: if f1_degenerate { 0.0 } else { 2.0 * precision * recall / (precision + recall) },
        f1_degenerate,
    })
}

/// Keep `ceil(fraction × count)` seeded picks from each (subject, class)
/// cell. Returns ascending positions into `cells`.
pub fn label_fraction_subset(cells: &[(String, u8)], fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Parameter(format!("label fraction {fraction} not in (0, 1]")));
    }
    let mut groups: BTreeMap<(&str, u8), Vec<usize>> = BTreeMap::new();
    for (i, (s, c)) in cells.iter().enumerate() {
        groups.entry((s.as_str(), *c)).or_default().push(i);
    }
    let mut keep = Vec::new();
    for (g, members) in groups.values_mut().enumerate() {
        let want = ((fraction * members.len() as f64).ceil() as usize).clamp(1, members.len());
        if want < members.len() {
            members.shuffle(&mut rng::stream(seed, &[streams::SUBSET, g as u64]));
        }
        keep.extend_from_slice(&members[..want]);
    }
    keep.sort_unstable();
    Ok(keep)
}
