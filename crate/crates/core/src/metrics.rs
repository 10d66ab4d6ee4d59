//! Binary classification metrics over hateful-class scores.

use serde::{Deserialize, Serialize};

use crate::embedding_store::Label;
use crate::error::{Error, Result};

/// Decision threshold used by [`accuracy`].
pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub auroc: f64,
    pub accuracy: f64,
    pub n: usize,
    pub n_positive: usize,
}

fn binary_labels(labels: &[Label]) -> Result<Vec<bool>> {
    labels
        .iter()
        .enumerate()
        .map(|(index, l)| match l {
            Label::Hateful => Ok(true),
            Label::Benign => Ok(false),
            Label::Unlabeled => Err(Error::Unlabeled { index }),
        })
        .collect()
}

fn check_inputs(scores: &[f64], labels: &[Label]) -> Result<Vec<bool>> {
    if scores.len() != labels.len() {
        return Err(Error::shape(
            "metrics",
            format!("{} scores vs {} labels", scores.len(), labels.len()),
        ));
    }
    if scores.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score {i}")));
    }
    binary_labels(labels)
}

/// Area under the ROC curve via the rank-sum statistic with mid-ranks for
/// ties, i.e. P(s+ > s-) + 0.5 P(s+ = s-).
pub fn auroc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    let pos = check_inputs(scores, labels)?;
    let n_pos = pos.iter().filter(|&&p| p).count();
    let n_neg = pos.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; tied block i..=j shares the mean rank
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| pos[k]).count() as f64;
        i = j + 1;
    }
    let (np, nn) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Fraction of examples where `score >= 0.5` agrees with the hateful label.
pub fn accuracy(scores: &[f64], labels: &[Label]) -> Result<f64> {
    let pos = check_inputs(scores, labels)?;
    let correct = scores
        .iter()
        .zip(&pos)
        .filter(|(s, p)| (**s >= THRESHOLD) == **p)
        .count();
    Ok(correct as f64 / scores.len() as f64)
}

pub fn evaluate_scores(scores: &[f64], labels: &[Label]) -> Result<EvalResult> {
    let auroc = auroc(scores, labels)?;
    let accuracy = accuracy(scores, labels)?;
    Ok(EvalResult {
        auroc,
        accuracy,
        n: scores.len(),
        n_positive: labels.iter().filter(|l| **l == Label::Hateful).count(),
    })
}
