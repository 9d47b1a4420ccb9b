//! Binary classification metrics: accuracy, ranking AUC, and the geometric
//! mean of sensitivity and specificity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_binary(labels: &[u8]) -> Result<()> {
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Data(format!("labels must be 0 or 1, found {bad}")));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::Data("both classes must be present".into()));
    }
    Ok(())
}

/// Midranks of `xs` (average rank within tie groups, 1-based).
fn midranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share the midrank (i + j)/2 + 1.
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Probability that a random positive scores above a random negative, ties
/// counted half (the Mann-Whitney estimator, computed via midranks).
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    check_binary(labels)?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Data("scores must be finite".into()));
    }
    let ranks = midranks(scores);
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let rank_sum: f64 =
        ranks.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(r, _)| r).sum();
    Ok((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

/// Confusion counts (tp, fp, tn, fn) with class 1 as positive.
pub fn confusion(preds: &[u8], labels: &[u8]) -> (usize, usize, usize, usize) {
    let mut c = (0, 0, 0, 0);
    for (&p, &l) in preds.iter().zip(labels) {
        match (p, l) {
            (1, 1) => c.0 += 1,
            (1, 0) => c.1 += 1,
            (0, 0) => c.2 += 1,
            _ => c.3 += 1,
        }
    }
    c
}

/// sqrt(sensitivity * specificity). Zero when either class is entirely
/// mispredicted; one only for perfect prediction.
pub fn gmean(preds: &[u8], labels: &[u8]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    check_binary(labels)?;
    let (tp, fp, tn, fn_) = confusion(preds, labels);
    let sens = tp as f64 / (tp + fn_) as f64;
    let spec = tn as f64 / (tn + fp) as f64;
    Ok((sens * spec).sqrt())
}

/// Full evaluation of one prediction set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub accuracy: f64,
    pub auc: f64,
    pub gmean: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub n: usize,
}

impl MetricsRecord {
    /// `scores` are predicted probabilities of class 1; predictions are
    /// thresholded at 0.5, which equals the argmax over two logits.
    pub fn compute(scores: &[f64], labels: &[u8]) -> Result<MetricsRecord> {
        let preds: Vec<u8> = scores.iter().map(|&s| (s > 0.5) as u8).collect();
        let auc = auc(scores, labels)?;
        let gmean = gmean(&preds, labels)?;
        let (tp, fp, tn, fn_) = confusion(&preds, labels);
        let n = labels.len();
        Ok(MetricsRecord {
            accuracy: (tp + tn) as f64 / n as f64,
            auc,
            gmean,
            tp,
            fp,
            tn,
            fn_,
            n,
        })
    }
}

/// Mean and sample standard deviation (n - 1 denominator; 0 for n < 2).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> MeanStd {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        MeanStd { mean, std }
    }

    /// "0.724 (0.030)" with three decimals.
    pub fn table_cell(&self) -> String {
        format!("{:.3} ({:.3})", self.mean, self.std)
    }
}
