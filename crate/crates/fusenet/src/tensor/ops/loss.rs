//! Class-weighted cross entropy over logits, with a numerically safe
//! log-softmax, plus the plain softmax used at inference time.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Mean over the batch of `-weight[label] * log_softmax(logits)[label]`.
///
/// `logits` is `[batch, classes]`; `labels[b]` indexes a class; `weights`
/// has one positive factor per class. The log-softmax subtracts the row
/// maximum first, so extreme logits cannot overflow.
pub fn weighted_cross_entropy<E: Element>(
    logits: &Tensor<E>,
    labels: &[usize],
    weights: &[E],
) -> Result<Tensor<E>> {
    let shape = logits.shape();
    if shape.len() != 2 {
        return Err(Error::Config(format!(
            "weighted_cross_entropy expects [batch, classes] logits, got {shape:?}"
        )));
    }
    let (batch, classes) = (shape[0], shape[1]);
    if batch == 0 {
        return Err(Error::Config("weighted_cross_entropy on empty batch".into()));
    }
    if labels.len() != batch {
        return Err(Error::Config(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    if weights.len() != classes {
        return Err(Error::Config(format!(
            "{} class weights for {classes} classes",
            weights.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Config(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    if weights.iter().any(|w| !(*w > E::zero()) || !w.is_finite()) {
        return Err(Error::Config("class weights must be positive and finite".into()));
    }

    let lv = logits.values();
    let inv_batch = E::one() / E::from_usize(batch).unwrap();
    let mut total = E::zero();
    // Softmax rows are saved for the backward pass.
    let mut soft = vec![E::zero(); batch * classes];
    for (b, row) in lv.chunks_exact(classes).enumerate() {
        let m = row.iter().fold(row[0], |acc, &v| if v > acc { v } else { acc });
        let mut denom = E::zero();
        for (k, &v) in row.iter().enumerate() {
            let e = (v - m).exp();
            soft[b * classes + k] = e;
            denom += e;
        }
        let log_denom = denom.ln();
        for s in &mut soft[b * classes..(b + 1) * classes] {
            *s /= denom;
        }
        let y = labels[b];
        // log_softmax[y] = (row[y] - m) - log_denom
        total += -weights[y] * ((row[y] - m) - log_denom);
    }
    drop(lv);
    let loss = total * inv_batch;
    crate::tensor::check_finite("weighted_cross_entropy", &[loss])?;

    let lc = logits.clone();
    let labels: Vec<usize> = labels.to_vec();
    let weights: Vec<E> = weights.to_vec();
    Ok(Tensor::from_op(vec![], vec![loss], vec![logits.clone()], move || {
        Box::new(move |g: &[E]| {
            if lc.requires_grad() {
                let scale = g[0] * inv_batch;
                let mut dl = vec![E::zero(); batch * classes];
                for b in 0..batch {
                    let y = labels[b];
                    let w = weights[y];
                    for k in 0..classes {
                        let ind = if k == y { E::one() } else { E::zero() };
                        dl[b * classes + k] = scale * w * (soft[b * classes + k] - ind);
                    }
                }
                lc.accumulate_grad(&dl);
            }
        })
    }))
}

/// Row-wise softmax on raw values (no graph), used when converting logits to
/// probabilities for metrics and for probability-averaging ensembles.
pub fn softmax_rows<E: Element>(values: &[E], classes: usize) -> Vec<E> {
    debug_assert!(classes > 0 && values.len() % classes == 0);
    let mut out = vec![E::zero(); values.len()];
    for (row, orow) in values.chunks_exact(classes).zip(out.chunks_exact_mut(classes)) {
        let m = row.iter().fold(row[0], |acc, &v| if v > acc { v } else { acc });
        let mut denom = E::zero();
        for (o, &v) in orow.iter_mut().zip(row) {
            let e = (v - m).exp();
            *o = e;
            denom += e;
        }
        for o in orow {
            *o /= denom;
        }
    }
    out
}
