//! Batch normalization over the channel axis of volume batches, with
//! train/inference modes and exponentially averaged running statistics.

use std::cell::Cell;
use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BnMode {
    Training,
    Inference,
}

/// Learnable affine parameters plus running statistics for one batch-norm
/// layer. Running buffers are shared handles so checkpointing can address
/// them; `mode` is a cell so a whole network can be switched between
/// training and inference through shared references.
pub struct BatchNormState<E: Element> {
    pub gamma: Tensor<E>,
    pub beta: Tensor<E>,
    pub running_mean: Rc<RefCell<Vec<E>>>,
    pub running_var: Rc<RefCell<Vec<E>>>,
    pub momentum: E,
    pub eps: E,
    pub mode: Cell<BnMode>,
}

impl<E: Element> BatchNormState<E> {
    /// Fresh state: running mean 0, running variance 1, training mode.
    pub fn new(gamma: Tensor<E>, beta: Tensor<E>, momentum: E, eps: E) -> Result<Self> {
        if gamma.shape().len() != 1 || gamma.shape() != beta.shape() {
            return Err(Error::Config(format!(
                "batchnorm gamma/beta must be matching vectors, got {:?} and {:?}",
                gamma.shape(),
                beta.shape()
            )));
        }
        let c = gamma.shape()[0];
        Ok(BatchNormState {
            gamma,
            beta,
            running_mean: Rc::new(RefCell::new(vec![E::zero(); c])),
            running_var: Rc::new(RefCell::new(vec![E::one(); c])),
            momentum,
            eps,
            mode: Cell::new(BnMode::Training),
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.shape()[0]
    }
}

/// Normalizes each channel of `[batch, chan, d, h, w]`.
///
/// Training mode normalizes by biased batch statistics and folds them into
/// the running buffers (`r <- (1 - momentum) * r + momentum * batch`);
/// inference mode normalizes by the running buffers and never mutates state.
pub fn batchnorm3d<E: Element>(x: &Tensor<E>, state: &BatchNormState<E>) -> Result<Tensor<E>> {
    let xs = x.shape();
    if xs.len() != 5 {
        return Err(Error::Config(format!(
            "batchnorm3d expects a 5-axis input, got shape {xs:?}"
        )));
    }
    let (batch, chan) = (xs[0], xs[1]);
    if chan != state.channels() {
        return Err(Error::Config(format!(
            "batchnorm3d channel mismatch: input has {chan}, state has {}",
            state.channels()
        )));
    }
    let vox = xs[2] * xs[3] * xs[4];
    let m = batch * vox;
    if m == 0 {
        return Err(Error::Config("batchnorm3d on empty input".into()));
    }

    // Per-channel mean and inverse standard deviation used for this pass.
    let (mean, inv_std) = match state.mode.get() {
        BnMode::Training => {
            let xv = x.values();
            let inv_m = E::one() / E::from_usize(m).unwrap();
            let mut mean = vec![E::zero(); chan];
            let mut var = vec![E::zero(); chan];
            for c in 0..chan {
                let mut s = E::zero();
                for b in 0..batch {
                    let row = &xv[(b * chan + c) * vox..(b * chan + c + 1) * vox];
                    for &v in row {
                        s += v;
                    }
                }
                let mu = s * inv_m;
                let mut sq = E::zero();
                for b in 0..batch {
                    let row = &xv[(b * chan + c) * vox..(b * chan + c + 1) * vox];
                    for &v in row {
                        let d = v - mu;
                        sq += d * d;
                    }
                }
                mean[c] = mu;
                var[c] = sq * inv_m;
            }
            drop(xv);
            {
                let mut rm = state.running_mean.borrow_mut();
                let mut rv = state.running_var.borrow_mut();
                let keep = E::one() - state.momentum;
                for c in 0..chan {
                    rm[c] = keep * rm[c] + state.momentum * mean[c];
                    rv[c] = keep * rv[c] + state.momentum * var[c];
                }
            }
            let inv_std: Vec<E> =
                var.iter().map(|&v| E::one() / (v + state.eps).sqrt()).collect();
            (mean, inv_std)
        }
        BnMode::Inference => {
            let rm = state.running_mean.borrow().clone();
            let rv = state.running_var.borrow();
            let inv_std: Vec<E> =
                rv.iter().map(|&v| E::one() / (v + state.eps).sqrt()).collect();
            (rm, inv_std)
        }
    };

    let training = state.mode.get() == BnMode::Training;
    let gv = state.gamma.values_vec();
    let bv = state.beta.values_vec();
    let xv = x.values();
    let mut out = vec![E::zero(); xv.len()];
    for b in 0..batch {
        for c in 0..chan {
            let off = (b * chan + c) * vox;
            let row = &xv[off..off + vox];
            let orow = &mut out[off..off + vox];
            let (mu, is, ga, be) = (mean[c], inv_std[c], gv[c], bv[c]);
            let scale = ga * is;
            for (o, &v) in orow.iter_mut().zip(row) {
                *o = (v - mu) * scale + be;
            }
        }
    }
    drop(xv);
    #[cfg(debug_assertions)]
    crate::tensor::check_finite("batchnorm3d", &out)?;

    let xc = x.clone();
    let gamma = state.gamma.clone();
    let beta = state.beta.clone();
    let parents = vec![x.clone(), state.gamma.clone(), state.beta.clone()];
    Ok(Tensor::from_op(xs.to_vec(), out, parents, move || {
        Box::new(move |g: &[E]| {
            let xv = xc.values();
            let gv = gamma.values();
            let inv_m = E::one() / E::from_usize(m).unwrap();
            let mut dgamma = vec![E::zero(); chan];
            let mut dbeta = vec![E::zero(); chan];
            let mut dx =
                if xc.requires_grad() { vec![E::zero(); xv.len()] } else { Vec::new() };
            for c in 0..chan {
                let (mu, is) = (mean[c], inv_std[c]);
                // First pass: sum(g) and sum(g * xhat) over the channel.
                let mut sg = E::zero();
                let mut sgx = E::zero();
                for b in 0..batch {
                    let off = (b * chan + c) * vox;
                    let grow = &g[off..off + vox];
                    let xrow = &xv[off..off + vox];
                    for (gi, &xi) in grow.iter().zip(xrow) {
                        let xh = (xi - mu) * is;
                        sg += *gi;
                        sgx += *gi * xh;
                    }
                }
                dbeta[c] = sg;
                dgamma[c] = sgx;
                if xc.requires_grad() {
                    let ga = gv[c];
                    if training {
                        // dx = gamma * inv_std * (g - mean(g) - xhat * mean(g * xhat))
                        let mg = sg * inv_m;
                        let mgx = sgx * inv_m;
                        for b in 0..batch {
                            let off = (b * chan + c) * vox;
                            let grow = &g[off..off + vox];
                            let xrow = &xv[off..off + vox];
                            let drow = &mut dx[off..off + vox];
                            for i in 0..vox {
                                let xh = (xrow[i] - mu) * is;
                                drow[i] = ga * is * (grow[i] - mg - xh * mgx);
                            }
                        }
                    } else {
                        // Running statistics are constants at inference.
                        let scale = ga * is;
                        for b in 0..batch {
                            let off = (b * chan + c) * vox;
                            let grow = &g[off..off + vox];
                            let drow = &mut dx[off..off + vox];
                            for (d, &gi) in drow.iter_mut().zip(grow) {
                                *d = gi * scale;
                            }
                        }
                    }
                }
            }
            drop(xv);
            drop(gv);
            if xc.requires_grad() {
                xc.accumulate_grad(&dx);
            }
            if gamma.requires_grad() {
                gamma.accumulate_grad(&dgamma);
            }
            if beta.requires_grad() {
                beta.accumulate_grad(&dbeta);
            }
        })
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn state(c: usize) -> BatchNormState<f64> {
        BatchNormState::new(
            Tensor::param(&[c], vec![1.0; c]).unwrap(),
            Tensor::param(&[c], vec![0.0; c]).unwrap(),
            0.1,
            1e-5,
        )
        .unwrap()
    }

    #[test]
    fn training_output_is_standardized_per_channel() {
        let x = Tensor::<f64>::from_values(
            &[2, 2, 1, 1, 2],
            vec![1.0, 2.0, 10.0, 20.0, 3.0, 4.0, 30.0, 40.0],
        )
        .unwrap();
        let st = state(2);
        let y = batchnorm3d(&x, &st).unwrap();
        let yv = y.values_vec();
        // Channel 0 entries: indices 0,1 (item 0) and 4,5 (item 1).
        let c0 = [yv[0], yv[1], yv[4], yv[5]];
        let mean: f64 = c0.iter().sum::<f64>() / 4.0;
        let var: f64 = c0.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert_relative_eq!(var, 1.0, max_relative = 1e-4);
    }

    #[test]
    fn constant_channel_outputs_beta() {
        let x = Tensor::<f64>::from_values(&[1, 1, 1, 2, 2], vec![5.0; 4]).unwrap();
        let st = BatchNormState::new(
            Tensor::param(&[1], vec![2.0]).unwrap(),
            Tensor::param(&[1], vec![0.75]).unwrap(),
            0.1,
            1e-5,
        )
        .unwrap();
        let y = batchnorm3d(&x, &st).unwrap();
        assert!(y.values().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn running_stats_follow_two_step_recurrence() {
        let st = state(1);
        // Batch 1: values {1, 3} -> mean 2, biased var 1.
        let x1 = Tensor::<f64>::from_values(&[1, 1, 1, 1, 2], vec![1.0, 3.0]).unwrap();
        batchnorm3d(&x1, &st).unwrap();
        // Batch 2: values {10, 14} -> mean 12, biased var 4.
        let x2 = Tensor::<f64>::from_values(&[1, 1, 1, 1, 2], vec![10.0, 14.0]).unwrap();
        batchnorm3d(&x2, &st).unwrap();
        // r1 = 0.9 * 0 + 0.1 * m1; r2 = 0.9 * r1 + 0.1 * m2, same for var from 1.
        let rm = st.running_mean.borrow();
        let rv = st.running_var.borrow();
        assert_relative_eq!(rm[0], 0.9 * (0.1 * 2.0) + 0.1 * 12.0, max_relative = 1e-12);
        assert_relative_eq!(
            rv[0],
            0.9 * (0.9 * 1.0 + 0.1 * 1.0) + 0.1 * 4.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn modes_diverge_once_running_stats_do() {
        let st = state(1);
        let x = Tensor::<f64>::from_values(&[1, 1, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y_train = batchnorm3d(&x, &st).unwrap().values_vec();
        st.mode.set(BnMode::Inference);
        let y_inf = batchnorm3d(&x, &st).unwrap().values_vec();
        // One momentum-0.1 update cannot bring running stats to batch stats.
        assert!(y_train.iter().zip(&y_inf).any(|(a, b)| (a - b).abs() > 1e-3));
    }

    #[test]
    fn inference_never_mutates_running_stats() {
        let st = state(1);
        st.mode.set(BnMode::Inference);
        let before = st.running_mean.borrow().clone();
        let x = Tensor::<f64>::from_values(&[1, 1, 1, 1, 2], vec![100.0, -50.0]).unwrap();
        batchnorm3d(&x, &st).unwrap();
        assert_eq!(*st.running_mean.borrow(), before);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let x = Tensor::<f64>::from_values(&[1, 3, 1, 1, 1], vec![0.0; 3]).unwrap();
        let st = state(2);
        assert!(matches!(batchnorm3d(&x, &st), Err(Error::Config(_))));
    }
}
