//! Central-difference gradient checking, shared by the acceptance suite.
//!
//! Everything runs in f64: reverse-mode gradients of a scalar loss are
//! compared against (f(x+h) - f(x-h)) / 2h with h = 1e-5, elementwise,
//! and the worst relative error is reported.

use fusenet::error::Result;
use fusenet::tensor::{backward, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-5;

/// Builds fresh leaf tensors over `values` and evaluates the scalar loss.
fn loss_value(
    shapes: &[Vec<usize>],
    values: &[Vec<f64>],
    f: &dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
) -> f64 {
    let leaves: Vec<Tensor<f64>> = shapes
        .iter()
        .zip(values)
        .map(|(s, v)| Tensor::from_values(s, v.clone()).expect("leaf shape"))
        .collect();
    let loss = f(&leaves).expect("gradcheck instance should evaluate");
    let v = loss.values();
    assert_eq!(v.len(), 1, "gradcheck loss must be scalar");
    v[0]
}

/// Worst relative error between analytic and central-difference gradients
/// of `f` over every element of every input. `f` must reduce to a scalar.
pub fn max_rel_err(
    shapes: &[Vec<usize>],
    init: &[Vec<f64>],
    f: &dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
) -> f64 {
    let params: Vec<Tensor<f64>> = shapes
        .iter()
        .zip(init)
        .map(|(s, v)| Tensor::param(s, v.clone()).expect("param shape"))
        .collect();
    let loss = f(&params).expect("gradcheck instance should evaluate");
    backward(&loss).expect("backward should succeed");
    let grads: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().expect("every input should receive a gradient"))
        .collect();

    let mut worst = 0.0_f64;
    for k in 0..init.len() {
        for i in 0..init[k].len() {
            let mut plus = init.to_vec();
            plus[k][i] += FD_STEP;
            let mut minus = init.to_vec();
            minus[k][i] -= FD_STEP;
            let fd = (loss_value(shapes, &plus, f) - loss_value(shapes, &minus, f))
                / (2.0 * FD_STEP);
            let a = grads[k][i];
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
            worst = worst.max(err);
        }
    }
    worst
}

/// Standard-normal draws.
pub fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Standard-normal draws pushed away from zero, for kinked ops: central
/// differences straddle the kink when an input sits within the step.
pub fn randn_away_from_zero(rng: &mut ChaCha8Rng, n: usize, margin: f64) -> Vec<f64> {
    randn(rng, n)
        .into_iter()
        .map(|v| if v.abs() < margin { v + margin.copysign(v + f64::MIN_POSITIVE) } else { v })
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random loss weights: a fixed weighted sum makes every output element
/// influence the scalar with a distinct coefficient.
pub fn loss_weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    randn(rng, n)
}
