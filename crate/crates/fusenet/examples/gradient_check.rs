//! Spot-checks reverse-mode gradients against central finite differences
//! in f64. Each op builds a scalar loss (weighted sum of its output) so
//! every element of every input gets a distinct gradient.

use fusenet::error::Result;
use fusenet::tensor::ops::{self, ConvParams};
use fusenet::tensor::{backward, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const H: f64 = 1e-5;

fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Max relative error between analytic gradients and (f(x+h)-f(x-h))/2h.
fn check(
    shapes: &[Vec<usize>],
    init: &[Vec<f64>],
    f: &dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
) -> f64 {
    let params: Vec<Tensor<f64>> = shapes
        .iter()
        .zip(init)
        .map(|(s, v)| Tensor::param(s, v.clone()).unwrap())
        .collect();
    let loss = f(&params).unwrap();
    backward(&loss).unwrap();
    let grads: Vec<Vec<f64>> = params.iter().map(|p| p.grad().unwrap()).collect();

    let eval = |values: &[Vec<f64>]| -> f64 {
        let leaves: Vec<Tensor<f64>> = shapes
            .iter()
            .zip(values)
            .map(|(s, v)| Tensor::from_values(s, v.clone()).unwrap())
            .collect();
        f(&leaves).unwrap().values()[0]
    };

    let mut worst = 0.0_f64;
    for k in 0..init.len() {
        for i in 0..init[k].len() {
            let mut plus = init.to_vec();
            plus[k][i] += H;
            let mut minus = init.to_vec();
            minus[k][i] -= H;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * H);
            let a = grads[k][i];
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-3));
        }
    }
    worst
}

fn weighted(y: Tensor<f64>, w: &[f64]) -> Result<Tensor<f64>> {
    let wt = Tensor::from_values(y.shape(), w.to_vec())?;
    ops::sum(&ops::mul(&y, &wt)?)
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);

    let x = randn(&mut rng, 2 * 2 * 4 * 4 * 4);
    let kernel = randn(&mut rng, 3 * 2 * 27);
    let w = randn(&mut rng, 2 * 3 * 8);
    let err = check(
        &[vec![2, 2, 4, 4, 4], vec![3, 2, 3, 3, 3]],
        &[x, kernel],
        &|t| {
            let p = ConvParams::new(t[1].clone(), None, [2, 2, 2], [1, 1, 1])?;
            weighted(ops::conv3d(&t[0], &p)?, &w)
        },
    );
    println!("conv3d (stride 2, pad 1)      max rel err {err:.2e}");

    let x = randn(&mut rng, 2 * 3 * 8);
    let gamma = randn(&mut rng, 3);
    let beta = randn(&mut rng, 3);
    let w = randn(&mut rng, 2 * 3 * 8);
    let err = check(
        &[vec![2, 3, 2, 2, 2], vec![3], vec![3]],
        &[x, gamma, beta],
        &|t| {
            let bn = ops::BatchNormState::new(t[1].clone(), t[2].clone(), 0.1, 1e-5)?;
            weighted(ops::batchnorm3d(&t[0], &bn)?, &w)
        },
    );
    println!("batchnorm3d (training stats)  max rel err {err:.2e}");

    let logits = randn(&mut rng, 4 * 2);
    let err = check(&[vec![4, 2]], &[logits], &|t| {
        ops::weighted_cross_entropy(&t[0], &[0, 1, 1, 0], &[1.25, 0.8])
    });
    println!("weighted_cross_entropy        max rel err {err:.2e}");

    let x = randn(&mut rng, 3 * 5);
    let wm = randn(&mut rng, 2 * 5);
    let b = randn(&mut rng, 2);
    let w = randn(&mut rng, 3 * 2);
    let err = check(
        &[vec![3, 5], vec![2, 5], vec![2]],
        &[x, wm, b],
        &|t| weighted(ops::linear(&t[0], &t[1], Some(&t[2]))?, &w),
    );
    println!("linear (with bias)            max rel err {err:.2e}");

    println!("\nall within 1e-4 of finite differences (step {H:.0e}, f64)");
}
