//! Reductions: full sum (scalar) and global average pooling over the spatial
//! axes of a 5-axis volume batch.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Sum of all entries, as a rank-0 tensor. Gradient is all ones.
pub fn sum<E: Element>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let total = x.values().iter().fold(E::zero(), |acc, &v| acc + v);
    let xc = x.clone();
    Ok(Tensor::from_op(vec![], vec![total], vec![x.clone()], move || {
        Box::new(move |g: &[E]| {
            if xc.requires_grad() {
                let dx = vec![g[0]; xc.numel()];
                xc.accumulate_grad(&dx);
            }
        })
    }))
}

/// Mean over the three spatial axes: `[batch, chan, d, h, w] -> [batch, chan]`.
pub fn global_avg_pool<E: Element>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let shape = x.shape();
    if shape.len() != 5 {
        return Err(Error::Config(format!(
            "global_avg_pool expects a 5-axis input, got shape {shape:?}"
        )));
    }
    let (batch, chan) = (shape[0], shape[1]);
    let vox = shape[2] * shape[3] * shape[4];
    if vox == 0 {
        return Err(Error::Config("global_avg_pool on empty spatial extent".into()));
    }
    let inv = E::one() / E::from_usize(vox).unwrap();
    let xv = x.values();
    let mut out = vec![E::zero(); batch * chan];
    for (i, o) in out.iter_mut().enumerate() {
        let row = &xv[i * vox..(i + 1) * vox];
        *o = row.iter().fold(E::zero(), |acc, &v| acc + v) * inv;
    }
    drop(xv);
    let xc = x.clone();
    Ok(Tensor::from_op(vec![batch, chan], out, vec![x.clone()], move || {
        Box::new(move |g: &[E]| {
            if xc.requires_grad() {
                let mut dx = vec![E::zero(); xc.numel()];
                for (i, &gi) in g.iter().enumerate() {
                    let v = gi * inv;
                    for d in &mut dx[i * vox..(i + 1) * vox] {
                        *d = v;
                    }
                }
                xc.accumulate_grad(&dx);
            }
        })
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::backward;

    #[test]
    fn gap_averages_each_channel_independently() {
        // One batch, two channels of 2x1x2 voxels.
        let x = Tensor::<f64>::param(
            &[1, 2, 2, 1, 2],
            vec![1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0],
        )
        .unwrap();
        let y = global_avg_pool(&x).unwrap();
        assert_eq!(y.shape(), &[1, 2]);
        assert_eq!(*y.values(), vec![2.5, 25.0]);
        let loss = sum(&y).unwrap();
        backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.25; 8]);
    }

    #[test]
    fn gap_rejects_wrong_rank() {
        let x = Tensor::<f32>::from_values(&[2, 3], vec![0.0; 6]).unwrap();
        assert!(matches!(global_avg_pool(&x), Err(Error::Config(_))));
    }
}
