//! Concatenation along axis 1 (channels of a volume batch, or features of a
//! vector batch).

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Concatenates along axis 1. All parts must agree on every other axis.
/// Works for any rank >= 2; in practice rank 5 (channel concat) and rank 2
/// (feature concat).
pub fn concat_axis1<E: Element>(parts: &[&Tensor<E>]) -> Result<Tensor<E>> {
    if parts.len() < 2 {
        return Err(Error::Config("concat needs at least two tensors".into()));
    }
    let first = parts[0].shape();
    if first.len() < 2 {
        return Err(Error::Config(format!(
            "concat requires rank >= 2, got shape {first:?}"
        )));
    }
    for p in parts {
        let s = p.shape();
        if s.len() != first.len() || s[0] != first[0] || s[2..] != first[2..] {
            return Err(Error::Config(format!(
                "concat shapes differ outside axis 1: {first:?} vs {s:?}"
            )));
        }
    }
    let batch = first[0];
    let inner: usize = first[2..].iter().product();
    let axis_sizes: Vec<usize> = parts.iter().map(|p| p.shape()[1]).collect();
    let total_axis: usize = axis_sizes.iter().sum();

    let mut shape = first.to_vec();
    shape[1] = total_axis;
    let mut out = vec![E::zero(); batch * total_axis * inner];
    for bi in 0..batch {
        let mut dst = bi * total_axis * inner;
        for (p, &ax) in parts.iter().zip(&axis_sizes) {
            let pv = p.values();
            let src = bi * ax * inner;
            out[dst..dst + ax * inner].copy_from_slice(&pv[src..src + ax * inner]);
            dst += ax * inner;
        }
    }

    let owned: Vec<Tensor<E>> = parts.iter().map(|p| (*p).clone()).collect();
    let parents = owned.clone();
    Ok(Tensor::from_op(shape, out, parents, move || {
        Box::new(move |g: &[E]| {
            let mut offset = 0usize;
            for (p, &ax) in owned.iter().zip(&axis_sizes) {
                if p.requires_grad() {
                    let mut dp = vec![E::zero(); batch * ax * inner];
                    for bi in 0..batch {
                        let src = bi * total_axis * inner + offset * inner;
                        let dst = bi * ax * inner;
                        dp[dst..dst + ax * inner]
                            .copy_from_slice(&g[src..src + ax * inner]);
                    }
                    p.accumulate_grad(&dp);
                }
                offset += ax;
            }
        })
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{backward, ops};

    #[test]
    fn channel_concat_preserves_order_and_values() {
        // [1,1,2] ++ [1,2,2] -> [1,3,2].
        let a = Tensor::<f64>::param(&[1, 1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::<f64>::param(&[1, 2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = concat_axis1(&[&a, &b]).unwrap();
        assert_eq!(y.shape(), &[1, 3, 2]);
        assert_eq!(*y.values(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let loss = ops::sum(&y).unwrap();
        backward(&loss).unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0, 1.0]);
        assert_eq!(b.grad().unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn batch_interleaving_is_per_item() {
        // Two batch items, feature vectors: [[1,2],[3,4]] ++ [[9],[8]].
        let a = Tensor::<f32>::from_values(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::<f32>::from_values(&[2, 1], vec![9.0, 8.0]).unwrap();
        let y = concat_axis1(&[&a, &b]).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        assert_eq!(*y.values(), vec![1.0, 2.0, 9.0, 3.0, 4.0, 8.0]);
    }

    #[test]
    fn mismatched_trailing_axes_rejected() {
        let a = Tensor::<f32>::from_values(&[1, 1, 2], vec![0.0; 2]).unwrap();
        let b = Tensor::<f32>::from_values(&[1, 1, 3], vec![0.0; 3]).unwrap();
        assert!(matches!(concat_axis1(&[&a, &b]), Err(Error::Config(_))));
    }
}
