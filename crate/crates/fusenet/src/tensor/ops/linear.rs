//! Fully connected layer on feature vectors.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// `y[b, o] = sum_f w[o, f] * x[b, f] (+ bias[o])`.
///
/// `x` is `[batch, features]`, `w` is `[out, features]` (row-major per output
/// neuron), `bias` is `[out]` when present.
pub fn linear<E: Element>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    bias: Option<&Tensor<E>>,
) -> Result<Tensor<E>> {
    let xs = x.shape();
    let ws = w.shape();
    if xs.len() != 2 || ws.len() != 2 {
        return Err(Error::Config(format!(
            "linear expects 2-axis input and weight, got {xs:?} and {ws:?}"
        )));
    }
    let (batch, feat) = (xs[0], xs[1]);
    let (out_dim, wfeat) = (ws[0], ws[1]);
    if feat != wfeat {
        return Err(Error::Config(format!(
            "linear feature mismatch: input has {feat}, weight expects {wfeat}"
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [out_dim] {
            return Err(Error::Config(format!(
                "linear bias shape {:?} does not match {out_dim} outputs",
                b.shape()
            )));
        }
    }

    let xv = x.values();
    let wv = w.values();
    let mut out = vec![E::zero(); batch * out_dim];
    for bi in 0..batch {
        let xrow = &xv[bi * feat..(bi + 1) * feat];
        let orow = &mut out[bi * out_dim..(bi + 1) * out_dim];
        for (o, ov) in orow.iter_mut().enumerate() {
            let wrow = &wv[o * feat..(o + 1) * feat];
            let mut acc = E::zero();
            for (xi, wi) in xrow.iter().zip(wrow) {
                acc += *xi * *wi;
            }
            *ov = acc;
        }
    }
    drop(xv);
    drop(wv);
    if let Some(b) = bias {
        let bv = b.values();
        for row in out.chunks_exact_mut(out_dim) {
            for (o, v) in row.iter_mut().enumerate() {
                *v += bv[o];
            }
        }
    }
    #[cfg(debug_assertions)]
    crate::tensor::check_finite("linear", &out)?;

    let mut parents = vec![x.clone(), w.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    let (xc, wc, bc) = (x.clone(), w.clone(), bias.cloned());
    Ok(Tensor::from_op(vec![batch, out_dim], out, parents, move || {
        Box::new(move |g: &[E]| {
            if xc.requires_grad() {
                let wv = wc.values();
                let mut dx = vec![E::zero(); batch * feat];
                for bi in 0..batch {
                    let grow = &g[bi * out_dim..(bi + 1) * out_dim];
                    let drow = &mut dx[bi * feat..(bi + 1) * feat];
                    for (o, &go) in grow.iter().enumerate() {
                        let wrow = &wv[o * feat..(o + 1) * feat];
                        for (d, wi) in drow.iter_mut().zip(wrow) {
                            *d += go * *wi;
                        }
                    }
                }
                drop(wv);
                xc.accumulate_grad(&dx);
            }
            if wc.requires_grad() {
                let xv = xc.values();
                let mut dw = vec![E::zero(); out_dim * feat];
                for bi in 0..batch {
                    let grow = &g[bi * out_dim..(bi + 1) * out_dim];
                    let xrow = &xv[bi * feat..(bi + 1) * feat];
                    for (o, &go) in grow.iter().enumerate() {
                        let drow = &mut dw[o * feat..(o + 1) * feat];
                        for (d, xi) in drow.iter_mut().zip(xrow) {
                            *d += go * *xi;
                        }
                    }
                }
                drop(xv);
                wc.accumulate_grad(&dw);
            }
            if let Some(b) = &bc {
                if b.requires_grad() {
                    let mut db = vec![E::zero(); out_dim];
                    for grow in g.chunks_exact(out_dim) {
                        for (d, &go) in db.iter_mut().zip(grow) {
                            *d += go;
                        }
                    }
                    b.accumulate_grad(&db);
                }
            }
        })
    }))
}
