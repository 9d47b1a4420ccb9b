//! Elementwise operations: add, mul (optionally broadcasting a one-channel
//! second operand across the channel axis), relu, sigmoid, tanh, and scalar
//! affine maps.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// How the operand shapes of a binary op relate.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Broadcast {
    /// Identical shapes, plain elementwise.
    Same,
    /// `b` has channel extent 1 (axis 1) and matches `a` elsewhere; the
    /// single channel map is applied against every channel of `a`.
    Channel,
}

fn classify<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Broadcast> {
    if a.shape() == b.shape() {
        return Ok(Broadcast::Same);
    }
    let (sa, sb) = (a.shape(), b.shape());
    let compatible = sa.len() == sb.len()
        && sa.len() >= 2
        && sb[1] == 1
        && sa[0] == sb[0]
        && sa[2..] == sb[2..];
    if compatible {
        Ok(Broadcast::Channel)
    } else {
        Err(Error::Config(format!(
            "pointwise operands have incompatible shapes {sa:?} and {sb:?} \
             (need equal shapes, or a one-channel second operand)"
        )))
    }
}

/// (batch, channels, per-channel extent) decomposition for broadcasting.
fn bci(shape: &[usize]) -> (usize, usize, usize) {
    let batch = shape[0];
    let chan = shape[1];
    let inner: usize = shape[2..].iter().product();
    (batch, chan, inner)
}

/// Elementwise sum. `b` may have a single channel, in which case it is added
/// to every channel of `a`.
pub fn add<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    let kind = classify(a, b)?;
    let out = match kind {
        Broadcast::Same => {
            let av = a.values();
            let bv = b.values();
            av.iter().zip(bv.iter()).map(|(&x, &y)| x + y).collect::<Vec<E>>()
        }
        Broadcast::Channel => {
            let (batch, chan, inner) = bci(a.shape());
            let av = a.values();
            let bv = b.values();
            let mut out = vec![E::zero(); av.len()];
            for bi in 0..batch {
                let brow = &bv[bi * inner..(bi + 1) * inner];
                for c in 0..chan {
                    let off = (bi * chan + c) * inner;
                    let arow = &av[off..off + inner];
                    let orow = &mut out[off..off + inner];
                    for i in 0..inner {
                        orow[i] = arow[i] + brow[i];
                    }
                }
            }
            out
        }
    };
    #[cfg(debug_assertions)]
    crate::tensor::check_finite("add", &out)?;
    let (ac, bc) = (a.clone(), b.clone());
    Ok(Tensor::from_op(a.shape().to_vec(), out, vec![a.clone(), b.clone()], move || {
        Box::new(move |g: &[E]| {
            if ac.requires_grad() {
                ac.accumulate_grad(g);
            }
            if bc.requires_grad() {
                match kind {
                    Broadcast::Same => bc.accumulate_grad(g),
                    Broadcast::Channel => {
                        let (batch, chan, inner) = bci(ac.shape());
                        let mut db = vec![E::zero(); batch * inner];
                        for bi in 0..batch {
                            for c in 0..chan {
                                let off = (bi * chan + c) * inner;
                                let dst = &mut db[bi * inner..(bi + 1) * inner];
                                for i in 0..inner {
                                    dst[i] += g[off + i];
                                }
                            }
                        }
                        bc.accumulate_grad(&db);
                    }
                }
            }
        })
    }))
}

/// Elementwise product. `b` may have a single channel, in which case each
/// channel of `a` is scaled by the same one-channel map.
pub fn mul<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    let kind = classify(a, b)?;
    let out = match kind {
        Broadcast::Same => {
            let av = a.values();
            let bv = b.values();
            av.iter().zip(bv.iter()).map(|(&x, &y)| x * y).collect::<Vec<E>>()
        }
        Broadcast::Channel => {
            let (batch, chan, inner) = bci(a.shape());
            let av = a.values();
            let bv = b.values();
            let mut out = vec![E::zero(); av.len()];
            for bi in 0..batch {
                let brow = &bv[bi * inner..(bi + 1) * inner];
                for c in 0..chan {
                    let off = (bi * chan + c) * inner;
                    let arow = &av[off..off + inner];
                    let orow = &mut out[off..off + inner];
                    for i in 0..inner {
                        orow[i] = arow[i] * brow[i];
                    }
                }
            }
            out
        }
    };
    #[cfg(debug_assertions)]
    crate::tensor::check_finite("mul", &out)?;
    let (ac, bc) = (a.clone(), b.clone());
    Ok(Tensor::from_op(a.shape().to_vec(), out, vec![a.clone(), b.clone()], move || {
        Box::new(move |g: &[E]| {
            match kind {
                Broadcast::Same => {
                    if ac.requires_grad() {
                        let bv = bc.values();
                        let da: Vec<E> =
                            g.iter().zip(bv.iter()).map(|(&gi, &bi)| gi * bi).collect();
                        drop(bv);
                        ac.accumulate_grad(&da);
                    }
                    if bc.requires_grad() {
                        let av = ac.values();
                        let db: Vec<E> =
                            g.iter().zip(av.iter()).map(|(&gi, &ai)| gi * ai).collect();
                        drop(av);
                        bc.accumulate_grad(&db);
                    }
                }
                Broadcast::Channel => {
                    let (batch, chan, inner) = bci(ac.shape());
                    if ac.requires_grad() {
                        let bv = bc.values();
                        let mut da = vec![E::zero(); batch * chan * inner];
                        for bi in 0..batch {
                            let brow = &bv[bi * inner..(bi + 1) * inner];
                            for c in 0..chan {
                                let off = (bi * chan + c) * inner;
                                let dst = &mut da[off..off + inner];
                                for i in 0..inner {
                                    dst[i] = g[off + i] * brow[i];
                                }
                            }
                        }
                        drop(bv);
                        ac.accumulate_grad(&da);
                    }
                    if bc.requires_grad() {
                        let av = ac.values();
                        let mut db = vec![E::zero(); batch * inner];
                        for bi in 0..batch {
                            for c in 0..chan {
                                let off = (bi * chan + c) * inner;
                                let arow = &av[off..off + inner];
                                let dst = &mut db[bi * inner..(bi + 1) * inner];
                                for i in 0..inner {
                                    dst[i] += g[off + i] * arow[i];
                                }
                            }
                        }
                        drop(av);
                        bc.accumulate_grad(&db);
                    }
                }
            }
        })
    }))
}

/// Rectified linear unit. The subgradient at 0 is taken as 0.
pub fn relu<E: Element>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let out: Vec<E> =
        x.values().iter().map(|&v| if v > E::zero() { v } else { E::zero() }).collect();
    let xc = x.clone();
    Ok(Tensor::from_op(x.shape().to_vec(), out, vec![x.clone()], move || {
        Box::new(move |g: &[E]| {
            if xc.requires_grad() {
                let xv = xc.values();
                let dx: Vec<E> = g
                    .iter()
                    .zip(xv.iter())
                    .map(|(&gi, &xi)| if xi > E::zero() { gi } else { E::zero() })
                    .collect();
                drop(xv);
                xc.accumulate_grad(&dx);
            }
        })
    }))
}

/// Logistic sigmoid, computed in a saturation-safe form.
pub fn sigmoid<E: Element>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let out: Vec<E> = x.values().iter().map(|&v| stable_sigmoid(v)).collect();
    #[cfg(debug_assertions)]
    crate::tensor::check_finite("sigmoid", &out)?;
    let xc = x.clone();
    Ok(Tensor::from_op(x.shape().to_vec(), out, vec![x.clone()], move || {
        Box::new(move |g: &[E]| {
            if xc.requires_grad() {
                let xv = xc.values();
                let dx: Vec<E> = g
                    .iter()
                    .zip(xv.iter())
                    .map(|(&gi, &xi)| {
                        let s = stable_sigmoid(xi);
                        gi * s * (E::one() - s)
                    })
                    .collect();
                drop(xv);
                xc.accumulate_grad(&dx);
            }
        })
    }))
}

fn stable_sigmoid<E: Element>(v: E) -> E {
    if v >= E::zero() {
        E::one() / (E::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (E::one() + e)
    }
}

/// Hyperbolic tangent.
pub fn tanh<E: Element>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let out: Vec<E> = x.values().iter().map(|&v| v.tanh()).collect();
    let xc = x.clone();
    Ok(Tensor::from_op(x.shape().to_vec(), out, vec![x.clone()], move || {
        Box::new(move |g: &[E]| {
            if xc.requires_grad() {
                let xv = xc.values();
                let dx: Vec<E> = g
                    .iter()
                    .zip(xv.iter())
                    .map(|(&gi, &xi)| {
                        let t = xi.tanh();
                        gi * (E::one() - t * t)
                    })
                    .collect();
                drop(xv);
                xc.accumulate_grad(&dx);
            }
        })
    }))
}

/// `scale * x + shift` with compile-time-constant coefficients, e.g. the
/// `1 - z` complement used by gated units.
pub fn affine<E: Element>(x: &Tensor<E>, scale: E, shift: E) -> Result<Tensor<E>> {
    let out: Vec<E> = x.values().iter().map(|&v| scale * v + shift).collect();
    #[cfg(debug_assertions)]
    crate::tensor::check_finite("affine", &out)?;
    let xc = x.clone();
    Ok(Tensor::from_op(x.shape().to_vec(), out, vec![x.clone()], move || {
        Box::new(move |g: &[E]| {
            if xc.requires_grad() {
                let dx: Vec<E> = g.iter().map(|&gi| gi * scale).collect();
                xc.accumulate_grad(&dx);
            }
        })
    }))
}
