//! Dense 3D convolution over `[batch, chan, depth, height, width]` volumes.
//!
//! Forward and backward both lower to matrix products via im2col: the kernel
//! flattens to an `[out_chan, k]` matrix (`k = in_chan * kd * kh * kw`) whose
//! column index matches the im2col row index, so one accumulating GEMM per
//! batch item does all the work. The GEMM processes four output rows at a
//! time with a tiled streaming inner loop, which the compiler auto-vectorizes;
//! everything is sequential and deterministic.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Kernel, optional per-output-channel bias, stride, and zero padding for a
/// 3D convolution. Kernel layout is `[out_chan, in_chan, kd, kh, kw]`;
/// stride and padding are `[depth, height, width]`.
#[derive(Clone)]
pub struct ConvParams<E: Element> {
    pub kernel: Tensor<E>,
    pub bias: Option<Tensor<E>>,
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl<E: Element> ConvParams<E> {
    pub fn new(
        kernel: Tensor<E>,
        bias: Option<Tensor<E>>,
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Self> {
        if kernel.shape().len() != 5 {
            return Err(Error::Config(format!(
                "conv kernel must have 5 axes, got shape {:?}",
                kernel.shape()
            )));
        }
        if stride.iter().any(|&s| s == 0) {
            return Err(Error::Config(format!("conv stride must be positive, got {stride:?}")));
        }
        if let Some(b) = &bias {
            let oc = kernel.shape()[0];
            if b.shape() != [oc] {
                return Err(Error::Config(format!(
                    "conv bias shape {:?} does not match {oc} output channels",
                    b.shape()
                )));
            }
        }
        Ok(ConvParams { kernel, bias, stride, padding })
    }
}

struct Geometry {
    batch: usize,
    in_chan: usize,
    in_dims: [usize; 3],
    out_chan: usize,
    kdims: [usize; 3],
    out_dims: [usize; 3],
    stride: [usize; 3],
    padding: [usize; 3],
    /// im2col row count: in_chan * kd * kh * kw.
    k: usize,
    /// im2col column count: od * oh * ow.
    n: usize,
}

fn geometry<E: Element>(x: &Tensor<E>, p: &ConvParams<E>) -> Result<Geometry> {
    let xs = x.shape();
    if xs.len() != 5 {
        return Err(Error::Config(format!(
            "conv3d expects [batch, chan, d, h, w] input, got shape {xs:?}"
        )));
    }
    let ks = p.kernel.shape();
    if xs[1] != ks[1] {
        return Err(Error::Config(format!(
            "conv3d channel mismatch: input has {}, kernel expects {}",
            xs[1], ks[1]
        )));
    }
    let in_dims = [xs[2], xs[3], xs[4]];
    let kdims = [ks[2], ks[3], ks[4]];
    let mut out_dims = [0usize; 3];
    for a in 0..3 {
        let padded = in_dims[a] + 2 * p.padding[a];
        if padded < kdims[a] {
            return Err(Error::Config(format!(
                "conv3d kernel extent {} exceeds padded input extent {} on axis {a}",
                kdims[a], padded
            )));
        }
        out_dims[a] = (padded - kdims[a]) / p.stride[a] + 1;
    }
    Ok(Geometry {
        batch: xs[0],
        in_chan: xs[1],
        in_dims,
        out_chan: ks[0],
        kdims,
        out_dims,
        stride: p.stride,
        padding: p.padding,
        k: ks[1] * ks[2] * ks[3] * ks[4],
        n: out_dims.iter().product(),
    })
}

/// Writes the im2col matrix (`k` rows of `n` columns) for one batch item.
/// Every element of `cols` is written, so the buffer needs no pre-clearing.
fn im2col<E: Element>(g: &Geometry, item: &[E], cols: &mut [E]) {
    let [id, ih, iw] = g.in_dims;
    let [kd, kh, kw] = g.kdims;
    let [od, oh, ow] = g.out_dims;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.padding;
    let mut row = 0usize;
    for ic in 0..g.in_chan {
        let coff = ic * id * ih * iw;
        for dz in 0..kd {
            for dy in 0..kh {
                for dx in 0..kw {
                    let dst_row = &mut cols[row * g.n..(row + 1) * g.n];
                    row += 1;
                    for z in 0..od {
                        let src_z = (z * sd + dz) as isize - pd as isize;
                        let plane = &mut dst_row[z * oh * ow..(z + 1) * oh * ow];
                        if src_z < 0 || src_z >= id as isize {
                            plane.fill(E::zero());
                            continue;
                        }
                        let zoff = coff + src_z as usize * ih * iw;
                        for y in 0..oh {
                            let src_y = (y * sh + dy) as isize - ph as isize;
                            let seg = &mut plane[y * ow..(y + 1) * ow];
                            if src_y < 0 || src_y >= ih as isize {
                                seg.fill(E::zero());
                                continue;
                            }
                            let yoff = zoff + src_y as usize * iw;
                            let base = dx as isize - pw as isize;
                            if sw == 1 {
                                // Contiguous run with zeroed out-of-range edges.
                                let lo = (-base).max(0) as usize;
                                let hi = ((iw as isize - base).max(0) as usize).min(ow);
                                let (lo, hi) = (lo.min(ow), hi.max(lo.min(ow)));
                                seg[..lo].fill(E::zero());
                                if hi > lo {
                                    let s = (base + lo as isize) as usize;
                                    seg[lo..hi]
                                        .copy_from_slice(&item[yoff + s..yoff + s + (hi - lo)]);
                                }
                                seg[hi..].fill(E::zero());
                            } else {
                                for (x, out) in seg.iter_mut().enumerate() {
                                    let src_x = (x * sw) as isize + base;
                                    *out = if src_x < 0 || src_x >= iw as isize {
                                        E::zero()
                                    } else {
                                        item[yoff + src_x as usize]
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    debug_assert_eq!(row, g.k);
}

/// Scatters gradient columns back into an input-shaped buffer: the exact
/// adjoint of [`im2col`] (out-of-range positions are dropped).
fn col2im_add<E: Element>(g: &Geometry, cols: &[E], item: &mut [E]) {
    let [id, ih, iw] = g.in_dims;
    let [kd, kh, kw] = g.kdims;
    let [od, oh, ow] = g.out_dims;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.padding;
    let mut row = 0usize;
    for ic in 0..g.in_chan {
        let coff = ic * id * ih * iw;
        for dz in 0..kd {
            for dy in 0..kh {
                for dx in 0..kw {
                    let src_row = &cols[row * g.n..(row + 1) * g.n];
                    row += 1;
                    for z in 0..od {
                        let dst_z = (z * sd + dz) as isize - pd as isize;
                        if dst_z < 0 || dst_z >= id as isize {
                            continue;
                        }
                        let zoff = coff + dst_z as usize * ih * iw;
                        let plane = &src_row[z * oh * ow..(z + 1) * oh * ow];
                        for y in 0..oh {
                            let dst_y = (y * sh + dy) as isize - ph as isize;
                            if dst_y < 0 || dst_y >= ih as isize {
                                continue;
                            }
                            let yoff = zoff + dst_y as usize * iw;
                            let seg = &plane[y * ow..(y + 1) * ow];
                            let base = dx as isize - pw as isize;
                            if sw == 1 {
                                let lo = (-base).max(0) as usize;
                                let hi = ((iw as isize - base).max(0) as usize).min(ow);
                                if hi > lo.min(ow) {
                                    let lo = lo.min(ow);
                                    let s = (base + lo as isize) as usize;
                                    let dst = &mut item[yoff + s..yoff + s + (hi - lo)];
                                    for (d, &v) in dst.iter_mut().zip(&seg[lo..hi]) {
                                        *d += v;
                                    }
                                }
                            } else {
                                for (x, &v) in seg.iter().enumerate() {
                                    let dst_x = (x * sw) as isize + base;
                                    if dst_x >= 0 && dst_x < iw as isize {
                                        item[yoff + dst_x as usize] += v;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Column tile width for the streaming GEMM; 4096 f32 = 16 KiB keeps four
/// output rows plus one operand row inside L1/L2.
const N_TILE: usize = 4096;

/// `out[m x n] += a[m x k] * b[k x n]`, four output rows at a time.
pub(crate) fn gemm_acc<E: Element>(out: &mut [E], a: &[E], b: &[E], m: usize, k: usize, n: usize) {
    debug_assert_eq!(out.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut mi = 0usize;
    for block in out.chunks_mut(4 * n) {
        let rows = block.len() / n;
        for n0 in (0..n).step_by(N_TILE) {
            let nw = (n - n0).min(N_TILE);
            if rows == 4 {
                let (r0, rest) = block.split_at_mut(n);
                let (r1, rest) = rest.split_at_mut(n);
                let (r2, r3) = rest.split_at_mut(n);
                let r0 = &mut r0[n0..n0 + nw];
                let r1 = &mut r1[n0..n0 + nw];
                let r2 = &mut r2[n0..n0 + nw];
                let r3 = &mut r3[n0..n0 + nw];
                for kk in 0..k {
                    let w0 = a[mi * k + kk];
                    let w1 = a[(mi + 1) * k + kk];
                    let w2 = a[(mi + 2) * k + kk];
                    let w3 = a[(mi + 3) * k + kk];
                    let brow = &b[kk * n + n0..kk * n + n0 + nw];
                    for j in 0..nw {
                        let bv = brow[j];
                        r0[j] += w0 * bv;
                        r1[j] += w1 * bv;
                        r2[j] += w2 * bv;
                        r3[j] += w3 * bv;
                    }
                }
            } else {
                for (r, row) in block.chunks_mut(n).enumerate() {
                    let dst = &mut row[n0..n0 + nw];
                    for kk in 0..k {
                        let w = a[(mi + r) * k + kk];
                        let brow = &b[kk * n + n0..kk * n + n0 + nw];
                        for (d, &bv) in dst.iter_mut().zip(brow) {
                            *d += w * bv;
                        }
                    }
                }
            }
        }
        mi += rows;
    }
}

/// Out-of-place transpose of an `r x c` row-major matrix, in 32x32 tiles.
fn transpose<E: Element>(src: &[E], dst: &mut [E], r: usize, c: usize) {
    debug_assert_eq!(src.len(), r * c);
    debug_assert_eq!(dst.len(), r * c);
    const T: usize = 32;
    for i0 in (0..r).step_by(T) {
        for j0 in (0..c).step_by(T) {
            for i in i0..(i0 + T).min(r) {
                for j in j0..(j0 + T).min(c) {
                    dst[j * r + i] = src[i * c + j];
                }
            }
        }
    }
}

/// 3D convolution. See [`ConvParams`] for layout conventions. Output shape
/// per spatial axis is `(in + 2 * padding - kernel) / stride + 1`.
pub fn conv3d<E: Element>(x: &Tensor<E>, p: &ConvParams<E>) -> Result<Tensor<E>> {
    let g = geometry(x, p)?;
    let in_item = g.in_chan * g.in_dims.iter().product::<usize>();
    let out_item = g.out_chan * g.n;

    let mut out = vec![E::zero(); g.batch * out_item];
    {
        let xv = x.values();
        let kv = p.kernel.values();
        let bias_v = p.bias.as_ref().map(|b| b.values_vec());
        let mut cols = vec![E::zero(); g.k * g.n];
        for bi in 0..g.batch {
            let item = &xv[bi * in_item..(bi + 1) * in_item];
            im2col(&g, item, &mut cols);
            let dst = &mut out[bi * out_item..(bi + 1) * out_item];
            if let Some(bv) = &bias_v {
                for (oc, row) in dst.chunks_exact_mut(g.n).enumerate() {
                    row.fill(bv[oc]);
                }
            }
            gemm_acc(dst, &kv, &cols, g.out_chan, g.k, g.n);
        }
    }
    #[cfg(debug_assertions)]
    crate::tensor::check_finite("conv3d", &out)?;

    let shape = vec![g.batch, g.out_chan, g.out_dims[0], g.out_dims[1], g.out_dims[2]];
    let xc = x.clone();
    let kernel = p.kernel.clone();
    let bias = p.bias.clone();
    let mut parents = vec![x.clone(), p.kernel.clone()];
    if let Some(b) = &p.bias {
        parents.push(b.clone());
    }
    Ok(Tensor::from_op(shape, out, parents, move || {
        Box::new(move |grad: &[E]| {
            let need_dx = xc.requires_grad();
            let need_dw = kernel.requires_grad();
            let need_db = bias.as_ref().map(|b| b.requires_grad()).unwrap_or(false);
            if !(need_dx || need_dw || need_db) {
                return;
            }
            let xv = xc.values();
            let kv = kernel.values();
            let mut cols = vec![E::zero(); g.k * g.n];
            let mut cols_t = if need_dw { vec![E::zero(); g.k * g.n] } else { Vec::new() };
            let mut dcols = if need_dx { vec![E::zero(); g.k * g.n] } else { Vec::new() };
            // Kernel matrix transposed once: [k x out_chan].
            let kt = if need_dx {
                let mut kt = vec![E::zero(); g.k * g.out_chan];
                transpose(&kv, &mut kt, g.out_chan, g.k);
                kt
            } else {
                Vec::new()
            };
            let mut dw = if need_dw { vec![E::zero(); g.out_chan * g.k] } else { Vec::new() };
            let mut db = if need_db { vec![E::zero(); g.out_chan] } else { Vec::new() };
            let mut dx = if need_dx { vec![E::zero(); xv.len()] } else { Vec::new() };

            for bi in 0..g.batch {
                let gitem = &grad[bi * out_item..(bi + 1) * out_item];
                if need_dw || need_dx {
                    im2col(&g, &xv[bi * in_item..(bi + 1) * in_item], &mut cols);
                }
                if need_dw {
                    // dw[oc, k] += sum_n gitem[oc, n] * cols[k, n], done as
                    // axpy rows over the transposed im2col matrix.
                    transpose(&cols, &mut cols_t, g.k, g.n);
                    for oc in 0..g.out_chan {
                        let grow = &gitem[oc * g.n..(oc + 1) * g.n];
                        let drow = &mut dw[oc * g.k..(oc + 1) * g.k];
                        for (nn, &gv) in grow.iter().enumerate() {
                            if gv == E::zero() {
                                continue;
                            }
                            let crow = &cols_t[nn * g.k..(nn + 1) * g.k];
                            for (d, &cv) in drow.iter_mut().zip(crow) {
                                *d += gv * cv;
                            }
                        }
                    }
                }
                if need_db {
                    for (oc, d) in db.iter_mut().enumerate() {
                        let grow = &gitem[oc * g.n..(oc + 1) * g.n];
                        *d += grow.iter().fold(E::zero(), |acc, &v| acc + v);
                    }
                }
                if need_dx {
                    dcols.fill(E::zero());
                    gemm_acc(&mut dcols, &kt, gitem, g.k, g.out_chan, g.n);
                    col2im_add(&g, &dcols, &mut dx[bi * in_item..(bi + 1) * in_item]);
                }
            }
            drop(xv);
            drop(kv);
            if need_dx {
                xc.accumulate_grad(&dx);
            }
            if need_dw {
                kernel.accumulate_grad(&dw);
            }
            if need_db {
                bias.as_ref().unwrap().accumulate_grad(&db);
            }
        })
    }))
}
