//! Differentiable array operations.
//!
//! All image-shaped tensors are NCHW. Binary elementwise ops accept equal
//! shapes or the single sanctioned broadcast: a 1-channel tensor against an
//! n-channel one (same N, H, W), which is how a 1-channel illumination map
//! multiplies an RGB reflectance map. Broadcast gradients sum-reduce over the
//! broadcast channel axis.

use rayon::prelude::*;

use super::{Tensor, TensorError};
use crate::scalar::Scalar;

fn dims4<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<[usize; 4], TensorError> {
    match t.shape() {
        [n, c, h, w] => Ok([*n, *c, *h, *w]),
        s => Err(TensorError::ShapeMismatch {
            op,
            detail: format!("expected a 4-d NCHW tensor, got shape {:?}", s),
        }),
    }
}

/// C = A(m,k) * B(k,n), accumulated in a fixed order. Rows of C are
/// independent, so the rayon split stays deterministic.
fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let arow = &a[i * k..(i + 1) * k];
        for (l, &av) in arow.iter().enumerate() {
            if av != T::zero() {
                let brow = &b[l * n..(l + 1) * n];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o = *o + av * bv;
                }
            }
        }
    });
}

/// Unfold conv patches: output is (cin*kh*kw) x (oh*ow) for one sample.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    input: &[T],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
    col: &mut [T],
) {
    let pats = oh * ow;
    for c in 0..cin {
        let chan = &input[c * h * w..(c + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = &mut col[((c * kh + ki) * kw + kj) * pats..][..pats];
                for oi in 0..oh {
                    let ii = (oi * stride + ki) as isize - padding as isize;
                    if ii < 0 || ii >= h as isize {
                        row[oi * ow..(oi + 1) * ow].fill(T::zero());
                        continue;
                    }
                    let src = &chan[ii as usize * w..(ii as usize + 1) * w];
                    for oj in 0..ow {
                        let jj = (oj * stride + kj) as isize - padding as isize;
                        row[oi * ow + oj] = if jj < 0 || jj >= w as isize {
                            T::zero()
                        } else {
                            src[jj as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add the unfolded gradient back onto the input layout.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(
    col: &[T],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
    out: &mut [T],
) {
    let pats = oh * ow;
    for c in 0..cin {
        let chan = &mut out[c * h * w..(c + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = &col[((c * kh + ki) * kw + kj) * pats..][..pats];
                for oi in 0..oh {
                    let ii = (oi * stride + ki) as isize - padding as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for oj in 0..ow {
                        let jj = (oj * stride + kj) as isize - padding as isize;
                        if jj >= 0 && jj < w as isize {
                            chan[ii as usize * w + jj as usize] += row[oi * ow + oj];
                        }
                    }
                }
            }
        }
    }
}

/// 2-d cross-correlation with bias. Weight layout is (cout, cin, kh, kw).
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>, TensorError> {
    let [n, cin, h, w] = dims4(input, "conv2d")?;
    let [cout, wcin, kh, kw] = dims4(weight, "conv2d")?;
    if wcin != cin {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            detail: format!("input has {} channels but weight expects {}", cin, wcin),
        });
    }
    if bias.shape() != [cout] {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            detail: format!("bias shape {:?} does not match {} output channels", bias.shape(), cout),
        });
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(TensorError::InvalidArgument {
            op: "conv2d",
            detail: format!("kernel extents must be odd, got {}x{}", kh, kw),
        });
    }
    if stride < 1 {
        return Err(TensorError::InvalidArgument {
            op: "conv2d",
            detail: "stride must be >= 1".into(),
        });
    }
    let he = h + 2 * padding;
    let we = w + 2 * padding;
    if he < kh || we < kw {
        return Err(TensorError::InvalidArgument {
            op: "conv2d",
            detail: format!(
                "spatial extent {}x{} with padding {} is smaller than kernel {}x{}",
                h, w, padding, kh, kw
            ),
        });
    }
    // floor convention; exact when (H + 2p - kh) divides by the stride
    let oh = (he - kh) / stride + 1;
    let ow = (we - kw) / stride + 1;
    let k = cin * kh * kw;
    let pats = oh * ow;

    let mut out = vec![T::zero(); n * cout * pats];
    {
        let x = input.data();
        let wt = weight.data();
        let b = bias.data();
        let mut col = vec![T::zero(); k * pats];
        for s in 0..n {
            im2col(&x[s * cin * h * w..], cin, h, w, kh, kw, stride, padding, oh, ow, &mut col);
            let dst = &mut out[s * cout * pats..(s + 1) * cout * pats];
            matmul(&wt, &col, cout, k, pats, dst);
            for c in 0..cout {
                let bv = b[c];
                for v in &mut dst[c * pats..(c + 1) * pats] {
                    *v += bv;
                }
            }
        }
    }

    let xin = input.clone();
    let win = weight.clone();
    let bin = bias.clone();
    Ok(Tensor::from_op(
        vec![n, cout, oh, ow],
        out,
        vec![input.clone(), weight.clone(), bias.clone()],
        Box::new(move |out: &Tensor<T>| {
            let gref = out.grad_ref();
            let g = gref.as_ref().unwrap();
            let x = xin.data().clone();
            let wt = win.data().clone();
            let mut gx = vec![T::zero(); x.len()];
            let mut gw = vec![T::zero(); wt.len()];
            let mut gb = vec![T::zero(); cout];
            let mut col = vec![T::zero(); k * pats];
            let mut gcol = vec![T::zero(); k * pats];
            // w^T layout (k, cout) for the input gradient GEMM.
            let mut wtr = vec![T::zero(); k * cout];
            for c in 0..cout {
                for l in 0..k {
                    wtr[l * cout + c] = wt[c * k + l];
                }
            }
            for s in 0..n {
                let go = &g[s * cout * pats..(s + 1) * cout * pats];
                im2col(&x[s * cin * h * w..], cin, h, w, kh, kw, stride, padding, oh, ow, &mut col);
                // gw += go(cout,pats) * col^T(pats,k): do as gw[c,l] += sum_p go*col
                // via matmul with col transposed on the fly is costly; instead
                // accumulate gw with a GEMM on transposed col.
                let mut colt = vec![T::zero(); pats * k];
                for l in 0..k {
                    for p in 0..pats {
                        colt[p * k + l] = col[l * pats + p];
                    }
                }
                let mut gws = vec![T::zero(); cout * k];
                matmul(go, &colt, cout, pats, k, &mut gws);
                for (dst, src) in gw.iter_mut().zip(&gws) {
                    *dst += *src;
                }
                // gcol = w^T(k,cout) * go(cout,pats)
                gcol.fill(T::zero());
                matmul(&wtr, go, k, cout, pats, &mut gcol);
                col2im(
                    &gcol,
                    cin,
                    h,
                    w,
                    kh,
                    kw,
                    stride,
                    padding,
                    oh,
                    ow,
                    &mut gx[s * cin * h * w..(s + 1) * cin * h * w],
                );
                for c in 0..cout {
                    for p in 0..pats {
                        gb[c] += go[c * pats + p];
                    }
                }
            }
            if xin.needs_grad() {
                xin.accumulate_grad(&gx);
            }
            if win.needs_grad() {
                win.accumulate_grad(&gw);
            }
            if bin.needs_grad() {
                bin.accumulate_grad(&gb);
            }
        }),
    ))
}

enum Broadcast {
    None,
    /// b has 1 channel, a has `c` channels.
    BOverChannels,
    /// a has 1 channel, b has `c` channels.
    AOverChannels,
}

fn binary_shapes<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    op: &'static str,
) -> Result<(Vec<usize>, Broadcast), TensorError> {
    if a.shape() == b.shape() {
        return Ok((a.shape().to_vec(), Broadcast::None));
    }
    if let (Ok([na, ca, ha, wa]), Ok([nb, cb, hb, wb])) = (dims4(a, op), dims4(b, op)) {
        if na == nb && ha == hb && wa == wb {
            if cb == 1 && ca > 1 {
                return Ok((vec![na, ca, ha, wa], Broadcast::BOverChannels));
            }
            if ca == 1 && cb > 1 {
                return Ok((vec![nb, cb, hb, wb], Broadcast::AOverChannels));
            }
        }
    }
    Err(TensorError::ShapeMismatch {
        op,
        detail: format!(
            "shapes {:?} and {:?} are neither equal nor single-channel-broadcastable",
            a.shape(),
            b.shape()
        ),
    })
}

fn sum_over_channels<T: Scalar>(g: &[T], n: usize, c: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * hw];
    for s in 0..n {
        for ch in 0..c {
            let src = &g[(s * c + ch) * hw..][..hw];
            let dst = &mut out[s * hw..(s + 1) * hw];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d += v;
            }
        }
    }
    out
}

fn binary<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    op: &'static str,
    fwd: fn(T, T) -> T,
    // (ga, gb) contributions per element given (av, bv, gout)
    bwd: fn(T, T, T) -> (T, T),
) -> Result<Tensor<T>, TensorError> {
    let (shape, bc) = binary_shapes(a, b, op)?;
    let (n, c, hw) = match shape[..] {
        [n, c, h, w] => (n, c, h * w),
        _ => (1, 1, shape.iter().product()),
    };
    let ad = a.data();
    let bd = b.data();
    let numel: usize = shape.iter().product();
    let mut out = vec![T::zero(); numel];
    match bc {
        Broadcast::None => {
            for i in 0..numel {
                out[i] = fwd(ad[i], bd[i]);
            }
        }
        Broadcast::BOverChannels => {
            for s in 0..n {
                for ch in 0..c {
                    for p in 0..hw {
                        out[(s * c + ch) * hw + p] = fwd(ad[(s * c + ch) * hw + p], bd[s * hw + p]);
                    }
                }
            }
        }
        Broadcast::AOverChannels => {
            for s in 0..n {
                for ch in 0..c {
                    for p in 0..hw {
                        out[(s * c + ch) * hw + p] = fwd(ad[s * hw + p], bd[(s * c + ch) * hw + p]);
                    }
                }
            }
        }
    }
    drop(ad);
    drop(bd);
    let aa = a.clone();
    let bb = b.clone();
    Ok(Tensor::from_op(
        shape,
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |out: &Tensor<T>| {
            let gref = out.grad_ref();
            let g = gref.as_ref().unwrap();
            let ad = aa.data().clone();
            let bd = bb.data().clone();
            let mut ga = vec![T::zero(); g.len()];
            let mut gb = vec![T::zero(); g.len()];
            let (bcast_a, bcast_b) = (ad.len() < g.len(), bd.len() < g.len());
            for s in 0..n {
                for ch in 0..c {
                    for p in 0..hw {
                        let i = (s * c + ch) * hw + p;
                        let av = if bcast_a { ad[s * hw + p] } else { ad[i] };
                        let bv = if bcast_b { bd[s * hw + p] } else { bd[i] };
                        let (da, db) = bwd(av, bv, g[i]);
                        ga[i] = da;
                        gb[i] = db;
                    }
                }
            }
            if aa.needs_grad() {
                if bcast_a {
                    aa.accumulate_grad(&sum_over_channels(&ga, n, c, hw));
                } else {
                    aa.accumulate_grad(&ga);
                }
            }
            if bb.needs_grad() {
                if bcast_b {
                    bb.accumulate_grad(&sum_over_channels(&gb, n, c, hw));
                } else {
                    bb.accumulate_grad(&gb);
                }
            }
        }),
    ))
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    binary(a, b, "add", |x, y| x + y, |_, _, g| (g, g))
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    binary(a, b, "sub", |x, y| x - y, |_, _, g| (g, -g))
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    binary(a, b, "mul", |x, y| x * y, |x, y, g| (g * y, g * x))
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let out: Vec<T> = x.data().iter().map(|&v| v.max(T::zero())).collect();
    let xin = x.clone();
    Tensor::from_op(
        x.shape().to_vec(),
        out,
        vec![x.clone()],
        Box::new(move |out: &Tensor<T>| {
            if !xin.needs_grad() {
                return;
            }
            let gref = out.grad_ref();
            let g = gref.as_ref().unwrap();
            let xd = xin.data().clone();
            let gx: Vec<T> = g
                .iter()
                .zip(&xd)
                .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                .collect();
            xin.accumulate_grad(&gx);
        }),
    )
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let out: Vec<T> = x
        .data()
        .iter()
        .map(|&v| T::one() / (T::one() + (-v).exp()))
        .collect();
    let saved = out.clone();
    let xin = x.clone();
    Tensor::from_op(
        x.shape().to_vec(),
        out,
        vec![x.clone()],
        Box::new(move |out: &Tensor<T>| {
            if !xin.needs_grad() {
                return;
            }
            let gref = out.grad_ref();
            let g = gref.as_ref().unwrap();
            let gx: Vec<T> = g
                .iter()
                .zip(&saved)
                .map(|(&gv, &y)| gv * y * (T::one() - y))
                .collect();
            xin.accumulate_grad(&gx);
        }),
    )
}

/// Channel-axis concatenation in input order.
pub fn concat_channels<T: Scalar>(parts: &[Tensor<T>]) -> Result<Tensor<T>, TensorError> {
    if parts.is_empty() {
        return Err(TensorError::InvalidArgument {
            op: "concat_channels",
            detail: "empty part list".into(),
        });
    }
    let [n, _, h, w] = dims4(&parts[0], "concat_channels")?;
    let mut channels = Vec::with_capacity(parts.len());
    for p in parts {
        let [pn, pc, ph, pw] = dims4(p, "concat_channels")?;
        if pn != n || ph != h || pw != w {
            return Err(TensorError::ShapeMismatch {
                op: "concat_channels",
                detail: format!(
                    "part shape {:?} does not spatially match the first part {:?}",
                    p.shape(),
                    parts[0].shape()
                ),
            });
        }
        channels.push(pc);
    }
    let ctot: usize = channels.iter().sum();
    let hw = h * w;
    let mut out = vec![T::zero(); n * ctot * hw];
    for s in 0..n {
        let mut off = 0;
        for (p, &pc) in parts.iter().zip(&channels) {
            let pd = p.data();
            out[(s * ctot + off) * hw..(s * ctot + off + pc) * hw]
                .copy_from_slice(&pd[s * pc * hw..(s + 1) * pc * hw]);
            off += pc;
        }
    }
    let caps: Vec<Tensor<T>> = parts.to_vec();
    let chans = channels.clone();
    Ok(Tensor::from_op(
        vec![n, ctot, h, w],
        out,
        parts.to_vec(),
        Box::new(move |out: &Tensor<T>| {
            let gref = out.grad_ref();
            let g = gref.as_ref().unwrap();
            let mut off = 0;
            for (p, &pc) in caps.iter().zip(&chans) {
                if p.needs_grad() {
                    let mut gp = vec![T::zero(); p.numel()];
                    for s in 0..n {
                        gp[s * pc * hw..(s + 1) * pc * hw]
                            .copy_from_slice(&g[(s * ctot + off) * hw..(s * ctot + off + pc) * hw]);
                    }
                    p.accumulate_grad(&gp);
                }
                off += pc;
            }
        }),
    ))
}

/// Per-pixel max over an RGB tensor's 3 channels; ties route their
/// subgradient to the lowest-index channel.
pub fn max_over_channels<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let [n, c, h, w] = dims4(x, "max_over_channels")?;
    if c != 3 {
        return Err(TensorError::ShapeMismatch {
            op: "max_over_channels",
            detail: format!("expected exactly 3 channels, got {}", c),
        });
    }
    let hw = h * w;
    let xd = x.data();
    let mut out = vec![T::zero(); n * hw];
    let mut argmax = vec![0u8; n * hw];
    for s in 0..n {
        for p in 0..hw {
            let mut best = xd[s * 3 * hw + p];
            let mut bi = 0u8;
            for ch in 1..3 {
                let v = xd[(s * 3 + ch) * hw + p];
                if v > best {
                    best = v;
                    bi = ch as u8;
                }
            }
            out[s * hw + p] = best;
            argmax[s * hw + p] = bi;
        }
    }
    drop(xd);
    let xin = x.clone();
    Ok(Tensor::from_op(
        vec![n, 1, h, w],
        out,
        vec![x.clone()],
        Box::new(move |out: &Tensor<T>| {
            if !xin.needs_grad() {
                return;
            }
            let gref = out.grad_ref();
            let g = gref.as_ref().unwrap();
            let mut gx = vec![T::zero(); xin.numel()];
            for s in 0..n {
                for p in 0..hw {
                    let ch = argmax[s * hw + p] as usize;
                    gx[(s * 3 + ch) * hw + p] = g[s * hw + p];
                }
            }
            xin.accumulate_grad(&gx);
        }),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpsampleMode {
    Nearest,
    PixelShuffle,
}

/// Double spatial extent. Nearest replicates each pixel into a 2x2 block;
/// pixel-shuffle redistributes groups of 4 channels into a 2x2 block in
/// channel-major raster order, quartering the channel count.
pub fn upsample2x<T: Scalar>(x: &Tensor<T>, mode: UpsampleMode) -> Result<Tensor<T>, TensorError> {
    let [n, c, h, w] = dims4(x, "upsample2x")?;
    match mode {
        UpsampleMode::Nearest => {
            let xd = x.data();
            let mut out = vec![T::zero(); n * c * 4 * h * w];
            let (oh, ow) = (2 * h, 2 * w);
            for sc in 0..n * c {
                for i in 0..h {
                    for j in 0..w {
                        let v = xd[sc * h * w + i * w + j];
                        let base = sc * oh * ow + 2 * i * ow + 2 * j;
                        out[base] = v;
                        out[base + 1] = v;
                        out[base + ow] = v;
                        out[base + ow + 1] = v;
                    }
                }
            }
            drop(xd);
            let xin = x.clone();
            Ok(Tensor::from_op(
                vec![n, c, oh, ow],
                out,
                vec![x.clone()],
                Box::new(move |out: &Tensor<T>| {
                    if !xin.needs_grad() {
                        return;
                    }
                    let gref = out.grad_ref();
                    let g = gref.as_ref().unwrap();
                    let mut gx = vec![T::zero(); xin.numel()];
                    for sc in 0..n * c {
                        for i in 0..h {
                            for j in 0..w {
                                let base = sc * oh * ow + 2 * i * ow + 2 * j;
                                gx[sc * h * w + i * w + j] =
                                    g[base] + g[base + 1] + g[base + ow] + g[base + ow + 1];
                            }
                        }
                    }
                    xin.accumulate_grad(&gx);
                }),
            ))
        }
        UpsampleMode::PixelShuffle => {
            if c % 4 != 0 {
                return Err(TensorError::InvalidArgument {
                    op: "upsample2x",
                    detail: format!("pixel_shuffle requires channels divisible by 4, got {}", c),
                });
            }
            let oc = c / 4;
            let (oh, ow) = (2 * h, 2 * w);
            let xd = x.data();
            let mut out = vec![T::zero(); n * oc * oh * ow];
            for s in 0..n {
                for co in 0..oc {
                    for r in 0..2 {
                        for q in 0..2 {
                            let ci = co * 4 + r * 2 + q;
                            for i in 0..h {
                                for j in 0..w {
                                    out[((s * oc + co) * oh + 2 * i + r) * ow + 2 * j + q] =
                                        xd[((s * c + ci) * h + i) * w + j];
                                }
                            }
                        }
                    }
                }
            }
            drop(xd);
            let xin = x.clone();
            Ok(Tensor::from_op(
                vec![n, oc, oh, ow],
                out,
                vec![x.clone()],
                Box::new(move |out: &Tensor<T>| {
                    if !xin.needs_grad() {
                        return;
                    }
                    let gref = out.grad_ref();
                    let g = gref.as_ref().unwrap();
                    let mut gx = vec![T::zero(); xin.numel()];
                    for s in 0..n {
                        for co in 0..oc {
                            for r in 0..2 {
                                for q in 0..2 {
                                    let ci = co * 4 + r * 2 + q;
                                    for i in 0..h {
                                        for j in 0..w {
                                            gx[((s * c + ci) * h + i) * w + j] =
                                                g[((s * oc + co) * oh + 2 * i + r) * ow + 2 * j + q];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    xin.accumulate_grad(&gx);
                }),
            ))
        }
    }
}

/// Mean absolute difference; subgradient is sign(a-b)/numel with sign(0)=0.
pub fn l1_loss<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "l1_loss",
            detail: format!("shapes {:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    let n = a.numel();
    let inv = T::from_usize(n).recip();
    let total: T = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| (x - y).abs())
        .sum();
    let aa = a.clone();
    let bb = b.clone();
    Ok(Tensor::from_op(
        vec![1],
        vec![total * inv],
        vec![a.clone(), b.clone()],
        Box::new(move |out: &Tensor<T>| {
            let gref = out.grad_ref();
            let g = gref.as_ref().unwrap()[0];
            let ad = aa.data().clone();
            let bd = bb.data().clone();
            let mut ga = vec![T::zero(); n];
            for i in 0..n {
                let d = ad[i] - bd[i];
                ga[i] = if d > T::zero() {
                    g * inv
                } else if d < T::zero() {
                    -(g * inv)
                } else {
                    T::zero()
                };
            }
            if aa.needs_grad() {
                aa.accumulate_grad(&ga);
            }
            if bb.needs_grad() {
                for v in &mut ga {
                    *v = -*v;
                }
                bb.accumulate_grad(&ga);
            }
        }),
    ))
}

/// Sum of all elements to a scalar.
pub fn sum<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let total: T = x.data().iter().copied().sum();
    let xin = x.clone();
    Tensor::from_op(
        vec![1],
        vec![total],
        vec![x.clone()],
        Box::new(move |out: &Tensor<T>| {
            if !xin.needs_grad() {
                return;
            }
            let gref = out.grad_ref();
            let g = gref.as_ref().unwrap()[0];
            xin.accumulate_grad(&vec![g; xin.numel()]);
        }),
    )
}

/// Multiply by a compile-time constant (loss weights etc.).
pub fn scale<T: Scalar>(x: &Tensor<T>, c: f64) -> Tensor<T> {
    let cv = T::from_f64(c);
    let out: Vec<T> = x.data().iter().map(|&v| v * cv).collect();
    let xin = x.clone();
    Tensor::from_op(
        x.shape().to_vec(),
        out,
        vec![x.clone()],
        Box::new(move |out: &Tensor<T>| {
            if !xin.needs_grad() {
                return;
            }
            let gref = out.grad_ref();
            let g = gref.as_ref().unwrap();
            let gx: Vec<T> = g.iter().map(|&v| v * cv).collect();
            xin.accumulate_grad(&gx);
        }),
    )
}
