//! CPU kernels for the layer types, forward and backward. Feature maps are
//! NCHW; convolutions go through im2col and a GEMM per sample.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array4, ArrayView2, ArrayView4, ArrayViewMut2, Axis};

use super::Scalar;

fn conv_out(size: usize, kernel: usize, pad: usize) -> usize {
    size + 2 * pad - kernel + 1
}

/// Writes one CHW sample's patches into columns `[col0, col0 + Ho·Wo)` of a
/// (C·k·k, ld) patch matrix.
#[allow(clippy::too_many_arguments)]
fn im2col<F: Scalar>(x: &[F], c: usize, h: usize, w: usize, k: usize, pad: usize, cols: &mut [F], ld: usize, col0: usize) {
    let (ho, wo) = (conv_out(h, k, pad), conv_out(w, k, pad));
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let dst = &mut cols[row * ld + col0..row * ld + col0 + ho * wo];
                for oh in 0..ho {
                    let ih = oh as isize + ki as isize - pad as isize;
                    let line = &mut dst[oh * wo..(oh + 1) * wo];
                    if ih < 0 || ih >= h as isize {
                        line.fill(F::zero());
                        continue;
                    }
                    let src = &plane[ih as usize * w..(ih as usize + 1) * w];
                    for (ow, v) in line.iter_mut().enumerate() {
                        let iw = ow as isize + kj as isize - pad as isize;
                        *v = if iw < 0 || iw >= w as isize {
                            F::zero()
                        } else {
                            src[iw as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds columns `[col0, col0 + Ho·Wo)` of a patch matrix back onto
/// a CHW sample.
#[allow(clippy::too_many_arguments)]
fn col2im<F: Scalar>(cols: &[F], c: usize, h: usize, w: usize, k: usize, pad: usize, x: &mut [F], ld: usize, col0: usize) {
    let (ho, wo) = (conv_out(h, k, pad), conv_out(w, k, pad));
    for ch in 0..c {
        let plane = &mut x[ch * h * w..(ch + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let src = &cols[row * ld + col0..row * ld + col0 + ho * wo];
                for oh in 0..ho {
                    let ih = oh as isize + ki as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * w..(ih as usize + 1) * w];
                    for ow in 0..wo {
                        let iw = ow as isize + kj as isize - pad as isize;
                        if iw >= 0 && iw < w as isize {
                            dst[iw as usize] += src[oh * wo + ow];
                        }
                    }
                }
            }
        }
    }
}

/// Samples per GEMM, keeping the patch matrix near 4M elements.
fn chunk_len(ckk: usize, hw: usize, n: usize) -> usize {
    ((4 << 20) / (ckk * hw).max(1)).clamp(1, n.max(1))
}

fn weight_matrix<F: Scalar>(weight: ArrayView4<F>) -> Array2<F> {
    let (k_out, c, k, _) = weight.dim();
    weight
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((k_out, c * k * k))
        .expect("contiguous weight")
}

pub fn conv_forward<F: Scalar>(
    x: &Array4<F>,
    weight: ArrayView4<F>,
    bias: &Array1<F>,
    pad: usize,
) -> Array4<F> {
    let (n, c, h, w) = x.dim();
    let (k_out, _, k, _) = weight.dim();
    let (ho, wo) = (conv_out(h, k, pad), conv_out(w, k, pad));
    let (ckk, hw) = (c * k * k, ho * wo);
    let wmat = weight_matrix(weight);
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let mut out = Array4::<F>::zeros((n, k_out, ho, wo));
    let os = out.as_slice_mut().unwrap();
    let sample = c * h * w;
    let step = chunk_len(ckk, hw, n);
    let mut cols = vec![F::zero(); ckk * hw * step];
    let mut res = Array2::<F>::zeros((k_out, hw * step));
    for first in (0..n).step_by(step) {
        let m = step.min(n - first);
        let ld = m * hw;
        for s in 0..m {
            let i = first + s;
            im2col(&xs[i * sample..(i + 1) * sample], c, h, w, k, pad, &mut cols, ld, s * hw);
        }
        let cols_m = ArrayView2::from_shape((ckk, ld), &cols[..ckk * ld]).unwrap();
        let mut res_m = res.slice_mut(ndarray::s![.., ..ld]);
        general_mat_mul(F::one(), &wmat, &cols_m, F::zero(), &mut res_m);
        // (K, m·HW) → (m, K, HW) with bias
        for s in 0..m {
            let dst = &mut os[(first + s) * k_out * hw..(first + s + 1) * k_out * hw];
            for (o, &b) in bias.iter().enumerate() {
                let row = res_m.row(o);
                let src = &row.as_slice().expect("row-major result")[s * hw..(s + 1) * hw];
                for (d, &v) in dst[o * hw..(o + 1) * hw].iter_mut().zip(src) {
                    *d = v + b;
                }
            }
        }
    }
    out
}

/// Returns (dx, dweight, dbias).
pub fn conv_backward<F: Scalar>(
    x: &Array4<F>,
    weight: ArrayView4<F>,
    dout: &Array4<F>,
    pad: usize,
) -> (Array4<F>, Array4<F>, Array1<F>) {
    let (n, c, h, w) = x.dim();
    let (k_out, _, k, _) = weight.dim();
    let (ho, wo) = (conv_out(h, k, pad), conv_out(w, k, pad));
    let (ckk, hw) = (c * k * k, ho * wo);
    let wmat = weight_matrix(weight);
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let dout = dout.as_standard_layout();
    let ds = dout.as_slice().unwrap();
    let mut dx = Array4::<F>::zeros((n, c, h, w));
    let mut dw = Array2::<F>::zeros((k_out, ckk));
    let mut db = Array1::<F>::zeros(k_out);
    let sample = c * h * w;
    let step = chunk_len(ckk, hw, n);
    let mut cols = vec![F::zero(); ckk * hw * step];
    let mut dcols = vec![F::zero(); ckk * hw * step];
    let mut dmat = vec![F::zero(); k_out * hw * step];
    let dxs = dx.as_slice_mut().unwrap();
    for first in (0..n).step_by(step) {
        let m = step.min(n - first);
        let ld = m * hw;
        for s in 0..m {
            let i = first + s;
            im2col(&xs[i * sample..(i + 1) * sample], c, h, w, k, pad, &mut cols, ld, s * hw);
            // (K, HW) block of sample i into columns [s·HW, (s+1)·HW)
            for o in 0..k_out {
                let src = &ds[(i * k_out + o) * hw..(i * k_out + o + 1) * hw];
                dmat[o * ld + s * hw..o * ld + (s + 1) * hw].copy_from_slice(src);
            }
        }
        let cols_m = ArrayView2::from_shape((ckk, ld), &cols[..ckk * ld]).unwrap();
        let d_m = ArrayView2::from_shape((k_out, ld), &dmat[..k_out * ld]).unwrap();
        general_mat_mul(F::one(), &d_m, &cols_m.t(), F::one(), &mut dw);
        db += &d_m.sum_axis(Axis(1));
        let mut dcols_m = ArrayViewMut2::from_shape((ckk, ld), &mut dcols[..ckk * ld]).unwrap();
        general_mat_mul(F::one(), &wmat.t(), &d_m, F::zero(), &mut dcols_m);
        for s in 0..m {
            let i = first + s;
            col2im(&dcols, c, h, w, k, pad, &mut dxs[i * sample..(i + 1) * sample], ld, s * hw);
        }
    }
    let dw = dw.into_shape_with_order((k_out, c, k, k)).unwrap();
    (dx, dw, db)
}

/// Max pooling; also returns the flat input index chosen for each output.
pub fn maxpool_forward<F: Scalar>(x: &Array4<F>, size: usize, stride: usize) -> (Array4<F>, Vec<usize>) {
    let (n, c, h, w) = x.dim();
    let (ho, wo) = ((h - size) / stride + 1, (w - size) / stride + 1);
    let x = x.as_standard_layout();
    let xs = x.as_slice().unwrap();
    let mut out = Array4::<F>::zeros((n, c, ho, wo));
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    let os = out.as_slice_mut().unwrap();
    if size == 2 && stride == 2 {
        pool2x2(xs, n * c, h, w, os, &mut arg);
        return (out, arg);
    }
    let mut o = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for oh in 0..ho {
            for ow in 0..wo {
                let mut best = base + oh * stride * w + ow * stride;
                for di in 0..size {
                    for dj in 0..size {
                        let idx = base + (oh * stride + di) * w + ow * stride + dj;
                        if xs[idx] > xs[best] || xs[idx].is_nan() {
                            best = idx;
                        }
                    }
                }
                os[o] = xs[best];
                arg.push(best);
                o += 1;
            }
        }
    }
    (out, arg)
}

fn pool2x2<F: Scalar>(xs: &[F], planes: usize, h: usize, w: usize, os: &mut [F], arg: &mut Vec<usize>) {
    let (ho, wo) = (h / 2, w / 2);
    let mut o = 0;
    for plane in 0..planes {
        let base = plane * h * w;
        for oh in 0..ho {
            let r0 = base + 2 * oh * w;
            let (top, bot) = (&xs[r0..r0 + w], &xs[r0 + w..r0 + 2 * w]);
            for ow in 0..wo {
                let j = 2 * ow;
                let cand = [(top[j], r0 + j), (top[j + 1], r0 + j + 1), (bot[j], r0 + w + j), (bot[j + 1], r0 + w + j + 1)];
                let mut best = cand[0];
                for &(v, i) in &cand[1..] {
                    if v > best.0 || v.is_nan() {
                        best = (v, i);
                    }
                }
                os[o] = best.0;
                arg.push(best.1);
                o += 1;
            }
        }
    }
}

pub fn maxpool_backward<F: Scalar>(input_dim: (usize, usize, usize, usize), arg: &[usize], dout: &Array4<F>) -> Array4<F> {
    let mut dx = Array4::<F>::zeros(input_dim);
    let dxs = dx.as_slice_mut().unwrap();
    let dout = dout.as_standard_layout();
    for (&i, &g) in arg.iter().zip(dout.as_slice().unwrap()) {
        dxs[i] += g;
    }
    dx
}

/// Writes `b^(-beta)` for each `b`. The common beta = 0.75 takes a
/// sqrt-only path; the branch sits outside the loop so it vectorizes.
fn neg_pow_into<F: Scalar>(bs: &[F], beta: F, out: &mut [F]) {
    if beta == F::of(0.75) {
        for (o, &b) in out.iter_mut().zip(bs) {
            let r = b.sqrt();
            *o = F::one() / (r * r.sqrt());
        }
    } else {
        for (o, &b) in out.iter_mut().zip(bs) {
            *o = b.powf(-beta);
        }
    }
}

/// Sums the `radius`-neighbourhood of channel planes of one sample into `dst`.
fn window_sum<F: Scalar>(src: &[F], c: usize, hw: usize, ch: usize, radius: usize, dst: &mut [F]) {
    let lo = ch.saturating_sub(radius);
    let hi = (ch + radius).min(c - 1);
    dst.copy_from_slice(&src[lo * hw..(lo + 1) * hw]);
    for j in lo + 1..=hi {
        for (d, &v) in dst.iter_mut().zip(&src[j * hw..(j + 1) * hw]) {
            *d += v;
        }
    }
}

/// Cross-channel LRN. Returns the output, the denominator base
/// `bias + alpha * window_sum(x^2)` and that base raised to `-beta`.
pub fn lrn_forward<F: Scalar>(
    x: &Array4<F>,
    radius: usize,
    bias: f64,
    alpha: f64,
    beta: f64,
) -> (Array4<F>, Array4<F>, Array4<F>) {
    let (n, c, h, w) = x.dim();
    let hw = h * w;
    let x = x.as_standard_layout();
    let xs = x.as_slice().unwrap();
    let (bias, alpha, beta) = (F::of(bias), F::of(alpha), F::of(beta));
    let mut sq = vec![F::zero(); c * hw];
    let mut base = Array4::<F>::zeros((n, c, h, w));
    let mut pow = Array4::<F>::zeros((n, c, h, w));
    let mut out = Array4::<F>::zeros((n, c, h, w));
    let (bs, ps, os) = (
        base.as_slice_mut().unwrap(),
        pow.as_slice_mut().unwrap(),
        out.as_slice_mut().unwrap(),
    );
    for s in 0..n {
        let off = s * c * hw;
        let xsam = &xs[off..off + c * hw];
        for (q, &v) in sq.iter_mut().zip(xsam) {
            *q = v * v;
        }
        for ch in 0..c {
            let r = off + ch * hw..off + (ch + 1) * hw;
            let dst = &mut bs[r.clone()];
            window_sum(&sq, c, hw, ch, radius, dst);
            for d in dst.iter_mut() {
                *d = bias + alpha * *d;
            }
            neg_pow_into(dst, beta, &mut ps[r.clone()]);
            for ((o, &v), &p) in os[r.clone()].iter_mut().zip(&xs[r.clone()]).zip(&ps[r]) {
                *o = v * p;
            }
        }
    }
    (out, base, pow)
}

pub fn lrn_backward<F: Scalar>(
    x: &Array4<F>,
    base: &Array4<F>,
    pow: &Array4<F>,
    dout: &Array4<F>,
    radius: usize,
    alpha: f64,
    beta: f64,
) -> Array4<F> {
    let (n, c, h, w) = x.dim();
    let hw = h * w;
    let x = x.as_standard_layout();
    let dout = dout.as_standard_layout();
    let (xs, bs, ps, ds) = (
        x.as_slice().unwrap(),
        base.as_slice().unwrap(),
        pow.as_slice().unwrap(),
        dout.as_slice().unwrap(),
    );
    let k = F::of(2.0 * alpha * beta);
    // t_c = dy_c * x_c * base_c^(-beta-1)
    let mut t = vec![F::zero(); c * hw];
    let mut dx = Array4::<F>::zeros((n, c, h, w));
    let dxs = dx.as_slice_mut().unwrap();
    let mut acc = vec![F::zero(); hw];
    for s in 0..n {
        let off = s * c * hw;
        let r = off..off + c * hw;
        for ((((ti, &d), &x), &p), &b) in t.iter_mut().zip(&ds[r.clone()]).zip(&xs[r.clone()]).zip(&ps[r.clone()]).zip(&bs[r]) {
            *ti = d * x * p / b;
        }
        for ch in 0..c {
            window_sum(&t, c, hw, ch, radius, &mut acc);
            let r = off + ch * hw..off + (ch + 1) * hw;
            for ((((o, &d), &p), &x), &a) in dxs[r.clone()].iter_mut().zip(&ds[r.clone()]).zip(&ps[r.clone()]).zip(&xs[r]).zip(&acc) {
                *o = d * p - k * x * a;
            }
        }
    }
    dx
}

/// Row-wise softmax with max subtraction.
pub fn softmax<F: Scalar>(logits: &Array2<F>) -> Array2<F> {
    let mut out = logits.clone();
    for mut row in out.outer_iter_mut() {
        let m = row.iter().copied().fold(F::neg_infinity(), F::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s: F = row.iter().copied().sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}
