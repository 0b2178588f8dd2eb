//! Forward kernels and their hand-written gradients.
//!
//! Image tensors are `[channels, height, width]`; there is no batch axis,
//! batches are processed sample by sample.

use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn mismatch(op: &'static str, detail: String) -> TensorError {
    TensorError::ShapeMismatch { op, detail }
}

fn dims3<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize, usize), TensorError> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(mismatch(op, format!("expected a [C, H, W] input, got {s:?}"))),
    }
}

/// Output length of a sliding window along one axis.
pub fn window_out(size: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (size + 2 * padding - kernel) / stride + 1
}

/// Copies `[C, H, W]` into a zero-bordered `[C, H+2p, W+2p]` buffer.
fn pad_input<T: Scalar>(data: &[T], c: usize, h: usize, w: usize, p: usize) -> Vec<T> {
    if p == 0 {
        return data.to_vec();
    }
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let mut out = vec![T::zero(); c * hp * wp];
    for ch in 0..c {
        for y in 0..h {
            let src = &data[(ch * h + y) * w..][..w];
            out[(ch * hp + y + p) * wp + p..][..w].copy_from_slice(src);
        }
    }
    out
}

struct ConvGeometry {
    c_in: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    hp: usize,
    wp: usize,
    ho: usize,
    wo: usize,
    h: usize,
    w: usize,
}

fn conv_geometry<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<ConvGeometry, TensorError> {
    const OP: &str = "conv2d";
    if stride == 0 {
        return Err(TensorError::ZeroStride(OP));
    }
    let (c_in, h, w) = dims3(OP, input)?;
    let [c_out, kc, kh, kw] = *kernels.shape() else {
        return Err(mismatch(
            OP,
            format!("kernels must be [C_out, C_in, kH, kW], got {:?}", kernels.shape()),
        ));
    };
    if kc != c_in {
        return Err(mismatch(
            OP,
            format!("kernel C_in {kc} does not match input C_in {c_in}"),
        ));
    }
    if bias.shape() != [c_out] {
        return Err(mismatch(
            OP,
            format!("bias shape {:?} does not match C_out {c_out}", bias.shape()),
        ));
    }
    let (hp, wp) = (h + 2 * padding, w + 2 * padding);
    if kh > hp || kw > wp {
        return Err(mismatch(
            OP,
            format!("kernel {kh}x{kw} exceeds padded input {hp}x{wp}"),
        ));
    }
    Ok(ConvGeometry {
        c_in,
        c_out,
        kh,
        kw,
        hp,
        wp,
        ho: window_out(h, kh, stride, padding),
        wo: window_out(w, kw, stride, padding),
        h,
        w,
    })
}

/// 2-D cross-correlation (no kernel flip) with zero padding.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>, TensorError> {
    let g = conv_geometry(input, kernels, bias, stride, padding)?;
    let padded = pad_input(input.data(), g.c_in, g.h, g.w, padding);
    let k = kernels.data();
    let plane = g.ho * g.wo;
    let mut out = vec![T::zero(); g.c_out * plane];

    for (oc, out_plane) in out.chunks_exact_mut(plane).enumerate() {
        out_plane.iter_mut().for_each(|v| *v = bias.data()[oc]);
        for ic in 0..g.c_in {
            let src = &padded[ic * g.hp * g.wp..][..g.hp * g.wp];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let wgt = k[((oc * g.c_in + ic) * g.kh + ky) * g.kw + kx];
                    for oy in 0..g.ho {
                        let row = &src[(oy * stride + ky) * g.wp + kx..];
                        let dst = &mut out_plane[oy * g.wo..][..g.wo];
                        if stride == 1 {
                            for (d, s) in dst.iter_mut().zip(&row[..g.wo]) {
                                *d += wgt * *s;
                            }
                        } else {
                            for (ox, d) in dst.iter_mut().enumerate() {
                                *d += wgt * row[ox * stride];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.c_out, g.ho, g.wo], out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Vec<T>,
    pub kernels: Vec<T>,
    pub bias: Vec<T>,
}

/// Gradients of [`conv2d`] given the upstream gradient of its output.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
    grad_out: &[T],
) -> Result<ConvGrads<T>, TensorError> {
    let g = conv_geometry(input, kernels, bias, stride, padding)?;
    let plane = g.ho * g.wo;
    if grad_out.len() != g.c_out * plane {
        return Err(mismatch(
            "conv2d backward",
            format!("upstream gradient has {} values, expected {}", grad_out.len(), g.c_out * plane),
        ));
    }
    let padded = pad_input(input.data(), g.c_in, g.h, g.w, padding);
    let k = kernels.data();
    let mut grad_padded = vec![T::zero(); padded.len()];
    let mut grad_k = vec![T::zero(); k.len()];
    let mut grad_b = vec![T::zero(); g.c_out];

    for oc in 0..g.c_out {
        let gout = &grad_out[oc * plane..][..plane];
        grad_b[oc] = gout.iter().copied().sum();
        for ic in 0..g.c_in {
            let base = ic * g.hp * g.wp;
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let ki = ((oc * g.c_in + ic) * g.kh + ky) * g.kw + kx;
                    let wgt = k[ki];
                    let mut acc = T::zero();
                    for oy in 0..g.ho {
                        let off = base + (oy * stride + ky) * g.wp + kx;
                        let grow = &gout[oy * g.wo..][..g.wo];
                        if stride == 1 {
                            let src = &padded[off..][..g.wo];
                            for (gv, s) in grow.iter().zip(src) {
                                acc += *gv * *s;
                            }
                            let dst = &mut grad_padded[off..][..g.wo];
                            for (d, gv) in dst.iter_mut().zip(grow) {
                                *d += wgt * *gv;
                            }
                        } else {
                            for (ox, gv) in grow.iter().enumerate() {
                                acc += *gv * padded[off + ox * stride];
                                grad_padded[off + ox * stride] += wgt * *gv;
                            }
                        }
                    }
                    grad_k[ki] = acc;
                }
            }
        }
    }

    let grad_in = if padding == 0 {
        grad_padded
    } else {
        let mut out = Vec::with_capacity(g.c_in * g.h * g.w);
        for ch in 0..g.c_in {
            for y in 0..g.h {
                out.extend_from_slice(&grad_padded[(ch * g.hp + y + padding) * g.wp + padding..][..g.w]);
            }
        }
        out
    };
    Ok(ConvGrads {
        input: grad_in,
        kernels: grad_k,
        bias: grad_b,
    })
}

/// Max pooling over square windows.
///
/// Returns the pooled tensor and, for each output element, the flat input
/// index it was taken from (the first row-major maximum on ties).
pub fn maxpool2d<T: Scalar>(
    input: &Tensor<T>,
    window: usize,
    stride: usize,
) -> Result<(Tensor<T>, Vec<usize>), TensorError> {
    const OP: &str = "maxpool2d";
    if stride == 0 {
        return Err(TensorError::ZeroStride(OP));
    }
    let (c, h, w) = dims3(OP, input)?;
    if window == 0 || window > h || window > w {
        return Err(mismatch(
            OP,
            format!("window {window} does not fit spatial dims {h}x{w}"),
        ));
    }
    let (ho, wo) = (window_out(h, window, stride, 0), window_out(w, window, stride, 0));
    let x = input.data();
    let mut out = Vec::with_capacity(c * ho * wo);
    let mut argmax = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = (ch * h + oy * stride) * w + ox * stride;
                for dy in 0..window {
                    for dx in 0..window {
                        let idx = (ch * h + oy * stride + dy) * w + ox * stride + dx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![c, ho, wo], out)?, argmax))
}

/// Routes each upstream gradient to the input position that won its window.
pub fn maxpool2d_backward<T: Scalar>(input_len: usize, argmax: &[usize], grad_out: &[T]) -> Vec<T> {
    let mut grad = vec![T::zero(); input_len];
    for (&idx, &g) in argmax.iter().zip(grad_out) {
        grad[idx] += g;
    }
    grad
}

fn dense_check<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(usize, usize), TensorError> {
    const OP: &str = "dense";
    let [m, n] = *weights.shape() else {
        return Err(mismatch(OP, format!("weights must be [M, N], got {:?}", weights.shape())));
    };
    if input.ndim() != 1 || input.len() != n {
        return Err(mismatch(
            OP,
            format!("input shape {:?} incompatible with weights {:?}", input.shape(), weights.shape()),
        ));
    }
    if bias.shape() != [m] {
        return Err(mismatch(
            OP,
            format!("bias shape {:?} incompatible with weights {:?}", bias.shape(), weights.shape()),
        ));
    }
    Ok((m, n))
}

/// Fully connected layer: `weights · input + bias`.
pub fn dense<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>, TensorError> {
    let (m, n) = dense_check(input, weights, bias)?;
    let x = input.data();
    let out = weights
        .data()
        .chunks_exact(n)
        .zip(bias.data())
        .map(|(row, &b)| row.iter().zip(x).fold(b, |acc, (w, v)| acc + *w * *v))
        .collect();
    Tensor::new(vec![m], out)
}

#[derive(Debug, Clone)]
pub struct DenseGrads<T> {
    pub input: Vec<T>,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    grad_out: &[T],
) -> Result<DenseGrads<T>, TensorError> {
    let (m, n) = dense_check(input, weights, bias)?;
    if grad_out.len() != m {
        return Err(mismatch(
            "dense backward",
            format!("upstream gradient has {} values, expected {m}", grad_out.len()),
        ));
    }
    let x = input.data();
    let mut grad_in = vec![T::zero(); n];
    let mut grad_w = Vec::with_capacity(m * n);
    for (row, &g) in weights.data().chunks_exact(n).zip(grad_out) {
        grad_w.extend(x.iter().map(|&v| g * v));
        for (gi, &w) in grad_in.iter_mut().zip(row) {
            *gi += g * w;
        }
    }
    Ok(DenseGrads {
        input: grad_in,
        weights: grad_w,
        bias: grad_out.to_vec(),
    })
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| if x > T::zero() { x } else { T::zero() })
}

pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &[T]) -> Vec<T> {
    input
        .data()
        .iter()
        .zip(grad_out)
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect()
}

/// Logistic function, evaluated so that neither branch overflows.
#[inline]
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(sigmoid_scalar)
}

/// Gradient of the sigmoid expressed through its output `s`: `s (1 - s)`.
pub fn sigmoid_backward<T: Scalar>(output: &Tensor<T>, grad_out: &[T]) -> Vec<T> {
    output
        .data()
        .iter()
        .zip(grad_out)
        .map(|(&s, &g)| g * s * (T::one() - s))
        .collect()
}

/// Inverted dropout.
///
/// In train mode each element is zeroed with probability `rate` and
/// survivors are scaled by `1 / (1 - rate)`; the returned mask holds those
/// per-element multipliers. Eval mode (or `rate == 0`) is the identity and
/// returns no mask.
pub fn dropout<T: Scalar>(
    input: &Tensor<T>,
    rate: f64,
    mode: Mode,
    rng: &mut SeededRng,
) -> Result<(Tensor<T>, Option<Vec<T>>), TensorError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(TensorError::InvalidRate(rate));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let keep = T::of(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..input.len())
        .map(|_| if rng.bernoulli(rate) { T::zero() } else { keep })
        .collect();
    let mut out = input.clone();
    out.clear_grad();
    for (v, m) in out.data_mut().iter_mut().zip(&mask) {
        *v *= *m;
    }
    Ok((out, Some(mask)))
}

pub fn dropout_backward<T: Scalar>(mask: Option<&[T]>, grad_out: &[T]) -> Vec<T> {
    match mask {
        Some(m) => m.iter().zip(grad_out).map(|(&m, &g)| m * g).collect(),
        None => grad_out.to_vec(),
    }
}
