//! Forward and backward kernels. All convolutions are valid (unpadded)
//! cross-correlations; pooling windows are non-overlapping and truncate any
//! trailing remainder.

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Flat input index of the maximum of every pooling window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArgmaxIndices(pub Vec<usize>);

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

fn expect_rank<T: Scalar>(t: &Tensor<T>, rank: usize, what: &str) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::dim(format!("{what} rank"), rank, t.rank()));
    }
    Ok(())
}

fn out_len(len: usize, kernel: usize, stride: usize, axis: &str) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Contract("stride must be positive".into()));
    }
    if len < kernel {
        return Err(Error::dim(
            format!("{axis} (must be >= kernel)"),
            kernel,
            len,
        ));
    }
    Ok((len - kernel) / stride + 1)
}

struct Conv1dDims {
    c_in: usize,
    len: usize,
    c_out: usize,
    k: usize,
    l_out: usize,
}

fn conv1d_dims<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    stride: usize,
) -> Result<Conv1dDims> {
    expect_rank(input, 2, "conv1d input")?;
    expect_rank(kernels, 3, "conv1d kernels")?;
    let (c_in, len) = (input.shape()[0], input.shape()[1]);
    let (c_out, kc, k) = (kernels.shape()[0], kernels.shape()[1], kernels.shape()[2]);
    if kc != c_in {
        return Err(Error::dim("conv1d input channels", kc, c_in));
    }
    let l_out = out_len(len, k, stride, "conv1d length")?;
    Ok(Conv1dDims {
        c_in,
        len,
        c_out,
        k,
        l_out,
    })
}

fn check_bias<T: Scalar>(bias: &Tensor<T>, n: usize, what: &str) -> Result<()> {
    if bias.rank() != 1 || bias.len() != n {
        return Err(Error::dim(format!("{what} bias length"), n, bias.len()));
    }
    Ok(())
}

pub fn conv1d<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    let d = conv1d_dims(input, kernels, stride)?;
    check_bias(bias, d.c_out, "conv1d")?;
    let cols = im2col1d(input.data(), &d, stride);
    let y = lowered_forward(&cols, d.l_out, kernels.data(), bias.data(), d.c_out);
    Tensor::new(vec![d.c_out, d.l_out], y)
}

/// `cols[t][c·k + kk] = x[c][t·stride + kk]`.
fn im2col1d<T: Scalar>(x: &[T], d: &Conv1dDims, stride: usize) -> Vec<T> {
    let p = d.c_in * d.k;
    let mut cols = vec![T::zero(); d.l_out * p];
    for t in 0..d.l_out {
        let row = &mut cols[t * p..(t + 1) * p];
        for c in 0..d.c_in {
            let start = c * d.len + t * stride;
            row[c * d.k..(c + 1) * d.k].copy_from_slice(&x[start..start + d.k]);
        }
    }
    cols
}

fn col2im1d<T: Scalar>(gcols: &[T], d: &Conv1dDims, stride: usize, gx: &mut [T]) {
    let p = d.c_in * d.k;
    for t in 0..d.l_out {
        let row = &gcols[t * p..(t + 1) * p];
        for c in 0..d.c_in {
            let start = c * d.len + t * stride;
            for (g, &v) in gx[start..start + d.k]
                .iter_mut()
                .zip(&row[c * d.k..(c + 1) * d.k])
            {
                *g += v;
            }
        }
    }
}

fn transpose<T: Scalar>(m: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = m[r * cols + c];
        }
    }
    out
}

/// Convolution as a product of the patch matrix `cols` (`n_pos × p`) with the
/// kernels (`c_out × p`). Returns `[c_out, n_pos]`.
fn lowered_forward<T: Scalar>(
    cols: &[T],
    n_pos: usize,
    w: &[T],
    bias: &[T],
    c_out: usize,
) -> Vec<T> {
    let p = w.len() / c_out;
    let wt = transpose(w, c_out, p);
    let mut yt = vec![T::zero(); n_pos * c_out];
    for pos in 0..n_pos {
        let yrow = &mut yt[pos * c_out..(pos + 1) * c_out];
        yrow.copy_from_slice(bias);
        for (q, &a) in cols[pos * p..(pos + 1) * p].iter().enumerate() {
            if a == T::zero() {
                continue;
            }
            for (yv, &wv) in yrow.iter_mut().zip(&wt[q * c_out..(q + 1) * c_out]) {
                *yv += a * wv;
            }
        }
    }
    transpose(&yt, n_pos, c_out)
}

/// Accumulates kernel and bias gradients and returns the patch-matrix gradient.
fn lowered_backward<T: Scalar>(
    cols: &[T],
    n_pos: usize,
    w: &[T],
    g: &[T],
    c_out: usize,
    gw: &mut [T],
    gb: &mut [T],
) -> Vec<T> {
    let p = w.len() / c_out;
    let gt = transpose(g, c_out, n_pos);
    let mut gwt = vec![T::zero(); p * c_out];
    let mut gcols = vec![T::zero(); n_pos * p];
    for pos in 0..n_pos {
        let grow = &gt[pos * c_out..(pos + 1) * c_out];
        for (b, &v) in gb.iter_mut().zip(grow) {
            *b += v;
        }
        let crow = &cols[pos * p..(pos + 1) * p];
        let gcrow = &mut gcols[pos * p..(pos + 1) * p];
        for (o, &a) in grow.iter().enumerate() {
            if a == T::zero() {
                continue;
            }
            for (gc, &wv) in gcrow.iter_mut().zip(&w[o * p..(o + 1) * p]) {
                *gc += a * wv;
            }
        }
        for q in 0..p {
            let a = crow[q];
            if a == T::zero() {
                continue;
            }
            for (gv, &v) in gwt[q * c_out..(q + 1) * c_out].iter_mut().zip(grow) {
                *gv += a * v;
            }
        }
    }
    for o in 0..c_out {
        for q in 0..p {
            gw[o * p + q] += gwt[q * c_out + o];
        }
    }
    gcols
}

/// Accumulates kernel and bias gradients into the given buffers and returns
/// the input gradient.
pub(crate) fn conv1d_backward_into<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    stride: usize,
    upstream: &Tensor<T>,
    grad_kernels: &mut Tensor<T>,
    grad_bias: &mut Tensor<T>,
) -> Result<Tensor<T>> {
    let d = conv1d_dims(input, kernels, stride)?;
    expect_rank(upstream, 2, "conv1d upstream")?;
    if upstream.shape() != [d.c_out, d.l_out] {
        return Err(Error::dim(
            "conv1d upstream length",
            d.c_out * d.l_out,
            upstream.len(),
        ));
    }
    kernels.check_same_shape(grad_kernels, "conv1d kernel gradient")?;
    let cols = im2col1d(input.data(), &d, stride);
    let gcols = lowered_backward(
        &cols,
        d.l_out,
        kernels.data(),
        upstream.data(),
        d.c_out,
        grad_kernels.data_mut(),
        grad_bias.data_mut(),
    );
    let mut gin = Tensor::zeros(input.shape());
    col2im1d(&gcols, &d, stride, gin.data_mut());
    Ok(gin)
}

pub fn conv1d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    stride: usize,
    upstream: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let mut gk = Tensor::zeros(kernels.shape());
    let mut gb = Tensor::zeros(&[kernels.shape()[0]]);
    let gi = conv1d_backward_into(input, kernels, stride, upstream, &mut gk, &mut gb)?;
    Ok(ConvGrads {
        input: gi,
        kernels: gk,
        bias: gb,
    })
}

struct Conv2dDims {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    h_out: usize,
    w_out: usize,
}

fn conv2d_dims<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    stride: usize,
) -> Result<Conv2dDims> {
    expect_rank(input, 3, "conv2d input")?;
    expect_rank(kernels, 4, "conv2d kernels")?;
    let s = input.shape();
    let k = kernels.shape();
    if k[1] != s[0] {
        return Err(Error::dim("conv2d input channels", k[1], s[0]));
    }
    let h_out = out_len(s[1], k[2], stride, "conv2d height")?;
    let w_out = out_len(s[2], k[3], stride, "conv2d width")?;
    Ok(Conv2dDims {
        c_in: s[0],
        h: s[1],
        w: s[2],
        c_out: k[0],
        kh: k[2],
        kw: k[3],
        h_out,
        w_out,
    })
}

pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    let d = conv2d_dims(input, kernels, stride)?;
    check_bias(bias, d.c_out, "conv2d")?;
    let cols = im2col2d(input.data(), &d, stride);
    let y = lowered_forward(
        &cols,
        d.h_out * d.w_out,
        kernels.data(),
        bias.data(),
        d.c_out,
    );
    Tensor::new(vec![d.c_out, d.h_out, d.w_out], y)
}

/// `cols[r·w_out + q][(c·kh + i)·kw + j] = x[c][r·stride + i][q·stride + j]`.
fn im2col2d<T: Scalar>(x: &[T], d: &Conv2dDims, stride: usize) -> Vec<T> {
    let p = d.c_in * d.kh * d.kw;
    let mut cols = vec![T::zero(); d.h_out * d.w_out * p];
    for r in 0..d.h_out {
        for q in 0..d.w_out {
            let row = &mut cols[(r * d.w_out + q) * p..(r * d.w_out + q + 1) * p];
            for c in 0..d.c_in {
                for i in 0..d.kh {
                    let start = (c * d.h + r * stride + i) * d.w + q * stride;
                    let dst = (c * d.kh + i) * d.kw;
                    row[dst..dst + d.kw].copy_from_slice(&x[start..start + d.kw]);
                }
            }
        }
    }
    cols
}

fn col2im2d<T: Scalar>(gcols: &[T], d: &Conv2dDims, stride: usize, gx: &mut [T]) {
    let p = d.c_in * d.kh * d.kw;
    for r in 0..d.h_out {
        for q in 0..d.w_out {
            let row = &gcols[(r * d.w_out + q) * p..(r * d.w_out + q + 1) * p];
            for c in 0..d.c_in {
                for i in 0..d.kh {
                    let start = (c * d.h + r * stride + i) * d.w + q * stride;
                    let src = (c * d.kh + i) * d.kw;
                    for (g, &v) in gx[start..start + d.kw]
                        .iter_mut()
                        .zip(&row[src..src + d.kw])
                    {
                        *g += v;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_backward_into<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    stride: usize,
    upstream: &Tensor<T>,
    grad_kernels: &mut Tensor<T>,
    grad_bias: &mut Tensor<T>,
) -> Result<Tensor<T>> {
    let d = conv2d_dims(input, kernels, stride)?;
    expect_rank(upstream, 3, "conv2d upstream")?;
    if upstream.shape() != [d.c_out, d.h_out, d.w_out] {
        return Err(Error::dim(
            "conv2d upstream size",
            d.c_out * d.h_out * d.w_out,
            upstream.len(),
        ));
    }
    kernels.check_same_shape(grad_kernels, "conv2d kernel gradient")?;
    let cols = im2col2d(input.data(), &d, stride);
    let gcols = lowered_backward(
        &cols,
        d.h_out * d.w_out,
        kernels.data(),
        upstream.data(),
        d.c_out,
        grad_kernels.data_mut(),
        grad_bias.data_mut(),
    );
    let mut gin = Tensor::zeros(input.shape());
    col2im2d(&gcols, &d, stride, gin.data_mut());
    Ok(gin)
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    stride: usize,
    upstream: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let mut gk = Tensor::zeros(kernels.shape());
    let mut gb = Tensor::zeros(&[kernels.shape()[0]]);
    let gi = conv2d_backward_into(input, kernels, stride, upstream, &mut gk, &mut gb)?;
    Ok(ConvGrads {
        input: gi,
        kernels: gk,
        bias: gb,
    })
}

/// Max pooling over a `[C, L]` (1-D) or `[C, H, W]` (2-D) tensor.
pub fn maxpool<T: Scalar>(input: &Tensor<T>, pool: usize) -> Result<(Tensor<T>, ArgmaxIndices)> {
    if pool == 0 {
        return Err(Error::Contract("pool size must be positive".into()));
    }
    let s = input.shape();
    for (axis, &extent) in s.iter().enumerate().skip(1) {
        if extent < pool {
            return Err(Error::dim(
                format!("maxpool axis {axis} (must be >= pool)"),
                pool,
                extent,
            ));
        }
    }
    let x = input.data();
    match s.len() {
        2 => {
            let (c, l) = (s[0], s[1]);
            let lo = l / pool;
            let mut out = Tensor::zeros(&[c, lo]);
            let mut arg = Vec::with_capacity(c * lo);
            for ch in 0..c {
                for t in 0..lo {
                    let start = ch * l + t * pool;
                    let mut best = start;
                    for idx in start + 1..start + pool {
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    out.data_mut()[ch * lo + t] = x[best];
                    arg.push(best);
                }
            }
            Ok((out, ArgmaxIndices(arg)))
        }
        3 => {
            let (c, h, w) = (s[0], s[1], s[2]);
            let (ho, wo) = (h / pool, w / pool);
            let mut out = Tensor::zeros(&[c, ho, wo]);
            let mut arg = Vec::with_capacity(c * ho * wo);
            for ch in 0..c {
                for r in 0..ho {
                    for q in 0..wo {
                        let mut best = ch * h * w + (r * pool) * w + q * pool;
                        for i in 0..pool {
                            for j in 0..pool {
                                let idx = ch * h * w + (r * pool + i) * w + q * pool + j;
                                if x[idx] > x[best] {
                                    best = idx;
                                }
                            }
                        }
                        out.data_mut()[(ch * ho + r) * wo + q] = x[best];
                        arg.push(best);
                    }
                }
            }
            Ok((out, ArgmaxIndices(arg)))
        }
        r => Err(Error::Contract(format!(
            "maxpool expects rank 2 or 3 input, got rank {r}"
        ))),
    }
}

/// Routes each upstream value to the recorded argmax position.
pub fn maxpool_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &ArgmaxIndices,
    upstream: &Tensor<T>,
) -> Result<Tensor<T>> {
    if upstream.len() != argmax.0.len() {
        return Err(Error::dim(
            "maxpool upstream length",
            argmax.0.len(),
            upstream.len(),
        ));
    }
    let mut gin = Tensor::zeros(input_shape);
    let n = gin.len();
    for (&idx, &g) in argmax.0.iter().zip(upstream.data()) {
        if idx >= n {
            return Err(Error::dim("maxpool argmax index", n, idx));
        }
        gin.data_mut()[idx] += g;
    }
    Ok(gin)
}

fn dense_check<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>) -> Result<(usize, usize)> {
    expect_rank(input, 1, "dense input")?;
    expect_rank(weights, 2, "dense weights")?;
    let (n_out, n_in) = (weights.shape()[0], weights.shape()[1]);
    if input.len() != n_in {
        return Err(Error::dim("dense input features", n_in, input.len()));
    }
    Ok((n_out, n_in))
}

pub fn dense<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n_out, n_in) = dense_check(input, weights)?;
    check_bias(bias, n_out, "dense")?;
    let x = input.data();
    let w = weights.data();
    let out = (0..n_out)
        .map(|o| {
            let row = &w[o * n_in..(o + 1) * n_in];
            bias.data()[o] + row.iter().zip(x).map(|(&a, &b)| a * b).sum::<T>()
        })
        .collect();
    Ok(Tensor::vector(out))
}

pub(crate) fn dense_backward_into<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    upstream: &Tensor<T>,
    grad_weights: &mut Tensor<T>,
    grad_bias: &mut Tensor<T>,
) -> Result<Tensor<T>> {
    let (n_out, n_in) = dense_check(input, weights)?;
    if upstream.len() != n_out || upstream.rank() != 1 {
        return Err(Error::dim("dense upstream length", n_out, upstream.len()));
    }
    weights.check_same_shape(grad_weights, "dense weight gradient")?;
    let x = input.data();
    let w = weights.data();
    let mut gin = vec![T::zero(); n_in];
    let gw = grad_weights.data_mut();
    for (o, &g) in upstream.data().iter().enumerate() {
        grad_bias.data_mut()[o] += g;
        if g == T::zero() {
            continue;
        }
        let row = &w[o * n_in..(o + 1) * n_in];
        let grow = &mut gw[o * n_in..(o + 1) * n_in];
        for ((gi, gwv), (&wv, &xv)) in gin.iter_mut().zip(grow).zip(row.iter().zip(x)) {
            *gi += wv * g;
            *gwv += g * xv;
        }
    }
    Ok(Tensor::vector(gin))
}

pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<DenseGrads<T>> {
    let mut gw = Tensor::zeros(weights.shape());
    let mut gb = Tensor::zeros(&[weights.shape()[0]]);
    let gi = dense_backward_into(input, weights, upstream, &mut gw, &mut gb)?;
    Ok(DenseGrads {
        input: gi,
        weights: gw,
        bias: gb,
    })
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Scalar>(input: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    input.check_same_shape(upstream, "relu upstream")?;
    let mut g = upstream.clone();
    for (gv, &xv) in g.data_mut().iter_mut().zip(input.data()) {
        if xv <= T::zero() {
            *gv = T::zero();
        }
    }
    Ok(g)
}

pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// Gradient through a sigmoid given its forward output.
pub fn sigmoid_backward<T: Scalar>(output: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    output.check_same_shape(upstream, "sigmoid upstream")?;
    let mut g = upstream.clone();
    for (gv, &s) in g.data_mut().iter_mut().zip(output.data()) {
        *gv *= s * (T::one() - s);
    }
    Ok(g)
}

/// Softmax over the last axis.
pub fn softmax<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let n = *x.shape().last().expect("rank >= 1");
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(n) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

/// Gradient through softmax given its forward output.
pub fn softmax_backward<T: Scalar>(output: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    output.check_same_shape(upstream, "softmax upstream")?;
    let n = *output.shape().last().expect("rank >= 1");
    let mut g = upstream.clone();
    for (grow, yrow) in g.data_mut().chunks_mut(n).zip(output.data().chunks(n)) {
        let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
        for (gv, &y) in grow.iter_mut().zip(yrow) {
            *gv = y * (*gv - dot);
        }
    }
    Ok(g)
}
