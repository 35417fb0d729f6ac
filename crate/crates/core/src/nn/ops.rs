//! Layer kernels: forward and backward passes.
//!
//! Activations are `[L, C]` (time, channel). Convolution kernels are stored
//! `[K, C_in, C_out]`, dense weights `[D_in, D_out]`.

use rand::Rng;

use super::scalar::{gemm, MatRef};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::rng;

fn dims2<T: Scalar>(x: &Tensor<T>, op: &'static str) -> Result<(usize, usize)> {
    match *x.shape() {
        [l, c] => Ok((l, c)),
        _ => Err(Error::shape(op, x.shape(), &[0, 0])),
    }
}

/// Copy `[L, C]` rows into a buffer with `front` and `back` zero rows.
fn pad_rows<T: Scalar>(x: &[T], c: usize, front: usize, back: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len() + (front + back) * c);
    out.resize(front * c, T::zero());
    out.extend_from_slice(x);
    out.resize(x.len() + (front + back) * c, T::zero());
    out
}

/// Left padding of a "same" convolution with kernel width `k`.
pub fn same_pad_left(k: usize) -> usize {
    (k - 1) / 2
}

/// "Same"-padded 1-D cross-correlation plus bias.
///
/// `y[t, o] = b[o] + Σ_k Σ_c x[t + k - pad_left, c] · w[k, c, o]` with zeros
/// outside `0..L`. The padded input rows are read through an overlapping
/// strided view, so no im2col copy is made.
pub fn conv1d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (l, cin) = dims2(x, "conv1d input")?;
    let (k, cout) = match *w.shape() {
        [k, c, o] if c == cin => (k, o),
        _ => return Err(Error::shape("conv1d kernel", w.shape(), &[0, cin, 0])),
    };
    if b.shape() != [cout] {
        return Err(Error::shape("conv1d bias", b.shape(), &[cout]));
    }
    let pl = same_pad_left(k);
    let padded = pad_rows(x.data(), cin, pl, k - 1 - pl);
    let mut out = Vec::with_capacity(l * cout);
    for _ in 0..l {
        out.extend_from_slice(b.data());
    }
    let cols = MatRef {
        data: &padded,
        rows: l,
        cols: k * cin,
        rs: cin,
        cs: 1,
    };
    gemm(T::one(), cols, MatRef::rows(w.data(), k * cin, cout), T::one(), &mut out);
    let y = Tensor::from_vec(&[l, cout], out)?;
    y.debug_check_finite("conv1d");
    Ok(y)
}

pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Backward pass of [`conv1d`]. The input gradient is skipped unless
/// `need_input` is set.
pub fn conv1d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let (l, cin) = dims2(x, "conv1d_backward input")?;
    let [k, _, cout] = *w.shape() else {
        return Err(Error::shape("conv1d_backward kernel", w.shape(), &[0, cin, 0]));
    };
    if dy.shape() != [l, cout] {
        return Err(Error::shape("conv1d_backward grad", dy.shape(), &[l, cout]));
    }
    let pl = same_pad_left(k);
    let pr = k - 1 - pl;

    let padded = pad_rows(x.data(), cin, pl, pr);
    let cols = MatRef {
        data: &padded,
        rows: l,
        cols: k * cin,
        rs: cin,
        cs: 1,
    };
    let mut dw = vec![T::zero(); k * cin * cout];
    gemm(T::one(), cols.t(), MatRef::rows(dy.data(), l, cout), T::zero(), &mut dw);

    let mut db = vec![T::zero(); cout];
    for row in dy.data().chunks_exact(cout) {
        for (acc, &g) in db.iter_mut().zip(row) {
            *acc += g;
        }
    }

    let input = if need_input {
        // dx[t, c] = Σ_j Σ_o dy[t + j - pr, o] · w[k-1-j, c, o]
        let mut flipped = vec![T::zero(); k * cout * cin];
        let wd = w.data();
        for j in 0..k {
            for c in 0..cin {
                for o in 0..cout {
                    flipped[(j * cout + o) * cin + c] = wd[((k - 1 - j) * cin + c) * cout + o];
                }
            }
        }
        let dpad = pad_rows(dy.data(), cout, pr, pl);
        let dcols = MatRef {
            data: &dpad,
            rows: l,
            cols: k * cout,
            rs: cout,
            cs: 1,
        };
        let mut dx = vec![T::zero(); l * cin];
        gemm(T::one(), dcols, MatRef::rows(&flipped, k * cout, cin), T::zero(), &mut dx);
        Some(Tensor::from_vec(&[l, cin], dx)?)
    } else {
        None
    };

    Ok(ConvGrads {
        input,
        kernel: Tensor::from_vec(&[k, cin, cout], dw)?,
        bias: Tensor::from_vec(&[cout], db)?,
    })
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Takes the forward *output*; `relu'(0) = 0`.
pub fn relu_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (g, &v) in dx.data_mut().iter_mut().zip(y.data()) {
        if v <= T::zero() {
            *g = T::zero();
        }
    }
    dx
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

/// Takes the forward *output*.
pub fn sigmoid_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (g, &s) in dx.data_mut().iter_mut().zip(y.data()) {
        *g *= s * (T::one() - s);
    }
    dx
}

/// Output length of a valid (unpadded) 1-D max pool.
pub fn pooled_len(l: usize, pool: usize, stride: usize) -> usize {
    (l - pool) / stride + 1
}

pub struct Pooled<T> {
    pub output: Tensor<T>,
    /// Time index of the selected maximum for every output element.
    pub argmax: Vec<u32>,
    pub input_len: usize,
}

/// Channelwise sliding-window max. Ties go to the lowest time index.
pub fn maxpool1d<T: Scalar>(x: &Tensor<T>, pool: usize, stride: usize) -> Result<Pooled<T>> {
    let (l, c) = dims2(x, "maxpool1d")?;
    if pool == 0 || stride == 0 || l < pool {
        return Err(Error::shape("maxpool1d", x.shape(), &[pool, c]));
    }
    let lo = pooled_len(l, pool, stride);
    let xd = x.data();
    let mut out = Vec::with_capacity(lo * c);
    let mut argmax = Vec::with_capacity(lo * c);
    for i in 0..lo {
        let start = i * stride;
        let base = out.len();
        out.extend_from_slice(&xd[start * c..(start + 1) * c]);
        argmax.extend(std::iter::repeat_n(start as u32, c));
        for t in start + 1..start + pool {
            let row = &xd[t * c..(t + 1) * c];
            for ch in 0..c {
                if row[ch] > out[base + ch] {
                    out[base + ch] = row[ch];
                    argmax[base + ch] = t as u32;
                }
            }
        }
    }
    Ok(Pooled {
        output: Tensor::from_vec(&[lo, c], out)?,
        argmax,
        input_len: l,
    })
}

/// Routes each output gradient to its argmax position. `dy` has the pooled
/// output's element order; the channel count is its last dimension.
pub fn maxpool1d_backward<T: Scalar>(argmax: &[u32], input_len: usize, dy: &Tensor<T>) -> Tensor<T> {
    let c = *dy.shape().last().unwrap_or(&1);
    let mut dx = Tensor::zeros(&[input_len, c]);
    let dxd = dx.data_mut();
    for (idx, (&t, &g)) in argmax.iter().zip(dy.data()).enumerate() {
        dxd[t as usize * c + idx % c] += g;
    }
    dx
}

/// Per-channel max over time: `[L, C] -> [C]`.
pub fn global_maxpool<T: Scalar>(x: &Tensor<T>) -> Result<Pooled<T>> {
    let (l, c) = dims2(x, "global_maxpool")?;
    let p = maxpool1d(x, l, 1)?;
    Ok(Pooled {
        output: p.output.reshape(&[c])?,
        argmax: p.argmax,
        input_len: l,
    })
}

/// Affine map over the last axis. `x` is `[D_in]` or `[R, D_in]`.
pub fn dense<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let din = *x.shape().last().unwrap_or(&0);
    let dout = match *w.shape() {
        [i, o] if i == din => o,
        _ => return Err(Error::shape("dense weights", w.shape(), &[din, 0])),
    };
    if b.shape() != [dout] {
        return Err(Error::shape("dense bias", b.shape(), &[dout]));
    }
    let rows = x.len() / din;
    let mut out = Vec::with_capacity(rows * dout);
    for _ in 0..rows {
        out.extend_from_slice(b.data());
    }
    gemm(
        T::one(),
        MatRef::rows(x.data(), rows, din),
        MatRef::rows(w.data(), din, dout),
        T::one(),
        &mut out,
    );
    let mut shape = x.shape().to_vec();
    *shape.last_mut().expect("non-empty shape") = dout;
    let y = Tensor::from_vec(&shape, out)?;
    y.debug_check_finite("dense");
    Ok(y)
}

pub struct DenseGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn dense_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    need_input: bool,
) -> Result<DenseGrads<T>> {
    let [din, dout] = *w.shape() else {
        return Err(Error::shape("dense_backward weights", w.shape(), &[0, 0]));
    };
    let rows = x.len() / din;
    if dy.len() != rows * dout {
        return Err(Error::shape("dense_backward grad", dy.shape(), &[rows, dout]));
    }
    let xm = MatRef::rows(x.data(), rows, din);
    let dym = MatRef::rows(dy.data(), rows, dout);
    let mut dw = vec![T::zero(); din * dout];
    gemm(T::one(), xm.t(), dym, T::zero(), &mut dw);
    let mut db = vec![T::zero(); dout];
    for row in dy.data().chunks_exact(dout) {
        for (acc, &g) in db.iter_mut().zip(row) {
            *acc += g;
        }
    }
    let input = if need_input {
        let mut dx = vec![T::zero(); rows * din];
        gemm(T::one(), dym, MatRef::rows(w.data(), din, dout).t(), T::zero(), &mut dx);
        Some(Tensor::from_vec(x.shape(), dx)?)
    } else {
        None
    };
    Ok(DenseGrads {
        input,
        weights: Tensor::from_vec(&[din, dout], dw)?,
        bias: Tensor::from_vec(&[dout], db)?,
    })
}

/// Inverted dropout. Returns the output and, in training mode with a
/// non-zero rate, the per-element multiplier (`0` or `1 / (1 - rate)`).
pub fn dropout<T: Scalar>(
    x: &Tensor<T>,
    rate: f64,
    seed: u64,
    training: bool,
) -> Result<(Tensor<T>, Option<Vec<T>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Parameter(format!("dropout rate {rate} not in [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = T::from_f64(1.0 / (1.0 - rate));
    let mut r = rng::stream(seed, &[]);
    let mask: Vec<T> = (0..x.len())
        .map(|_| if r.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let mut y = x.clone();
    for (v, &m) in y.data_mut().iter_mut().zip(&mask) {
        *v *= m;
    }
    Ok((y, Some(mask)))
}

pub fn dropout_backward<T: Scalar>(dy: &Tensor<T>, mask: Option<&[T]>) -> Tensor<T> {
    let mut dx = dy.clone();
    if let Some(mask) = mask {
        for (g, &m) in dx.data_mut().iter_mut().zip(mask) {
            *g *= m;
        }
    }
    dx
}
