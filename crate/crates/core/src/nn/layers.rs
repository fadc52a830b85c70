//! Per-sample layer kernels with hand-written backward passes.
//!
//! Feature maps are `C x H x W`, row-major. Convolutions are lowered to GEMM
//! through an im2col buffer that the backward pass reuses.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::tensor::{gemm, Op, Scalar, Tensor};
use super::NnError;

fn chw(t: &Tensor<impl Scalar>) -> Result<(usize, usize, usize), NnError> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(NnError::ShapeMismatch { expected: vec![0, 0, 0], got: t.shape().to_vec() }),
    }
}

/// Lowers a zero-padded 3x3 neighbourhood of every pixel into a column:
/// `cols[(ci*9 + ky*3 + kx), y*w + x] = input[ci, y+ky-1, x+kx-1]`.
pub(crate) fn im2col<T: Scalar>(input: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut cols = vec![T::zero(); c * 9 * hw];
    for ci in 0..c {
        let plane = &input[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..][..w];
                    let dst = &mut row[y * w..][..w];
                    match kx {
                        0 => dst[1..].copy_from_slice(&src[..w - 1]),
                        1 => dst.copy_from_slice(src),
                        _ => dst[..w - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
pub(crate) fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut out = vec![T::zero(); c * hw];
    for ci in 0..c {
        let plane = &mut out[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..][..w];
                    let src = &row[y * w..][..w];
                    let (d, s) = match kx {
                        0 => (&mut dst[..w - 1], &src[1..]),
                        1 => (&mut dst[..], src),
                        _ => (&mut dst[1..], &src[..w - 1]),
                    };
                    for (a, &b) in d.iter_mut().zip(s) {
                        *a += b;
                    }
                }
            }
        }
    }
    out
}

/// Output of [`conv3x3_forward`], keeping the im2col buffer for backprop.
#[derive(Clone, Debug)]
pub struct ConvOutput<T> {
    pub output: Tensor<T>,
    pub(crate) cols: Vec<T>,
}

/// 3x3 cross-correlation, stride 1, zero padding 1.
///
/// `weight` is `C_out x C_in x 3 x 3`, `bias` is `C_out`.
pub fn conv3x3_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<ConvOutput<T>, NnError> {
    let (cin, h, w) = chw(input)?;
    let cout = bias.len();
    weight.expect_shape(&[cout, cin, 3, 3])?;
    bias.expect_shape(&[cout])?;
    let hw = h * w;
    let cols = im2col(input.data(), cin, h, w);
    let mut out = vec![T::zero(); cout * hw];
    for (co, plane) in out.chunks_mut(hw).enumerate() {
        plane.fill(bias.data()[co]);
    }
    gemm(cout, cin * 9, hw, weight.data(), Op::N, &cols, Op::N, T::one(), &mut out);
    Ok(ConvOutput { output: Tensor::from_vec(&[cout, h, w], out)?, cols })
}

/// Gradients of a 3x3 convolution. `d_input` is skipped when not requested.
pub fn conv3x3_backward<T: Scalar>(
    forward: &ConvOutput<T>,
    input_shape: &[usize],
    weight: &Tensor<T>,
    d_out: &Tensor<T>,
    d_weight: &mut Tensor<T>,
    d_bias: &mut Tensor<T>,
    need_input_grad: bool,
) -> Option<Tensor<T>> {
    let (cin, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    let cout = d_bias.len();
    let hw = h * w;
    let dz = d_out.data();
    gemm(cout, hw, cin * 9, dz, Op::N, &forward.cols, Op::T, T::one(), d_weight.data_mut());
    for (db, plane) in d_bias.data_mut().iter_mut().zip(dz.chunks(hw)) {
        *db += plane.iter().copied().sum::<T>();
    }
    if !need_input_grad {
        return None;
    }
    let mut d_cols = vec![T::zero(); cin * 9 * hw];
    gemm(cin * 9, cout, hw, weight.data(), Op::T, dz, Op::N, T::zero(), &mut d_cols);
    Some(Tensor::from_vec(input_shape, col2im(&d_cols, cin, h, w)).expect("shape matches input"))
}

/// 2x2 max pool with stride 2. Returns the pooled map and, for each output,
/// the flat input index of its maximum (first one wins on ties).
pub fn maxpool2x2_forward<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>), NnError> {
    let (c, h, w) = chw(input)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(NnError::OddSpatialDim { height: h, width: w });
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        for y in 0..oh {
            for xo in 0..ow {
                let base = ci * h * w + 2 * y * w + 2 * xo;
                let mut best = base;
                for idx in [base + 1, base + w, base + w + 1] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best as u32);
            }
        }
    }
    Ok((Tensor::from_vec(&[c, oh, ow], out)?, argmax))
}

pub fn maxpool2x2_backward<T: Scalar>(d_out: &Tensor<T>, argmax: &[u32], input_shape: &[usize]) -> Tensor<T> {
    let mut d_in = Tensor::zeros(input_shape);
    let d = d_in.data_mut();
    for (&g, &idx) in d_out.data().iter().zip(argmax) {
        d[idx as usize] += g;
    }
    d_in
}

/// Per-channel spatial mean, `C x H x W -> C`.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let (c, h, w) = chw(input)?;
    let inv = T::one() / T::from_f64((h * w) as f64);
    let means = input.data().chunks(h * w).map(|p| p.iter().copied().sum::<T>() * inv).collect();
    Tensor::from_vec(&[c], means)
}

pub fn global_avg_pool_backward<T: Scalar>(d_out: &Tensor<T>, input_shape: &[usize]) -> Tensor<T> {
    let hw = input_shape[1] * input_shape[2];
    let inv = T::one() / T::from_f64(hw as f64);
    let data = d_out.data().iter().flat_map(|&g| core::iter::repeat_n(g * inv, hw)).collect();
    Tensor::from_vec(input_shape, data).expect("shape matches input")
}

pub fn tanh_inplace<T: Scalar>(t: &mut Tensor<T>) {
    for v in t.data_mut() {
        *v = v.tanh_libm();
    }
}

/// `d_in = d_out * (1 - y²)` where `y` is the tanh output.
pub fn tanh_backward<T: Scalar>(output: &Tensor<T>, d_out: &mut Tensor<T>) {
    for (g, &y) in d_out.data_mut().iter_mut().zip(output.data()) {
        *g *= T::one() - y * y;
    }
}

/// Inverted dropout mask: each entry is 0 with probability `rate`, otherwise
/// `1 / (1 - rate)`.
pub fn dropout_mask<T: Scalar, R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<T> {
    let keep = T::from_f64(1.0 / (1.0 - rate));
    (0..len).map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep }).collect()
}

pub fn apply_mask<T: Scalar>(t: &mut Tensor<T>, mask: &[T]) {
    for (v, &m) in t.data_mut().iter_mut().zip(mask) {
        *v *= m;
    }
}

/// `y = W x + b` with `W` stored `out x in`.
pub fn linear_forward<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let n_in = x.len();
    let n_out = bias.len();
    weight.expect_shape(&[n_out, n_in])?;
    let mut y = bias.data().to_vec();
    gemm(n_out, n_in, 1, weight.data(), Op::N, x.data(), Op::N, T::one(), &mut y);
    Tensor::from_vec(&[n_out], y)
}

/// Accumulates `dW += dy xᵀ`, `db += dy` and returns `dx = Wᵀ dy`.
pub fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    d_out: &Tensor<T>,
    d_weight: &mut Tensor<T>,
    d_bias: &mut Tensor<T>,
) -> Tensor<T> {
    let n_in = x.len();
    let n_out = d_out.len();
    gemm(n_out, 1, n_in, d_out.data(), Op::N, x.data(), Op::N, T::one(), d_weight.data_mut());
    for (b, &g) in d_bias.data_mut().iter_mut().zip(d_out.data()) {
        *b += g;
    }
    let mut dx = vec![T::zero(); n_in];
    gemm(n_in, n_out, 1, weight.data(), Op::T, d_out.data(), Op::N, T::zero(), &mut dx);
    Tensor::from_vec(&[n_in], dx).expect("length matches input")
}

pub fn softmax<T: Scalar>(scores: &[T]) -> Vec<T> {
    let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = scores.iter().map(|&s| (s - max).exp_libm()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Max-shifted softmax cross-entropy and its gradient `softmax - onehot`.
pub fn softmax_cross_entropy<T: Scalar>(scores: &[T], label: usize) -> Result<(T, Vec<T>), NnError> {
    if label >= scores.len() {
        return Err(NnError::LabelOutOfRange { label, classes: scores.len() });
    }
    let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
    let log_sum = scores.iter().map(|&s| (s - max).exp_libm()).sum::<T>().ln_libm() + max;
    let loss = log_sum - scores[label];
    let mut grad = softmax(scores);
    grad[label] -= T::one();
    Ok((loss, grad))
}
