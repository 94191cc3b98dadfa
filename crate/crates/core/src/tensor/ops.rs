//! Forward and backward kernels. Every function is value-in/value-out; the
//! caller keeps whatever the backward pass needs.

use super::{gemm, LayerKind, LayerParams, Real, Tensor};
use crate::error::{Error, Result};

/// Parameter gradients, shaped like the layer's weight and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Index range of window positions `pos` with `0 <= pos*stride + offset < len`.
#[inline]
fn valid_positions(
    len: usize,
    stride: usize,
    offset: isize,
    n_pos: usize,
) -> std::ops::Range<usize> {
    let s = stride as isize;
    let lo = if offset >= 0 {
        0
    } else {
        ((-offset) + s - 1) / s
    };
    let hi = (len as isize - offset + s - 1) / s;
    let lo = lo.max(0) as usize;
    let hi = (hi.max(0) as usize).min(n_pos);
    lo..hi.max(lo)
}

/// `cols[(c*kernel + j), pos] = src[c, pos*stride + j - pad]`, zero outside.
fn im2col<T: Real>(
    src: &[T],
    channels: usize,
    len: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    n_pos: usize,
) -> Vec<T> {
    let mut cols = vec![T::zero(); channels * kernel * n_pos];
    for c in 0..channels {
        let row = &src[c * len..(c + 1) * len];
        for j in 0..kernel {
            let offset = j as isize - pad as isize;
            let dst = &mut cols[(c * kernel + j) * n_pos..(c * kernel + j + 1) * n_pos];
            let range = valid_positions(len, stride, offset, n_pos);
            if stride == 1 {
                let start = (range.start as isize + offset) as usize;
                dst[range.clone()].copy_from_slice(&row[start..start + range.len()]);
            } else {
                for pos in range {
                    dst[pos] = row[(pos as isize * stride as isize + offset) as usize];
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds columns back into `dst`.
#[allow(clippy::too_many_arguments)]
fn col2im_add<T: Real>(
    cols: &[T],
    dst: &mut [T],
    channels: usize,
    len: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    n_pos: usize,
) {
    for c in 0..channels {
        let row = &mut dst[c * len..(c + 1) * len];
        for j in 0..kernel {
            let offset = j as isize - pad as isize;
            let src = &cols[(c * kernel + j) * n_pos..(c * kernel + j + 1) * n_pos];
            for pos in valid_positions(len, stride, offset, n_pos) {
                row[(pos as isize * stride as isize + offset) as usize] += src[pos];
            }
        }
    }
}

fn add_bias<T: Real>(out: &mut [T], bias: &[T], cols: usize) {
    for (row, &b) in out.chunks_mut(cols).zip(bias) {
        row.iter_mut().for_each(|v| *v += b);
    }
}

fn row_sums<T: Real>(g: &[T], cols: usize) -> Vec<T> {
    g.chunks(cols).map(|r| r.iter().copied().sum()).collect()
}

fn check_input<T: Real>(input: &Tensor<T>, expected_channels: usize) -> Result<(usize, usize)> {
    let (c, t) = input.dims2()?;
    if c != expected_channels {
        return Err(Error::Config(format!(
            "layer expects {expected_channels} input channels, got {c}"
        )));
    }
    Ok((c, t))
}

pub fn conv1d_forward<T: Real>(input: &Tensor<T>, params: &LayerParams<T>) -> Result<Tensor<T>> {
    let LayerKind::Conv1d {
        in_channels,
        out_channels,
        kernel,
        stride,
        padding,
    } = params.kind
    else {
        return Err(Error::Config(format!(
            "{:?} is not a conv1d layer",
            params.kind
        )));
    };
    let (_, len) = check_input(input, in_channels)?;
    let t_out = params.kind.output_len(len)?;
    let cols = im2col(
        input.data(),
        in_channels,
        len,
        kernel,
        stride,
        padding,
        t_out,
    );
    let mut out = vec![T::zero(); out_channels * t_out];
    gemm(
        out_channels,
        in_channels * kernel,
        t_out,
        params.weight.data(),
        false,
        &cols,
        false,
        T::zero(),
        &mut out,
    );
    add_bias(&mut out, params.bias.data(), t_out);
    Tensor::matrix(out_channels, t_out, out)
}

pub fn conv1d_backward<T: Real>(
    output_grad: &Tensor<T>,
    saved_input: Option<&Tensor<T>>,
    params: &LayerParams<T>,
) -> Result<(Tensor<T>, ParamGrads<T>)> {
    let input = saved_input
        .ok_or_else(|| Error::Usage("conv1d backward called without a saved input".into()))?;
    let LayerKind::Conv1d {
        in_channels,
        out_channels,
        kernel,
        stride,
        padding,
    } = params.kind
    else {
        return Err(Error::Config(format!(
            "{:?} is not a conv1d layer",
            params.kind
        )));
    };
    let (_, len) = check_input(input, in_channels)?;
    let t_out = params.kind.output_len(len)?;
    if output_grad.shape() != [out_channels, t_out] {
        return Err(Error::Usage(format!(
            "conv1d output gradient {:?} does not match forward output [{out_channels}, {t_out}]",
            output_grad.shape()
        )));
    }
    let ck = in_channels * kernel;
    let cols = im2col(
        input.data(),
        in_channels,
        len,
        kernel,
        stride,
        padding,
        t_out,
    );
    let mut weight = vec![T::zero(); out_channels * ck];
    gemm(
        out_channels,
        t_out,
        ck,
        output_grad.data(),
        false,
        &cols,
        true,
        T::zero(),
        &mut weight,
    );
    let bias = row_sums(output_grad.data(), t_out);
    let mut dcols = vec![T::zero(); ck * t_out];
    gemm(
        ck,
        out_channels,
        t_out,
        params.weight.data(),
        true,
        output_grad.data(),
        false,
        T::zero(),
        &mut dcols,
    );
    let mut dx = vec![T::zero(); in_channels * len];
    col2im_add(
        &dcols,
        &mut dx,
        in_channels,
        len,
        kernel,
        stride,
        padding,
        t_out,
    );
    Ok((
        Tensor::matrix(in_channels, len, dx)?,
        ParamGrads { weight, bias },
    ))
}

pub fn conv_transpose1d_forward<T: Real>(
    input: &Tensor<T>,
    params: &LayerParams<T>,
) -> Result<Tensor<T>> {
    let LayerKind::ConvTranspose1d {
        in_channels,
        out_channels,
        kernel,
        stride,
        padding,
    } = params.kind
    else {
        return Err(Error::Config(format!(
            "{:?} is not a transposed convolution",
            params.kind
        )));
    };
    let (_, len) = check_input(input, in_channels)?;
    let t_out = params.kind.output_len(len)?;
    let ok = out_channels * kernel;
    let mut spread = vec![T::zero(); ok * len];
    gemm(
        ok,
        in_channels,
        len,
        params.weight.data(),
        true,
        input.data(),
        false,
        T::zero(),
        &mut spread,
    );
    let mut out = vec![T::zero(); out_channels * t_out];
    col2im_add(
        &spread,
        &mut out,
        out_channels,
        t_out,
        kernel,
        stride,
        padding,
        len,
    );
    add_bias(&mut out, params.bias.data(), t_out);
    Tensor::matrix(out_channels, t_out, out)
}

pub fn conv_transpose1d_backward<T: Real>(
    output_grad: &Tensor<T>,
    saved_input: Option<&Tensor<T>>,
    params: &LayerParams<T>,
) -> Result<(Tensor<T>, ParamGrads<T>)> {
    let input = saved_input.ok_or_else(|| {
        Error::Usage("transposed convolution backward called without a saved input".into())
    })?;
    let LayerKind::ConvTranspose1d {
        in_channels,
        out_channels,
        kernel,
        stride,
        padding,
    } = params.kind
    else {
        return Err(Error::Config(format!(
            "{:?} is not a transposed convolution",
            params.kind
        )));
    };
    let (_, len) = check_input(input, in_channels)?;
    let t_out = params.kind.output_len(len)?;
    if output_grad.shape() != [out_channels, t_out] {
        return Err(Error::Usage(format!(
            "transposed convolution output gradient {:?} does not match [{out_channels}, {t_out}]",
            output_grad.shape()
        )));
    }
    let ok = out_channels * kernel;
    let gathered = im2col(
        output_grad.data(),
        out_channels,
        t_out,
        kernel,
        stride,
        padding,
        len,
    );
    let mut dx = vec![T::zero(); in_channels * len];
    gemm(
        in_channels,
        ok,
        len,
        params.weight.data(),
        false,
        &gathered,
        false,
        T::zero(),
        &mut dx,
    );
    let mut weight = vec![T::zero(); in_channels * ok];
    gemm(
        in_channels,
        len,
        ok,
        input.data(),
        false,
        &gathered,
        true,
        T::zero(),
        &mut weight,
    );
    let bias = row_sums(output_grad.data(), t_out);
    Ok((
        Tensor::matrix(in_channels, len, dx)?,
        ParamGrads { weight, bias },
    ))
}

/// Fully-connected map applied to each column of `[in, cols]` (or to a
/// plain vector).
pub fn linear_forward<T: Real>(input: &Tensor<T>, params: &LayerParams<T>) -> Result<Tensor<T>> {
    let LayerKind::Linear {
        in_features,
        out_features,
    } = params.kind
    else {
        return Err(Error::Config(format!(
            "{:?} is not a linear layer",
            params.kind
        )));
    };
    let (_, cols) = check_input(input, in_features)?;
    let mut out = vec![T::zero(); out_features * cols];
    gemm(
        out_features,
        in_features,
        cols,
        params.weight.data(),
        false,
        input.data(),
        false,
        T::zero(),
        &mut out,
    );
    add_bias(&mut out, params.bias.data(), cols);
    if input.shape().len() == 1 {
        Tensor::vector(out)
    } else {
        Tensor::matrix(out_features, cols, out)
    }
}

pub fn linear_backward<T: Real>(
    output_grad: &Tensor<T>,
    saved_input: Option<&Tensor<T>>,
    params: &LayerParams<T>,
) -> Result<(Tensor<T>, ParamGrads<T>)> {
    let input = saved_input
        .ok_or_else(|| Error::Usage("linear backward called without a saved input".into()))?;
    let LayerKind::Linear {
        in_features,
        out_features,
    } = params.kind
    else {
        return Err(Error::Config(format!(
            "{:?} is not a linear layer",
            params.kind
        )));
    };
    let (_, cols) = check_input(input, in_features)?;
    if output_grad.len() != out_features * cols {
        return Err(Error::Usage(format!(
            "linear output gradient {:?} does not match [{out_features}, {cols}]",
            output_grad.shape()
        )));
    }
    let mut weight = vec![T::zero(); out_features * in_features];
    gemm(
        out_features,
        cols,
        in_features,
        output_grad.data(),
        false,
        input.data(),
        true,
        T::zero(),
        &mut weight,
    );
    let bias = row_sums(output_grad.data(), cols);
    let mut dx = vec![T::zero(); in_features * cols];
    gemm(
        in_features,
        out_features,
        cols,
        params.weight.data(),
        true,
        output_grad.data(),
        false,
        T::zero(),
        &mut dx,
    );
    let dx = Tensor::new(input.shape().to_vec(), dx)?;
    Ok((dx, ParamGrads { weight, bias }))
}

/// Window-2, stride-2 pooling output length; odd inputs lose their last
/// sample.
fn pooled_len(len: usize) -> Result<usize> {
    if len < 2 {
        return Err(Error::InputTooShort {
            needed: 2,
            got: len,
        });
    }
    if len % 2 == 1 {
        log::warn!("pooling input length {len} is odd; dropping the final sample");
    }
    Ok(len / 2)
}

pub fn avgpool1d<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, len) = input.dims2()?;
    let half = pooled_len(len)?;
    let two = T::lit(2.0);
    let mut out = Vec::with_capacity(c * half);
    for r in 0..c {
        let row = input.row(r);
        out.extend((0..half).map(|i| (row[2 * i] + row[2 * i + 1]) / two));
    }
    Tensor::matrix(c, half, out)
}

/// Gradient of [`avgpool1d`]; `input_len` is the pre-pooling length.
pub fn avgpool1d_backward<T: Real>(output_grad: &Tensor<T>, input_len: usize) -> Result<Tensor<T>> {
    let (c, half) = output_grad.dims2()?;
    if input_len / 2 != half {
        return Err(Error::Usage(format!(
            "pool gradient length {half} does not match input length {input_len}"
        )));
    }
    let two = T::lit(2.0);
    let mut dx = vec![T::zero(); c * input_len];
    for r in 0..c {
        let g = output_grad.row(r);
        let dst = &mut dx[r * input_len..(r + 1) * input_len];
        for i in 0..half {
            dst[2 * i] = g[i] / two;
            dst[2 * i + 1] = g[i] / two;
        }
    }
    Tensor::matrix(c, input_len, dx)
}

/// Window-2 max pooling; also returns the flat input index of each maximum.
pub fn maxpool1d<T: Real>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (c, len) = input.dims2()?;
    let half = pooled_len(len)?;
    let mut out = Vec::with_capacity(c * half);
    let mut argmax = Vec::with_capacity(c * half);
    for r in 0..c {
        let row = input.row(r);
        for i in 0..half {
            let (a, b) = (row[2 * i], row[2 * i + 1]);
            let pick = if b > a { 2 * i + 1 } else { 2 * i };
            out.push(row[pick]);
            argmax.push(r * len + pick);
        }
    }
    Ok((Tensor::matrix(c, half, out)?, argmax))
}

pub fn maxpool1d_backward<T: Real>(
    output_grad: &Tensor<T>,
    argmax: &[usize],
    input_len: usize,
) -> Result<Tensor<T>> {
    let (c, _) = output_grad.dims2()?;
    if argmax.len() != output_grad.len() {
        return Err(Error::Usage(
            "max-pool argmax does not match gradient".into(),
        ));
    }
    let mut dx = vec![T::zero(); c * input_len];
    for (&idx, &g) in argmax.iter().zip(output_grad.data()) {
        dx[idx] += g;
    }
    Tensor::matrix(c, input_len, dx)
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of [`relu`] given its forward output.
pub fn relu_backward<T: Real>(output_grad: &Tensor<T>, output: &Tensor<T>) -> Tensor<T> {
    let data = output_grad
        .data()
        .iter()
        .zip(output.data())
        .map(|(&g, &y)| if y > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(output.shape().to_vec(), data).expect("same shape")
}

pub fn tanh<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.tanh())
}

/// Gradient of [`tanh`] given its forward output.
pub fn tanh_backward<T: Real>(output_grad: &Tensor<T>, output: &Tensor<T>) -> Tensor<T> {
    let data = output_grad
        .data()
        .iter()
        .zip(output.data())
        .map(|(&g, &y)| g * (T::one() - y * y))
        .collect();
    Tensor::new(output.shape().to_vec(), data).expect("same shape")
}

/// Mean squared error and its gradient with respect to `prediction`.
pub fn mse<T: Real>(target: &Tensor<T>, prediction: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if target.shape() != prediction.shape() {
        return Err(Error::Shape(format!(
            "mse between {:?} and {:?}",
            target.shape(),
            prediction.shape()
        )));
    }
    let n = T::lit(target.len() as f64);
    let mut loss = T::zero();
    let grad = target
        .data()
        .iter()
        .zip(prediction.data())
        .map(|(&x, &y)| {
            let d = y - x;
            loss += d * d;
            T::lit(2.0) * d / n
        })
        .collect();
    let loss = loss / n;
    if !loss.is_finite() {
        return Err(Error::Numeric("non-finite reconstruction loss".into()));
    }
    Ok((loss, Tensor::new(prediction.shape().to_vec(), grad)?))
}

/// Normalised exponential of `logits`.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Softmax cross-entropy of `logits` against class `label`, with the
/// gradient with respect to the logits.
pub fn cross_entropy<T: Real>(logits: &Tensor<T>, label: usize) -> Result<(T, Tensor<T>)> {
    let z = logits.data();
    if label >= z.len() {
        return Err(Error::Usage(format!(
            "label {label} out of range for {} classes",
            z.len()
        )));
    }
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
    let loss = lse - z[label];
    if !loss.is_finite() {
        return Err(Error::Numeric("non-finite classification loss".into()));
    }
    let mut grad = softmax(z);
    grad[label] -= T::one();
    Ok((loss, Tensor::new(logits.shape().to_vec(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(k: Vec<f64>, padding: usize) -> LayerParams<f64> {
        let kind = LayerKind::Conv1d {
            in_channels: 1,
            out_channels: 1,
            kernel: k.len(),
            stride: 1,
            padding,
        };
        let n = k.len();
        LayerParams::new(
            kind,
            Tensor::new(vec![1, 1, n], k).unwrap(),
            Tensor::vector(vec![0.0]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn identity_kernel_passes_signal_through() {
        let p = conv(vec![0.0, 0.0, 1.0, 0.0, 0.0], 2);
        let x = Tensor::matrix(1, 5, vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let y = conv1d_forward(&x, &p).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0, 5.0]);

        let ones = Tensor::matrix(1, 5, vec![1.0; 5]).unwrap();
        let (dx, _) = conv1d_backward(&ones, Some(&x), &p).unwrap();
        assert_eq!(dx.data(), &[1.0; 5]);
    }

    #[test]
    fn box_kernel_sums_constant_signal() {
        let p = conv(vec![1.0, 1.0, 1.0], 0);
        let x = Tensor::matrix(1, 4, vec![1.0; 4]).unwrap();
        assert_eq!(conv1d_forward(&x, &p).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn zero_output_grad_gives_zero_grads() {
        let p = conv(vec![0.3, -0.2, 0.5], 1);
        let x = Tensor::matrix(1, 6, vec![1.0, -2.0, 0.5, 3.0, 0.1, 2.0]).unwrap();
        let g = Tensor::zeros(vec![1, 6]);
        let (dx, pg) = conv1d_backward(&g, Some(&x), &p).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        assert!(pg.weight.iter().chain(&pg.bias).all(|&v| v == 0.0));
    }

    #[test]
    fn missing_saved_input_is_a_usage_error() {
        let p = conv(vec![1.0], 0);
        let g = Tensor::zeros(vec![1, 3]);
        assert!(matches!(
            conv1d_backward(&g, None, &p),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn channel_mismatch_is_a_config_error() {
        let p = conv(vec![1.0], 0);
        let x = Tensor::<f64>::zeros(vec![2, 3]);
        assert!(matches!(conv1d_forward(&x, &p), Err(Error::Config(_))));
    }

    #[test]
    fn pooling_means() {
        let x = Tensor::matrix(1, 4, vec![1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_eq!(avgpool1d(&x).unwrap().data(), &[2.0, 3.0]);
        let c = Tensor::matrix(1, 4, vec![5.0; 4]).unwrap();
        assert_eq!(avgpool1d(&c).unwrap().data(), &[5.0, 5.0]);
        let (m, _) = maxpool1d(&x).unwrap();
        assert_eq!(m.data(), &[3.0, 4.0]);
    }

    #[test]
    fn pooling_trims_odd_and_rejects_short() {
        let x = Tensor::matrix(1, 5, vec![1.0, 3.0, 2.0, 4.0, 9.0]).unwrap();
        assert_eq!(avgpool1d(&x).unwrap().data(), &[2.0, 3.0]);
        let short = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        assert!(matches!(
            avgpool1d(&short),
            Err(Error::InputTooShort { .. })
        ));
    }

    #[test]
    fn transposed_conv_of_zero_input_is_bias() {
        let kind = LayerKind::ConvTranspose1d {
            in_channels: 2,
            out_channels: 3,
            kernel: 8,
            stride: 2,
            padding: 3,
        };
        let mut p = LayerParams::<f64>::zeros(kind).unwrap();
        p.weight
            .data_mut()
            .iter_mut()
            .enumerate()
            .for_each(|(i, w)| *w = i as f64 * 0.01);
        p.bias = Tensor::vector(vec![1.0, -2.0, 0.5]).unwrap();
        let y = conv_transpose1d_forward(&Tensor::zeros(vec![2, 5]), &p).unwrap();
        assert_eq!(y.shape(), &[3, 10]);
        for r in 0..3 {
            assert!(y.row(r).iter().all(|&v| v == p.bias.data()[r]));
        }
    }

    #[test]
    fn relu_and_losses() {
        let x = Tensor::vector(vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let (l, g) = mse(&x, &x).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
        let logits = Tensor::vector(vec![0.7; 4]).unwrap();
        for label in 0..4 {
            let (ce, _) = cross_entropy(&logits, label).unwrap();
            assert!((ce - 4f64.ln()).abs() < 1e-12);
        }
        assert!(cross_entropy(&logits, 4).is_err());
    }

    #[test]
    fn non_finite_loss_is_numeric_error() {
        let x = Tensor::vector(vec![1.0, f64::NAN]).unwrap();
        let y = Tensor::vector(vec![1.0, 0.0]).unwrap();
        assert!(matches!(mse(&y, &x), Err(Error::Numeric(_))));
    }
}
