use rand::Rng;

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Trainable layer type and its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// Weight `[out, in, kernel]`.
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    /// Weight `[in, out, kernel]`.
    ConvTranspose1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    /// Weight `[out, in]`, applied independently to every column.
    Linear {
        in_features: usize,
        out_features: usize,
    },
}

impl LayerKind {
    pub fn tag(&self) -> u8 {
        match self {
            LayerKind::Conv1d { .. } => 1,
            LayerKind::ConvTranspose1d { .. } => 2,
            LayerKind::Linear { .. } => 3,
        }
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        match *self {
            LayerKind::Conv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![out_channels, in_channels, kernel],
            LayerKind::ConvTranspose1d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![in_channels, out_channels, kernel],
            LayerKind::Linear {
                in_features,
                out_features,
            } => vec![out_features, in_features],
        }
    }

    pub fn in_channels(&self) -> usize {
        match *self {
            LayerKind::Conv1d { in_channels, .. }
            | LayerKind::ConvTranspose1d { in_channels, .. } => in_channels,
            LayerKind::Linear { in_features, .. } => in_features,
        }
    }

    pub fn out_channels(&self) -> usize {
        match *self {
            LayerKind::Conv1d { out_channels, .. }
            | LayerKind::ConvTranspose1d { out_channels, .. } => out_channels,
            LayerKind::Linear { out_features, .. } => out_features,
        }
    }

    /// Number of inputs feeding one output value.
    pub fn fan_in(&self) -> usize {
        match *self {
            LayerKind::Conv1d {
                in_channels,
                kernel,
                ..
            } => in_channels * kernel,
            LayerKind::ConvTranspose1d {
                in_channels,
                kernel,
                stride,
                ..
            } => (in_channels * kernel / stride).max(1),
            LayerKind::Linear { in_features, .. } => in_features,
        }
    }

    /// Output length along time for an input of length `len`.
    pub fn output_len(&self, len: usize) -> Result<usize> {
        match *self {
            LayerKind::Conv1d {
                kernel,
                stride,
                padding,
                ..
            } => {
                if kernel > len + 2 * padding {
                    return Err(Error::InputTooShort {
                        needed: kernel.saturating_sub(2 * padding),
                        got: len,
                    });
                }
                Ok((len + 2 * padding - kernel) / stride + 1)
            }
            LayerKind::ConvTranspose1d {
                kernel,
                stride,
                padding,
                ..
            } => {
                let full = (len - 1) * stride + kernel;
                if full <= 2 * padding {
                    return Err(Error::Config(format!(
                        "transposed convolution padding {padding} too large for length {len}"
                    )));
                }
                Ok(full - 2 * padding)
            }
            LayerKind::Linear { .. } => Ok(len),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            LayerKind::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            }
            | LayerKind::ConvTranspose1d {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => in_channels > 0 && out_channels > 0 && kernel > 0 && stride > 0,
            LayerKind::Linear {
                in_features,
                out_features,
            } => in_features > 0 && out_features > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "degenerate layer hyperparameters {self:?}"
            )))
        }
    }
}

/// Weight initialisation scheme.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Uniform in `±sqrt(1/fan_in)` for weights and biases.
    Uniform,
    /// Uniform in `±sqrt(6/fan_in)` for weights, `±sqrt(1/fan_in)` for
    /// biases. Keeps activation variance roughly constant through ReLU
    /// stacks.
    HeUniform,
}

/// Weights and bias of one trainable layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub kind: LayerKind,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> LayerParams<T> {
    pub fn new(kind: LayerKind, weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        kind.validate()?;
        if weight.shape() != kind.weight_shape().as_slice() {
            return Err(Error::Config(format!(
                "weight shape {:?} does not match {kind:?}",
                weight.shape()
            )));
        }
        if bias.shape() != [kind.out_channels()] {
            return Err(Error::Config(format!(
                "bias shape {:?} does not match {} output channels",
                bias.shape(),
                kind.out_channels()
            )));
        }
        Ok(Self { kind, weight, bias })
    }

    pub fn zeros(kind: LayerKind) -> Result<Self> {
        kind.validate()?;
        Ok(Self {
            kind,
            weight: Tensor::zeros(kind.weight_shape()),
            bias: Tensor::zeros(vec![kind.out_channels()]),
        })
    }

    pub fn init(kind: LayerKind, init: Init, rng: &mut impl Rng) -> Result<Self> {
        kind.validate()?;
        let fan_in = kind.fan_in() as f64;
        let bias_bound = (1.0 / fan_in).sqrt();
        let weight_bound = match init {
            Init::Uniform => bias_bound,
            Init::HeUniform => (6.0 / fan_in).sqrt(),
        };
        let weight = Tensor::from_fn(kind.weight_shape(), |_| {
            T::lit(rng.gen_range(-weight_bound..weight_bound))
        });
        let bias = Tensor::from_fn(vec![kind.out_channels()], |_| {
            T::lit(rng.gen_range(-bias_bound..bias_bound))
        });
        Ok(Self { kind, weight, bias })
    }

    /// Kernel-`k`, stride-1 convolution whose output length equals its input
    /// length. `k` must be odd.
    pub fn conv1d_same(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    ) -> Result<LayerKind> {
        if kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "same padding needs an odd kernel, got {kernel}"
            )));
        }
        Ok(LayerKind::Conv1d {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding: kernel / 2,
        })
    }

    pub fn zero_grad(&mut self) {
        self.weight.zero_grad();
        self.bias.zero_grad();
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}
