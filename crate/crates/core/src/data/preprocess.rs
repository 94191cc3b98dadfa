//! Optional per-channel z-scoring and trailing-sample trimming.

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Normalise each channel with statistics of the fit trials.
    pub zscore: bool,
    /// Drop trailing samples so the length is divisible by 4.
    pub trim_to_multiple_of_4: bool,
}

/// Per-channel mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Pools every sample of each channel over the trials at `indices`.
    pub fn fit(dataset: &Dataset, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Data(
                "cannot fit channel statistics on zero trials".into(),
            ));
        }
        let c = dataset.channels();
        let t = dataset.length();
        let n = (indices.len() * t) as f64;
        let mut mean = vec![0.0; c];
        for &i in indices {
            let s = &dataset.trials()[i].samples;
            for (ch, m) in mean.iter_mut().enumerate() {
                *m += s.row(ch).iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; c];
        for &i in indices {
            let s = &dataset.trials()[i].samples;
            for (ch, v) in var.iter_mut().enumerate() {
                *v += s
                    .row(ch)
                    .iter()
                    .map(|x| (x - mean[ch]).powi(2))
                    .sum::<f64>();
            }
        }
        let std = var.into_iter().map(|v| (v / n).sqrt()).collect();
        Ok(Self { mean, std })
    }

    /// Zero-variance channels map to zero.
    pub fn apply(&self, samples: &Tensor<f64>) -> Tensor<f64> {
        let t = samples.shape()[1];
        Tensor::from_fn(samples.shape().to_vec(), |i| {
            let ch = i / t;
            if self.std[ch] > 0.0 {
                (samples.data()[i] - self.mean[ch]) / self.std[ch]
            } else {
                0.0
            }
        })
    }
}

/// Applies `config`; z-score statistics are fitted on the trials at
/// `fit_indices` only and returned alongside the result.
pub fn preprocess(
    dataset: &Dataset,
    config: &PreprocessConfig,
    fit_indices: &[usize],
) -> Result<(Dataset, Option<ChannelStats>)> {
    let mut out = dataset.clone();
    let mut stats = None;
    if config.zscore {
        let s = ChannelStats::fit(dataset, fit_indices)?;
        for (ch, &sd) in s.std.iter().enumerate() {
            if sd == 0.0 {
                log::warn!("channel {ch} has zero variance on the fit split; replaced by zeros");
            }
        }
        out = out.map_samples(|x| s.apply(x))?;
        stats = Some(s);
    }
    if config.trim_to_multiple_of_4 {
        let t = out.length();
        let keep = t - t % 4;
        if keep == 0 {
            return Err(Error::InputTooShort { needed: 4, got: t });
        }
        if keep != t {
            out = out.map_samples(|x| x.truncate_cols(keep).expect("keep ≤ length"))?;
        }
    }
    Ok((out, stats))
}
