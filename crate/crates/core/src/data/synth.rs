//! Synthetic multi-task EEG with known class structure.
//!
//! Class `k` drives `sources` sinusoids at `base_frequency + k ·
//! frequency_step` Hz with class-specific fixed phases. Each task mixes the
//! sources into the channels through its own Gaussian matrix, so the same
//! class has a different spatial pattern in every task. White Gaussian noise
//! is added at `snr_db` relative to the mean power of the clean template.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, EegTrial};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_tasks: usize,
    pub n_classes: usize,
    pub channels: usize,
    pub length: usize,
    pub sample_rate: f64,
    /// Signal-to-noise ratio in decibels; `inf` gives noise-free trials.
    pub snr_db: f64,
    pub trials_per_class: usize,
    pub base_frequency: f64,
    pub frequency_step: f64,
    pub sources: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_tasks: 3,
            n_classes: 4,
            channels: 8,
            length: 256,
            sample_rate: 128.0,
            snr_db: 5.0,
            trials_per_class: 80,
            base_frequency: 2.0,
            frequency_step: 2.0,
            sources: 2,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn frequency(&self, class: usize) -> f64 {
        self.base_frequency + class as f64 * self.frequency_step
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_tasks", self.n_tasks),
            ("n_classes", self.n_classes),
            ("channels", self.channels),
            ("length", self.length),
            ("trials_per_class", self.trials_per_class),
            ("sources", self.sources),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!(
                "synthetic spec: {name} must be positive"
            )));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(Error::Config(format!(
                "synthetic spec: sample_rate must be positive, got {}",
                self.sample_rate
            )));
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(Error::Config(format!(
                "synthetic spec: invalid snr_db {}",
                self.snr_db
            )));
        }
        let nyquist = self.sample_rate / 2.0;
        for k in 0..self.n_classes {
            let f = self.frequency(k);
            if !(f > 0.0 && f < nyquist) {
                return Err(Error::Config(format!(
                    "synthetic spec: class {k} frequency {f} Hz is outside (0, {nyquist})"
                )));
            }
        }
        if self.frequency_step <= 0.0 {
            return Err(Error::Config(
                "synthetic spec: frequency_step must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Deterministic in `spec`. Trials are ordered task, class, repetition.
pub fn synth_generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (c, t, s) = (spec.channels, spec.length, spec.sources);

    let phases: Vec<Vec<f64>> = (0..spec.n_classes)
        .map(|_| {
            (0..s)
                .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
                .collect()
        })
        .collect();
    let mixing: Vec<Vec<f64>> = (0..spec.n_tasks)
        .map(|_| (0..c * s).map(|_| rng.sample(StandardNormal)).collect())
        .collect();

    let mut trials = Vec::with_capacity(spec.n_tasks * spec.n_classes * spec.trials_per_class);
    for (task, a) in mixing.iter().enumerate() {
        let task_id = format!("T{}", task + 1);
        for (class, phi) in phases.iter().enumerate() {
            let w = std::f64::consts::TAU * spec.frequency(class) / spec.sample_rate;
            let template: Vec<f64> = (0..c * t)
                .map(|i| {
                    let (ch, step) = (i / t, i % t);
                    (0..s)
                        .map(|j| a[ch * s + j] * (w * step as f64 + phi[j]).sin())
                        .sum()
                })
                .collect();
            let power = template.iter().map(|v| v * v).sum::<f64>() / template.len() as f64;
            let sigma = (power / 10f64.powf(spec.snr_db / 10.0)).sqrt();
            for rep in 0..spec.trials_per_class {
                let data = template
                    .iter()
                    .map(|&v| {
                        let noise: f64 = if sigma > 0.0 {
                            rng.sample::<f64, _>(StandardNormal) * sigma
                        } else {
                            0.0
                        };
                        (v + noise) as f32 as f64
                    })
                    .collect();
                trials.push(EegTrial {
                    samples: Tensor::matrix(c, t, data)?,
                    label: class,
                    task_id: task_id.clone(),
                    trial_id: format!("{task_id}-c{class}-{rep:03}"),
                    sample_rate: spec.sample_rate,
                });
            }
        }
    }
    let classes = (0..spec.n_classes).map(|k| format!("class{k}")).collect();
    Dataset::new(trials, classes, format!("synthetic seed={}", spec.seed))
}
