//! Trials, datasets, the trial-bundle format, synthetic data, ERPs and
//! preprocessing.

mod bundle;
mod erp;
mod preprocess;
mod synth;

pub use bundle::{
    load_bundle, read_bundle, save_bundle, write_bundle, BUNDLE_MAGIC, BUNDLE_VERSION,
};
pub use erp::{compute_erp, write_waveform_csv, Erp};
pub use preprocess::{preprocess, ChannelStats, PreprocessConfig};
pub use synth::{synth_generate, SynthSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Prefix of `trial_id` that pins a trial to the training split.
pub const TRAIN_PREFIX: &str = "train:";
/// Prefix of `trial_id` that pins a trial to the test split.
pub const TEST_PREFIX: &str = "test:";

/// One epoch of multichannel EEG, laid out `[channels, samples]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EegTrial {
    pub samples: Tensor<f64>,
    pub label: usize,
    pub task_id: String,
    pub trial_id: String,
    pub sample_rate: f64,
}

impl EegTrial {
    pub fn channels(&self) -> usize {
        self.samples.shape()[0]
    }

    pub fn length(&self) -> usize {
        self.samples.shape()[1]
    }
}

/// Trials sharing one `(channels, length, sample_rate)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    trials: Vec<EegTrial>,
    class_names: Vec<String>,
    tasks: Vec<String>,
    provenance: String,
}

impl Dataset {
    /// Validates the trials and collects the task list in order of first
    /// appearance.
    pub fn new(
        trials: Vec<EegTrial>,
        class_names: Vec<String>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if class_names.is_empty() {
            return Err(Error::Data("dataset has no classes".into()));
        }
        let first = trials
            .first()
            .ok_or_else(|| Error::Data("dataset has no trials".into()))?;
        let (c, t, fs) = shape_of(first)?;
        let mut tasks: Vec<String> = Vec::new();
        for trial in &trials {
            let (tc, tt, tfs) = shape_of(trial)?;
            if tc != c || tt != t {
                return Err(Error::Data(format!(
                    "trial {:?} of task {:?} is {tc}×{tt}, expected {c}×{t}",
                    trial.trial_id, trial.task_id
                )));
            }
            if tfs != fs {
                return Err(Error::Data(format!(
                    "trial {:?} has sample rate {tfs}, expected {fs}",
                    trial.trial_id
                )));
            }
            if trial.label >= class_names.len() {
                return Err(Error::Data(format!(
                    "trial {:?} has label {} but only {} classes exist",
                    trial.trial_id,
                    trial.label,
                    class_names.len()
                )));
            }
            if !trial.samples.all_finite() {
                return Err(Error::Data(format!(
                    "trial {:?} contains non-finite samples",
                    trial.trial_id
                )));
            }
            if !tasks.contains(&trial.task_id) {
                tasks.push(trial.task_id.clone());
            }
        }
        Ok(Self {
            trials,
            class_names,
            tasks,
            provenance: provenance.into(),
        })
    }

    pub fn trials(&self) -> &[EegTrial] {
        &self.trials
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn tasks(&self) -> &[String] {
        &self.tasks
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn channels(&self) -> usize {
        self.trials[0].channels()
    }

    pub fn length(&self) -> usize {
        self.trials[0].length()
    }

    pub fn sample_rate(&self) -> f64 {
        self.trials[0].sample_rate
    }

    /// Indices of the trials belonging to `task`.
    pub fn task_indices(&self, task: &str) -> Vec<usize> {
        (0..self.trials.len())
            .filter(|&i| self.trials[i].task_id == task)
            .collect()
    }

    /// New dataset made of the selected trials, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let trials = indices.iter().map(|&i| self.trials[i].clone()).collect();
        Self::new(trials, self.class_names.clone(), self.provenance.clone())
    }

    /// Appends the trials of `other`, which must share classes and shape.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.class_names != other.class_names {
            return Err(Error::Data(
                "cannot concatenate datasets with different classes".into(),
            ));
        }
        let trials = self.trials.iter().chain(&other.trials).cloned().collect();
        Self::new(trials, self.class_names.clone(), self.provenance.clone())
    }

    pub(crate) fn map_samples(
        &self,
        mut f: impl FnMut(&Tensor<f64>) -> Tensor<f64>,
    ) -> Result<Self> {
        let trials = self
            .trials
            .iter()
            .map(|t| EegTrial {
                samples: f(&t.samples),
                ..t.clone()
            })
            .collect();
        Self::new(trials, self.class_names.clone(), self.provenance.clone())
    }
}

fn shape_of(trial: &EegTrial) -> Result<(usize, usize, f64)> {
    let (c, t) = match trial.samples.shape() {
        [c, t] => (*c, *t),
        s => {
            return Err(Error::Data(format!(
                "trial {:?} has sample shape {s:?}, expected [channels, samples]",
                trial.trial_id
            )))
        }
    };
    if !(trial.sample_rate > 0.0 && trial.sample_rate.is_finite()) {
        return Err(Error::Data(format!(
            "trial {:?} has invalid sample rate {}",
            trial.trial_id, trial.sample_rate
        )));
    }
    Ok((c, t, trial.sample_rate))
}

/// Disjoint train/test trial indices.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Uses the `train:`/`test:` trial-id prefixes when every trial carries one,
/// otherwise a stratified split keeping `train_fraction` of each
/// (task, class) group for training.
pub fn split_dataset(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<Split> {
    if has_official_split(dataset) {
        let mut split = Split::default();
        for (i, t) in dataset.trials().iter().enumerate() {
            if t.trial_id.starts_with(TRAIN_PREFIX) {
                split.train.push(i);
            } else {
                split.test.push(i);
            }
        }
        return Ok(split);
    }
    stratified_split(dataset, train_fraction, seed)
}

pub fn has_official_split(dataset: &Dataset) -> bool {
    dataset
        .trials()
        .iter()
        .all(|t| t.trial_id.starts_with(TRAIN_PREFIX) || t.trial_id.starts_with(TEST_PREFIX))
}

/// Per (task, class) group: shuffle, then the first
/// `round(train_fraction · n)` trials (at least one) go to training.
pub fn stratified_split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<Split> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split::default();
    for task in dataset.tasks() {
        for class in 0..dataset.n_classes() {
            let mut group: Vec<usize> = dataset
                .task_indices(task)
                .into_iter()
                .filter(|&i| dataset.trials()[i].label == class)
                .collect();
            if group.is_empty() {
                continue;
            }
            group.shuffle(&mut rng);
            let n_train =
                ((group.len() as f64 * train_fraction).round() as usize).clamp(1, group.len());
            split.train.extend_from_slice(&group[..n_train]);
            split.test.extend_from_slice(&group[n_train..]);
        }
    }
    split.train.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}
