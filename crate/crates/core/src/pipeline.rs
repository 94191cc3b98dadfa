//! Two-phase multi-task training and evaluation.
//!
//! Phase 1 trains one codec on the pooled training trials of every task.
//! Phase 2 freezes it, encodes each task's training trials and stores them
//! in that task's associative memory.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bam::{bipolarize_code, bipolarize_spikes, AmMatrix, BipolarPattern, TaskRegistry};
use crate::codec::{Architecture, CodecConfig, CodecModel, PopulationKind};
use crate::data::{split_dataset, Dataset, Split};
use crate::error::{Error, Result};
use crate::lif::{LifConfig, MembraneCarry};
use crate::optim::Adam;
use crate::tensor::ops::{cross_entropy, linear_backward, linear_forward};
use crate::tensor::{Init, LayerKind, LayerParams, PoolKind, Tensor};

/// Models are trained in single precision.
pub type Model = CodecModel<f32>;

/// Component swapped out for an ablation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    #[default]
    None,
    /// `tanh` replaces the spiking neurons.
    NoSpiking,
    /// A gradient-trained linear head replaces the associative memory.
    NoBam,
}

impl Ablation {
    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "full",
            Ablation::NoSpiking => "no-spiking",
            Ablation::NoBam => "no-bam",
        }
    }
}

/// Codec hyperparameters that do not depend on the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub lif: LifConfig,
    pub pooling: PoolKind,
    pub init: Init,
    pub architecture: Architecture,
}

impl Default for ModelSpec {
    /// Table widths with the reset-aware surrogate carry, which keeps the
    /// encoder gradient bounded over long code sequences.
    fn default() -> Self {
        Self {
            lif: LifConfig {
                carry: MembraneCarry::ResetAware,
                ..LifConfig::default()
            },
            pooling: PoolKind::default(),
            init: Init::HeUniform,
            architecture: Architecture::default(),
        }
    }
}

impl ModelSpec {
    /// Codec configuration for `dataset` under `plan`.
    pub fn codec_config(&self, dataset: &Dataset, plan: &TrainPlan) -> CodecConfig {
        let mut c = CodecConfig::new(dataset.channels(), dataset.length(), dataset.n_classes());
        c.lambda_mix = plan.lambda_mix;
        c.lif = self.lif;
        c.pooling = self.pooling;
        c.init = self.init;
        c.architecture = self.architecture.clone();
        c.population = match plan.ablation {
            Ablation::NoSpiking => PopulationKind::Tanh,
            _ => PopulationKind::Spiking,
        };
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainPlan {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda_mix: f64,
    pub seed: u64,
    /// Fraction of each (task, class) group used for training when the data
    /// carries no official split.
    pub train_fraction: f64,
    pub ablation: Ablation,
    /// Epochs of the linear head trained in the `no-bam` ablation.
    pub head_epochs: usize,
    pub head_learning_rate: f64,
}

impl Default for TrainPlan {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 16,
            learning_rate: 1e-3,
            lambda_mix: 0.1,
            seed: 0,
            train_fraction: 0.8,
            ablation: Ablation::None,
            head_epochs: 60,
            head_learning_rate: 1e-2,
        }
    }
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "invalid learning_rate {}",
                self.learning_rate
            )));
        }
        if !(self.lambda_mix >= 0.0 && self.lambda_mix.is_finite()) {
            return Err(Error::Config(format!(
                "invalid lambda_mix {}",
                self.lambda_mix
            )));
        }
        if !(self.head_learning_rate > 0.0 && self.head_learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "invalid head_learning_rate {}",
                self.head_learning_rate
            )));
        }
        Ok(())
    }
}

/// Mean losses over one epoch of phase 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub reconstruction: f64,
    pub classification: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Phase1Report {
    pub curve: Vec<EpochLoss>,
    pub steps: u64,
    /// Set when training stopped on a non-finite loss or gradient; the
    /// returned model holds the parameters before the failing step.
    pub diverged: Option<String>,
}

impl Phase1Report {
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "epoch,reconstruction,classification,total")?;
        for e in &self.curve {
            writeln!(
                w,
                "{},{},{},{}",
                e.epoch, e.reconstruction, e.classification, e.total
            )?;
        }
        Ok(())
    }
}

fn trial_input(dataset: &Dataset, i: usize) -> Tensor<f32> {
    dataset.trials()[i].samples.cast()
}

/// Trains a fresh codec on the trials at `train`, shuffled uniformly across
/// tasks every epoch.
pub fn train_phase1(
    dataset: &Dataset,
    train: &[usize],
    spec: &ModelSpec,
    plan: &TrainPlan,
) -> Result<(Model, Phase1Report)> {
    let model = Model::new(spec.codec_config(dataset, plan), plan.seed)?;
    continue_phase1(model, dataset, train, plan)
}

/// Runs `plan.epochs` epochs of phase 1 starting from `model`.
pub fn continue_phase1(
    mut model: Model,
    dataset: &Dataset,
    train: &[usize],
    plan: &TrainPlan,
) -> Result<(Model, Phase1Report)> {
    plan.validate()?;
    if train.is_empty() {
        return Err(Error::Data(
            "phase 1 needs at least one training trial".into(),
        ));
    }
    let inputs: Vec<(Tensor<f32>, usize)> = train
        .iter()
        .map(|&i| (trial_input(dataset, i), dataset.trials()[i].label))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed ^ 0x5eed_0001);
    let mut adam = Adam::new(plan.learning_rate);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut report = Phase1Report::default();

    'epochs: for epoch in 1..=plan.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 3];
        for batch in order.chunks(plan.batch_size) {
            let mut batch_sums = [0.0f64; 3];
            let mut failure = None;
            for &j in batch {
                let (x, label) = &inputs[j];
                match model.accumulate_gradients(x, *label) {
                    Ok(l) => {
                        batch_sums[0] += l.total;
                        batch_sums[1] += l.reconstruction;
                        batch_sums[2] += l.classification;
                    }
                    Err(Error::Numeric(msg)) => {
                        failure = Some(msg);
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            if failure.is_none() && !gradients_finite(&model) {
                failure = Some("non-finite gradient".into());
            }
            if let Some(msg) = failure {
                model.zero_grad();
                log::error!("phase 1 diverged in epoch {epoch}: {msg}");
                report.diverged = Some(format!("epoch {epoch}: {msg}"));
                break 'epochs;
            }
            let mut layers = model.layers_mut();
            adam.step(&mut layers, 1.0 / batch.len() as f64);
            report.steps += 1;
            for (s, b) in sums.iter_mut().zip(batch_sums) {
                *s += b;
            }
        }
        let n = inputs.len() as f64;
        let e = EpochLoss {
            epoch,
            total: sums[0] / n,
            reconstruction: sums[1] / n,
            classification: sums[2] / n,
        };
        log::info!(
            "epoch {epoch}: loss {:.5} (reconstruction {:.5}, classification {:.5})",
            e.total,
            e.reconstruction,
            e.classification
        );
        report.curve.push(e);
    }
    Ok((model, report))
}

fn gradients_finite(model: &Model) -> bool {
    model.layers().iter().all(|p| {
        [&p.weight, &p.bias]
            .iter()
            .all(|t| t.grad().is_none_or(|g| g.iter().all(|v| v.is_finite())))
    })
}

/// Bipolar pattern the associative memory sees for one trial.
pub fn encode_pattern(model: &Model, samples: &Tensor<f64>) -> Result<BipolarPattern> {
    let enc = model.encode(&samples.cast())?;
    Ok(match model.config().population {
        PopulationKind::Spiking => bipolarize_spikes(&enc.spikes()?),
        PopulationKind::Tanh => bipolarize_code(&enc.code, 0.0),
    })
}

fn per_task(dataset: &Dataset, indices: &[usize]) -> Vec<(String, Vec<usize>)> {
    dataset
        .tasks()
        .iter()
        .map(|task| {
            let idx = indices
                .iter()
                .copied()
                .filter(|&i| dataset.trials()[i].task_id == *task)
                .collect();
            (task.clone(), idx)
        })
        .filter(|(_, idx): &(String, Vec<usize>)| !idx.is_empty())
        .collect()
}

fn check_class_coverage(dataset: &Dataset, task: &str, idx: &[usize]) -> Result<()> {
    let missing: Vec<&str> = (0..dataset.n_classes())
        .filter(|&k| !idx.iter().any(|&i| dataset.trials()[i].label == k))
        .map(|k| dataset.class_names()[k].as_str())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::Data(format!(
            "task {task:?} has no training trials for classes {missing:?}"
        )))
    }
}

/// Builds one memory per task from its training trials at `train`.
pub fn train_phase2(model: &Model, dataset: &Dataset, train: &[usize]) -> Result<TaskRegistry> {
    let n = model.config().code_len();
    let m = dataset.n_classes();
    let mut registry = TaskRegistry::new();
    for (task, idx) in per_task(dataset, train) {
        check_class_coverage(dataset, &task, &idx)?;
        let mut memory = AmMatrix::zeros(task.clone(), m, n);
        for &i in &idx {
            let trial = &dataset.trials()[i];
            let x = encode_pattern(model, &trial.samples)?;
            memory.store(&x, &BipolarPattern::one_hot(trial.label, m)?)?;
        }
        log::info!("task {task}: stored {} patterns", idx.len());
        registry.insert(memory);
    }
    Ok(registry)
}

/// Result of one task on its test trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: String,
    pub accuracy: f64,
    pub n_trials: usize,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub ties: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    pub tasks: Vec<TaskResult>,
    pub mean: f64,
    /// Population standard deviation of the per-task accuracies.
    pub std: f64,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl EvalReport {
    pub fn from_tasks(variant: impl Into<String>, tasks: Vec<TaskResult>) -> Self {
        let acc: Vec<f64> = tasks.iter().map(|t| t.accuracy).collect();
        let (mean, std) = mean_std(&acc);
        Self {
            variant: variant.into(),
            tasks,
            mean,
            std,
        }
    }

    /// One row per task with accuracy and the flattened confusion matrix,
    /// followed by `AVG` and `STD` rows.
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        let k = self.tasks.first().map_or(0, |t| t.confusion.len());
        write!(w, "task,accuracy,n_trials,ties")?;
        for i in 0..k {
            for j in 0..k {
                write!(w, ",cm_{i}_{j}")?;
            }
        }
        writeln!(w)?;
        for t in &self.tasks {
            write!(w, "{},{},{},{}", t.task_id, t.accuracy, t.n_trials, t.ties)?;
            for row in &t.confusion {
                for c in row {
                    write!(w, ",{c}")?;
                }
            }
            writeln!(w)?;
        }
        let pad = ",".repeat(2 + k * k);
        writeln!(w, "AVG,{}{pad}", self.mean)?;
        writeln!(w, "STD,{}{pad}", self.std)?;
        Ok(())
    }

    /// Plain-text accuracy table.
    pub fn summary(&self) -> String {
        let mut s = format!("variant: {}\n", self.variant);
        s.push_str(&format!(
            "{:<12}{:>10}{:>8}{:>6}\n",
            "task", "accuracy", "trials", "ties"
        ));
        for t in &self.tasks {
            s.push_str(&format!(
                "{:<12}{:>10.4}{:>8}{:>6}\n",
                t.task_id, t.accuracy, t.n_trials, t.ties
            ));
        }
        s.push_str(&format!("{:<12}{:>10.4}\n", "AVG", self.mean));
        s.push_str(&format!("{:<12}{:>10.4}\n", "STD", self.std));
        s
    }
}

fn evaluate_with(
    variant: &str,
    dataset: &Dataset,
    test: &[usize],
    mut predict: impl FnMut(&str, &Tensor<f64>) -> Result<(usize, bool)>,
) -> Result<EvalReport> {
    let k = dataset.n_classes();
    let mut results = Vec::new();
    for (task, idx) in per_task(dataset, test) {
        let mut confusion = vec![vec![0usize; k]; k];
        let mut ties = 0;
        let mut correct = 0;
        for &i in &idx {
            let trial = &dataset.trials()[i];
            let (pred, tie) = predict(&task, &trial.samples)?;
            confusion[trial.label][pred] += 1;
            ties += tie as usize;
            correct += (pred == trial.label) as usize;
        }
        results.push(TaskResult {
            task_id: task,
            accuracy: correct as f64 / idx.len() as f64,
            n_trials: idx.len(),
            confusion,
            ties,
        });
    }
    Ok(EvalReport::from_tasks(variant, results))
}

/// Classifies the trials at `test` with their task's memory.
pub fn evaluate(
    model: &Model,
    registry: &TaskRegistry,
    dataset: &Dataset,
    test: &[usize],
) -> Result<EvalReport> {
    let variant = match model.config().population {
        PopulationKind::Spiking => Ablation::None.name(),
        PopulationKind::Tanh => Ablation::NoSpiking.name(),
    };
    evaluate_with(variant, dataset, test, |task, x| {
        let c = registry.get(task)?.classify(&encode_pattern(model, x)?)?;
        Ok((c.class, c.tie))
    })
}

/// Decodes the characteristic pattern that `task`'s memory associates with
/// `class`.
pub fn reconstruct_class_waveform(
    model: &Model,
    registry: &TaskRegistry,
    task: &str,
    class: usize,
) -> Result<Tensor<f64>> {
    let cfg = model.config();
    let pattern = registry.get(task)?.invert_label(class)?;
    let out = match cfg.population {
        PopulationKind::Spiking => {
            model.decode(&pattern.to_spikes(cfg.n_neurons(), cfg.code_steps())?)?
        }
        PopulationKind::Tanh => {
            let code = Tensor::matrix(
                cfg.n_neurons(),
                cfg.code_steps(),
                pattern.values().iter().map(|&v| v as f32).collect(),
            )?;
            model.decode_code(&code)?
        }
    };
    Ok(out.cast())
}

/// Per-task linear classifiers on frozen population codes.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHeads {
    heads: Vec<(String, LayerParams<f32>)>,
}

impl LinearHeads {
    pub fn get(&self, task: &str) -> Result<&LayerParams<f32>> {
        self.heads
            .iter()
            .find(|(t, _)| t == task)
            .map(|(_, p)| p)
            .ok_or_else(|| Error::Usage(format!("no classifier head for task {task:?}")))
    }

    pub fn predict(
        &self,
        model: &Model,
        task: &str,
        samples: &Tensor<f64>,
    ) -> Result<(usize, bool)> {
        let code = flat_code(model, samples)?;
        let logits = linear_forward(&code, self.get(task)?)?;
        Ok(argmax(logits.data()))
    }
}

fn flat_code(model: &Model, samples: &Tensor<f64>) -> Result<Tensor<f32>> {
    let enc = model.encode(&samples.cast())?;
    enc.code.reshape(vec![model.config().code_len()])
}

fn argmax(v: &[f32]) -> (usize, bool) {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    (best, v.iter().filter(|&&x| x == v[best]).count() > 1)
}

/// Trains one softmax-regression head per task on the frozen codes of its
/// training trials.
pub fn train_linear_heads(
    model: &Model,
    dataset: &Dataset,
    train: &[usize],
    plan: &TrainPlan,
) -> Result<LinearHeads> {
    plan.validate()?;
    let n = model.config().code_len();
    let k = dataset.n_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed ^ 0x5eed_0002);
    let mut heads = Vec::new();
    for (task, idx) in per_task(dataset, train) {
        check_class_coverage(dataset, &task, &idx)?;
        let codes: Vec<(Tensor<f32>, usize)> = idx
            .iter()
            .map(|&i| {
                Ok((
                    flat_code(model, &dataset.trials()[i].samples)?,
                    dataset.trials()[i].label,
                ))
            })
            .collect::<Result<_>>()?;
        let kind = LayerKind::Linear {
            in_features: n,
            out_features: k,
        };
        let mut head = LayerParams::init(kind, Init::Uniform, &mut rng)?;
        let mut adam = Adam::new(plan.head_learning_rate);
        let mut order: Vec<usize> = (0..codes.len()).collect();
        for _ in 0..plan.head_epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(plan.batch_size) {
                for &j in batch {
                    let (x, label) = &codes[j];
                    let logits = linear_forward(x, &head)?;
                    let (_, d_logits) = cross_entropy(&logits, *label)?;
                    let (_, g) = linear_backward(&d_logits, Some(x), &head)?;
                    head.weight.accumulate_grad(&g.weight);
                    head.bias.accumulate_grad(&g.bias);
                }
                adam.step(&mut [&mut head], 1.0 / batch.len() as f64);
            }
        }
        heads.push((task, head));
    }
    Ok(LinearHeads { heads })
}

pub fn evaluate_heads(
    model: &Model,
    heads: &LinearHeads,
    dataset: &Dataset,
    test: &[usize],
) -> Result<EvalReport> {
    evaluate_with(Ablation::NoBam.name(), dataset, test, |task, x| {
        heads.predict(model, task, x)
    })
}

/// Everything produced by [`run_pipeline`].
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub split: Split,
    pub model: Model,
    pub phase1: Phase1Report,
    pub registry: Option<TaskRegistry>,
    pub heads: Option<LinearHeads>,
    pub report: EvalReport,
}

/// Split, phase 1, phase 2 (or the linear heads for `no-bam`) and
/// evaluation. A `pretrained` spiking codec skips phase 1.
pub fn run_pipeline(
    dataset: &Dataset,
    spec: &ModelSpec,
    plan: &TrainPlan,
    pretrained: Option<(&Model, &Phase1Report)>,
) -> Result<PipelineRun> {
    plan.validate()?;
    let split = split_dataset(dataset, plan.train_fraction, plan.seed)?;
    let (model, phase1) = match pretrained {
        Some((m, r)) => {
            if m.config() != &spec.codec_config(dataset, plan) {
                return Err(Error::Config(
                    "pretrained model does not match the requested configuration".into(),
                ));
            }
            (m.clone(), r.clone())
        }
        None => train_phase1(dataset, &split.train, spec, plan)?,
    };
    if let Some(msg) = &phase1.diverged {
        return Err(Error::Numeric(format!("phase 1 diverged ({msg})")));
    }
    let (registry, heads, report) = match plan.ablation {
        Ablation::NoBam => {
            let heads = train_linear_heads(&model, dataset, &split.train, plan)?;
            let report = evaluate_heads(&model, &heads, dataset, &split.test)?;
            (None, Some(heads), report)
        }
        _ => {
            let registry = train_phase2(&model, dataset, &split.train)?;
            let report = evaluate(&model, &registry, dataset, &split.test)?;
            (Some(registry), None, report)
        }
    };
    Ok(PipelineRun {
        split,
        model,
        phase1,
        registry,
        heads,
        report,
    })
}

/// [`run_pipeline`] reduced to its evaluation report.
pub fn run_ablation(dataset: &Dataset, spec: &ModelSpec, plan: &TrainPlan) -> Result<EvalReport> {
    Ok(run_pipeline(dataset, spec, plan, None)?.report)
}
