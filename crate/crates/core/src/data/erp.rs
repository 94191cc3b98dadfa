//! Per-class trial averages.

use std::io::Write;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Erp {
    /// Mean waveform `[channels, samples]` of each class.
    pub per_class: Vec<Tensor<f64>>,
    pub counts: Vec<usize>,
}

/// Averages the trials of `task` class by class. Every class must have at
/// least one trial.
pub fn compute_erp(dataset: &Dataset, task: &str) -> Result<Erp> {
    let shape = vec![dataset.channels(), dataset.length()];
    let k = dataset.n_classes();
    let mut sums = vec![vec![0.0f64; shape[0] * shape[1]]; k];
    let mut counts = vec![0usize; k];
    for &i in &dataset.task_indices(task) {
        let trial = &dataset.trials()[i];
        counts[trial.label] += 1;
        for (s, &v) in sums[trial.label].iter_mut().zip(trial.samples.data()) {
            *s += v;
        }
    }
    let empty: Vec<&str> = (0..k)
        .filter(|&c| counts[c] == 0)
        .map(|c| dataset.class_names()[c].as_str())
        .collect();
    if !empty.is_empty() {
        return Err(Error::Data(format!(
            "task {task:?} has no trials for classes {empty:?}"
        )));
    }
    let per_class = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &n)| Tensor::new(shape.clone(), s.into_iter().map(|v| v / n as f64).collect()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Erp { per_class, counts })
}

/// Long-format CSV with columns `channel,timestep,value`.
pub fn write_waveform_csv(w: &mut impl Write, waveform: &Tensor<f64>) -> Result<()> {
    let (c, t) = waveform.dims2()?;
    let io = |e: std::io::Error| Error::Data(format!("csv write: {e}"));
    writeln!(w, "channel,timestep,value").map_err(io)?;
    for ch in 0..c {
        for (step, v) in waveform.row(ch).iter().enumerate().take(t) {
            writeln!(w, "{ch},{step},{v}").map_err(io)?;
        }
    }
    Ok(())
}
