//! Leaky integrate-and-fire population with a rectangular surrogate
//! gradient.
//!
//! Discrete dynamics, one step per column of the input current:
//!
//! ```text
//! u[t] = (1 - tau) * u[t-1] - s[t-1] * u_th + I[t]
//! s[t] = 1 if u[t] >= u_th else 0
//! ```
//!
//! The backward pass replaces `ds/du` by `rect(u - u_th)` (1 on
//! `|x| <= 0.5`, else 0) and carries the membrane gradient backwards with
//! `grad_u[t-1] += grad_u[t] * ((1 - tau) + u_th * rect(u[t] - u_th))` by
//! default; see [`MembraneCarry`] for the alternatives.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Half-width of the rectangular surrogate window.
pub const SURROGATE_HALF_WIDTH: f64 = 0.5;

/// What happens to the membrane after a spike.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetMode {
    /// Subtract the threshold on the step after a spike.
    #[default]
    Subtract,
    /// Clamp the membrane to zero on the step after a spike. The backward
    /// pass treats the reset gate as a constant.
    Zero,
}

/// Factor that carries the membrane gradient from step `t` to `t - 1` in
/// subtractive-reset mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MembraneCarry {
    /// `(1 - tau) + u_th * rect(u[t] - u_th)`.
    #[default]
    Amplified,
    /// `1 - tau`; the reset term is treated as a constant.
    Leak,
    /// `(1 - tau) - u_th * rect(u[t-1] - u_th)`, the derivative of the
    /// subtractive reset through the surrogate.
    ResetAware,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LifConfig {
    pub n_neurons: usize,
    /// Decay constant in (0, 1).
    pub tau: f64,
    pub threshold: f64,
    pub reset: ResetMode,
    pub carry: MembraneCarry,
}

impl Default for LifConfig {
    fn default() -> Self {
        Self {
            n_neurons: 200,
            tau: 0.5,
            threshold: 1.0,
            reset: ResetMode::Subtract,
            carry: MembraneCarry::Amplified,
        }
    }
}

impl LifConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_neurons == 0 {
            return Err(Error::Config(
                "LIF population needs at least one neuron".into(),
            ));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!(
                "tau must lie in (0, 1), got {}",
                self.tau
            )));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::Config(format!(
                "threshold must be positive, got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Rectangular surrogate for the derivative of the step function.
#[inline]
pub fn surrogate<T: Real>(x: T) -> T {
    if x.abs() <= T::lit(SURROGATE_HALF_WIDTH) {
        T::one()
    } else {
        T::zero()
    }
}

/// Membrane potentials and the spikes emitted on the previous step.
#[derive(Debug, Clone, PartialEq)]
pub struct LifState<T> {
    pub u: Vec<T>,
    pub s_prev: Vec<bool>,
}

impl<T: Real> LifState<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            u: vec![T::zero(); n],
            s_prev: vec![false; n],
        }
    }
}

/// Advances every neuron by one step given its summed input current.
pub fn lif_step<T: Real>(
    state: &LifState<T>,
    current: &[T],
    cfg: &LifConfig,
) -> Result<(LifState<T>, Vec<bool>)> {
    let n = state.u.len();
    if current.len() != n || state.s_prev.len() != n {
        return Err(Error::Shape(format!(
            "LIF step: {n} neurons, {} currents",
            current.len()
        )));
    }
    let decay = T::one() - T::lit(cfg.tau);
    let th = T::lit(cfg.threshold);
    let mut u = Vec::with_capacity(n);
    let mut spikes = Vec::with_capacity(n);
    for (i, &input) in current.iter().enumerate() {
        if input.is_nan() {
            return Err(Error::Numeric(format!("NaN input current at neuron {i}")));
        }
        let fired = state.s_prev[i];
        let v = match cfg.reset {
            ResetMode::Subtract => decay * state.u[i] - if fired { th } else { T::zero() } + input,
            ResetMode::Zero => {
                if fired {
                    input
                } else {
                    decay * state.u[i] + input
                }
            }
        };
        u.push(v);
        spikes.push(v >= th);
    }
    let s_prev = spikes.clone();
    Ok((LifState { u, s_prev }, spikes))
}

/// Binary spike raster, `neurons × steps`, neuron-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpikeTrain {
    neurons: usize,
    steps: usize,
    spikes: Vec<bool>,
}

impl SpikeTrain {
    pub fn new(neurons: usize, steps: usize, spikes: Vec<bool>) -> Result<Self> {
        if spikes.len() != neurons * steps {
            return Err(Error::Shape(format!(
                "spike train {neurons}×{steps} needs {} entries, got {}",
                neurons * steps,
                spikes.len()
            )));
        }
        Ok(Self {
            neurons,
            steps,
            spikes,
        })
    }

    pub fn silent(neurons: usize, steps: usize) -> Self {
        Self {
            neurons,
            steps,
            spikes: vec![false; neurons * steps],
        }
    }

    /// Reads a 0/1 tensor `[neurons, steps]`; any other value is rejected.
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        let (n, s) = t.dims2()?;
        let spikes = t
            .data()
            .iter()
            .map(|&v| {
                if v == T::one() {
                    Ok(true)
                } else if v == T::zero() {
                    Ok(false)
                } else {
                    Err(Error::Data(format!("non-binary spike value {v}")))
                }
            })
            .collect::<Result<_>>()?;
        Self::new(n, s, spikes)
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn get(&self, neuron: usize, step: usize) -> bool {
        self.spikes[neuron * self.steps + step]
    }

    /// Flattened in neuron-major order.
    pub fn as_slice(&self) -> &[bool] {
        &self.spikes
    }

    pub fn count(&self) -> usize {
        self.spikes.iter().filter(|&&s| s).count()
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::matrix(
            self.neurons,
            self.steps,
            self.spikes
                .iter()
                .map(|&s| if s { T::one() } else { T::zero() })
                .collect(),
        )
        .expect("consistent raster shape")
    }

    /// Firing events as `neuron_index,timestep` rows.
    pub fn write_raster_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "neuron_index,timestep")?;
        for n in 0..self.neurons {
            for t in 0..self.steps {
                if self.get(n, t) {
                    writeln!(w, "{n},{t}")?;
                }
            }
        }
        Ok(())
    }
}

/// Membrane potentials and spikes saved by [`lif_forward`] for the
/// backward pass.
#[derive(Debug, Clone)]
pub struct LifTrajectory<T> {
    /// `[neurons, steps]`, neuron-major.
    pub membrane: Vec<T>,
    pub spikes: SpikeTrain,
}

/// Runs the population over `currents` (`[neurons, steps]`) from a zero
/// state.
pub fn lif_forward<T: Real>(
    currents: &Tensor<T>,
    cfg: &LifConfig,
) -> Result<(SpikeTrain, LifTrajectory<T>)> {
    let (n, steps) = currents.dims2()?;
    if n != cfg.n_neurons {
        return Err(Error::Shape(format!(
            "population has {} neurons, input has {n} rows",
            cfg.n_neurons
        )));
    }
    let mut state = LifState::zeros(n);
    let mut membrane = vec![T::zero(); n * steps];
    let mut spikes = vec![false; n * steps];
    let data = currents.data();
    let mut column = vec![T::zero(); n];
    for t in 0..steps {
        for i in 0..n {
            column[i] = data[i * steps + t];
        }
        let (next, fired) = lif_step(&state, &column, cfg)?;
        for i in 0..n {
            membrane[i * steps + t] = next.u[i];
            spikes[i * steps + t] = fired[i];
        }
        state = next;
    }
    let train = SpikeTrain::new(n, steps, spikes)?;
    Ok((
        train.clone(),
        LifTrajectory {
            membrane,
            spikes: train,
        },
    ))
}

/// Gradient with respect to the input currents, given the gradient of the
/// loss with respect to each emitted spike.
pub fn lif_backward<T: Real>(
    upstream: &Tensor<T>,
    trajectory: &LifTrajectory<T>,
    cfg: &LifConfig,
) -> Result<Tensor<T>> {
    let (n, steps) = upstream.dims2()?;
    if n != trajectory.spikes.neurons() || steps != trajectory.spikes.steps() {
        return Err(Error::Usage(format!(
            "spike gradient {n}×{steps} does not match saved trajectory {}×{}",
            trajectory.spikes.neurons(),
            trajectory.spikes.steps()
        )));
    }
    let decay = T::one() - T::lit(cfg.tau);
    let th = T::lit(cfg.threshold);
    let g = upstream.data();
    let u = &trajectory.membrane;
    let mut out = vec![T::zero(); n * steps];
    for i in 0..n {
        let row = i * steps;
        let mut carry = T::zero();
        for t in (0..steps).rev() {
            let grad_u = g[row + t] * surrogate(u[row + t] - th) + carry;
            out[row + t] = grad_u;
            if t > 0 {
                carry = match cfg.reset {
                    ResetMode::Subtract => match cfg.carry {
                        MembraneCarry::Amplified => {
                            grad_u * (decay + th * surrogate(u[row + t] - th))
                        }
                        MembraneCarry::Leak => grad_u * decay,
                        MembraneCarry::ResetAware => {
                            grad_u * (decay - th * surrogate(u[row + t - 1] - th))
                        }
                    },
                    ResetMode::Zero => {
                        if trajectory.spikes.get(i, t - 1) {
                            T::zero()
                        } else {
                            grad_u * decay
                        }
                    }
                };
            }
        }
    }
    Tensor::matrix(n, steps, out)
}
