use super::ops::{self, ParamGrads};
use super::{LayerKind, LayerParams, Real, Tensor};
use crate::error::{Error, Result};

/// Temporal down-sampling flavour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    #[default]
    Average,
    Max,
}

/// One stage of a [`Sequential`] stack.
#[derive(Debug, Clone, PartialEq)]
pub enum Module<T> {
    Layer(LayerParams<T>),
    Relu,
    Tanh,
    Pool(PoolKind),
}

/// What a module's backward pass needs from its forward pass.
#[derive(Debug, Clone)]
enum Record<T> {
    Input(Tensor<T>),
    Output(Tensor<T>),
    AvgPool {
        input_len: usize,
    },
    MaxPool {
        input_len: usize,
        argmax: Vec<usize>,
    },
}

/// Saved forward state of one pass through a [`Sequential`], consumed in
/// reverse by [`Sequential::backward`].
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    records: Vec<Record<T>>,
}

impl<T> Tape<T> {
    pub fn new() -> Self {
        Self {
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Ordered stack of modules with a tape-driven backward pass.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sequential<T> {
    modules: Vec<Module<T>>,
}

impl<T: Real> Sequential<T> {
    pub fn new(modules: Vec<Module<T>>) -> Self {
        Self { modules }
    }

    pub fn push(&mut self, module: Module<T>) {
        self.modules.push(module);
    }

    pub fn modules(&self) -> &[Module<T>] {
        &self.modules
    }

    pub fn layers(&self) -> impl Iterator<Item = &LayerParams<T>> {
        self.modules.iter().filter_map(|m| match m {
            Module::Layer(p) => Some(p),
            _ => None,
        })
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut LayerParams<T>> {
        self.modules.iter_mut().filter_map(|m| match m {
            Module::Layer(p) => Some(p),
            _ => None,
        })
    }

    /// Runs the stack. With a tape, records what [`Self::backward`] needs.
    pub fn forward(&self, input: &Tensor<T>, mut tape: Option<&mut Tape<T>>) -> Result<Tensor<T>> {
        let mut x = input.clone();
        for module in &self.modules {
            let (y, record) = match module {
                Module::Layer(p) => {
                    let y = match p.kind {
                        LayerKind::Conv1d { .. } => ops::conv1d_forward(&x, p)?,
                        LayerKind::ConvTranspose1d { .. } => ops::conv_transpose1d_forward(&x, p)?,
                        LayerKind::Linear { .. } => ops::linear_forward(&x, p)?,
                    };
                    (y, tape.is_some().then_some(Record::Input(x)))
                }
                Module::Relu => {
                    let y = ops::relu(&x);
                    let rec = tape.is_some().then(|| Record::Output(y.clone()));
                    (y, rec)
                }
                Module::Tanh => {
                    let y = ops::tanh(&x);
                    let rec = tape.is_some().then(|| Record::Output(y.clone()));
                    (y, rec)
                }
                Module::Pool(PoolKind::Average) => {
                    let input_len = x.dims2()?.1;
                    (ops::avgpool1d(&x)?, Some(Record::AvgPool { input_len }))
                }
                Module::Pool(PoolKind::Max) => {
                    let input_len = x.dims2()?.1;
                    let (y, argmax) = ops::maxpool1d(&x)?;
                    (y, Some(Record::MaxPool { input_len, argmax }))
                }
            };
            if let (Some(t), Some(r)) = (tape.as_deref_mut(), record) {
                t.records.push(r);
            }
            x = y;
        }
        Ok(x)
    }

    /// Back-propagates `output_grad` through the recorded pass, accumulating
    /// parameter gradients into each layer's `grad` buffers. Returns the
    /// gradient with respect to the stack's input.
    pub fn backward(&mut self, tape: Tape<T>, output_grad: Tensor<T>) -> Result<Tensor<T>> {
        if tape.records.len() != self.modules.len() {
            return Err(Error::Usage(format!(
                "tape holds {} records for {} modules",
                tape.records.len(),
                self.modules.len()
            )));
        }
        let mut g = output_grad;
        for (module, record) in self.modules.iter_mut().zip(tape.records).rev() {
            g = match (module, record) {
                (Module::Layer(p), Record::Input(x)) => {
                    let (dx, grads) = match p.kind {
                        LayerKind::Conv1d { .. } => ops::conv1d_backward(&g, Some(&x), p)?,
                        LayerKind::ConvTranspose1d { .. } => {
                            ops::conv_transpose1d_backward(&g, Some(&x), p)?
                        }
                        LayerKind::Linear { .. } => ops::linear_backward(&g, Some(&x), p)?,
                    };
                    apply_grads(p, &grads);
                    dx
                }
                (Module::Relu, Record::Output(y)) => ops::relu_backward(&g, &y),
                (Module::Tanh, Record::Output(y)) => ops::tanh_backward(&g, &y),
                (Module::Pool(_), Record::AvgPool { input_len }) => {
                    ops::avgpool1d_backward(&g, input_len)?
                }
                (Module::Pool(_), Record::MaxPool { input_len, argmax }) => {
                    ops::maxpool1d_backward(&g, &argmax, input_len)?
                }
                _ => return Err(Error::Usage("tape does not match module stack".into())),
            };
        }
        Ok(g)
    }

    pub fn zero_grad(&mut self) {
        self.layers_mut().for_each(LayerParams::zero_grad);
    }

    pub fn num_params(&self) -> usize {
        self.layers().map(LayerParams::num_params).sum()
    }
}

fn apply_grads<T: Real>(p: &mut LayerParams<T>, g: &ParamGrads<T>) {
    p.weight.accumulate_grad(&g.weight);
    p.bias.accumulate_grad(&g.bias);
}
