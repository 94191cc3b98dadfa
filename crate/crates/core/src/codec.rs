//! Convolutional encoder, hidden neuron population and transposed
//! convolutional decoder, plus the auxiliary classification head.
//!
//! Shape chain for an input `[C, T]` with the default architecture:
//!
//! ```text
//! encoder   conv×3 (128, T) → pool (128, T/2) → conv×5 (256, T/2)
//!           → pool (256, T/4) → conv×5 (256, T/4)
//! neurons   fc (200, T/4) → LIF (200, T/4) → fc (256, T/4)
//! decoder   conv×3 (128, T/4) → convT (128, T/2) → conv×5 (128, T/2)
//!           → convT (128, T) → conv×5 (C, T)
//! aux head  flatten (200·T/4) → fc (n_classes)
//! ```

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lif::{lif_backward, lif_forward, LifConfig, SpikeTrain};
use crate::tensor::ops::{self, cross_entropy, mse};
use crate::tensor::{
    read_checkpoint, write_checkpoint, Init, LayerKind, LayerParams, Module, PoolKind, Real,
    Sequential, Tape, Tensor,
};

/// Non-linearity of the hidden population.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopulationKind {
    /// Leaky integrate-and-fire neurons emitting binary spikes.
    #[default]
    Spiking,
    /// `tanh` in place of the spiking neurons.
    Tanh,
}

/// Channel widths and depths of the convolutional blocks. A block of depth
/// `d` is `d` stacked same-padded convolutions, each followed by ReLU.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Architecture {
    pub encoder_widths: [usize; 3],
    pub encoder_depths: [usize; 3],
    /// Widths of the first two decoder blocks; the last block maps back to
    /// the input channel count.
    pub decoder_widths: [usize; 2],
    pub decoder_depths: [usize; 3],
    pub kernel: usize,
    pub up_kernel: usize,
    pub up_stride: usize,
    pub up_padding: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            encoder_widths: [128, 256, 256],
            encoder_depths: [3, 5, 5],
            decoder_widths: [128, 128],
            decoder_depths: [3, 5, 5],
            kernel: 5,
            up_kernel: 8,
            up_stride: 2,
            up_padding: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecConfig {
    pub channels: usize,
    /// Input length before trimming to a multiple of 4.
    pub length: usize,
    pub n_classes: usize,
    #[serde(default = "default_lambda")]
    pub lambda_mix: f64,
    #[serde(default)]
    pub lif: LifConfig,
    #[serde(default)]
    pub population: PopulationKind,
    #[serde(default)]
    pub pooling: PoolKind,
    #[serde(default = "default_init")]
    pub init: Init,
    #[serde(default)]
    pub architecture: Architecture,
}

fn default_lambda() -> f64 {
    0.1
}

fn default_init() -> Init {
    Init::HeUniform
}

impl CodecConfig {
    pub fn new(channels: usize, length: usize, n_classes: usize) -> Self {
        Self {
            channels,
            length,
            n_classes,
            lambda_mix: default_lambda(),
            lif: LifConfig::default(),
            population: PopulationKind::default(),
            pooling: PoolKind::default(),
            init: default_init(),
            architecture: Architecture::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.n_classes == 0 {
            return Err(Error::Config(
                "channels and n_classes must be positive".into(),
            ));
        }
        if self.length < 4 {
            return Err(Error::Config(format!(
                "input length {} leaves nothing after two halvings",
                self.length
            )));
        }
        if !(self.lambda_mix >= 0.0 && self.lambda_mix.is_finite()) {
            return Err(Error::Config(format!(
                "lambda_mix must be finite and non-negative, got {}",
                self.lambda_mix
            )));
        }
        let a = &self.architecture;
        if a.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "conv kernel must be odd, got {}",
                a.kernel
            )));
        }
        if a.encoder_widths
            .iter()
            .chain(&a.decoder_widths)
            .any(|&w| w == 0)
            || a.encoder_depths
                .iter()
                .chain(&a.decoder_depths)
                .any(|&d| d == 0)
        {
            return Err(Error::Config(
                "block widths and depths must be positive".into(),
            ));
        }
        // Transposed convolutions must exactly double the length.
        if a.up_stride != 2 || a.up_kernel != 2 * a.up_padding + 2 {
            return Err(Error::Config(format!(
                "transposed convolution (kernel {}, stride {}, padding {}) does not double length",
                a.up_kernel, a.up_stride, a.up_padding
            )));
        }
        if self.population == PopulationKind::Spiking {
            self.lif.validate()?;
        } else if self.lif.n_neurons == 0 {
            return Err(Error::Config("population needs at least one unit".into()));
        }
        Ok(())
    }

    /// Samples kept after trimming to a multiple of 4.
    pub fn effective_length(&self) -> usize {
        self.length - self.length % 4
    }

    /// Trailing samples dropped from every trial.
    pub fn trimmed_samples(&self) -> usize {
        self.length % 4
    }

    pub fn code_steps(&self) -> usize {
        self.effective_length() / 4
    }

    pub fn n_neurons(&self) -> usize {
        self.lif.n_neurons
    }

    /// Length of a flattened population code.
    pub fn code_len(&self) -> usize {
        self.n_neurons() * self.code_steps()
    }

    pub fn hidden_channels(&self) -> usize {
        self.architecture.encoder_widths[2]
    }
}

/// Forward products of [`CodecModel::encode`].
#[derive(Debug, Clone)]
pub struct Encoding<T> {
    /// Encoder output `[hidden_channels, T/4]`.
    pub hidden: Tensor<T>,
    /// Population input currents `[n_neurons, T/4]`.
    pub currents: Tensor<T>,
    /// Population output `[n_neurons, T/4]`: 0/1 spikes, or `tanh` values.
    pub code: Tensor<T>,
}

impl<T: Real> Encoding<T> {
    pub fn spikes(&self) -> Result<SpikeTrain> {
        SpikeTrain::from_tensor(&self.code)
    }
}

/// Loss components of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub reconstruction: f64,
    pub classification: f64,
    pub total: f64,
}

/// `L = L_reg + lambda · L_cls`.
pub fn joint_loss(reconstruction: f64, classification: f64, lambda_mix: f64) -> Result<f64> {
    let total = reconstruction + lambda_mix * classification;
    if !total.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite joint loss (reconstruction {reconstruction}, classification {classification})"
        )));
    }
    Ok(total)
}

/// Joint loss evaluated from raw model outputs.
pub fn joint_loss_of<T: Real>(
    target: &Tensor<T>,
    reconstruction: &Tensor<T>,
    logits: &Tensor<T>,
    label: usize,
    lambda_mix: f64,
) -> Result<LossParts> {
    let (reg, _) = mse(target, reconstruction)?;
    let (cls, _) = cross_entropy(logits, label)?;
    let (reg, cls) = (reg.as_f64(), cls.as_f64());
    Ok(LossParts {
        reconstruction: reg,
        classification: cls,
        total: joint_loss(reg, cls, lambda_mix)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodecModel<T> {
    config: CodecConfig,
    encoder: Sequential<T>,
    input_fc: Sequential<T>,
    output_fc: Sequential<T>,
    decoder: Sequential<T>,
    aux: Sequential<T>,
}

#[allow(clippy::too_many_arguments)]
fn conv_block<T: Real>(
    seq: &mut Sequential<T>,
    cin: usize,
    cout: usize,
    depth: usize,
    kernel: usize,
    init: Init,
    rng: &mut ChaCha8Rng,
    final_relu: bool,
) -> Result<()> {
    for i in 0..depth {
        let kind = LayerParams::<T>::conv1d_same(if i == 0 { cin } else { cout }, cout, kernel)?;
        seq.push(Module::Layer(LayerParams::init(kind, init, rng)?));
        if i + 1 < depth || final_relu {
            seq.push(Module::Relu);
        }
    }
    Ok(())
}

impl<T: Real> CodecModel<T> {
    /// Builds a freshly initialised model; the same seed always yields the
    /// same parameters.
    pub fn new(config: CodecConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = config.architecture.clone();
        let init = config.init;
        let c = config.channels;
        let [e0, e1, e2] = a.encoder_widths;
        let [d0, d1] = a.decoder_widths;

        let mut encoder = Sequential::default();
        conv_block(
            &mut encoder,
            c,
            e0,
            a.encoder_depths[0],
            a.kernel,
            init,
            &mut rng,
            true,
        )?;
        encoder.push(Module::Pool(config.pooling));
        conv_block(
            &mut encoder,
            e0,
            e1,
            a.encoder_depths[1],
            a.kernel,
            init,
            &mut rng,
            true,
        )?;
        encoder.push(Module::Pool(config.pooling));
        conv_block(
            &mut encoder,
            e1,
            e2,
            a.encoder_depths[2],
            a.kernel,
            init,
            &mut rng,
            true,
        )?;

        let n = config.n_neurons();
        let linear = |i, o, rng: &mut ChaCha8Rng| -> Result<Sequential<T>> {
            let kind = LayerKind::Linear {
                in_features: i,
                out_features: o,
            };
            Ok(Sequential::new(vec![Module::Layer(LayerParams::init(
                kind,
                Init::Uniform,
                rng,
            )?)]))
        };
        let input_fc = linear(e2, n, &mut rng)?;
        let output_fc = linear(n, e2, &mut rng)?;

        let up = |ch: usize, rng: &mut ChaCha8Rng| -> Result<Module<T>> {
            let kind = LayerKind::ConvTranspose1d {
                in_channels: ch,
                out_channels: ch,
                kernel: a.up_kernel,
                stride: a.up_stride,
                padding: a.up_padding,
            };
            Ok(Module::Layer(LayerParams::init(kind, init, rng)?))
        };
        let mut decoder = Sequential::default();
        conv_block(
            &mut decoder,
            e2,
            d0,
            a.decoder_depths[0],
            a.kernel,
            init,
            &mut rng,
            true,
        )?;
        decoder.push(up(d0, &mut rng)?);
        conv_block(
            &mut decoder,
            d0,
            d1,
            a.decoder_depths[1],
            a.kernel,
            init,
            &mut rng,
            true,
        )?;
        decoder.push(up(d1, &mut rng)?);
        // Linear output so the reconstruction can take either sign.
        conv_block(
            &mut decoder,
            d1,
            c,
            a.decoder_depths[2],
            a.kernel,
            init,
            &mut rng,
            false,
        )?;

        let aux = linear(config.code_len(), config.n_classes, &mut rng)?;
        Ok(Self {
            config,
            encoder,
            input_fc,
            output_fc,
            decoder,
            aux,
        })
    }

    pub fn config(&self) -> &CodecConfig {
        &self.config
    }

    /// Every trainable layer, in checkpoint order.
    pub fn layers(&self) -> Vec<&LayerParams<T>> {
        self.encoder
            .layers()
            .chain(self.input_fc.layers())
            .chain(self.output_fc.layers())
            .chain(self.decoder.layers())
            .chain(self.aux.layers())
            .collect()
    }

    pub fn layers_mut(&mut self) -> Vec<&mut LayerParams<T>> {
        self.encoder
            .layers_mut()
            .chain(self.input_fc.layers_mut())
            .chain(self.output_fc.layers_mut())
            .chain(self.decoder.layers_mut())
            .chain(self.aux.layers_mut())
            .collect()
    }

    /// Layers of the auxiliary classification head only.
    pub fn aux_layers(&self) -> Vec<&LayerParams<T>> {
        self.aux.layers().collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers().iter().map(|p| p.num_params()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.layers_mut()
            .into_iter()
            .for_each(LayerParams::zero_grad);
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (c, t) = x.dims2()?;
        if c != self.config.channels || t < self.config.effective_length() {
            return Err(Error::Config(format!(
                "model expects [{}, {}], got [{c}, {t}]",
                self.config.channels,
                self.config.effective_length()
            )));
        }
        Ok(())
    }

    /// Drops trailing samples beyond the effective length.
    pub fn trim_input(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let t = x.dims2()?.1;
        if t == self.config.effective_length() {
            Ok(x.clone())
        } else {
            x.truncate_cols(self.config.effective_length())
        }
    }

    fn population_forward(&self, currents: &Tensor<T>) -> Result<(Tensor<T>, PopulationRecord<T>)> {
        match self.config.population {
            PopulationKind::Spiking => {
                let (spikes, traj) = lif_forward(currents, &self.config.lif)?;
                Ok((spikes.to_tensor(), PopulationRecord::Spiking(traj)))
            }
            PopulationKind::Tanh => {
                let y = ops::tanh(currents);
                Ok((y.clone(), PopulationRecord::Tanh(y)))
            }
        }
    }

    fn encode_inner(
        &self,
        x: &Tensor<T>,
        tapes: Option<&mut EncodeTapes<T>>,
    ) -> Result<(Encoding<T>, Option<PopulationRecord<T>>)> {
        let x = self.trim_input(x)?;
        let (hidden, currents) = match tapes {
            Some(t) => {
                let h = self.encoder.forward(&x, Some(&mut t.encoder))?;
                let i = self.input_fc.forward(&h, Some(&mut t.input_fc))?;
                (h, i)
            }
            None => {
                let h = self.encoder.forward(&x, None)?;
                let i = self.input_fc.forward(&h, None)?;
                (h, i)
            }
        };
        let (code, record) = self.population_forward(&currents)?;
        Ok((
            Encoding {
                hidden,
                currents,
                code,
            },
            Some(record),
        ))
    }

    /// Encoder output and population response for one trial.
    pub fn encode(&self, x: &Tensor<T>) -> Result<Encoding<T>> {
        Ok(self.encode_inner(x, None)?.0)
    }

    fn check_code(&self, code: &Tensor<T>) -> Result<()> {
        let want = [self.config.n_neurons(), self.config.code_steps()];
        if code.shape() != want {
            return Err(Error::Config(format!(
                "population code {:?} does not match expected {want:?}",
                code.shape()
            )));
        }
        Ok(())
    }

    /// Reconstruction `[C, T]` from a population code `[n_neurons, T/4]`.
    pub fn decode_code(&self, code: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_code(code)?;
        let z = self.output_fc.forward(code, None)?;
        self.decoder.forward(&z, None)
    }

    pub fn decode(&self, spikes: &SpikeTrain) -> Result<Tensor<T>> {
        self.decode_code(&spikes.to_tensor())
    }

    /// Auxiliary-head logits for a population code.
    pub fn aux_logits(&self, code: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_code(code)?;
        let flat = code.clone().reshape(vec![self.config.code_len()])?;
        self.aux.forward(&flat, None)
    }

    pub fn aux_classify(&self, spikes: &SpikeTrain) -> Result<Tensor<T>> {
        self.aux_logits(&spikes.to_tensor())
    }

    /// Full forward pass without recording.
    pub fn forward(&self, x: &Tensor<T>) -> Result<(Encoding<T>, Tensor<T>, Tensor<T>)> {
        let enc = self.encode(x)?;
        let recon = self.decode_code(&enc.code)?;
        let logits = self.aux_logits(&enc.code)?;
        Ok((enc, recon, logits))
    }

    /// Joint loss of one trial without touching gradients.
    pub fn loss(&self, x: &Tensor<T>, label: usize) -> Result<LossParts> {
        let target = self.trim_input(x)?;
        let (_, recon, logits) = self.forward(x)?;
        joint_loss_of(&target, &recon, &logits, label, self.config.lambda_mix)
    }

    /// Forward and backward pass of one trial. Gradients are added to each
    /// layer's gradient buffer; nothing is updated.
    pub fn accumulate_gradients(&mut self, x: &Tensor<T>, label: usize) -> Result<LossParts> {
        if label >= self.config.n_classes {
            return Err(Error::Usage(format!(
                "label {label} out of range for {} classes",
                self.config.n_classes
            )));
        }
        let target = self.trim_input(x)?;
        let mut enc_tapes = EncodeTapes::default();
        let (enc, record) = self.encode_inner(x, Some(&mut enc_tapes))?;
        let record = record.expect("population record");

        let mut out_tape = Tape::new();
        let z = self.output_fc.forward(&enc.code, Some(&mut out_tape))?;
        let mut dec_tape = Tape::new();
        let recon = self.decoder.forward(&z, Some(&mut dec_tape))?;
        let flat = enc.code.clone().reshape(vec![self.config.code_len()])?;
        let mut aux_tape = Tape::new();
        let logits = self.aux.forward(&flat, Some(&mut aux_tape))?;

        let lambda = self.config.lambda_mix;
        let (reg, d_recon) = mse(&target, &recon)?;
        let (cls, d_logits) = cross_entropy(&logits, label)?;
        let (reg, cls) = (reg.as_f64(), cls.as_f64());
        let total = joint_loss(reg, cls, lambda)?;

        let d_z = self.decoder.backward(dec_tape, d_recon)?;
        let d_code_dec = self.output_fc.backward(out_tape, d_z)?;
        let d_logits = d_logits.map(|g| g * T::lit(lambda));
        let d_flat = self.aux.backward(aux_tape, d_logits)?;
        let mut d_code = d_code_dec;
        for (a, &b) in d_code.data_mut().iter_mut().zip(d_flat.data()) {
            *a += b;
        }
        let d_currents = match record {
            PopulationRecord::Spiking(traj) => lif_backward(&d_code, &traj, &self.config.lif)?,
            PopulationRecord::Tanh(y) => ops::tanh_backward(&d_code, &y),
        };
        let d_hidden = self.input_fc.backward(enc_tapes.input_fc, d_currents)?;
        self.encoder.backward(enc_tapes.encoder, d_hidden)?;

        Ok(LossParts {
            reconstruction: reg,
            classification: cls,
            total,
        })
    }

    pub fn write_checkpoint(&self, w: &mut impl Write) -> Result<()> {
        write_checkpoint(w, self.layers())
    }

    /// Loads parameters into a model built from `config`. Layer kinds and
    /// shapes must match that configuration exactly.
    pub fn read_checkpoint(config: CodecConfig, r: &mut impl Read) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        let loaded: Vec<LayerParams<T>> = read_checkpoint(r)?;
        let mut slots = model.layers_mut();
        if slots.len() != loaded.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} layers, configuration needs {}",
                loaded.len(),
                slots.len()
            )));
        }
        for (i, (slot, layer)) in slots.iter_mut().zip(loaded).enumerate() {
            if slot.kind != layer.kind {
                return Err(Error::Config(format!(
                    "checkpoint layer {i} is {:?}, configuration needs {:?}",
                    layer.kind, slot.kind
                )));
            }
            **slot = layer;
        }
        Ok(model)
    }

    /// SHA-256 of the serialised parameters.
    pub fn digest(&self) -> String {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf).expect("in-memory write");
        Sha256::digest(&buf)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[derive(Debug, Default)]
struct EncodeTapes<T> {
    encoder: Tape<T>,
    input_fc: Tape<T>,
}

#[derive(Debug)]
enum PopulationRecord<T> {
    Spiking(crate::lif::LifTrajectory<T>),
    Tanh(Tensor<T>),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(channels: usize, length: usize, n_classes: usize) -> CodecConfig {
        let mut c = CodecConfig::new(channels, length, n_classes);
        c.lif.n_neurons = 6;
        c.architecture = Architecture {
            encoder_widths: [4, 5, 5],
            encoder_depths: [1, 2, 1],
            decoder_widths: [4, 3],
            decoder_depths: [1, 1, 2],
            ..Architecture::default()
        };
        c
    }

    #[test]
    fn table_shapes_for_four_class_config() {
        let model = CodecModel::<f32>::new(CodecConfig::new(22, 750, 4), 1).unwrap();
        let x = Tensor::<f32>::from_fn(vec![22, 750], |i| ((i % 97) as f32 * 0.1).sin());
        let enc = model.encode(&x).unwrap();
        assert_eq!(enc.hidden.shape(), &[256, 187]);
        assert_eq!(enc.code.shape(), &[200, 187]);
        let recon = model.decode_code(&enc.code).unwrap();
        assert_eq!(recon.shape(), &[22, 748]);
        assert_eq!(model.aux_logits(&enc.code).unwrap().len(), 4);
        assert_eq!(model.config().trimmed_samples(), 2);
    }

    #[test]
    fn two_class_config_yields_75_steps() {
        let model = CodecModel::<f32>::new(CodecConfig::new(118, 300, 2), 1).unwrap();
        let x = Tensor::<f32>::zeros(vec![118, 300]);
        assert_eq!(model.encode(&x).unwrap().code.shape(), &[200, 75]);
    }

    fn zero_biases(model: &mut CodecModel<f64>) {
        for p in model.layers_mut() {
            p.bias.data_mut().iter_mut().for_each(|b| *b = 0.0);
        }
    }

    #[test]
    fn zero_input_and_biases_give_silence_and_zero_reconstruction() {
        let mut model = CodecModel::<f64>::new(tiny(3, 16, 2), 5).unwrap();
        zero_biases(&mut model);
        let enc = model.encode(&Tensor::zeros(vec![3, 16])).unwrap();
        assert!(enc.code.data().iter().all(|&v| v == 0.0));
        let recon = model.decode(&enc.spikes().unwrap()).unwrap();
        assert_eq!(recon.shape(), &[3, 16]);
        assert!(recon.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_aux_weights_give_zero_logits() {
        let mut model = CodecModel::<f64>::new(tiny(3, 16, 4), 5).unwrap();
        let n = model.layers().len();
        let aux = &mut model.layers_mut()[n - 1];
        aux.weight.data_mut().iter_mut().for_each(|w| *w = 0.0);
        aux.bias.data_mut().iter_mut().for_each(|w| *w = 0.0);
        let spikes = SpikeTrain::new(6, 4, (0..24).map(|i| i % 3 == 0).collect()).unwrap();
        let logits = model.aux_classify(&spikes).unwrap();
        assert_eq!(logits.data(), &[0.0; 4]);
    }

    #[test]
    fn joint_loss_arithmetic() {
        assert!((joint_loss(0.5, 1.0, 0.1).unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(joint_loss(0.25, 7.0, 0.0).unwrap(), 0.25);
        assert!(matches!(
            joint_loss(f64::NAN, 1.0, 0.1),
            Err(Error::Numeric(_))
        ));
        let x = Tensor::matrix(1, 2, vec![0.3, -0.2]).unwrap();
        let logits = Tensor::vector(vec![60.0, -60.0]).unwrap();
        let parts = joint_loss_of(&x, &x, &logits, 0, 0.1).unwrap();
        assert!(parts.total < 1e-20);
    }

    #[test]
    fn wrong_channel_count_is_config_error() {
        let model = CodecModel::<f64>::new(tiny(3, 16, 2), 5).unwrap();
        let r = model.encode(&Tensor::zeros(vec![4, 16]));
        assert!(matches!(r, Err(Error::Config(_))));
        let r = model.decode_code(&Tensor::zeros(vec![6, 5]));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = tiny(3, 16, 2);
        c.lambda_mix = -0.1;
        assert!(CodecModel::<f32>::new(c, 0).is_err());
        let mut c = tiny(3, 16, 2);
        c.architecture.kernel = 4;
        assert!(CodecModel::<f32>::new(c, 0).is_err());
        let mut c = tiny(3, 16, 2);
        c.lif.tau = 1.0;
        assert!(CodecModel::<f32>::new(c, 0).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_identical() {
        let cfg = tiny(3, 16, 2);
        let model = CodecModel::<f32>::new(cfg.clone(), 11).unwrap();
        let mut buf = Vec::new();
        model.write_checkpoint(&mut buf).unwrap();
        let back = CodecModel::<f32>::read_checkpoint(cfg, &mut buf.as_slice()).unwrap();
        assert_eq!(back, model);
        let x = Tensor::<f32>::from_fn(vec![3, 16], |i| (i as f32 * 0.9).sin() * 3.0);
        let (e1, r1, l1) = model.forward(&x).unwrap();
        let (e2, r2, l2) = back.forward(&x).unwrap();
        assert_eq!(e1.code, e2.code);
        assert_eq!(r1, r2);
        assert_eq!(l1, l2);
        assert_eq!(model.digest(), back.digest());
    }

    #[test]
    fn checkpoint_for_other_channel_count_is_rejected() {
        let model = CodecModel::<f32>::new(tiny(3, 16, 2), 11).unwrap();
        let mut buf = Vec::new();
        model.write_checkpoint(&mut buf).unwrap();
        let r = CodecModel::<f32>::read_checkpoint(tiny(4, 16, 2), &mut buf.as_slice());
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
