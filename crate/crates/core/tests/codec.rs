use spikemem::codec::{Architecture, CodecConfig, CodecModel};
use spikemem::data::{synth_generate, SynthSpec};
use spikemem::lif::MembraneCarry;
use spikemem::optim::Adam;
use spikemem::tensor::Tensor;

fn small_config(channels: usize, length: usize) -> CodecConfig {
    let mut c = CodecConfig::new(channels, length, 4);
    c.lif.n_neurons = 24;
    c.lif.carry = MembraneCarry::ResetAware;
    c.architecture = Architecture {
        encoder_widths: [8, 12, 12],
        encoder_depths: [1, 1, 1],
        decoder_widths: [8, 8],
        decoder_depths: [1, 1, 1],
        kernel: 3,
        ..Architecture::default()
    };
    c
}

fn one_trial() -> (Tensor<f32>, usize) {
    let ds = synth_generate(&SynthSpec {
        n_tasks: 1,
        channels: 4,
        length: 64,
        sample_rate: 64.0,
        snr_db: f64::INFINITY,
        trials_per_class: 1,
        ..SynthSpec::default()
    })
    .unwrap();
    let t = &ds.trials()[1];
    (t.samples.cast(), t.label)
}

fn variance(x: &Tensor<f32>) -> f64 {
    let n = x.len() as f64;
    let mean = x.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    x.data()
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n
}

fn mse(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&p, &q)| (p as f64 - q as f64).powi(2))
        .sum::<f64>()
        / a.len() as f64
}

#[test]
fn overfitting_one_trial_mostly_decreases_the_loss() {
    let (x, label) = one_trial();
    let mut model = CodecModel::<f32>::new(small_config(4, 64), 2).unwrap();
    let mut adam = Adam::new(1e-3);
    let mut losses = Vec::new();
    for _ in 0..200 {
        model.zero_grad();
        losses.push(model.accumulate_gradients(&x, label).unwrap().total);
        adam.step(&mut model.layers_mut(), 1.0);
    }
    losses.push(model.loss(&x, label).unwrap().total);
    let down = losses.windows(2).filter(|w| w[1] < w[0]).count();
    assert!(
        down * 100 >= 95 * 200,
        "only {down} of 200 steps decreased the loss"
    );
}

#[test]
fn converged_single_trial_reconstruction_is_close() {
    let (x, label) = one_trial();
    let mut model = CodecModel::<f32>::new(small_config(4, 64), 2).unwrap();
    let mut adam = Adam::new(3e-3);
    for _ in 0..1500 {
        model.zero_grad();
        model.accumulate_gradients(&x, label).unwrap();
        adam.step(&mut model.layers_mut(), 1.0);
    }
    let enc = model.encode(&x).unwrap();
    let recon = model.decode(&enc.spikes().unwrap()).unwrap();
    let ratio = mse(&recon, &x) / variance(&x);
    assert!(ratio < 0.1, "reconstruction mse / variance = {ratio}");
}

#[test]
fn forward_shapes_chain_for_any_valid_length() {
    for (c, t) in [(3, 16), (5, 20), (2, 33), (7, 64)] {
        let model = CodecModel::<f32>::new(small_config(c, t), 0).unwrap();
        let x = Tensor::<f32>::from_fn(vec![c, t], |i| (i as f32 * 0.3).cos());
        let (enc, recon, logits) = model.forward(&x).unwrap();
        let steps = (t / 2) / 2;
        assert_eq!(enc.code.shape(), &[24, steps]);
        assert_eq!(recon.shape(), &[c, 4 * steps]);
        assert_eq!(logits.len(), 4);
        assert!(enc.code.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }
}

#[test]
fn checkpoint_roundtrip_preserves_the_forward_pass() {
    let (x, _) = one_trial();
    let cfg = small_config(4, 64);
    let model = CodecModel::<f32>::new(cfg.clone(), 9).unwrap();
    let mut buf = Vec::new();
    model.write_checkpoint(&mut buf).unwrap();
    let back = CodecModel::<f32>::read_checkpoint(cfg, &mut buf.as_slice()).unwrap();
    assert_eq!(back.digest(), model.digest());
    let (a, ra, la) = model.forward(&x).unwrap();
    let (b, rb, lb) = back.forward(&x).unwrap();
    assert_eq!(a.code, b.code);
    assert_eq!(ra.data(), rb.data());
    assert_eq!(la.data(), lb.data());
}
