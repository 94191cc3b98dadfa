//! Analytic gradients against central finite differences in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spikemem::codec::{Architecture, CodecConfig, CodecModel, PopulationKind};
use spikemem::tensor::ops;
use spikemem::tensor::{Init, LayerKind, LayerParams, Module, PoolKind, Sequential, Tape, Tensor};

const EPS: f64 = 1e-6;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(shape: Vec<usize>, r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
}

fn close(analytic: f64, numeric: f64, tol: f64) -> bool {
    (analytic - numeric).abs() <= tol * (1.0 + numeric.abs())
}

/// Checks `d/dx sum(w ⊙ f(x))` for every entry of `x`.
fn check_input_grad(
    x: &Tensor<f64>,
    f: impl Fn(&Tensor<f64>) -> Tensor<f64>,
    analytic: &Tensor<f64>,
    weights: &Tensor<f64>,
    tol: f64,
) {
    let objective = |x: &Tensor<f64>| f(x).dot(weights);
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += EPS;
        let mut minus = x.clone();
        minus.data_mut()[i] -= EPS;
        let numeric = (objective(&plus) - objective(&minus)) / (2.0 * EPS);
        assert!(
            close(analytic.data()[i], numeric, tol),
            "input entry {i}: analytic {} numeric {numeric}",
            analytic.data()[i]
        );
    }
}

fn check_param_grads(
    params: &LayerParams<f64>,
    x: &Tensor<f64>,
    forward: impl Fn(&Tensor<f64>, &LayerParams<f64>) -> Tensor<f64>,
    grads: &ops::ParamGrads<f64>,
    weights: &Tensor<f64>,
) {
    let objective = |p: &LayerParams<f64>| forward(x, p).dot(weights);
    for (which, analytic) in [(0, &grads.weight), (1, &grads.bias)] {
        for (i, &a) in analytic.iter().enumerate() {
            let mut plus = params.clone();
            let mut minus = params.clone();
            let (tp, tm) = if which == 0 {
                (&mut plus.weight, &mut minus.weight)
            } else {
                (&mut plus.bias, &mut minus.bias)
            };
            tp.data_mut()[i] += EPS;
            tm.data_mut()[i] -= EPS;
            let numeric = (objective(&plus) - objective(&minus)) / (2.0 * EPS);
            assert!(
                close(a, numeric, 1e-6),
                "param {which}/{i}: analytic {a} numeric {numeric}"
            );
        }
    }
}

fn layer(kind: LayerKind, seed: u64) -> LayerParams<f64> {
    LayerParams::init(kind, Init::Uniform, &mut rng(seed)).unwrap()
}

#[test]
fn conv1d_gradients() {
    for (stride, padding, len) in [(1, 2, 9), (2, 1, 10), (1, 0, 7)] {
        let kind = LayerKind::Conv1d {
            in_channels: 3,
            out_channels: 4,
            kernel: 5,
            stride,
            padding,
        };
        let p = layer(kind, 1);
        let mut r = rng(2);
        let x = random(vec![3, len], &mut r);
        let y = ops::conv1d_forward(&x, &p).unwrap();
        let w = random(y.shape().to_vec(), &mut r);
        let (dx, g) = ops::conv1d_backward(&w, Some(&x), &p).unwrap();
        check_input_grad(&x, |x| ops::conv1d_forward(x, &p).unwrap(), &dx, &w, 1e-6);
        check_param_grads(&p, &x, |x, p| ops::conv1d_forward(x, p).unwrap(), &g, &w);
    }
}

#[test]
fn conv_transpose1d_gradients() {
    for (kernel, stride, padding) in [(8, 2, 3), (3, 1, 1), (4, 3, 0)] {
        let kind = LayerKind::ConvTranspose1d {
            in_channels: 3,
            out_channels: 2,
            kernel,
            stride,
            padding,
        };
        let p = layer(kind, 3);
        let mut r = rng(4);
        let x = random(vec![3, 6], &mut r);
        let y = ops::conv_transpose1d_forward(&x, &p).unwrap();
        let w = random(y.shape().to_vec(), &mut r);
        let (dx, g) = ops::conv_transpose1d_backward(&w, Some(&x), &p).unwrap();
        check_input_grad(
            &x,
            |x| ops::conv_transpose1d_forward(x, &p).unwrap(),
            &dx,
            &w,
            1e-6,
        );
        check_param_grads(
            &p,
            &x,
            |x, p| ops::conv_transpose1d_forward(x, p).unwrap(),
            &g,
            &w,
        );
    }
}

#[test]
fn upsampling_doubles_length() {
    let kind = LayerKind::ConvTranspose1d {
        in_channels: 2,
        out_channels: 2,
        kernel: 8,
        stride: 2,
        padding: 3,
    };
    for len in [1, 5, 64, 187] {
        let y =
            ops::conv_transpose1d_forward(&Tensor::zeros(vec![2, len]), &layer(kind, 0)).unwrap();
        assert_eq!(y.shape(), &[2, 2 * len]);
    }
}

#[test]
fn linear_gradients_on_columns_and_vectors() {
    let kind = LayerKind::Linear {
        in_features: 4,
        out_features: 3,
    };
    let p = layer(kind, 5);
    let mut r = rng(6);
    for shape in [vec![4, 5], vec![4]] {
        let x = random(shape, &mut r);
        let y = ops::linear_forward(&x, &p).unwrap();
        let w = random(y.shape().to_vec(), &mut r);
        let (dx, g) = ops::linear_backward(&w, Some(&x), &p).unwrap();
        check_input_grad(&x, |x| ops::linear_forward(x, &p).unwrap(), &dx, &w, 1e-6);
        check_param_grads(&p, &x, |x, p| ops::linear_forward(x, p).unwrap(), &g, &w);
    }
}

#[test]
fn pooling_and_activation_gradients() {
    let mut r = rng(7);
    let x = random(vec![3, 8], &mut r);
    let w = random(vec![3, 4], &mut r);
    let dx = ops::avgpool1d_backward(&w, 8).unwrap();
    check_input_grad(&x, |x| ops::avgpool1d(x).unwrap(), &dx, &w, 1e-6);

    let (_, argmax) = ops::maxpool1d(&x).unwrap();
    let dx = ops::maxpool1d_backward(&w, &argmax, 8).unwrap();
    check_input_grad(&x, |x| ops::maxpool1d(x).unwrap().0, &dx, &w, 1e-6);

    let w = random(vec![3, 8], &mut r);
    let y = ops::relu(&x);
    check_input_grad(&x, ops::relu, &ops::relu_backward(&w, &y), &w, 1e-6);
    let y = ops::tanh(&x);
    check_input_grad(&x, ops::tanh, &ops::tanh_backward(&w, &y), &w, 1e-6);
}

#[test]
fn loss_gradients() {
    let mut r = rng(8);
    let target = random(vec![2, 6], &mut r);
    let pred = random(vec![2, 6], &mut r);
    let (_, g) = ops::mse(&target, &pred).unwrap();
    let one = Tensor::vector(vec![1.0]).unwrap();
    check_input_grad(
        &pred,
        |p| Tensor::vector(vec![ops::mse(&target, p).unwrap().0]).unwrap(),
        &g,
        &one,
        1e-6,
    );
    let logits = random(vec![5], &mut r);
    let (_, g) = ops::cross_entropy(&logits, 3).unwrap();
    check_input_grad(
        &logits,
        |l| Tensor::vector(vec![ops::cross_entropy(l, 3).unwrap().0]).unwrap(),
        &g,
        &one,
        1e-6,
    );
}

#[test]
fn sequential_stack_gradients() {
    let mut r = rng(9);
    let conv = |i, o, seed| {
        Module::Layer(layer(
            LayerParams::<f64>::conv1d_same(i, o, 3).unwrap(),
            seed,
        ))
    };
    let up = Module::Layer(layer(
        LayerKind::ConvTranspose1d {
            in_channels: 3,
            out_channels: 3,
            kernel: 8,
            stride: 2,
            padding: 3,
        },
        12,
    ));
    let mut net = Sequential::new(vec![
        conv(2, 3, 10),
        Module::Tanh,
        Module::Pool(PoolKind::Average),
        conv(3, 3, 11),
        Module::Tanh,
        up,
        Module::Pool(PoolKind::Max),
    ]);
    let x = random(vec![2, 12], &mut r);
    let mut tape = Tape::new();
    let y = net.forward(&x, Some(&mut tape)).unwrap();
    let w = random(y.shape().to_vec(), &mut r);
    let dx = net.clone().backward(tape, w.clone()).unwrap();
    check_input_grad(&x, |x| net.forward(x, None).unwrap(), &dx, &w, 1e-5);

    let mut tape = Tape::new();
    net.forward(&x, Some(&mut tape)).unwrap();
    net.backward(tape, w.clone()).unwrap();
    let first = net.layers().next().unwrap().clone();
    let analytic = first.weight.grad().unwrap().to_vec();
    for (i, &a) in analytic.iter().enumerate() {
        let mut probe = net.clone();
        probe.layers_mut().next().unwrap().weight.data_mut()[i] += EPS;
        let up = probe.forward(&x, None).unwrap().dot(&w);
        probe.layers_mut().next().unwrap().weight.data_mut()[i] -= 2.0 * EPS;
        let down = probe.forward(&x, None).unwrap().dot(&w);
        let numeric = (up - down) / (2.0 * EPS);
        assert!(close(a, numeric, 1e-5), "weight {i}: {a} vs {numeric}");
    }
}

fn tiny_config(population: PopulationKind) -> CodecConfig {
    let mut c = CodecConfig::new(2, 16, 3);
    c.population = population;
    c.lif.n_neurons = 5;
    c.lambda_mix = 0.7;
    c.architecture = Architecture {
        encoder_widths: [3, 4, 4],
        encoder_depths: [1, 1, 1],
        decoder_widths: [3, 3],
        decoder_depths: [1, 1, 1],
        kernel: 3,
        ..Architecture::default()
    };
    c
}

/// Central differences of the joint loss with respect to every parameter of
/// the selected layers.
fn check_model(
    model: &mut CodecModel<f64>,
    x: &Tensor<f64>,
    label: usize,
    layers: &[usize],
    tol: f64,
) {
    model.zero_grad();
    model.accumulate_gradients(x, label).unwrap();
    let analytic: Vec<(Vec<f64>, Vec<f64>)> = model
        .layers()
        .iter()
        .map(|p| {
            (
                p.weight.grad().unwrap().to_vec(),
                p.bias.grad().unwrap().to_vec(),
            )
        })
        .collect();
    for &l in layers {
        for which in 0..2 {
            let n = if which == 0 {
                analytic[l].0.len()
            } else {
                analytic[l].1.len()
            };
            for i in 0..n {
                let mut probe = model.clone();
                let bump = |m: &mut CodecModel<f64>, d: f64| {
                    let mut ls = m.layers_mut();
                    let t = if which == 0 {
                        &mut ls[l].weight
                    } else {
                        &mut ls[l].bias
                    };
                    t.data_mut()[i] += d;
                };
                bump(&mut probe, EPS);
                let up = probe.loss(x, label).unwrap().total;
                bump(&mut probe, -2.0 * EPS);
                let down = probe.loss(x, label).unwrap().total;
                let numeric = (up - down) / (2.0 * EPS);
                let a = if which == 0 {
                    analytic[l].0[i]
                } else {
                    analytic[l].1[i]
                };
                assert!(
                    close(a, numeric, tol),
                    "layer {l} tensor {which} entry {i}: {a} vs {numeric}"
                );
            }
        }
    }
}

#[test]
fn smooth_codec_gradients_match_finite_differences() {
    let cfg = tiny_config(PopulationKind::Tanh);
    let mut model = CodecModel::<f64>::new(cfg, 3).unwrap();
    let x = random(vec![2, 16], &mut rng(13));
    let all: Vec<usize> = (0..model.layers().len()).collect();
    check_model(&mut model, &x, 2, &all, 1e-5);
}

#[test]
fn auxiliary_head_gradient_within_tolerance() {
    let cfg = tiny_config(PopulationKind::Spiking);
    let mut model = CodecModel::<f64>::new(cfg, 4).unwrap();
    let x = random(vec![2, 16], &mut rng(14)).map(|v| v * 4.0);
    let aux = model.layers().len() - 1;
    check_model(&mut model, &x, 1, &[aux], 1e-4);
}

#[test]
fn without_mixing_the_auxiliary_head_gets_no_gradient() {
    let mut cfg = tiny_config(PopulationKind::Spiking);
    cfg.lambda_mix = 0.0;
    let mut model = CodecModel::<f64>::new(cfg, 5).unwrap();
    let x = random(vec![2, 16], &mut rng(15)).map(|v| v * 4.0);
    model.accumulate_gradients(&x, 0).unwrap();
    let aux = model.aux_layers()[0];
    assert!(aux.weight.grad().unwrap().iter().all(|&g| g == 0.0));
    assert!(aux.bias.grad().unwrap().iter().all(|&g| g == 0.0));
}
