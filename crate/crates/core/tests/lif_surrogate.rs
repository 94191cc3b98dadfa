//! Surrogate back-propagation through time against hand-unrolled three-step
//! references.

use spikemem::lif::{lif_backward, lif_forward, LifConfig, MembraneCarry, ResetMode};
use spikemem::tensor::Tensor;

const TH: f64 = 1.0;
const TAU: f64 = 0.3;

fn rect(u: f64) -> f64 {
    if (u - TH).abs() <= 0.5 {
        1.0
    } else {
        0.0
    }
}

fn run(cfg: &LifConfig, currents: [f64; 3], upstream: [f64; 3]) -> (Vec<f64>, Vec<bool>, Vec<f64>) {
    let x = Tensor::matrix(1, 3, currents.to_vec()).unwrap();
    let (spikes, traj) = lif_forward(&x, cfg).unwrap();
    let g = Tensor::matrix(1, 3, upstream.to_vec()).unwrap();
    let dx = lif_backward(&g, &traj, cfg).unwrap();
    let s = (0..3).map(|t| spikes.get(0, t)).collect();
    (traj.membrane, s, dx.into_data())
}

fn config(reset: ResetMode, carry: MembraneCarry) -> LifConfig {
    LifConfig {
        n_neurons: 1,
        tau: TAU,
        threshold: TH,
        reset,
        carry,
    }
}

const CASES: [([f64; 3], [f64; 3]); 3] = [
    ([1.2, 0.3, 0.9], [0.5, -1.0, 2.0]),
    ([0.7, 0.6, 0.8], [1.0, 1.0, 1.0]),
    ([1.4, 1.1, -0.2], [-0.3, 0.8, 1.7]),
];

fn assert_close(got: &[f64], want: [f64; 3]) {
    for t in 0..3 {
        assert!(
            (got[t] - want[t]).abs() < 1e-12,
            "step {t}: {} vs {}",
            got[t],
            want[t]
        );
    }
}

#[test]
fn membrane_follows_the_recurrence() {
    let cfg = config(ResetMode::Subtract, MembraneCarry::Amplified);
    let (u, s, _) = run(&cfg, [1.2, 0.3, 0.9], [0.0; 3]);
    let u0 = 1.2;
    let u1 = (1.0 - TAU) * u0 - TH + 0.3;
    let u2 = (1.0 - TAU) * u1 + 0.9;
    assert_close(&u, [u0, u1, u2]);
    assert_eq!(s, vec![true, false, false]);
}

#[test]
fn amplified_carry_by_hand() {
    let d = 1.0 - TAU;
    for (i, g) in CASES {
        let (u, _, dx) = run(&config(ResetMode::Subtract, MembraneCarry::Amplified), i, g);
        let gu2 = g[2] * rect(u[2]);
        let gu1 = g[1] * rect(u[1]) + gu2 * (d + TH * rect(u[2]));
        let gu0 = g[0] * rect(u[0]) + gu1 * (d + TH * rect(u[1]));
        assert_close(&dx, [gu0, gu1, gu2]);
    }
}

#[test]
fn leak_carry_by_hand() {
    let d = 1.0 - TAU;
    for (i, g) in CASES {
        let (u, _, dx) = run(&config(ResetMode::Subtract, MembraneCarry::Leak), i, g);
        let gu2 = g[2] * rect(u[2]);
        let gu1 = g[1] * rect(u[1]) + gu2 * d;
        let gu0 = g[0] * rect(u[0]) + gu1 * d;
        assert_close(&dx, [gu0, gu1, gu2]);
    }
}

#[test]
fn reset_aware_carry_by_hand() {
    let d = 1.0 - TAU;
    for (i, g) in CASES {
        let (u, _, dx) = run(
            &config(ResetMode::Subtract, MembraneCarry::ResetAware),
            i,
            g,
        );
        let gu2 = g[2] * rect(u[2]);
        let gu1 = g[1] * rect(u[1]) + gu2 * (d - TH * rect(u[1]));
        let gu0 = g[0] * rect(u[0]) + gu1 * (d - TH * rect(u[0]));
        assert_close(&dx, [gu0, gu1, gu2]);
    }
}

#[test]
fn hard_reset_blocks_the_carry_after_a_spike() {
    let d = 1.0 - TAU;
    for (i, g) in CASES {
        let (u, s, dx) = run(&config(ResetMode::Zero, MembraneCarry::Amplified), i, g);
        let gate = |fired: bool| if fired { 0.0 } else { d };
        let gu2 = g[2] * rect(u[2]);
        let gu1 = g[1] * rect(u[1]) + gu2 * gate(s[1]);
        let gu0 = g[0] * rect(u[0]) + gu1 * gate(s[0]);
        assert_close(&dx, [gu0, gu1, gu2]);
    }
}

#[test]
fn shape_mismatch_is_rejected() {
    let cfg = config(ResetMode::Subtract, MembraneCarry::Amplified);
    let x = Tensor::matrix(1, 3, vec![0.1, 0.2, 0.3]).unwrap();
    let (_, traj) = lif_forward(&x, &cfg).unwrap();
    assert!(lif_backward(&Tensor::<f64>::zeros(vec![1, 2]), &traj, &cfg).is_err());
}
