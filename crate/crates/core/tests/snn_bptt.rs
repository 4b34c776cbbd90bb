use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snn_dep::snn::{
    backward, batch_loss, forward, forward_sequence, lif_step, loss_and_grad, Dynamics, Layer,
    LifConfig, Model,
};
use snn_dep::{Error, Tensor};

fn random_input(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

/// Central differences of the twin loss for every parameter.
fn fd_param_grad(model: &Model, x: &Tensor, y: &[usize], steps: usize, h: f64) -> Vec<f64> {
    let theta = model.flat_params();
    let mut probe = model.clone();
    (0..theta.len())
        .map(|i| {
            let mut tp = theta.clone();
            tp[i] += h;
            probe.set_flat_params(&tp).unwrap();
            let lp = batch_loss(&probe, x, y, steps, Dynamics::SmoothTwin).unwrap();
            tp[i] -= 2.0 * h;
            probe.set_flat_params(&tp).unwrap();
            let lm = batch_loss(&probe, x, y, steps, Dynamics::SmoothTwin).unwrap();
            (lp - lm) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[test]
fn twin_gradients_match_finite_differences() {
    for seed in 0..20u64 {
        for steps in [1usize, 3] {
            let lif = LifConfig::default();
            // 4-6-3: 51 parameters.
            let model = Model::mlp(&[4], &[6], 3, lif, 3.0, seed).unwrap();
            assert!(model.num_params() <= 64);
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let x = random_input(&mut rng, &[3, 4]);
            let y: Vec<usize> = (0..3).map(|_| rng.gen_range(0..3)).collect();
            let g = loss_and_grad(&model, &x, &y, steps, Dynamics::SmoothTwin).unwrap();
            let fd = fd_param_grad(&model, &x, &y, steps, 1e-5);
            for (i, (a, b)) in g.flat_params().iter().zip(&fd).enumerate() {
                assert!(
                    rel_err(*a, *b) < 1e-4,
                    "seed {seed} T={steps} param {i}: bptt {a} fd {b}"
                );
            }
        }
    }
}

#[test]
fn conv_twin_gradients_match_finite_differences() {
    let lif = LifConfig::default();
    let layers = {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut t = |shape: &[usize], s: f64| {
            let n: usize = shape.iter().product();
            Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-s..s)).collect()).unwrap()
        };
        vec![
            Layer::Conv2d {
                kernel: t(&[2, 1, 3, 3], 1.0),
                bias: t(&[2], 0.5),
                padding: 1,
            },
            Layer::Lif(lif),
            Layer::MeanPoolReadout,
            Layer::Linear {
                weight: t(&[2, 2], 1.5),
                bias: t(&[2], 0.5),
            },
        ]
    };
    let model = Model::new(&[1, 4, 4], layers, 1.1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_input(&mut rng, &[2, 1, 4, 4]);
    let y = [0, 1];
    let g = loss_and_grad(&model, &x, &y, 3, Dynamics::SmoothTwin).unwrap();
    let fd = fd_param_grad(&model, &x, &y, 3, 1e-5);
    for (i, (a, b)) in g.flat_params().iter().zip(&fd).enumerate() {
        assert!(rel_err(*a, *b) < 1e-4, "param {i}: {a} vs {b}");
    }
}

#[test]
fn single_step_linear_readout_matches_closed_form() {
    // No LIF layer: ŷ = (Wx + b)/τ_r, so dW = (p − e_y) xᵀ / τ_r.
    let tau_r = 1.1;
    let w = vec![0.3, -0.2, 0.1, 0.5, 0.0, -0.4];
    let b = vec![0.05, -0.1];
    let model = Model::new(
        &[3],
        vec![Layer::Linear {
            weight: Tensor::from_vec(&[2, 3], w.clone()).unwrap(),
            bias: Tensor::from_vec(&[2], b.clone()).unwrap(),
        }],
        tau_r,
    )
    .unwrap();
    let xv = [0.2, 0.7, 0.4];
    let x = Tensor::from_vec(&[1, 3], xv.to_vec()).unwrap();
    let g = loss_and_grad(&model, &x, &[1], 1, Dynamics::Spiking).unwrap();

    let z: Vec<f64> = (0..2)
        .map(|o| (b[o] + (0..3).map(|i| w[o * 3 + i] * xv[i]).sum::<f64>()) / tau_r)
        .collect();
    let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
    let p: Vec<f64> = e.iter().map(|v| v / (e[0] + e[1])).collect();
    let d = [p[0], p[1] - 1.0];
    for o in 0..2 {
        for i in 0..3 {
            let expect = d[o] * xv[i] / tau_r;
            assert!((g.params[0].data()[o * 3 + i] - expect).abs() < 1e-14);
        }
        assert!((g.params[1].data()[o] - d[o] / tau_r).abs() < 1e-14);
    }
    for i in 0..3 {
        let expect = (d[0] * w[i] + d[1] * w[3 + i]) / tau_r;
        assert!((g.input.data()[i] - expect).abs() < 1e-14);
    }
}

#[test]
fn zero_network_gives_zero_logits() {
    let mut model = Model::mlp(&[5], &[4], 3, LifConfig::default(), 1.0, 2).unwrap();
    model.zero_params();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = random_input(&mut rng, &[2, 5]);
    let (logits, _) = forward(&model, &x, 4, Dynamics::Spiking).unwrap();
    assert_eq!(logits.len(), 4);
    assert!(logits.iter().all(|l| l.data().iter().all(|&v| v == 0.0)));
}

/// Scalar re-simulation of a 2-layer net, neuron by neuron.
fn simulate(model: &Model, x: &[f64], steps: usize) -> Vec<Vec<f64>> {
    let (w1, b1, cfg, w2, b2) = match model.layers() {
        [Layer::Linear { weight: w1, bias: b1 }, Layer::Lif(cfg), Layer::Linear { weight: w2, bias: b2 }] => {
            (w1, b1, *cfg, w2, b2)
        }
        _ => unreachable!(),
    };
    let (h, n_in) = (w1.shape()[0], w1.shape()[1]);
    let c = w2.shape()[0];
    let mut v = vec![0.0; h];
    let mut r = vec![0.0; c];
    let mut out = Vec::new();
    for _ in 0..steps {
        let mut s = vec![0.0; h];
        for j in 0..h {
            let mut cur = b1.data()[j];
            for i in 0..n_in {
                cur += w1.data()[j * n_in + i] * x[i];
            }
            let pre = v[j] + (cur - v[j]) / cfg.tau;
            if pre >= cfg.v_threshold {
                s[j] = 1.0;
                v[j] = cfg.v_reset;
            } else {
                v[j] = pre;
            }
        }
        for k in 0..c {
            let mut cur = b2.data()[k];
            for j in 0..h {
                cur += w2.data()[k * h + j] * s[j];
            }
            r[k] += (cur - r[k]) / model.readout_tau();
        }
        out.push(r.clone());
    }
    out
}

#[test]
fn direct_encoding_state_evolves_over_steps() {
    let model = Model::mlp(&[6], &[8], 3, LifConfig::default(), 4.0, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_input(&mut rng, &[1, 6]);
    let (logits, _) = forward(&model, &x, 4, Dynamics::Spiking).unwrap();
    let oracle = simulate(&model, x.data(), 4);
    for (l, o) in logits.iter().zip(&oracle) {
        for (a, b) in l.data().iter().zip(o) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    assert_ne!(logits[0].data(), logits[3].data());
}

#[test]
fn single_step_is_one_feedforward_pass() {
    let model = Model::mlp(&[6], &[8], 3, LifConfig::default(), 4.0, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_input(&mut rng, &[1, 6]);
    let (logits, tape) = forward(&model, &x, 1, Dynamics::Spiking).unwrap();
    assert_eq!(tape.steps(), 1);
    let oracle = simulate(&model, x.data(), 1);
    for (a, b) in logits[0].data().iter().zip(&oracle[0]) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn spikes_are_binary_and_reset_is_exact() {
    let model = Model::mlp(&[10], &[16, 12], 4, LifConfig::default(), 4.0, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random_input(&mut rng, &[8, 10]);
    let (_, tape) = forward(&model, &x, 6, Dynamics::Spiking).unwrap();
    let mut fired = 0;
    for t in 0..6 {
        for layer in [1, 3] {
            for (&s, &v) in tape
                .spikes(t, layer)
                .iter()
                .zip(tape.pre_reset_potential(t, layer))
            {
                assert!(s == 0.0 || s == 1.0);
                if s == 1.0 {
                    fired += 1;
                    assert!(v >= 1.0);
                }
            }
        }
    }
    assert!(fired > 0);
}

proptest! {
    #[test]
    fn lif_step_reset_is_exact(v in -3.0f64..3.0, x in -5.0f64..5.0, tau in 1.01f64..5.0, reset in -0.5f64..0.5) {
        let cfg = LifConfig { tau, v_threshold: 1.0, v_reset: reset, surrogate_alpha: 2.0 };
        let (vn, s) = lif_step(
            &Tensor::from_vec(&[1], vec![v]).unwrap(),
            &Tensor::from_vec(&[1], vec![x]).unwrap(),
            &cfg,
        ).unwrap();
        let s = s.data()[0];
        prop_assert!(s == 0.0 || s == 1.0);
        if s == 1.0 {
            prop_assert_eq!(vn.data()[0], reset);
        } else {
            prop_assert_eq!(vn.data()[0], v + (x - v) / tau);
        }
    }
}

#[test]
fn backward_is_deterministic_and_replayable() {
    let model = Model::mlp(&[6], &[8], 3, LifConfig::default(), 3.0, 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = random_input(&mut rng, &[4, 6]);
    let y = [0, 1, 2, 1];
    let (_, tape) = forward(&model, &x, 4, Dynamics::Spiking).unwrap();
    let a = backward(&model, &tape, &y).unwrap();
    let b = backward(&model, &tape, &y).unwrap();
    assert_eq!(a, b);
    let c = loss_and_grad(&model, &x, &y, 4, Dynamics::Spiking).unwrap();
    assert_eq!(a, c);
}

#[test]
fn stale_tape_is_rejected() {
    let mut model = Model::mlp(&[3], &[4], 2, LifConfig::default(), 1.0, 0).unwrap();
    let x = Tensor::full(&[1, 3], 0.5);
    let (_, tape) = forward(&model, &x, 2, Dynamics::Spiking).unwrap();
    model.params_mut()[0].data_mut()[0] += 1.0;
    assert!(matches!(backward(&model, &tape, &[0]), Err(Error::TapeConsumed)));
}

#[test]
fn single_class_has_zero_gradient() {
    let model = Model::mlp(&[3], &[4], 1, LifConfig::default(), 3.0, 0).unwrap();
    let x = Tensor::full(&[2, 3], 0.7);
    let g = loss_and_grad(&model, &x, &[0, 0], 3, Dynamics::Spiking).unwrap();
    assert_eq!(g.loss, 0.0);
    assert!(g.flat_params().iter().all(|&v| v == 0.0));
    assert!(g.input.data().iter().all(|&v| v == 0.0));
}

#[test]
fn input_shape_mismatch_reports_layer_zero() {
    let model = Model::mlp(&[3], &[4], 2, LifConfig::default(), 1.0, 0).unwrap();
    let x = Tensor::full(&[1, 4], 0.5);
    assert!(matches!(
        forward(&model, &x, 2, Dynamics::Spiking),
        Err(Error::LayerShapeMismatch { layer: 0, .. })
    ));
}

#[test]
fn input_gradient_is_sum_of_per_step_gradients() {
    let steps = 4;
    let model = Model::mlp(&[5], &[7], 3, LifConfig::default(), 3.0, 31).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let x = random_input(&mut rng, &[2, 5]);
    let y = [2, 0];

    let (_, tape) = forward(&model, &x, steps, Dynamics::SmoothTwin).unwrap();
    let g = backward(&model, &tape, &y).unwrap();
    let xs = vec![x.clone(); steps];
    let (_, seq_tape) = forward_sequence(&model, &xs, Dynamics::SmoothTwin).unwrap();
    let gs = backward(&model, &seq_tape, &y).unwrap();
    assert_eq!(g.input, gs.input);

    // Each per-step gradient against central differences that perturb only x_t.
    let h = 1e-6;
    for t in 0..steps {
        for i in 0..x.numel() {
            let mut plus = xs.clone();
            plus[t].data_mut()[i] += h;
            let mut minus = xs.clone();
            minus[t].data_mut()[i] -= h;
            let lp = snn_dep::snn::loss(&forward_sequence(&model, &plus, Dynamics::SmoothTwin).unwrap().0, &y).unwrap();
            let lm = snn_dep::snn::loss(&forward_sequence(&model, &minus, Dynamics::SmoothTwin).unwrap().0, &y).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let bp = gs.input_per_step[t].data()[i];
            assert!(rel_err(bp, fd) < 1e-5, "t={t} i={i}: {bp} vs {fd}");
        }
    }
    let summed: Vec<f64> = (0..x.numel())
        .map(|i| gs.input_per_step.iter().map(|g| g.data()[i]).sum())
        .collect();
    for (a, b) in summed.iter().zip(g.input.data()) {
        assert!((a - b).abs() < 1e-15);
    }
}
