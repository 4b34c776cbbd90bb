use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snn_dep::attacks::{fgsm, input_gradient, pgd, AttackConfig};
use snn_dep::data::{make_poisoned_batch, synth_gaussians, PoisonMode};
use snn_dep::snn::{LifConfig, Model};
use snn_dep::Tensor;

fn model(seed: u64) -> Model {
    Model::mlp(&[6], &[10], 3, LifConfig::default(), 2.5, seed).unwrap()
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize) -> (Tensor, Vec<usize>) {
    let x: Vec<f64> = (0..n * 6).map(|_| rng.gen()).collect();
    let y = (0..n).map(|_| rng.gen_range(0..3)).collect();
    (Tensor::from_vec(&[n, 6], x).unwrap(), y)
}

fn linf(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

#[test]
fn ball_containment_and_range() {
    let m = model(1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = AttackConfig::default();
    for _ in 0..10 {
        let (x, y) = random_batch(&mut rng, 20);
        for adv in [fgsm(&m, &x, &y, 3, &cfg).unwrap(), pgd(&m, &x, &y, 3, &cfg).unwrap()] {
            assert!(linf(&adv, &x) <= cfg.epsilon + 1e-12);
            assert!(adv.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn fgsm_equals_single_step_pgd_on_network() {
    let m = model(3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (x, y) = random_batch(&mut rng, 16);
    let eps = 8.0 / 255.0;
    let cfg = AttackConfig {
        epsilon: eps,
        alpha: eps,
        k_steps: 1,
        ..AttackConfig::default()
    };
    assert_eq!(fgsm(&m, &x, &y, 4, &cfg).unwrap(), pgd(&m, &x, &y, 4, &cfg).unwrap());
}

#[test]
fn fgsm_moves_by_epsilon_where_gradient_nonzero() {
    let m = model(5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (x, y) = random_batch(&mut rng, 8);
    // Keep inputs away from the clamp boundary.
    let x = Tensor::from_vec(x.shape(), x.data().iter().map(|v| 0.2 + 0.6 * v).collect()).unwrap();
    let cfg = AttackConfig::poison();
    let g = input_gradient(&m, &x, &y, 3).unwrap();
    let adv = make_poisoned_batch(&m, &x, &y, 3, &cfg, PoisonMode::Perturb).unwrap();
    let mut moved = 0;
    for ((a, b), gi) in adv.data().iter().zip(x.data()).zip(g.data()) {
        if *gi != 0.0 {
            assert!(((a - b).abs() - 2.0 / 255.0).abs() < 1e-15);
            assert_eq!((a - b).signum(), gi.signum());
            moved += 1;
        } else {
            assert_eq!(a, b);
        }
    }
    assert!(moved > 0);
}

#[test]
fn degenerate_attacks_are_identity() {
    let m = model(7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (x, y) = random_batch(&mut rng, 5);
    let zero = AttackConfig::default().with_epsilon(0.0);
    assert_eq!(pgd(&m, &x, &y, 3, &zero.clone()).unwrap(), x);
    assert_eq!(
        make_poisoned_batch(&m, &x, &y, 3, &zero, PoisonMode::Perturb).unwrap(),
        x
    );
    let cfg = AttackConfig::poison();
    assert_eq!(
        make_poisoned_batch(&m, &x, &y, 3, &cfg, PoisonMode::CleanPassthrough).unwrap(),
        x
    );

    // A network with all-zero weights has zero input gradient.
    let mut flat = model(9);
    flat.zero_params();
    assert_eq!(fgsm(&flat, &x, &y, 3, &AttackConfig::default()).unwrap(), x);
}

#[test]
fn near_zero_spread_is_linearly_separable() {
    let d = synth_gaussians(2, &[2], 50, 1e-6, 3).unwrap();
    let (x, y) = (d.inputs().data(), d.labels());
    // Perceptron as the linear probe.
    let (mut w, mut b) = ([0.0f64; 2], 0.0f64);
    for _ in 0..100 {
        for (i, &label) in y.iter().enumerate() {
            let t = if label == 1 { 1.0 } else { -1.0 };
            let s = w[0] * x[2 * i] + w[1] * x[2 * i + 1] + b;
            if t * s <= 0.0 {
                w[0] += t * x[2 * i];
                w[1] += t * x[2 * i + 1];
                b += t;
            }
        }
    }
    let correct = y
        .iter()
        .enumerate()
        .filter(|&(i, &label)| (w[0] * x[2 * i] + w[1] * x[2 * i + 1] + b > 0.0) == (label == 1))
        .count();
    assert_eq!(correct, y.len());
}
