//! White-box L∞ attacks (FGSM, PGD) driven by the surrogate-gradient BPTT path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::snn::{loss_and_grad, Dynamics, Model};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    #[serde(deserialize_with = "budget")]
    pub epsilon: f64,
    #[serde(deserialize_with = "budget")]
    pub alpha: f64,
    pub k_steps: usize,
    pub clamp_lo: f64,
    pub clamp_hi: f64,
    /// Uniform start inside the ball for PGD; off by default.
    pub random_start: bool,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            epsilon: 8.0 / 255.0,
            alpha: 0.01,
            k_steps: 7,
            clamp_lo: 0.0,
            clamp_hi: 1.0,
            random_start: false,
            seed: 0,
        }
    }
}

impl AttackConfig {
    /// Single-step budget used for poisoned batches and adversarial training.
    pub fn poison() -> Self {
        Self {
            epsilon: 2.0 / 255.0,
            ..Self::default()
        }
    }

    pub fn with_epsilon(self, epsilon: f64) -> Self {
        Self { epsilon, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Config(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.k_steps == 0 {
            return Err(Error::Config("k_steps must be >= 1".into()));
        }
        if !(self.clamp_lo < self.clamp_hi) {
            return Err(Error::Config("clamp_lo must be < clamp_hi".into()));
        }
        Ok(())
    }
}

/// Parses `"8/255"`, `"0.03"` or a bare number.
pub fn parse_budget(s: &str) -> Result<f64> {
    let s = s.trim();
    let parsed = match s.split_once('/') {
        Some((n, d)) => n
            .trim()
            .parse::<f64>()
            .and_then(|n| d.trim().parse::<f64>().map(|d| n / d)),
        None => s.parse::<f64>(),
    };
    match parsed {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Config(format!("cannot parse budget `{s}`"))),
    }
}

fn budget<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }
    match Raw::deserialize(d)? {
        Raw::Num(v) => Ok(v),
        Raw::Text(s) => parse_budget(&s).map_err(serde::de::Error::custom),
    }
}

fn sign(g: f64) -> f64 {
    if g > 0.0 {
        1.0
    } else if g < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gradient of the batch loss with respect to the input.
pub fn input_gradient(model: &Model, x: &Tensor, labels: &[usize], steps: usize) -> Result<Tensor> {
    Ok(loss_and_grad(model, x, labels, steps, Dynamics::Spiking)?.input)
}

/// `clamp(x + ε·sign(g))` for a given input gradient.
pub fn fgsm_step(x: &Tensor, grad: &Tensor, cfg: &AttackConfig) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&xi, &g)| (xi + cfg.epsilon * sign(g)).clamp(cfg.clamp_lo, cfg.clamp_hi))
        .collect();
    Tensor::from_vec(x.shape(), data).expect("shape preserved")
}

pub fn fgsm(
    model: &Model,
    x: &Tensor,
    labels: &[usize],
    steps: usize,
    cfg: &AttackConfig,
) -> Result<Tensor> {
    cfg.validate()?;
    if cfg.epsilon == 0.0 {
        return Ok(x.clone());
    }
    let g = input_gradient(model, x, labels, steps)?;
    Ok(fgsm_step(x, &g, cfg))
}

/// PGD with an arbitrary input-gradient oracle.
pub fn pgd_with<F>(x: &Tensor, cfg: &AttackConfig, mut grad: F) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<Tensor>,
{
    cfg.validate()?;
    if cfg.epsilon == 0.0 {
        return Ok(x.clone());
    }
    // Bounds are written as x ± ε so one step with α = ε reproduces FGSM bit for bit.
    let lower: Vec<f64> = x.data().iter().map(|&xi| xi - cfg.epsilon).collect();
    let upper: Vec<f64> = x.data().iter().map(|&xi| xi + cfg.epsilon).collect();
    let mut cur = x.clone();
    if cfg.random_start {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for (i, c) in cur.data_mut().iter_mut().enumerate() {
            let delta = rng.gen_range(-cfg.epsilon..=cfg.epsilon);
            *c = (*c + delta)
                .clamp(cfg.clamp_lo, cfg.clamp_hi)
                .clamp(lower[i], upper[i]);
        }
    }
    for _ in 0..cfg.k_steps {
        let g = grad(&cur)?;
        for (i, (c, &gi)) in cur.data_mut().iter_mut().zip(g.data()).enumerate() {
            let stepped = (*c + cfg.alpha * sign(gi)).clamp(cfg.clamp_lo, cfg.clamp_hi);
            *c = stepped.max(lower[i]).min(upper[i]);
        }
    }
    Ok(cur)
}

pub fn pgd(
    model: &Model,
    x: &Tensor,
    labels: &[usize],
    steps: usize,
    cfg: &AttackConfig,
) -> Result<Tensor> {
    pgd_with(x, cfg, |xt| input_gradient(model, xt, labels, steps))
}
