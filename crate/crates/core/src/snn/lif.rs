//! Discrete leaky integrate-and-fire dynamics and the arctan surrogate.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LifConfig {
    /// Membrane time constant; the per-step leak factor is `1 − 1/tau`.
    pub tau: f64,
    pub v_threshold: f64,
    pub v_reset: f64,
    /// Sharpness `a` of the arctan surrogate.
    pub surrogate_alpha: f64,
}

impl Default for LifConfig {
    fn default() -> Self {
        Self {
            tau: 1.1,
            v_threshold: 1.0,
            v_reset: 0.0,
            surrogate_alpha: 2.0,
        }
    }
}

impl LifConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 1.0) {
            return Err(Error::Config(format!("tau must be > 1, got {}", self.tau)));
        }
        if !(self.v_threshold > 0.0) {
            return Err(Error::Config(format!(
                "v_threshold must be > 0, got {}",
                self.v_threshold
            )));
        }
        if !(self.surrogate_alpha > 0.0) {
            return Err(Error::Config(format!(
                "surrogate_alpha must be > 0, got {}",
                self.surrogate_alpha
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn leak(&self) -> f64 {
        1.0 - 1.0 / self.tau
    }

    /// Membrane update before thresholding: `v + (x − v)/tau`.
    #[inline]
    pub fn charge(&self, v_prev: f64, x: f64) -> f64 {
        v_prev + (x - v_prev) / self.tau
    }

    #[inline]
    pub fn surrogate(&self, v_pre: f64) -> f64 {
        surrogate_grad(v_pre, self)
    }

    /// Smooth primitive of [`surrogate_grad`]: `½ + arctan(π a u / 2)/π`.
    #[inline]
    pub fn smooth_spike(&self, v_pre: f64) -> f64 {
        let u = v_pre - self.v_threshold;
        0.5 + (PI * self.surrogate_alpha * u / 2.0).atan() / PI
    }
}

/// Arctan surrogate for `dΘ/dv`: `a / (2 (1 + (π a (v − v_th) / 2)²))`.
#[inline]
pub fn surrogate_grad(v_pre: f64, cfg: &LifConfig) -> f64 {
    let a = cfg.surrogate_alpha;
    let z = PI * a * (v_pre - cfg.v_threshold) / 2.0;
    a / (2.0 * (1.0 + z * z))
}

/// Elementwise surrogate over a tensor of pre-reset potentials.
pub fn surrogate_grad_tensor(v_pre: &Tensor, cfg: &LifConfig) -> Tensor {
    let data = v_pre.data().iter().map(|&v| surrogate_grad(v, cfg)).collect();
    Tensor::from_vec(v_pre.shape(), data).expect("same shape")
}

/// One hard-reset LIF step. Returns `(v_new, spikes)`.
pub fn lif_step(v_prev: &Tensor, x: &Tensor, cfg: &LifConfig) -> Result<(Tensor, Tensor)> {
    if v_prev.shape() != x.shape() {
        return Err(Error::ShapeMismatch(format!(
            "lif_step: membrane {:?} vs input {:?}",
            v_prev.shape(),
            x.shape()
        )));
    }
    let n = x.numel();
    let mut v_new = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    for (&v, &xi) in v_prev.data().iter().zip(x.data()) {
        let pre = cfg.charge(v, xi);
        if pre >= cfg.v_threshold {
            s.push(1.0);
            v_new.push(cfg.v_reset);
        } else {
            s.push(0.0);
            v_new.push(pre);
        }
    }
    Ok((
        Tensor::from_vec(x.shape(), v_new)?,
        Tensor::from_vec(x.shape(), s)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor {
        Tensor::from_vec(&[1], vec![v]).unwrap()
    }

    #[test]
    fn fires_and_resets() {
        let cfg = LifConfig::default();
        let (v, s) = lif_step(&scalar(0.0), &scalar(2.0), &cfg).unwrap();
        assert!((cfg.charge(0.0, 2.0) - 1.818_181_818).abs() < 1e-8);
        assert_eq!(s.data(), &[1.0]);
        assert_eq!(v.data(), &[0.0]);
    }

    #[test]
    fn rest_state_is_fixed_point() {
        for cfg in [
            LifConfig::default(),
            LifConfig {
                tau: 3.0,
                v_threshold: 0.2,
                v_reset: 0.0,
                surrogate_alpha: 5.0,
            },
        ] {
            let (v, s) = lif_step(&scalar(0.0), &scalar(0.0), &cfg).unwrap();
            assert_eq!((v.data()[0], s.data()[0]), (0.0, 0.0));
        }
    }

    #[test]
    fn sub_threshold_integrates() {
        let cfg = LifConfig::default();
        let (v, s) = lif_step(&scalar(0.0), &scalar(1.0), &cfg).unwrap();
        assert_eq!(s.data(), &[0.0]);
        assert!((v.data()[0] - 0.909_090_909).abs() < 1e-8);
    }

    #[test]
    fn surrogate_shape() {
        let cfg = LifConfig::default();
        assert!((surrogate_grad(1.0, &cfg) - 1.0).abs() < 1e-15);
        let expected = 2.0 / (2.0 * (1.0 + PI * PI));
        assert!((surrogate_grad(2.0, &cfg) - expected).abs() < 1e-15);
        assert!((expected - 0.09199).abs() < 1e-5);
        assert!(surrogate_grad(1e9, &cfg) < 1e-15);
        assert!(surrogate_grad(-1e9, &cfg) < 1e-15);
        assert_eq!(surrogate_grad(0.3, &cfg), surrogate_grad(1.7, &cfg));
    }

    #[test]
    fn smooth_spike_derivative_is_surrogate() {
        let cfg = LifConfig::default();
        for v in [-1.0, 0.2, 0.9, 1.0, 1.3, 4.0] {
            let h = 1e-6;
            let fd = (cfg.smooth_spike(v + h) - cfg.smooth_spike(v - h)) / (2.0 * h);
            assert!((fd - surrogate_grad(v, &cfg)).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = LifConfig {
            tau: 1.0,
            ..LifConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
