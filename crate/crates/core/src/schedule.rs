//! Cosine noise schedule and the closed-form forward (noising) process.

use std::f64::consts::FRAC_PI_2;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper clip on per-step noise.
pub const BETA_MAX: f64 = 0.999;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub steps: usize,
    pub gamma: f64,
    pub squared: bool,
    /// `ᾱ_0..=ᾱ_K`, with `ᾱ_0 = 1` and `ᾱ_k = ᾱ_{k−1}·α_k`.
    pub alpha_bar: Vec<f64>,
    /// `β_0..=β_K`; `β_0 = 0` is a placeholder.
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
}

/// `ᾱ_k` straight from the cosine formula, before any β clipping:
/// `cos(((k/K + γ)/(1 + γ))·π/2) / cos((γ/(1 + γ))·π/2)`, optionally squared.
pub fn cosine_alpha_bar(k: usize, steps: usize, gamma: f64, squared: bool) -> f64 {
    let f = |k: f64| (((k / steps as f64 + gamma) / (1.0 + gamma)) * FRAC_PI_2).cos();
    let r = f(k as f64) / f(0.0);
    if squared {
        r * r
    } else {
        r
    }
}

impl NoiseSchedule {
    /// Builds the schedule from the cosine formula. `β_k` is clipped at
    /// [`BETA_MAX`] and `ᾱ` is then re-accumulated from the clipped `β`, so
    /// `α_k·ᾱ_{k−1} = ᾱ_k` holds exactly.
    pub fn cosine(steps: usize, gamma: f64, squared: bool) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidConfig("diffusion steps must be >= 1".into()));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!("gamma must be positive, got {gamma}")));
        }
        let raw: Vec<f64> = (0..=steps)
            .map(|k| cosine_alpha_bar(k, steps, gamma, squared).max(0.0))
            .collect();
        let mut beta = vec![0.0; steps + 1];
        for k in 1..=steps {
            beta[k] = (1.0 - raw[k] / raw[k - 1]).clamp(0.0, BETA_MAX);
        }
        let mut s = Self::from_beta(beta)?;
        s.gamma = gamma;
        s.squared = squared;
        Ok(s)
    }

    /// Builds a schedule from `β_1..=β_K` given as `beta[1..]` (`beta[0]` ignored).
    pub fn from_beta(mut beta: Vec<f64>) -> Result<Self> {
        if beta.len() < 2 {
            return Err(Error::InvalidConfig("need at least one diffusion step".into()));
        }
        beta[0] = 0.0;
        if beta[1..].iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(Error::InvalidConfig("every beta must lie in (0, 1)".into()));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = vec![1.0; beta.len()];
        for k in 1..beta.len() {
            alpha_bar[k] = alpha_bar[k - 1] * alpha[k];
        }
        Ok(NoiseSchedule {
            steps: beta.len() - 1,
            gamma: 0.0,
            squared: false,
            alpha_bar,
            beta,
            alpha,
        })
    }

    /// Builds a schedule from `ᾱ_0..=ᾱ_K` (`ᾱ_0` must be 1).
    pub fn from_alpha_bar(alpha_bar: &[f64]) -> Result<Self> {
        if alpha_bar.first() != Some(&1.0) {
            return Err(Error::InvalidConfig("alpha_bar[0] must be 1".into()));
        }
        let mut beta = vec![0.0; alpha_bar.len()];
        for k in 1..alpha_bar.len() {
            beta[k] = 1.0 - alpha_bar[k] / alpha_bar[k - 1];
        }
        let mut s = Self::from_beta(beta)?;
        s.alpha_bar[1..].copy_from_slice(&alpha_bar[1..]);
        Ok(s)
    }

    pub fn check_step(&self, k: usize) -> Result<()> {
        if k > self.steps {
            return Err(Error::InvalidConfig(format!("step {k} outside [0, {}]", self.steps)));
        }
        Ok(())
    }
}

/// `x_k = √ᾱ_k·x₀ + √(1 − ᾱ_k)·ε`.
pub fn forward_sample(schedule: &NoiseSchedule, x0: &Array2<f64>, k: usize, eps: &Array2<f64>) -> Result<Array2<f64>> {
    schedule.check_step(k)?;
    if x0.dim() != eps.dim() {
        return Err(Error::shape(format!("{:?}", x0.dim()), format!("{:?}", eps.dim())));
    }
    if k == 0 {
        return Ok(x0.clone());
    }
    let a = schedule.alpha_bar[k].sqrt();
    let s = (1.0 - schedule.alpha_bar[k]).sqrt();
    Ok(ndarray::Zip::from(x0).and(eps).map_collect(|&x, &e| a * x + s * e))
}

/// One Markov noising step `x_k = √(1 − β_k)·x_{k−1} + √β_k·ε`.
pub fn forward_step(schedule: &NoiseSchedule, x_prev: &Array2<f64>, k: usize, eps: &Array2<f64>) -> Result<Array2<f64>> {
    schedule.check_step(k)?;
    if k == 0 {
        return Err(Error::InvalidConfig("forward_step needs k >= 1".into()));
    }
    if x_prev.dim() != eps.dim() {
        return Err(Error::shape(format!("{:?}", x_prev.dim()), format!("{:?}", eps.dim())));
    }
    let a = schedule.alpha[k].sqrt();
    let s = schedule.beta[k].sqrt();
    Ok(ndarray::Zip::from(x_prev).and(eps).map_collect(|&x, &e| a * x + s * e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_parameters() {
        assert!(NoiseSchedule::cosine(0, 0.008, false).is_err());
        assert!(NoiseSchedule::cosine(10, 0.0, false).is_err());
        assert!(NoiseSchedule::cosine(10, -1.0, false).is_err());
    }

    #[test]
    fn formula_endpoints() {
        for steps in [1, 5, 50] {
            assert_eq!(cosine_alpha_bar(0, steps, 0.008, false), 1.0);
            assert!(cosine_alpha_bar(steps, steps, 0.008, false).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_sample_edge_cases() {
        let s = NoiseSchedule::cosine(10, 0.008, false).unwrap();
        let x0 = Array2::from_shape_fn((4, 5), |(i, j)| (i as f64 - j as f64) * 0.1);
        let zero = Array2::zeros((4, 5));
        assert_eq!(forward_sample(&s, &x0, 0, &Array2::ones((4, 5))).unwrap(), x0);
        let xk = forward_sample(&s, &x0, 3, &zero).unwrap();
        assert_eq!(xk, x0.mapv(|v| s.alpha_bar[3].sqrt() * v));
        assert!(forward_sample(&s, &x0, 3, &Array2::zeros((3, 5))).is_err());
        assert!(forward_sample(&s, &x0, 11, &zero).is_err());
    }
}
