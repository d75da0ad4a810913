//! Reverse-process generation with classifier-free guidance, history
//! inpainting and low-temperature sampling.

use ndarray::{s, Array2, ArrayView2, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::denoiser::DenoiserParams;
use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Guidance scale: `ε̂ = ε_u + ω·(ε_c − ε_u)`.
    pub omega: f64,
    /// Multiplier on the per-step sampling variance, in `[0, 1]`.
    pub temperature: f64,
    /// Start from `N(0, I)` instead of `N(0, β_K·I)`.
    pub unit_prior: bool,
    /// Inpaint the history noised to the current level instead of clean.
    pub noised_history: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            omega: 0.2,
            temperature: 0.5,
            unit_prior: false,
            noised_history: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.omega.is_finite() {
            return Err(Error::InvalidConfig("omega must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.temperature) {
            return Err(Error::InvalidConfig(format!("temperature must be in [0, 1], got {}", self.temperature)));
        }
        Ok(())
    }
}

/// `(1 − ω)·ε_u + ω·ε_c`, which equals `ε_u + ω·(ε_c − ε_u)` and reduces
/// exactly to `ε_u` at ω = 0 and to `ε_c` at ω = 1.
pub fn combine_guidance(eps_uncond: &Array2<f64>, eps_cond: &Array2<f64>, omega: f64) -> Array2<f64> {
    if omega == 0.0 {
        return eps_uncond.clone();
    }
    if omega == 1.0 {
        return eps_cond.clone();
    }
    Zip::from(eps_uncond)
        .and(eps_cond)
        .map_collect(|&u, &c| (1.0 - omega) * u + omega * c)
}

/// Guided noise estimate for a single trajectory.
pub fn guided_epsilon(params: &DenoiserParams, x_k: &Array2<f64>, k: usize, y: &[f64], omega: f64) -> Result<Array2<f64>> {
    if k == 0 {
        return Err(Error::InvalidConfig("guidance needs k >= 1".into()));
    }
    let mut out = params.predict_batch(&[x_k.view(), x_k.view()], &[k, k], &[Some(y), None])?;
    let eu = out.pop().expect("two outputs");
    let ec = out.pop().expect("two outputs");
    Ok(combine_guidance(&eu, &ec, omega))
}

/// Posterior mean `μ = (x_k − β_k/√(1 − ᾱ_k)·ε̂) / √α_k`.
pub fn reverse_mean(x_k: &Array2<f64>, eps_hat: &Array2<f64>, k: usize, schedule: &NoiseSchedule) -> Result<Array2<f64>> {
    if k == 0 {
        return Err(Error::InvalidConfig("reverse step needs k >= 1".into()));
    }
    schedule.check_step(k)?;
    if x_k.dim() != eps_hat.dim() {
        return Err(Error::shape(format!("{:?}", x_k.dim()), format!("{:?}", eps_hat.dim())));
    }
    let inv = 1.0 / schedule.alpha[k].sqrt();
    let c = schedule.beta[k] / (1.0 - schedule.alpha_bar[k]).sqrt();
    Ok(Zip::from(x_k).and(eps_hat).map_collect(|&x, &e| inv * (x - c * e)))
}

/// `x_{k−1} = μ + √(temperature·β_k)·z`; at `k = 1` the mean is returned.
pub fn reverse_step(
    x_k: &Array2<f64>,
    eps_hat: &Array2<f64>,
    k: usize,
    schedule: &NoiseSchedule,
    temperature: f64,
    z: &Array2<f64>,
) -> Result<Array2<f64>> {
    let mut mu = reverse_mean(x_k, eps_hat, k, schedule)?;
    if z.dim() != mu.dim() {
        return Err(Error::shape(format!("{:?}", mu.dim()), format!("{:?}", z.dim())));
    }
    if k > 1 && temperature > 0.0 {
        let sd = (temperature * schedule.beta[k]).sqrt();
        mu.zip_mut_with(z, |m, &z| *m += sd * z);
    }
    Ok(mu)
}

/// One trajectory to generate: the observed normalized history (`t × D`,
/// possibly empty) and an optional condition (`None` = null token).
#[derive(Debug, Clone)]
pub struct GenRequest<'a> {
    pub history: ArrayView2<'a, f64>,
    pub cond: Option<&'a [f64]>,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_simple_fn(dim, || rng.sample(StandardNormal))
}

/// Generates several trajectories in lockstep, batching every network call.
/// Each request draws its noise from its own rng, so results do not depend
/// on how requests are grouped.
pub fn generate_batch(
    params: &DenoiserParams,
    schedule: &NoiseSchedule,
    requests: &[GenRequest<'_>],
    horizon: usize,
    config: &SamplerConfig,
    rngs: &mut [ChaCha8Rng],
) -> Result<Vec<Array2<f64>>> {
    config.validate()?;
    let d = params.config().state_dim;
    if rngs.len() != requests.len() {
        return Err(Error::shape(format!("{} rngs", requests.len()), rngs.len()));
    }
    for r in requests {
        let (t, hd) = r.history.dim();
        if t >= horizon {
            return Err(Error::InvalidConfig(format!("history length {t} must be < horizon {horizon}")));
        }
        if t > 0 && hd != d {
            return Err(Error::shape(format!("history width {d}"), hd));
        }
        if r.history.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("history".into()));
        }
    }
    let kmax = schedule.steps;
    let init_sd = if config.unit_prior { 1.0 } else { schedule.beta[kmax].sqrt() };
    let mut xs: Vec<Array2<f64>> = rngs.iter_mut().map(|rng| gaussian(rng, (horizon, d)) * init_sd).collect();

    for k in (1..=kmax).rev() {
        for ((x, r), rng) in xs.iter_mut().zip(requests).zip(rngs.iter_mut()) {
            let t = r.history.nrows();
            if t == 0 {
                continue;
            }
            if config.noised_history {
                let a = schedule.alpha_bar[k].sqrt();
                let b = (1.0 - schedule.alpha_bar[k]).sqrt();
                let z = gaussian(rng, (t, d));
                x.slice_mut(s![..t, ..]).assign(&(&r.history * a + z * b));
            } else {
                x.slice_mut(s![..t, ..]).assign(&r.history);
            }
        }

        // One network call covering every conditional/unconditional estimate needed.
        let mut views = Vec::with_capacity(2 * xs.len());
        let mut conds = Vec::with_capacity(2 * xs.len());
        let mut slots = Vec::with_capacity(xs.len());
        for (x, r) in xs.iter().zip(requests) {
            let need_c = r.cond.is_some() && config.omega != 0.0;
            let need_u = r.cond.is_none() || config.omega != 1.0;
            let c = need_c.then(|| {
                views.push(x.view());
                conds.push(r.cond);
                views.len() - 1
            });
            let u = need_u.then(|| {
                views.push(x.view());
                conds.push(None);
                views.len() - 1
            });
            slots.push((c, u));
        }
        let ks = vec![k; views.len()];
        let eps = params.predict_batch(&views, &ks, &conds)?;

        for (i, (x, rng)) in xs.iter_mut().zip(rngs.iter_mut()).enumerate() {
            let eps_hat = match slots[i] {
                (Some(c), Some(u)) => combine_guidance(&eps[u], &eps[c], config.omega),
                (Some(c), None) => eps[c].clone(),
                (None, Some(u)) => eps[u].clone(),
                (None, None) => unreachable!("at least one estimate is always requested"),
            };
            let z = if k > 1 { gaussian(rng, (horizon, d)) } else { Array2::zeros((horizon, d)) };
            let next = reverse_step(x, &eps_hat, k, schedule, config.temperature, &z)?;
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::SamplingFailed { step: k });
            }
            *x = next;
        }
    }

    for (x, r) in xs.iter_mut().zip(requests) {
        let t = r.history.nrows();
        if t > 0 {
            x.slice_mut(s![..t, ..]).assign(&r.history);
        }
    }
    Ok(xs)
}

/// Generates one full `horizon × D` trajectory whose first rows are the
/// supplied history.
pub fn generate_trajectory(
    params: &DenoiserParams,
    schedule: &NoiseSchedule,
    history: ArrayView2<'_, f64>,
    horizon: usize,
    y: Option<&[f64]>,
    config: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Array2<f64>> {
    let req = GenRequest { history, cond: y };
    let mut out = generate_batch(params, schedule, &[req], horizon, config, std::slice::from_mut(rng))?;
    Ok(out.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn guidance_scalar_probe() {
        let u = Array2::from_elem((1, 1), 1.0);
        let c = Array2::from_elem((1, 1), 3.0);
        assert!((combine_guidance(&u, &c, 0.2)[[0, 0]] - 1.4).abs() < 1e-15);
        assert_eq!(combine_guidance(&u, &c, 0.0), u);
        assert_eq!(combine_guidance(&u, &c, 1.0), c);
    }

    #[test]
    fn zero_temperature_is_mean() {
        let s = NoiseSchedule::cosine(10, 0.008, false).unwrap();
        let x = Array2::from_elem((3, 2), 0.4);
        let e = Array2::from_elem((3, 2), -0.2);
        let z = Array2::from_elem((3, 2), 5.0);
        let mu = reverse_mean(&x, &e, 4, &s).unwrap();
        assert_eq!(reverse_step(&x, &e, 4, &s, 0.0, &z).unwrap(), mu);
        assert_eq!(reverse_step(&x, &e, 1, &s, 1.0, &z).unwrap(), reverse_mean(&x, &e, 1, &s).unwrap());
        assert_ne!(reverse_step(&x, &e, 4, &s, 1.0, &z).unwrap(), mu);
    }

    #[test]
    fn invalid_temperature() {
        let c = SamplerConfig {
            temperature: 1.5,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
