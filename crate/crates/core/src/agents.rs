//! Behavior policies used to log offline data: a proportional budget pacer
//! and a multiplicative exploration wrapper around it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{derive_seed, run_episode, EnvConfig, Environment, Observation, Policy};
use crate::types::{Action, BidState, TrajectoryDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PacingAgentConfig {
    pub lambda_init: f64,
    pub gain: f64,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    /// Fixed `λ₁` emitted in Target-CPC mode.
    pub lambda_cpc: f64,
}

impl Default for PacingAgentConfig {
    fn default() -> Self {
        PacingAgentConfig {
            lambda_init: 5.0,
            gain: 2.0,
            lambda_lo: 0.0,
            lambda_hi: 50.0,
            lambda_cpc: 0.0,
        }
    }
}

impl PacingAgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_lo <= self.lambda_init && self.lambda_init <= self.lambda_hi) {
            return Err(Error::InvalidConfig("need lambda_lo <= lambda_init <= lambda_hi".into()));
        }
        if !(self.gain.is_finite() && self.gain >= 0.0) {
            return Err(Error::InvalidConfig("gain must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// One step of the pacing control law.
///
/// Target spend fraction is `1 − remaining_time`; the error is
/// `target − spent`, and `λ₀ ← clip(λ_prev · (1 + gain·e))`.
pub fn pacing_lambda(state: &BidState, lambda_prev: f64, config: &PacingAgentConfig) -> f64 {
    let target = 1.0 - state.remaining_time;
    let spent = 1.0 - state.remaining_budget;
    let e = target - spent;
    (lambda_prev * (1.0 + config.gain * e)).clamp(config.lambda_lo, config.lambda_hi)
}

/// Wraps [`pacing_lambda`] into a full action for `dim` bidding parameters.
pub fn pacing_action(state: &BidState, lambda_prev: f64, config: &PacingAgentConfig, dim: usize) -> Action {
    let mut lambdas = vec![config.lambda_cpc; dim];
    lambdas[0] = pacing_lambda(state, lambda_prev, config);
    Action::new(lambdas)
}

/// Multiplies each parameter by `exp(g)`, `g ~ N(0, σ²)`, then clips.
pub fn explore<R: Rng + ?Sized>(action: Action, rng: &mut R, sigma: f64, lo: f64, hi: f64) -> Action {
    if sigma == 0.0 {
        return action;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma must be non-negative and finite");
    let lambdas = action
        .lambdas
        .into_iter()
        .map(|l| (l * normal.sample(rng).exp()).clamp(lo, hi))
        .collect();
    Action::new(lambdas)
}

#[derive(Debug, Clone)]
pub struct PacingAgent {
    pub config: PacingAgentConfig,
    pub dim: usize,
    lambda: f64,
}

impl PacingAgent {
    pub fn new(config: PacingAgentConfig, dim: usize) -> Self {
        let lambda = config.lambda_init;
        PacingAgent { config, dim, lambda }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

impl Policy for PacingAgent {
    fn act(&mut self, obs: &Observation<'_>) -> Action {
        let state = obs.history.last().expect("history is never empty");
        if obs.period > 0 {
            self.lambda = pacing_lambda(state, self.lambda, &self.config);
        }
        let mut lambdas = vec![self.config.lambda_cpc; self.dim];
        lambdas[0] = self.lambda;
        Action::new(lambdas)
    }
}

/// Pacing agent whose emitted parameters are perturbed by [`explore`]. The
/// perturbed `λ₀` becomes the controller's next `λ_prev`.
#[derive(Debug, Clone)]
pub struct ExploringPacer {
    inner: PacingAgent,
    rng: ChaCha8Rng,
    sigma: f64,
}

impl ExploringPacer {
    pub fn new(config: PacingAgentConfig, dim: usize, sigma: f64, seed: u64) -> Self {
        ExploringPacer {
            inner: PacingAgent::new(config, dim),
            rng: ChaCha8Rng::seed_from_u64(seed),
            sigma,
        }
    }
}

impl Policy for ExploringPacer {
    fn act(&mut self, obs: &Observation<'_>) -> Action {
        let base = self.inner.act(obs);
        let cfg = &self.inner.config;
        let out = explore(base, &mut self.rng, self.sigma, cfg.lambda_lo, cfg.lambda_hi);
        self.inner.lambda = out.lambdas[0];
        out
    }
}

const EXPLORE_STREAM: u64 = 0xE4_91_03;
const EPISODE_STREAM: u64 = 0x5E_ED;

/// Seed of the `i`-th logged episode.
pub fn episode_seed(base: u64, i: usize) -> u64 {
    derive_seed(base, EPISODE_STREAM + i as u64)
}

/// Runs `n_trajectories` episodes with every advertiser pacing and keeps the
/// trajectory of one logged advertiser per episode (rotating through the
/// advertisers), optionally wrapped in exploration.
pub fn collect_dataset(
    env_config: &EnvConfig,
    agent_config: &PacingAgentConfig,
    n_trajectories: usize,
    explore_sigma: f64,
) -> Result<TrajectoryDataset> {
    if n_trajectories == 0 {
        return Err(Error::Empty("need at least one trajectory".into()));
    }
    if !(explore_sigma >= 0.0 && explore_sigma.is_finite()) {
        return Err(Error::InvalidConfig("explore sigma must be finite and >= 0".into()));
    }
    agent_config.validate()?;
    let dim = env_config.bidding_mode.action_dim();
    let mut trajectories = Vec::with_capacity(n_trajectories);
    for i in 0..n_trajectories {
        let cfg = EnvConfig {
            seed: episode_seed(env_config.seed, i),
            ..env_config.clone()
        };
        let mut env = Environment::new(cfg)?;
        let logged = i % env_config.n_advertisers;
        let mut policies: Vec<Box<dyn Policy>> = (0..env_config.n_advertisers)
            .map(|k| -> Box<dyn Policy> {
                if k == logged {
                    Box::new(ExploringPacer::new(
                        agent_config.clone(),
                        dim,
                        explore_sigma,
                        derive_seed(env.config().seed, EXPLORE_STREAM),
                    ))
                } else {
                    Box::new(PacingAgent::new(agent_config.clone(), dim))
                }
            })
            .collect();
        let mut trajs = run_episode(&mut env, &mut policies)?;
        trajectories.push(trajs.swap_remove(logged));
    }
    Ok(TrajectoryDataset::new(trajectories))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(remaining_time: f64, remaining_budget: f64) -> BidState {
        BidState {
            remaining_time,
            remaining_budget,
            spend_speed: 0.0,
            realtime_cost_efficiency: 0.0,
            avg_cost_efficiency: 0.0,
        }
    }

    fn cfg(gain: f64) -> PacingAgentConfig {
        PacingAgentConfig {
            lambda_init: 1.0,
            gain,
            lambda_lo: 0.0,
            lambda_hi: 10.0,
            lambda_cpc: 0.0,
        }
    }

    #[test]
    fn on_track_is_fixed_point() {
        assert_eq!(pacing_lambda(&state(0.5, 0.5), 1.3, &cfg(0.4)), 1.3);
    }

    #[test]
    fn overspend_lowers_lambda() {
        // target 0.5 spent, actually 0.75 spent -> e = -0.25
        let l = pacing_lambda(&state(0.5, 0.25), 1.0, &cfg(0.4));
        assert!(l < 1.0);
    }

    #[test]
    fn control_law_value() {
        // e = remaining_budget - remaining_time = 0.25
        let l = pacing_lambda(&state(0.5, 0.75), 1.0, &cfg(0.4));
        assert!((l - 1.1).abs() < 1e-15);
    }

    #[test]
    fn explore_zero_sigma_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Action::new(vec![2.5, 0.3]);
        assert_eq!(explore(a.clone(), &mut rng, 0.0, 0.0, 10.0), a);
    }

    #[test]
    fn explore_respects_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let a = explore(Action::new(vec![5.0]), &mut rng, 2.0, 1.0, 8.0);
            assert!((1.0..=8.0).contains(&a.lambdas[0]));
        }
    }

    #[test]
    fn explore_log_multiplier_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sigma = 0.3;
        let n = 100_000;
        let logs: Vec<f64> = (0..n)
            .map(|_| explore(Action::new(vec![1.0]), &mut rng, sigma, 0.0, f64::INFINITY).lambdas[0].ln())
            .collect();
        let mean = logs.iter().sum::<f64>() / n as f64;
        let var = logs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var.sqrt() / sigma - 1.0).abs() < 0.02, "std {}", var.sqrt());
    }

    #[test]
    fn single_trajectory_dataset() {
        let env = EnvConfig {
            n_advertisers: 4,
            periods: 8,
            ..Default::default()
        };
        let ds = collect_dataset(&env, &PacingAgentConfig::default(), 1, 0.3).unwrap();
        assert_eq!(ds.len(), 1);
        let r = ds.trajectories[0].total_return();
        assert_eq!(ds.return_stats.r_min, r);
        assert_eq!(ds.return_stats.r_max, r);
        ds.trajectories[0].validate().unwrap();
    }
}
