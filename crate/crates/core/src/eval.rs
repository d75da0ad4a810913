//! Policy evaluation: the DiffBid planning policy, paired-seed episodes per
//! budget, hindsight-oracle reference values, and the training pipeline that
//! produces a policy bundle from logged data.

use log::warn;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{PacingAgent, PacingAgentConfig};
use crate::conditions::{ConditionLabeler, ConditionLayout, ConditionThresholds, ConditionVector};
use crate::denoiser::{train_denoiser, DenoiserConfig, DenoiserParams, TrainHyper, TrainReport};
use crate::error::{Error, Result};
use crate::invdyn::{train_invdyn, InvDynConfig, InvDynHyper, InvDynParams, InvDynReport};
use crate::oracle::hindsight_oracle;
use crate::sampler::{generate_trajectory, SamplerConfig};
use crate::schedule::NoiseSchedule;
use crate::sim::{derive_seed, run_episode, EnvConfig, Environment, FixedPolicy, Observation, Policy};
use crate::types::{Action, FeatureStats, Trajectory, TrajectoryDataset};

/// Everything a DiffBid policy needs at decision time.
#[derive(Debug, Clone)]
pub struct PolicyBundle {
    pub denoiser: DenoiserParams,
    pub schedule: NoiseSchedule,
    pub invdyn: InvDynParams,
    pub sampler: SamplerConfig,
    pub labeler: ConditionLabeler,
    pub feature_stats: FeatureStats,
    pub horizon: usize,
    /// λ used before any successful plan.
    pub fallback_lambda: Vec<f64>,
}

impl PolicyBundle {
    pub fn layout(&self) -> &ConditionLayout {
        &self.labeler.layout
    }

    pub fn validate(&self) -> Result<()> {
        if self.denoiser.config().cond_dim != self.labeler.layout.len() {
            return Err(Error::InvalidConfig(format!(
                "denoiser expects {} condition slots, layout has {}",
                self.denoiser.config().cond_dim,
                self.labeler.layout.len()
            )));
        }
        if self.invdyn.net.state_dim != self.denoiser.config().state_dim {
            return Err(Error::InvalidConfig("denoiser and inverse dynamics disagree on state width".into()));
        }
        if self.fallback_lambda.len() != self.invdyn.net.action_dim {
            return Err(Error::shape(format!("{} fallback parameters", self.invdyn.net.action_dim), self.fallback_lambda.len()));
        }
        self.sampler.validate()
    }
}

/// Per-period planner: regenerate the state trajectory from the observed
/// history, read off the next state, and map it to λ with inverse dynamics.
pub struct DiffBidPolicy<'a> {
    bundle: &'a PolicyBundle,
    condition: Option<Vec<f64>>,
    replan_every: usize,
    rng: ChaCha8Rng,
    last: Vec<f64>,
    plan: Option<(usize, Array2<f64>)>,
    failures: usize,
}

impl<'a> DiffBidPolicy<'a> {
    pub fn new(bundle: &'a PolicyBundle, condition: &ConditionVector, replan_every: usize, seed: u64) -> Result<Self> {
        bundle.validate()?;
        if condition.layout != bundle.labeler.layout {
            return Err(Error::LayoutMismatch {
                expected: bundle.labeler.layout.hash(),
                got: condition.layout.hash(),
            });
        }
        Ok(DiffBidPolicy {
            bundle,
            condition: condition.as_input(),
            replan_every: replan_every.max(1),
            rng: ChaCha8Rng::seed_from_u64(seed),
            last: bundle.fallback_lambda.clone(),
            plan: None,
            failures: 0,
        })
    }

    /// Generation or prediction failures so far (each fell back to the last λ).
    pub fn failures(&self) -> usize {
        self.failures
    }

    fn decide(&mut self, obs: &Observation<'_>) -> Result<Option<Vec<f64>>> {
        let b = self.bundle;
        let t = obs.period;
        if t + 1 >= b.horizon {
            return Ok(None);
        }
        let hist = Array2::from_shape_fn((obs.history.len(), crate::types::STATE_DIM), |(i, d)| {
            b.feature_stats.normalize_value(d, obs.history[i].to_array()[d])
        });
        let stale = match &self.plan {
            Some((t0, _)) => t - t0 >= self.replan_every,
            None => true,
        };
        if stale {
            let plan = generate_trajectory(
                &b.denoiser,
                &b.schedule,
                hist.view(),
                b.horizon,
                self.condition.as_deref(),
                &b.sampler,
                &mut self.rng,
            )?;
            self.plan = Some((t, plan));
        }
        let (_, plan) = self.plan.as_ref().expect("plan set above");
        let out = crate::invdyn::predict_action(&b.invdyn, hist.view(), plan.row(t + 1))?;
        Ok(Some(b.invdyn.compose(&out, &self.last)))
    }
}

impl Policy for DiffBidPolicy<'_> {
    fn act(&mut self, obs: &Observation<'_>) -> Action {
        match self.decide(obs) {
            Ok(Some(l)) if l.iter().all(|v| v.is_finite()) => self.last = l,
            Ok(_) => {}
            Err(e) => {
                self.failures += 1;
                self.plan = None;
                warn!("period {}: planning failed ({e}); holding last bidding parameters", obs.period);
            }
        }
        Action::new(self.last.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub budgets: Vec<f64>,
    pub n_runs: usize,
    pub top_k: usize,
    pub target_advertiser: usize,
    pub seed_base: u64,
    /// Periods between full regenerations of the plan.
    pub replan_every: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            budgets: vec![1500.0, 2000.0, 2500.0, 3000.0],
            n_runs: 50,
            top_k: 5,
            target_advertiser: 0,
            seed_base: 1_000_000,
            replan_every: 1,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self, env: &EnvConfig) -> Result<()> {
        if self.budgets.is_empty() || self.budgets.iter().any(|b| !(*b > 0.0)) {
            return Err(Error::InvalidConfig("budgets must be non-empty and positive".into()));
        }
        if self.n_runs == 0 || self.top_k == 0 || self.top_k > self.n_runs {
            return Err(Error::InvalidConfig(format!("need 1 <= top_k ({}) <= n_runs ({})", self.top_k, self.n_runs)));
        }
        if self.target_advertiser >= env.n_advertisers {
            return Err(Error::InvalidConfig(format!("target advertiser {} out of range", self.target_advertiser)));
        }
        Ok(())
    }

    pub fn run_seed(&self, run: usize) -> u64 {
        derive_seed(self.seed_base, run as u64)
    }
}

/// Mean of the `k` largest scores.
pub fn top_k_mean(scores: &[f64], k: usize) -> f64 {
    let mut s = scores.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    let k = k.min(s.len()).max(1);
    s[..k].iter().sum::<f64>() / k as f64
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

#[derive(Debug, Clone, Serialize)]
pub struct EpisodeOutcome {
    pub budget: f64,
    pub run: usize,
    pub seed: u64,
    pub score: f64,
    pub cost: f64,
    pub failed: bool,
    /// Greedy oracle value on the landscape this episode actually faced.
    pub own_oracle: f64,
    #[serde(skip)]
    pub trajectory: Option<Trajectory>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetMetrics {
    pub budget: f64,
    pub top_k_score: f64,
    pub mean_score: f64,
    pub std_score: f64,
    pub mean_cost: f64,
    /// Oracle value on the reference landscape with the target absent.
    pub oracle: f64,
    /// Mean over runs of score / own-landscape oracle.
    pub oracle_ratio: f64,
    pub failed_runs: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalResult {
    pub rows: Vec<BudgetMetrics>,
    pub episodes: Vec<EpisodeOutcome>,
}

impl EvalResult {
    pub fn row(&self, budget: f64) -> Option<&BudgetMetrics> {
        self.rows.iter().find(|r| r.budget == budget)
    }
}

fn competitors<'p>(env: &EnvConfig, agent: &PacingAgentConfig, target: usize, policy: Box<dyn Policy + 'p>) -> Vec<Box<dyn Policy + 'p>> {
    let dim = env.bidding_mode.action_dim();
    let mut policy = Some(policy);
    (0..env.n_advertisers)
        .map(|k| -> Box<dyn Policy + 'p> {
            if k == target {
                policy.take().expect("one target")
            } else {
                Box::new(PacingAgent::new(agent.clone(), dim))
            }
        })
        .collect()
}

/// Greedy oracle values per run on landscapes recorded with the target
/// bidding zero, so they depend only on the competitors.
pub fn reference_oracles(env_cfg: &EnvConfig, agent: &PacingAgentConfig, eval: &EvalConfig) -> Result<Vec<Vec<(f64, f64)>>> {
    let dim = env_cfg.bidding_mode.action_dim();
    (0..eval.n_runs)
        .map(|r| {
            let mut env = Environment::new(EnvConfig {
                seed: eval.run_seed(r),
                ..env_cfg.clone()
            })?;
            env.track_landscape(eval.target_advertiser);
            let mut pols = competitors(env_cfg, agent, eval.target_advertiser, Box::new(FixedPolicy(Action::uniform(dim, 0.0))));
            run_episode(&mut env, &mut pols)?;
            Ok(env.landscape().iter().map(|l| (l.value, l.price)).collect())
        })
        .collect()
}

/// Runs `n_runs` paired-seed episodes per budget with the target driven by
/// `make_policy(budget, run)` and every other advertiser pacing.
pub fn evaluate_with<'p, F>(env_cfg: &EnvConfig, agent: &PacingAgentConfig, eval: &EvalConfig, keep_trajectories: bool, mut make_policy: F) -> Result<EvalResult>
where
    F: FnMut(f64, usize) -> Result<Box<dyn Policy + 'p>>,
{
    eval.validate(env_cfg)?;
    let references = reference_oracles(env_cfg, agent, eval)?;
    let mut rows = Vec::new();
    let mut episodes = Vec::new();
    for &budget in &eval.budgets {
        let mut scores = Vec::with_capacity(eval.n_runs);
        let mut ratios = Vec::with_capacity(eval.n_runs);
        let mut costs = Vec::with_capacity(eval.n_runs);
        let mut failed = 0;
        for run in 0..eval.n_runs {
            let seed = eval.run_seed(run);
            let outcome = (|| -> Result<(Trajectory, f64)> {
                let mut env = Environment::new(EnvConfig {
                    seed,
                    ..env_cfg.clone()
                })?;
                env.set_budget(eval.target_advertiser, budget)?;
                env.track_landscape(eval.target_advertiser);
                let policy = make_policy(budget, run)?;
                let mut pols = competitors(env_cfg, agent, eval.target_advertiser, policy);
                let mut trajs = run_episode(&mut env, &mut pols)?;
                let items: Vec<(f64, f64)> = env.landscape().iter().map(|l| (l.value, l.price)).collect();
                Ok((trajs.swap_remove(eval.target_advertiser), hindsight_oracle(&items, budget).total_value))
            })();
            let ep = match outcome {
                Ok((traj, own_oracle)) => EpisodeOutcome {
                    budget,
                    run,
                    seed,
                    score: traj.total_return(),
                    cost: traj.total_cost(),
                    failed: false,
                    own_oracle,
                    trajectory: keep_trajectories.then_some(traj),
                },
                Err(e) => {
                    warn!("budget {budget} run {run} failed: {e}; scored 0");
                    failed += 1;
                    EpisodeOutcome {
                        budget,
                        run,
                        seed,
                        score: 0.0,
                        cost: 0.0,
                        failed: true,
                        own_oracle: 0.0,
                        trajectory: None,
                    }
                }
            };
            scores.push(ep.score);
            costs.push(ep.cost);
            ratios.push(if ep.own_oracle > 0.0 { ep.score / ep.own_oracle } else { 0.0 });
            episodes.push(ep);
        }
        let (mean_score, std_score) = mean_std(&scores);
        let oracle = references.iter().map(|items| hindsight_oracle(items, budget).total_value).sum::<f64>() / references.len() as f64;
        rows.push(BudgetMetrics {
            budget,
            top_k_score: top_k_mean(&scores, eval.top_k),
            mean_score,
            std_score,
            mean_cost: mean_std(&costs).0,
            oracle,
            oracle_ratio: mean_std(&ratios).0,
            failed_runs: failed,
        });
    }
    Ok(EvalResult { rows, episodes })
}

/// Evaluates the DiffBid policy of `bundle` under `condition`.
pub fn evaluate(bundle: &PolicyBundle, condition: &ConditionVector, env_cfg: &EnvConfig, agent: &PacingAgentConfig, eval: &EvalConfig) -> Result<EvalResult> {
    bundle.validate()?;
    evaluate_with(env_cfg, agent, eval, false, |budget, run| {
        let seed = derive_seed(eval.run_seed(run), budget.to_bits());
        Ok(Box::new(DiffBidPolicy::new(bundle, condition, eval.replan_every, seed)?) as Box<dyn Policy>)
    })
}

/// Evaluates the pacing behavior policy itself as the target.
pub fn evaluate_pacing(env_cfg: &EnvConfig, agent: &PacingAgentConfig, eval: &EvalConfig) -> Result<EvalResult> {
    let dim = env_cfg.bidding_mode.action_dim();
    evaluate_with(env_cfg, agent, eval, false, |_, _| Ok(Box::new(PacingAgent::new(agent.clone(), dim)) as Box<dyn Policy>))
}

/// Model-side settings of the training pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub gamma: f64,
    pub cosine_squared: bool,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            steps: 20,
            gamma: 0.008,
            cosine_squared: false,
        }
    }
}

impl DiffusionConfig {
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::cosine(self.steps, self.gamma, self.cosine_squared)
    }
}

#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub denoiser: TrainReport,
    pub invdyn: InvDynReport,
}

/// Normalized state matrices and action matrices of a dataset.
pub fn dataset_arrays(ds: &TrajectoryDataset) -> Result<(Vec<Array2<f64>>, Vec<Array2<f64>>)> {
    let states = ds.normalized_states()?;
    let actions = ds.trajectories.iter().map(|t| t.action_matrix()).collect();
    Ok((states, actions))
}

/// Inverse dynamics only, for ablations that reuse a denoiser.
pub fn fit_invdyn(ds: &TrajectoryDataset, config: &InvDynConfig, hyper: &InvDynHyper) -> Result<(InvDynParams, InvDynReport)> {
    let (states, actions) = dataset_arrays(ds)?;
    train_invdyn(&states, &actions, config, hyper)
}

/// Trains both models on a logged dataset and assembles a bundle.
#[allow(clippy::too_many_arguments)]
pub fn train_bundle(
    ds: &TrajectoryDataset,
    layout: &ConditionLayout,
    thresholds: &ConditionThresholds,
    diffusion: &DiffusionConfig,
    denoiser: &DenoiserConfig,
    hyper: &TrainHyper,
    invdyn: &InvDynConfig,
    invdyn_hyper: &InvDynHyper,
    sampler: &SamplerConfig,
) -> Result<(PolicyBundle, PipelineReport)> {
    if ds.trajectories.is_empty() {
        return Err(Error::Empty("dataset has no trajectories".into()));
    }
    let labeler = ConditionLabeler::fit(layout, &ds.trajectories, thresholds)?;
    let conds: Vec<Vec<f64>> = ds.trajectories.iter().map(|t| labeler.label(t)).collect::<Result<_>>()?;
    let (states, actions) = dataset_arrays(ds)?;
    let schedule = diffusion.schedule()?;
    let dcfg = DenoiserConfig {
        cond_dim: layout.len(),
        ..denoiser.clone()
    };
    let (den, drep) = train_denoiser(&states, &conds, &schedule, &dcfg, hyper)?;
    let (inv, irep) = train_invdyn(&states, &actions, invdyn, invdyn_hyper)?;
    let bundle = assemble_bundle(ds, layout, thresholds, den, schedule, inv, sampler)?;
    Ok((
        bundle,
        PipelineReport {
            denoiser: drep,
            invdyn: irep,
        },
    ))
}

/// Builds a bundle from separately trained models and the dataset they were
/// trained on. The fallback λ is the mean first action of the dataset.
pub fn assemble_bundle(
    ds: &TrajectoryDataset,
    layout: &ConditionLayout,
    thresholds: &ConditionThresholds,
    denoiser: DenoiserParams,
    schedule: NoiseSchedule,
    invdyn: InvDynParams,
    sampler: &SamplerConfig,
) -> Result<PolicyBundle> {
    if ds.trajectories.is_empty() {
        return Err(Error::Empty("dataset has no trajectories".into()));
    }
    let labeler = ConditionLabeler::fit(layout, &ds.trajectories, thresholds)?;
    let horizon = ds.trajectories[0].len();
    let dim = ds.trajectories[0].steps[0].action.dim();
    let mut fallback_lambda = vec![0.0; dim];
    for t in &ds.trajectories {
        for (f, l) in fallback_lambda.iter_mut().zip(&t.steps[0].action.lambdas) {
            *f += l / ds.len() as f64;
        }
    }
    let bundle = PolicyBundle {
        denoiser,
        schedule,
        invdyn,
        sampler: sampler.clone(),
        labeler,
        feature_stats: ds.feature_stats,
        horizon,
        fallback_lambda,
    };
    bundle.validate()?;
    Ok(bundle)
}
