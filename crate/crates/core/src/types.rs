//! Canonical data model: bidding states, actions, trajectories and datasets,
//! plus the min-max feature normalization shared by every model.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of state features.
pub const STATE_DIM: usize = 5;

/// Feature names in storage order.
pub const STATE_FEATURES: [&str; STATE_DIM] = [
    "remaining_time",
    "remaining_budget",
    "spend_speed",
    "realtime_cost_efficiency",
    "avg_cost_efficiency",
];

/// Slack allowed when checking spend against budget.
const BUDGET_SLACK: f64 = 1e-9;

/// Real-time advertising status observed at the start of a period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BidState {
    pub remaining_time: f64,
    pub remaining_budget: f64,
    pub spend_speed: f64,
    pub realtime_cost_efficiency: f64,
    pub avg_cost_efficiency: f64,
}

impl BidState {
    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [
            self.remaining_time,
            self.remaining_budget,
            self.spend_speed,
            self.realtime_cost_efficiency,
            self.avg_cost_efficiency,
        ]
    }

    pub fn from_array(v: [f64; STATE_DIM]) -> Self {
        BidState {
            remaining_time: v[0],
            remaining_budget: v[1],
            spend_speed: v[2],
            realtime_cost_efficiency: v[3],
            avg_cost_efficiency: v[4],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Bidding parameters `(λ₀, …, λ_J)` applied for one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub lambdas: Vec<f64>,
}

impl Action {
    pub fn new(lambdas: Vec<f64>) -> Self {
        Action { lambdas }
    }

    pub fn uniform(dim: usize, lambda: f64) -> Self {
        Action {
            lambdas: vec![lambda; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lambdas.len()
    }

    pub fn clipped(mut self, lo: f64, hi: f64) -> Self {
        for l in &mut self.lambdas {
            *l = l.clamp(lo, hi);
        }
        self
    }

    pub fn is_finite(&self) -> bool {
        self.lambdas.iter().all(|l| l.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub state: BidState,
    pub action: Action,
    /// Value won during the period.
    pub reward: f64,
    /// Money spent during the period (Yuan).
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<StepRecord>,
    pub budget: f64,
    pub constraint_bounds: Vec<f64>,
    pub episode_seed: u64,
    pub advertiser_id: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Total won value, the trajectory return.
    pub fn total_return(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn total_cost(&self) -> f64 {
        self.steps.iter().map(|s| s.cost).sum()
    }

    pub fn costs(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.cost).collect()
    }

    /// States as a `T × D` array.
    pub fn state_matrix(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.steps.len(), STATE_DIM));
        for (t, step) in self.steps.iter().enumerate() {
            for (d, v) in step.state.to_array().into_iter().enumerate() {
                m[[t, d]] = v;
            }
        }
        m
    }

    pub fn action_matrix(&self) -> Array2<f64> {
        let dim = self.steps.first().map_or(0, |s| s.action.dim());
        let mut m = Array2::zeros((self.steps.len(), dim));
        for (t, step) in self.steps.iter().enumerate() {
            for (j, v) in step.action.lambdas.iter().enumerate() {
                m[[t, j]] = *v;
            }
        }
        m
    }

    /// Checks budget feasibility and that every stored `remaining_budget`
    /// matches the one reconstructed from per-step costs.
    pub fn validate(&self) -> Result<()> {
        let mut spent = 0.0;
        for (t, step) in self.steps.iter().enumerate() {
            if !step.state.is_finite() || !step.action.is_finite() {
                return Err(Error::NonFinite(format!("trajectory step {t}")));
            }
            if step.reward < 0.0 || step.cost < 0.0 {
                return Err(Error::CorruptedEpisode(format!(
                    "negative reward or cost at step {t}"
                )));
            }
            let expected = 1.0 - spent / self.budget;
            if (step.state.remaining_budget - expected).abs() > 1e-9 {
                return Err(Error::CorruptedEpisode(format!(
                    "remaining_budget {} at step {t} does not match spend (expected {expected})",
                    step.state.remaining_budget
                )));
            }
            spent += step.cost;
        }
        if spent > self.budget * (1.0 + BUDGET_SLACK) {
            return Err(Error::CorruptedEpisode(format!(
                "spent {spent} exceeds budget {}",
                self.budget
            )));
        }
        Ok(())
    }
}

/// Running totals an episode carries between periods.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EpisodeContext {
    pub period: usize,
    pub total_periods: usize,
    pub spent: f64,
    pub value_won: f64,
    pub last_cost: f64,
    pub last_value: f64,
}

/// Denominator floor and clip applied to cost-per-value features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostEfficiencyGuard {
    pub epsilon: f64,
    pub ce_max: f64,
}

impl Default for CostEfficiencyGuard {
    fn default() -> Self {
        CostEfficiencyGuard {
            epsilon: 1e-6,
            ce_max: 1000.0,
        }
    }
}

impl CostEfficiencyGuard {
    pub fn ratio(&self, cost: f64, value: f64) -> f64 {
        (cost / value.max(self.epsilon)).min(self.ce_max)
    }
}

/// Builds the five state features from the episode's running totals.
///
/// The state at `period` is observed before that period's bids, so
/// `remaining_budget` reflects spend over periods `0..period`.
pub fn compute_state(
    ctx: &EpisodeContext,
    budget: f64,
    guard: &CostEfficiencyGuard,
) -> Result<BidState> {
    if budget <= 0.0 {
        return Err(Error::InvalidConfig(format!("budget must be positive, got {budget}")));
    }
    if ctx.total_periods == 0 || ctx.period >= ctx.total_periods {
        return Err(Error::InvalidConfig(format!(
            "period {} outside [0, {})",
            ctx.period, ctx.total_periods
        )));
    }
    let totals = [ctx.spent, ctx.value_won, ctx.last_cost, ctx.last_value];
    if totals.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("episode context".into()));
    }
    if totals.iter().any(|v| *v < 0.0) {
        return Err(Error::CorruptedEpisode("negative running total".into()));
    }
    if ctx.spent > budget * (1.0 + BUDGET_SLACK) {
        return Err(Error::CorruptedEpisode(format!(
            "spent {} exceeds budget {budget}",
            ctx.spent
        )));
    }
    let t = ctx.total_periods as f64;
    Ok(BidState {
        remaining_time: (t - ctx.period as f64) / t,
        remaining_budget: 1.0 - ctx.spent / budget,
        spend_speed: ctx.last_cost / budget,
        realtime_cost_efficiency: guard.ratio(ctx.last_cost, ctx.last_value),
        avg_cost_efficiency: guard.ratio(ctx.spent, ctx.value_won),
    })
}

/// Per-feature min and max over every state of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub min: [f64; STATE_DIM],
    pub max: [f64; STATE_DIM],
}

impl FeatureStats {
    pub fn from_trajectories<'a>(trajs: impl IntoIterator<Item = &'a Trajectory>) -> Self {
        let mut min = [f64::INFINITY; STATE_DIM];
        let mut max = [f64::NEG_INFINITY; STATE_DIM];
        for traj in trajs {
            for step in &traj.steps {
                for (d, v) in step.state.to_array().into_iter().enumerate() {
                    min[d] = min[d].min(v);
                    max[d] = max[d].max(v);
                }
            }
        }
        for d in 0..STATE_DIM {
            if min[d] > max[d] {
                min[d] = 0.0;
                max[d] = 0.0;
            }
        }
        FeatureStats { min, max }
    }

    /// Maps a feature value into `[−1, 1]`; degenerate features map to 0.
    pub fn normalize_value(&self, d: usize, v: f64) -> f64 {
        let span = self.max[d] - self.min[d];
        if span > 0.0 {
            2.0 * (v - self.min[d]) / span - 1.0
        } else {
            0.0
        }
    }

    pub fn denormalize_value(&self, d: usize, x: f64) -> f64 {
        let span = self.max[d] - self.min[d];
        if span > 0.0 {
            (x + 1.0) * 0.5 * span + self.min[d]
        } else {
            self.min[d]
        }
    }

    pub fn normalize_state(&self, s: &BidState) -> [f64; STATE_DIM] {
        let v = s.to_array();
        std::array::from_fn(|d| self.normalize_value(d, v[d]))
    }

    /// Normalizes a `T × D` matrix of raw states.
    pub fn normalize_matrix(&self, raw: &Array2<f64>) -> Result<Array2<f64>> {
        if raw.ncols() != STATE_DIM {
            return Err(Error::shape(format!("{STATE_DIM} columns"), raw.ncols()));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("state matrix".into()));
        }
        let mut out = raw.clone();
        for ((_, d), v) in out.indexed_iter_mut() {
            *v = self.normalize_value(d, *v);
        }
        Ok(out)
    }

    /// Inverse of [`normalize_matrix`](Self::normalize_matrix); values are
    /// clipped to `[−1, 1]` first.
    pub fn denormalize_matrix(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for ((_, d), v) in out.indexed_iter_mut() {
            *v = self.denormalize_value(d, v.clamp(-1.0, 1.0));
        }
        out
    }
}

/// Normalizes a trajectory's states into a `T × D` array in `[−1, 1]`.
pub fn normalize_trajectory(traj: &Trajectory, stats: &FeatureStats) -> Result<Array2<f64>> {
    stats.normalize_matrix(&traj.state_matrix())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnStats {
    pub r_min: f64,
    pub r_max: f64,
}

impl ReturnStats {
    pub fn from_trajectories<'a>(trajs: impl IntoIterator<Item = &'a Trajectory>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for t in trajs {
            let r = t.total_return();
            lo = lo.min(r);
            hi = hi.max(r);
        }
        if lo > hi {
            (lo, hi) = (0.0, 0.0);
        }
        ReturnStats { r_min: lo, r_max: hi }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub trajectories: Vec<Trajectory>,
    pub feature_stats: FeatureStats,
    pub return_stats: ReturnStats,
}

impl TrajectoryDataset {
    pub fn new(trajectories: Vec<Trajectory>) -> Self {
        let feature_stats = FeatureStats::from_trajectories(&trajectories);
        let return_stats = ReturnStats::from_trajectories(&trajectories);
        TrajectoryDataset {
            trajectories,
            feature_stats,
            return_stats,
        }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Every trajectory normalized with the dataset's own feature stats.
    pub fn normalized_states(&self) -> Result<Vec<Array2<f64>>> {
        self.trajectories
            .iter()
            .map(|t| normalize_trajectory(t, &self.feature_stats))
            .collect()
    }
}
