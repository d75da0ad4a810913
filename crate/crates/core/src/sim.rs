//! Seeded multi-advertiser second-price auction environment.
//!
//! Every episode is a pure function of the config seed and the bids placed:
//! impression streams are drawn from per-period RNG streams keyed on
//! `(seed, period)`, so they do not depend on what the advertisers do.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{compute_state, Action, BidState, CostEfficiencyGuard, EpisodeContext, StepRecord, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BiddingMode {
    /// Budget constraint only; `b = λ₀·v`.
    #[default]
    MaxReturn,
    /// Budget plus a per-advertiser CPC bound `C`; `b = λ₀·v + C·λ₁`.
    TargetCpc,
}

impl BiddingMode {
    /// Number of bidding parameters `J + 1`.
    pub fn action_dim(self) -> usize {
        match self {
            BiddingMode::MaxReturn => 1,
            BiddingMode::TargetCpc => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub n_advertisers: usize,
    pub periods: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub budget_min: f64,
    pub budget_max: f64,
    pub bid_min: f64,
    pub bid_max: f64,
    pub value_max: f64,
    pub price_max: f64,
    pub seed: u64,
    /// Log-space location of impression values.
    pub value_log_mu: f64,
    /// Log-space scale of impression values.
    pub value_log_sigma: f64,
    /// Range of the per-period value multiplier.
    pub scale_min: f64,
    pub scale_max: f64,
    pub bidding_mode: BiddingMode,
    /// Range from which per-advertiser CPC bounds are drawn (Target-CPC only).
    pub cpc_min: f64,
    pub cpc_max: f64,
    pub ce_guard: CostEfficiencyGuard,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            n_advertisers: 30,
            periods: 96,
            n_min: 50,
            n_max: 300,
            budget_min: 1000.0,
            budget_max: 4000.0,
            bid_min: 0.0,
            bid_max: 1000.0,
            value_max: 1.0,
            price_max: 1000.0,
            seed: 0,
            value_log_mu: -1.0,
            value_log_sigma: 0.5,
            scale_min: 0.5,
            scale_max: 1.5,
            bidding_mode: BiddingMode::MaxReturn,
            cpc_min: 5.0,
            cpc_max: 15.0,
            ce_guard: CostEfficiencyGuard::default(),
        }
    }
}

impl EnvConfig {
    /// Default parameters with an impression range of 100–500 per period.
    pub fn wide_traffic() -> Self {
        EnvConfig {
            n_min: 100,
            n_max: 500,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_advertisers == 0 || self.periods == 0 {
            return bad("n_advertisers and periods must be positive");
        }
        if self.n_min == 0 || self.n_min > self.n_max {
            return bad("need 0 < n_min <= n_max");
        }
        if !(self.budget_min > 0.0 && self.budget_min <= self.budget_max) {
            return bad("need 0 < budget_min <= budget_max");
        }
        if !(self.bid_min >= 0.0 && self.bid_min <= self.bid_max && self.bid_max > 0.0) {
            return bad("need 0 <= bid_min <= bid_max, bid_max > 0");
        }
        if !(self.value_max > 0.0 && self.price_max > 0.0) {
            return bad("value_max and price_max must be positive");
        }
        if !(self.value_log_sigma > 0.0 && self.value_log_mu.is_finite()) {
            return bad("value_log_sigma must be positive");
        }
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max) {
            return bad("need 0 < scale_min <= scale_max");
        }
        if self.bidding_mode == BiddingMode::TargetCpc && !(self.cpc_min > 0.0 && self.cpc_min <= self.cpc_max) {
            return bad("need 0 < cpc_min <= cpc_max");
        }
        Ok(())
    }
}

/// One period's impression opportunities. `values` is row-major
/// `count × n_advertisers`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpressionBatch {
    pub period: usize,
    pub n_advertisers: usize,
    pub values: Vec<f64>,
}

impl ImpressionBatch {
    pub fn len(&self) -> usize {
        self.values.len() / self.n_advertisers.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn impression(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_advertisers..(i + 1) * self.n_advertisers]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuctionOutcome {
    pub winner: Option<usize>,
    pub price: f64,
    pub winning_bid: f64,
    pub winner_value: f64,
}

/// Single-slot second-price auction with reserve 0. Ties go to the lowest
/// index; a lone positive bidder pays 0; all-zero bids leave the impression
/// unsold.
pub fn run_auction(bids: &[f64], values: &[f64]) -> AuctionOutcome {
    run_auction_masked(bids, values, |_| true)
}

fn run_auction_masked(bids: &[f64], values: &[f64], active: impl Fn(usize) -> bool) -> AuctionOutcome {
    let mut best: Option<usize> = None;
    let mut second = 0.0_f64;
    for (k, &b) in bids.iter().enumerate() {
        if b <= 0.0 || !active(k) {
            continue;
        }
        match best {
            Some(w) if b <= bids[w] => second = second.max(b),
            Some(w) => {
                second = second.max(bids[w]);
                best = Some(k);
            }
            None => best = Some(k),
        }
    }
    match best {
        Some(w) => AuctionOutcome {
            winner: Some(w),
            price: second,
            winning_bid: bids[w],
            winner_value: values.get(w).copied().unwrap_or(0.0),
        },
        None => AuctionOutcome {
            winner: None,
            price: 0.0,
            winning_bid: 0.0,
            winner_value: 0.0,
        },
    }
}

/// Per-advertiser result of one period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodOutcome {
    pub cost: f64,
    pub value: f64,
    pub state: BidState,
}

/// An impression as seen by one tracked advertiser with competitors frozen:
/// its own value and the price it would pay to win.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandscapeItem {
    pub period: usize,
    pub value: f64,
    pub price: f64,
}

/// Mixes a seed with a stream index (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const BUDGET_STREAM: u64 = 0xB0D6_E7;
const PERIOD_STREAM: u64 = 0x1000;

#[derive(Debug, Clone)]
pub struct Environment {
    config: EnvConfig,
    budgets: Vec<f64>,
    cpc_bounds: Vec<f64>,
    contexts: Vec<EpisodeContext>,
    period: usize,
    tracked: Option<usize>,
    landscape: Vec<LandscapeItem>,
    auctions: Vec<AuctionOutcome>,
    record_auctions: bool,
}

impl Environment {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, BUDGET_STREAM));
        let budgets = (0..config.n_advertisers)
            .map(|_| rng.random_range(config.budget_min..=config.budget_max))
            .collect();
        let cpc_bounds = (0..config.n_advertisers)
            .map(|_| match config.bidding_mode {
                BiddingMode::MaxReturn => 0.0,
                BiddingMode::TargetCpc => rng.random_range(config.cpc_min..=config.cpc_max),
            })
            .collect();
        let contexts = vec![
            EpisodeContext {
                total_periods: config.periods,
                ..Default::default()
            };
            config.n_advertisers
        ];
        Ok(Environment {
            config,
            budgets,
            cpc_bounds,
            contexts,
            period: 0,
            tracked: None,
            landscape: Vec::new(),
            auctions: Vec::new(),
            record_auctions: false,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn budgets(&self) -> &[f64] {
        &self.budgets
    }

    pub fn cpc_bounds(&self) -> &[f64] {
        &self.cpc_bounds
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn is_finished(&self) -> bool {
        self.period >= self.config.periods
    }

    pub fn spent(&self, advertiser: usize) -> f64 {
        self.contexts[advertiser].spent
    }

    pub fn value_won(&self, advertiser: usize) -> f64 {
        self.contexts[advertiser].value_won
    }

    /// Overrides one advertiser's budget; only valid before the first step.
    pub fn set_budget(&mut self, advertiser: usize, budget: f64) -> Result<()> {
        if self.period != 0 {
            return Err(Error::InvalidConfig("budgets are fixed once the episode starts".into()));
        }
        if !(budget > 0.0) || advertiser >= self.budgets.len() {
            return Err(Error::InvalidConfig(format!("bad budget override {budget} for {advertiser}")));
        }
        self.budgets[advertiser] = budget;
        Ok(())
    }

    /// Records the frozen price landscape for one advertiser.
    pub fn track_landscape(&mut self, advertiser: usize) {
        self.tracked = Some(advertiser);
    }

    pub fn landscape(&self) -> &[LandscapeItem] {
        &self.landscape
    }

    /// Keeps every auction outcome for later inspection.
    pub fn record_auctions(&mut self, on: bool) {
        self.record_auctions = on;
    }

    pub fn auctions(&self) -> &[AuctionOutcome] {
        &self.auctions
    }

    pub fn state(&self, advertiser: usize) -> Result<BidState> {
        let mut ctx = self.contexts[advertiser];
        ctx.period = self.period.min(self.config.periods - 1);
        compute_state(&ctx, self.budgets[advertiser], &self.config.ce_guard)
    }

    /// Draws the impressions of `period`. Depends only on `(seed, period)`.
    pub fn sample_impressions(&self, period: usize) -> ImpressionBatch {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, PERIOD_STREAM + period as u64));
        let count = rng.random_range(cfg.n_min..=cfg.n_max);
        let scale = rng.random_range(cfg.scale_min..=cfg.scale_max);
        let normal = Normal::new(cfg.value_log_mu, cfg.value_log_sigma).expect("validated sigma");
        let a = cfg.n_advertisers;
        let mut values = Vec::with_capacity(count * a);
        for _ in 0..count * a {
            // Truncate to [0, value_max] by rejection.
            let v = loop {
                let v = scale * normal.sample(&mut rng).exp();
                if v <= cfg.value_max {
                    break v;
                }
            };
            values.push(v);
        }
        ImpressionBatch {
            period,
            n_advertisers: a,
            values,
        }
    }

    fn bid(&self, advertiser: usize, action: &Action, value: f64) -> f64 {
        let raw = match self.config.bidding_mode {
            BiddingMode::MaxReturn => action.lambdas[0] * value,
            BiddingMode::TargetCpc => action.lambdas[0] * value + self.cpc_bounds[advertiser] * action.lambdas[1],
        };
        raw.clamp(self.config.bid_min, self.config.bid_max.min(self.config.price_max))
    }

    /// Runs one period with one action per advertiser and returns each
    /// advertiser's cost, value and next state.
    pub fn step(&mut self, actions: &[Action]) -> Result<Vec<PeriodOutcome>> {
        if self.is_finished() {
            return Err(Error::InvalidConfig("episode already finished".into()));
        }
        let a = self.config.n_advertisers;
        if actions.len() != a {
            return Err(Error::shape(format!("{a} actions"), actions.len()));
        }
        let dim = self.config.bidding_mode.action_dim();
        for (k, act) in actions.iter().enumerate() {
            if act.dim() != dim {
                return Err(Error::shape(format!("{dim} bidding parameters"), act.dim()));
            }
            if !act.is_finite() {
                return Err(Error::PolicyFault {
                    advertiser: k,
                    period: self.period,
                });
            }
        }

        let batch = self.sample_impressions(self.period);
        let mut remaining: Vec<f64> = (0..a).map(|k| self.budgets[k] - self.contexts[k].spent).collect();
        let mut cost = vec![0.0; a];
        let mut value = vec![0.0; a];
        let mut bids = vec![0.0; a];
        let mut excluded = vec![false; a];

        for i in 0..batch.len() {
            let vals = batch.impression(i);
            for k in 0..a {
                bids[k] = self.bid(k, &actions[k], vals[k]);
            }
            excluded.iter_mut().for_each(|e| *e = false);
            let outcome = loop {
                let out = run_auction_masked(&bids, vals, |k| !excluded[k]);
                match out.winner {
                    Some(w) if remaining[w] < out.price => excluded[w] = true,
                    _ => break out,
                }
            };
            if let Some(w) = outcome.winner {
                remaining[w] -= outcome.price;
                cost[w] += outcome.price;
                value[w] += outcome.winner_value;
            }
            if let Some(tr) = self.tracked {
                let price = (0..a)
                    .filter(|&k| k != tr && !excluded[k])
                    .map(|k| bids[k])
                    .fold(0.0, f64::max);
                self.landscape.push(LandscapeItem {
                    period: self.period,
                    value: vals[tr],
                    price,
                });
            }
            if self.record_auctions {
                self.auctions.push(outcome);
            }
        }

        self.period += 1;
        let mut out = Vec::with_capacity(a);
        for k in 0..a {
            let ctx = &mut self.contexts[k];
            ctx.spent += cost[k];
            ctx.value_won += value[k];
            ctx.last_cost = cost[k];
            ctx.last_value = value[k];
            let mut c = *ctx;
            c.period = self.period.min(self.config.periods - 1);
            out.push(PeriodOutcome {
                cost: cost[k],
                value: value[k],
                state: compute_state(&c, self.budgets[k], &self.config.ce_guard)?,
            });
        }
        Ok(out)
    }
}

/// What a policy sees when asked for the next period's bidding parameters.
#[derive(Debug)]
pub struct Observation<'a> {
    pub advertiser: usize,
    pub period: usize,
    pub periods: usize,
    pub budget: f64,
    /// States `s_0..=s_t` observed so far.
    pub history: &'a [BidState],
    /// Actions `a_0..a_{t-1}` already taken.
    pub past_actions: &'a [Action],
}

pub trait Policy {
    fn act(&mut self, obs: &Observation<'_>) -> Action;
}

impl<F> Policy for F
where
    F: FnMut(&Observation<'_>) -> Action,
{
    fn act(&mut self, obs: &Observation<'_>) -> Action {
        self(obs)
    }
}

/// Fixed bidding parameters for the whole episode.
#[derive(Debug, Clone)]
pub struct FixedPolicy(pub Action);

impl Policy for FixedPolicy {
    fn act(&mut self, _obs: &Observation<'_>) -> Action {
        self.0.clone()
    }
}

/// Plays one full episode; returns one trajectory per advertiser.
pub fn run_episode(env: &mut Environment, policies: &mut [Box<dyn Policy + '_>]) -> Result<Vec<Trajectory>> {
    let a = env.config.n_advertisers;
    if policies.len() != a {
        return Err(Error::shape(format!("{a} policies"), policies.len()));
    }
    let periods = env.config.periods;
    let mut histories: Vec<Vec<BidState>> = (0..a).map(|k| env.state(k).map(|s| vec![s])).collect::<Result<_>>()?;
    let mut actions_taken: Vec<Vec<Action>> = vec![Vec::with_capacity(periods); a];
    let mut steps: Vec<Vec<StepRecord>> = vec![Vec::with_capacity(periods); a];

    for t in 0..periods {
        let mut actions = Vec::with_capacity(a);
        for (k, policy) in policies.iter_mut().enumerate() {
            let obs = Observation {
                advertiser: k,
                period: t,
                periods,
                budget: env.budgets[k],
                history: &histories[k],
                past_actions: &actions_taken[k],
            };
            let act = policy.act(&obs);
            if !act.is_finite() {
                return Err(Error::PolicyFault { advertiser: k, period: t });
            }
            actions.push(act);
        }
        let outcomes = env.step(&actions)?;
        for (k, (out, act)) in outcomes.into_iter().zip(actions).enumerate() {
            steps[k].push(StepRecord {
                state: *histories[k].last().expect("history starts non-empty"),
                action: act.clone(),
                reward: out.value,
                cost: out.cost,
            });
            actions_taken[k].push(act);
            if t + 1 < periods {
                histories[k].push(out.state);
            }
        }
    }

    Ok(steps
        .into_iter()
        .enumerate()
        .map(|(k, steps)| Trajectory {
            steps,
            budget: env.budgets[k],
            constraint_bounds: match env.config.bidding_mode {
                BiddingMode::MaxReturn => Vec::new(),
                BiddingMode::TargetCpc => vec![env.cpc_bounds[k]],
            },
            episode_seed: env.config.seed,
            advertiser_id: k,
        })
        .collect())
}

/// Order-sensitive digest over every number in a set of trajectories.
pub fn episode_digest(trajs: &[Trajectory]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    for t in trajs {
        h.update(&t.budget.to_bits().to_le_bytes());
        h.update(&(t.advertiser_id as u64).to_le_bytes());
        for s in &t.steps {
            for v in s.state.to_array() {
                h.update(&v.to_bits().to_le_bytes());
            }
            for l in &s.action.lambdas {
                h.update(&l.to_bits().to_le_bytes());
            }
            h.update(&s.reward.to_bits().to_le_bytes());
            h.update(&s.cost.to_bits().to_le_bytes());
        }
    }
    h.finalize()
}
