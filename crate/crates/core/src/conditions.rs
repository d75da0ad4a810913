//! Condition vectors: normalized return plus binary constraint and feedback
//! indicators, in a fixed named layout.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ReturnStats, Trajectory};

pub const SLOT_RETURN: &str = "return";
pub const SLOT_CPC: &str = "cpc_ok";
pub const SLOT_SMOOTHNESS: &str = "smoothness_ok";
pub const SLOT_EARLY_SPEND: &str = "early_spend_ok";

pub const KNOWN_SLOTS: [&str; 4] = [SLOT_RETURN, SLOT_CPC, SLOT_SMOOTHNESS, SLOT_EARLY_SPEND];

/// Ordered slot names of a condition vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConditionLayout {
    pub slots: Vec<String>,
}

impl Default for ConditionLayout {
    fn default() -> Self {
        ConditionLayout {
            slots: vec![SLOT_RETURN.to_string()],
        }
    }
}

impl ConditionLayout {
    pub fn new<S: AsRef<str>>(slots: &[S]) -> Result<Self> {
        let slots: Vec<String> = slots.iter().map(|s| s.as_ref().to_string()).collect();
        if slots.is_empty() {
            return Err(Error::InvalidConfig("condition layout needs at least one slot".into()));
        }
        for (i, s) in slots.iter().enumerate() {
            if !KNOWN_SLOTS.contains(&s.as_str()) {
                return Err(Error::UnknownCondition(s.clone()));
            }
            if slots[..i].contains(s) {
                return Err(Error::InvalidConfig(format!("duplicate condition slot `{s}`")));
            }
        }
        Ok(ConditionLayout { slots })
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.slots.iter().position(|s| s == name)
    }

    /// FNV-1a over the slot names, stored in checkpoints.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for s in &self.slots {
            for b in s.bytes().chain(std::iter::once(0u8)) {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionVector {
    pub layout: ConditionLayout,
    pub values: Vec<f64>,
    pub present: Vec<bool>,
}

impl ConditionVector {
    /// Network input: `None` (null token) when no slot is set; otherwise the
    /// values with unset slots at 0.
    pub fn as_input(&self) -> Option<Vec<f64>> {
        if !self.present.iter().any(|p| *p) {
            return None;
        }
        Some(
            self.values
                .iter()
                .zip(&self.present)
                .map(|(v, p)| if *p { *v } else { 0.0 })
                .collect(),
        )
    }
}

/// `(R − R_min)/(R_max − R_min)` clipped to `[0, 1]`; 0 when the range is empty.
pub fn normalized_return(r: f64, r_min: f64, r_max: f64) -> f64 {
    if !(r_max > r_min) {
        warn!("return range is empty (R_min = R_max = {r_min}); normalized return set to 0");
        return 0.0;
    }
    ((r - r_min) / (r_max - r_min)).clamp(0.0, 1.0)
}

/// `1` iff `x ≤ c`.
pub fn binary_indicator(x: f64, c: f64) -> f64 {
    if x <= c {
        1.0
    } else {
        0.0
    }
}

/// Raw cost per unit of won value, `None` when nothing was won.
pub fn cpc_raw(traj: &Trajectory) -> Option<f64> {
    let v = traj.total_return();
    let c = traj.total_cost();
    if v > 0.0 {
        Some(c / v)
    } else {
        None
    }
}

/// Frozen min-max normalizer for the raw CPC statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpcNormalizer {
    pub min: f64,
    pub max: f64,
}

impl CpcNormalizer {
    pub fn from_trajectories<'a>(trajs: impl IntoIterator<Item = &'a Trajectory>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for r in trajs.into_iter().filter_map(cpc_raw) {
            lo = lo.min(r);
            hi = hi.max(r);
        }
        if lo > hi {
            (lo, hi) = (0.0, 0.0);
        }
        CpcNormalizer { min: lo, max: hi }
    }

    pub fn normalize(&self, raw: f64) -> f64 {
        if self.max > self.min {
            ((raw - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }

    /// Normalized CPC of a trajectory and whether it was flagged (no value won,
    /// reported as the normalized maximum).
    pub fn statistic(&self, traj: &Trajectory) -> (f64, bool) {
        match cpc_raw(traj) {
            Some(r) => (self.normalize(r), false),
            None => (1.0, true),
        }
    }
}

/// `Σ_{t≥1} |c_t − c_{t−1}| / T`.
pub fn smoothness_statistic(costs: &[f64]) -> Result<f64> {
    if costs.len() < 2 {
        return Err(Error::InvalidConfig("smoothness needs at least two periods".into()));
    }
    let s: f64 = costs.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    Ok(s / costs.len() as f64)
}

/// Share of total cost spent in the first `⌊T/2⌋` periods; 0.5 (flagged)
/// when nothing was spent.
pub fn early_spend_statistic(costs: &[f64]) -> (f64, bool) {
    let total: f64 = costs.iter().sum();
    if !(total > 0.0) {
        return (0.5, true);
    }
    let early: f64 = costs[..costs.len() / 2].iter().sum();
    (early / total, false)
}

/// Builds a condition vector from an optional return value and named
/// indicators. Slots not mentioned stay unset.
pub fn compose_condition(layout: &ConditionLayout, ret: Option<f64>, indicators: &[(&str, f64)]) -> Result<ConditionVector> {
    let mut values = vec![0.0; layout.len()];
    let mut present = vec![false; layout.len()];
    if let Some(r) = ret {
        let i = layout.index(SLOT_RETURN).ok_or_else(|| Error::UnknownCondition(SLOT_RETURN.into()))?;
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::InvalidConfig(format!("normalized return must be in [0, 1], got {r}")));
        }
        values[i] = r;
        present[i] = true;
    }
    for &(name, v) in indicators {
        if name == SLOT_RETURN || !KNOWN_SLOTS.contains(&name) {
            return Err(Error::UnknownCondition(name.into()));
        }
        let i = layout.index(name).ok_or_else(|| Error::UnknownCondition(name.into()))?;
        if v != 0.0 && v != 1.0 {
            return Err(Error::InvalidConfig(format!("indicator `{name}` must be 0 or 1, got {v}")));
        }
        values[i] = v;
        present[i] = true;
    }
    Ok(ConditionVector {
        layout: layout.clone(),
        values,
        present,
    })
}

/// Thresholds for the indicator slots; `None` uses the dataset median.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionThresholds {
    /// Normalized CPC threshold used when a trajectory carries no bound.
    pub cpc: Option<f64>,
    pub smoothness: Option<f64>,
    pub early_spend: Option<f64>,
}

/// Everything needed to label trajectories consistently at train and
/// generation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionLabeler {
    pub layout: ConditionLayout,
    pub return_stats: ReturnStats,
    pub cpc: CpcNormalizer,
    pub cpc_threshold: f64,
    pub smoothness_threshold: f64,
    pub early_spend_threshold: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl ConditionLabeler {
    pub fn fit(layout: &ConditionLayout, trajs: &[Trajectory], thresholds: &ConditionThresholds) -> Result<Self> {
        if trajs.is_empty() {
            return Err(Error::Empty("cannot fit condition labels on no trajectories".into()));
        }
        let return_stats = ReturnStats::from_trajectories(trajs);
        let cpc = CpcNormalizer::from_trajectories(trajs);
        let cpc_threshold = thresholds
            .cpc
            .unwrap_or_else(|| median(trajs.iter().map(|t| cpc.statistic(t).0).collect()));
        let smoothness_threshold = match thresholds.smoothness {
            Some(c) => c,
            None => median(trajs.iter().map(|t| smoothness_statistic(&t.costs())).collect::<Result<_>>()?),
        };
        let early_spend_threshold = thresholds
            .early_spend
            .unwrap_or_else(|| median(trajs.iter().map(|t| early_spend_statistic(&t.costs()).0).collect()));
        Ok(ConditionLabeler {
            layout: layout.clone(),
            return_stats,
            cpc,
            cpc_threshold,
            smoothness_threshold,
            early_spend_threshold,
        })
    }

    /// CPC threshold for one trajectory: its own bound when it carries one.
    pub fn cpc_threshold_for(&self, traj: &Trajectory) -> f64 {
        match traj.constraint_bounds.first() {
            Some(&b) => self.cpc.normalize(b),
            None => self.cpc_threshold,
        }
    }

    /// Whether a trajectory violates its CPC constraint.
    pub fn cpc_exceeded(&self, traj: &Trajectory) -> bool {
        self.cpc.statistic(traj).0 > self.cpc_threshold_for(traj)
    }

    /// Full condition vector of a logged trajectory.
    pub fn label(&self, traj: &Trajectory) -> Result<Vec<f64>> {
        self.layout
            .slots
            .iter()
            .map(|s| {
                Ok(match s.as_str() {
                    SLOT_RETURN => normalized_return(traj.total_return(), self.return_stats.r_min, self.return_stats.r_max),
                    SLOT_CPC => binary_indicator(self.cpc.statistic(traj).0, self.cpc_threshold_for(traj)),
                    SLOT_SMOOTHNESS => binary_indicator(smoothness_statistic(&traj.costs())?, self.smoothness_threshold),
                    SLOT_EARLY_SPEND => binary_indicator(early_spend_statistic(&traj.costs()).0, self.early_spend_threshold),
                    other => return Err(Error::UnknownCondition(other.into())),
                })
            })
            .collect()
    }
}

/// Fraction of trajectories whose normalized CPC exceeds `c`.
pub fn exceed_ratio(stats: &[f64], c: f64) -> Result<f64> {
    if stats.is_empty() {
        return Err(Error::Empty("exceed ratio of no trajectories".into()));
    }
    Ok(stats.iter().filter(|&&x| x > c).count() as f64 / stats.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn return_normalization() {
        assert_eq!(normalized_return(10.0, 2.0, 10.0), 1.0);
        assert_eq!(normalized_return(2.0, 2.0, 10.0), 0.0);
        assert_eq!(normalized_return(6.0, 2.0, 10.0), 0.5);
        assert_eq!(normalized_return(20.0, 2.0, 10.0), 1.0);
        assert_eq!(normalized_return(5.0, 3.0, 3.0), 0.0);
    }

    #[test]
    fn indicator_boundary() {
        assert_eq!(binary_indicator(0.5, 0.5), 1.0);
        assert_eq!(binary_indicator(0.5 + 1e-12, 0.5), 0.0);
        assert_eq!(binary_indicator(0.0, 0.5), 1.0);
    }

    #[test]
    fn statistics_examples() {
        assert!((smoothness_statistic(&[0.0, 2.0, 0.0]).unwrap() - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(smoothness_statistic(&[3.0; 5]).unwrap(), 0.0);
        assert!(smoothness_statistic(&[1.0]).is_err());
        assert_eq!(early_spend_statistic(&[1.0, 0.0, 0.0, 3.0]), (0.25, false));
        assert_eq!(early_spend_statistic(&[2.0; 6]), (0.5, false));
        assert_eq!(early_spend_statistic(&[1.0, 1.0, 0.0, 0.0]), (1.0, false));
        assert_eq!(early_spend_statistic(&[0.0; 4]), (0.5, true));
    }

    #[test]
    fn compose_examples() {
        let l = ConditionLayout::new(&[SLOT_RETURN]).unwrap();
        assert_eq!(compose_condition(&l, Some(1.0), &[]).unwrap().values, vec![1.0]);
        let l = ConditionLayout::new(&[SLOT_RETURN, SLOT_CPC]).unwrap();
        let c = compose_condition(&l, Some(1.0), &[(SLOT_CPC, 1.0)]).unwrap();
        assert_eq!(c.as_input(), Some(vec![1.0, 1.0]));
        assert!(matches!(compose_condition(&l, Some(1.0), &[("ctr_ok", 1.0)]), Err(Error::UnknownCondition(_))));
        assert_eq!(compose_condition(&l, None, &[]).unwrap().as_input(), None);
        assert_eq!(compose_condition(&l, None, &[(SLOT_CPC, 1.0)]).unwrap().as_input(), Some(vec![0.0, 1.0]));
        assert!(ConditionLayout::new(&["bogus"]).is_err());
        assert!(ConditionLayout::new(&[SLOT_CPC, SLOT_CPC]).is_err());
    }

    #[test]
    fn layout_hash_is_order_sensitive() {
        let a = ConditionLayout::new(&[SLOT_RETURN, SLOT_CPC]).unwrap();
        let b = ConditionLayout::new(&[SLOT_CPC, SLOT_RETURN]).unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), a.clone().hash());
    }

    #[test]
    fn exceed_ratio_examples() {
        assert_eq!(exceed_ratio(&[0.1, 0.2], 0.5).unwrap(), 0.0);
        assert_eq!(exceed_ratio(&[0.1, 0.9], 0.5).unwrap(), 0.5);
        assert!(exceed_ratio(&[], 0.5).is_err());
    }
}
