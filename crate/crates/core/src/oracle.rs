//! Hindsight oracles over a frozen price landscape.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    /// Selected impression indices, in cost-effectiveness order.
    pub selected: Vec<usize>,
    pub total_value: f64,
    pub total_cost: f64,
    /// `1 / ce` of the last selected impression.
    pub lambda_star: f64,
}

/// Greedy selection in descending value/cost order, stopping at the first
/// impression that no longer fits the budget. Zero-cost impressions with
/// positive value rank first; zero-value impressions are never selected.
pub fn hindsight_oracle(items: &[(f64, f64)], budget: f64) -> OracleResult {
    let mut order: Vec<usize> = (0..items.len()).filter(|&i| items[i].0 > 0.0).collect();
    // Compare v_a/c_a against v_b/c_b by cross-multiplication so zero costs
    // rank as infinite CE without dividing by zero.
    order.sort_by(|&a, &b| {
        let (va, ca) = items[a];
        let (vb, cb) = items[b];
        (vb * ca).total_cmp(&(va * cb)).then(a.cmp(&b))
    });

    let mut selected = Vec::new();
    let mut total_cost = 0.0;
    let mut total_value = 0.0;
    for &i in &order {
        let (v, c) = items[i];
        if total_cost + c > budget {
            break;
        }
        total_cost += c;
        total_value += v;
        selected.push(i);
    }
    let lambda_star = selected.last().map_or(0.0, |&i| items[i].1 / items[i].0);
    OracleResult {
        selected,
        total_value,
        total_cost,
        lambda_star,
    }
}

pub const BRUTE_FORCE_MAX_ITEMS: usize = 20;

/// Exact 0/1 optimum of `Σ v` subject to `Σ c ≤ budget`, by enumeration.
pub fn brute_force_oracle(items: &[(f64, f64)], budget: f64) -> Result<f64> {
    let n = items.len();
    if n > BRUTE_FORCE_MAX_ITEMS {
        return Err(Error::InvalidConfig(format!(
            "brute force supports at most {BRUTE_FORCE_MAX_ITEMS} items, got {n}"
        )));
    }
    let mut best = 0.0_f64;
    for mask in 0u32..(1u32 << n) {
        let mut cost = 0.0;
        let mut value = 0.0;
        for (i, &(v, c)) in items.iter().enumerate() {
            if mask & (1 << i) != 0 {
                cost += c;
                value += v;
            }
        }
        if cost <= budget && value > best {
            best = value;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_cost_example() {
        let r = hindsight_oracle(&[(2.0, 1.0), (1.0, 1.0), (0.5, 1.0)], 2.0);
        assert_eq!(r.selected, vec![0, 1]);
        assert_eq!(r.total_value, 3.0);
        assert_eq!(r.total_cost, 2.0);
        assert_eq!(r.lambda_star, 1.0);
    }

    #[test]
    fn ample_budget_takes_all() {
        let items = [(1.0, 3.0), (2.0, 1.0), (0.3, 0.2)];
        let r = hindsight_oracle(&items, 10.0);
        assert_eq!(r.selected.len(), 3);
    }

    #[test]
    fn zero_cost_items_first() {
        let r = hindsight_oracle(&[(1.0, 5.0), (0.1, 0.0)], 1.0);
        assert_eq!(r.selected, vec![1]);
        assert_eq!(r.total_value, 0.1);
    }

    #[test]
    fn empty_list() {
        let r = hindsight_oracle(&[], 10.0);
        assert!(r.selected.is_empty());
        assert_eq!(r.total_value, 0.0);
    }

    #[test]
    fn brute_force_examples() {
        assert_eq!(brute_force_oracle(&[(3.0, 2.0)], 5.0).unwrap(), 3.0);
        let items = [(6.0, 5.0), (5.0, 4.0), (4.0, 3.0)];
        assert_eq!(brute_force_oracle(&items, 7.0).unwrap(), 9.0);
        assert!(brute_force_oracle(&[(1.0, 1.0); 21], 5.0).is_err());
    }
}
