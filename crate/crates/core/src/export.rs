//! CSV and SVG exports of episodes and evaluation tables.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::{BudgetMetrics, EpisodeOutcome};
use crate::types::Trajectory;

/// Share of budget that counts as "spent" in the completion summary.
pub const COMPLETION_THRESHOLD: f64 = 0.8;

/// Per-period time series of every trajectory. λ columns are numbered
/// `lambda_0..lambda_J`.
pub fn curves_csv(trajs: &[Trajectory]) -> String {
    let j = trajs.iter().flat_map(|t| t.steps.first()).map(|s| s.action.dim()).max().unwrap_or(1);
    let mut out = String::from("episode,advertiser,period,remaining_budget,cost,reward");
    for i in 0..j {
        let _ = write!(out, ",lambda_{i}");
    }
    out.push('\n');
    for (e, t) in trajs.iter().enumerate() {
        for (p, s) in t.steps.iter().enumerate() {
            let _ = write!(out, "{e},{},{p},{},{},{}", t.advertiser_id, s.state.remaining_budget, s.cost, s.reward);
            for i in 0..j {
                let _ = write!(out, ",{}", s.action.lambdas.get(i).copied().unwrap_or(f64::NAN));
            }
            out.push('\n');
        }
    }
    out
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// `(period, p10, p50, p90)` of the remaining-budget fraction.
pub fn budget_bands(trajs: &[Trajectory]) -> Vec<(usize, f64, f64, f64)> {
    let periods = trajs.iter().map(|t| t.len()).max().unwrap_or(0);
    (0..periods)
        .map(|p| {
            let mut v: Vec<f64> = trajs.iter().filter_map(|t| t.steps.get(p)).map(|s| s.state.remaining_budget).collect();
            v.sort_by(f64::total_cmp);
            (p, percentile(&v, 0.1), percentile(&v, 0.5), percentile(&v, 0.9))
        })
        .collect()
}

pub fn bands_csv(trajs: &[Trajectory]) -> String {
    let mut out = String::from("period,remaining_budget_p10,remaining_budget_p50,remaining_budget_p90\n");
    for (p, a, b, c) in budget_bands(trajs) {
        let _ = writeln!(out, "{p},{a},{b},{c}");
    }
    out
}

/// Fraction of trajectories that spent at least [`COMPLETION_THRESHOLD`] of
/// their budget.
pub fn budget_completion(trajs: &[Trajectory]) -> f64 {
    if trajs.is_empty() {
        return 0.0;
    }
    let done = trajs.iter().filter(|t| t.total_cost() >= COMPLETION_THRESHOLD * t.budget).count();
    done as f64 / trajs.len() as f64
}

pub fn metrics_csv(rows: &[BudgetMetrics]) -> String {
    let mut out = String::from("budget,top_k_score,mean_score,std_score,mean_cost,oracle,oracle_ratio,failed_runs\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.budget, r.top_k_score, r.mean_score, r.std_score, r.mean_cost, r.oracle, r.oracle_ratio, r.failed_runs
        );
    }
    out
}

pub fn episodes_csv(eps: &[EpisodeOutcome]) -> String {
    let mut out = String::from("budget,run,seed,score,cost,own_oracle,failed\n");
    for e in eps {
        let _ = writeln!(out, "{},{},{},{},{},{},{}", e.budget, e.run, e.seed, e.score, e.cost, e.own_oracle, e.failed);
    }
    out
}

/// Line chart of the remaining-budget median with a 10–90 percentile band.
pub fn bands_svg(trajs: &[Trajectory]) -> String {
    let bands = budget_bands(trajs);
    let (w, h, m) = (640.0, 360.0, 40.0);
    let n = bands.len().max(2) as f64 - 1.0;
    let x = |p: usize| m + (w - 2.0 * m) * p as f64 / n;
    let y = |v: f64| h - m - (h - 2.0 * m) * v.clamp(0.0, 1.0);
    let mut svg = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    svg.push_str(r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = write!(svg, r#"<line x1="{m}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - m, w - m, h - m);
    let _ = write!(svg, r#"<line x1="{m}" y1="{m}" x2="{m}" y2="{}" stroke="black"/>"#, h - m);
    if !bands.is_empty() {
        let mut band = String::new();
        for &(p, lo, _, _) in &bands {
            let _ = write!(band, "{:.2},{:.2} ", x(p), y(lo));
        }
        for &(p, _, _, hi) in bands.iter().rev() {
            let _ = write!(band, "{:.2},{:.2} ", x(p), y(hi));
        }
        let _ = write!(svg, r##"<polygon points="{}" fill="#9ecae1" opacity="0.6"/>"##, band.trim_end());
        let line: Vec<String> = bands.iter().map(|&(p, _, mid, _)| format!("{:.2},{:.2}", x(p), y(mid))).collect();
        let _ = write!(svg, r##"<polyline points="{}" fill="none" stroke="#08519c" stroke-width="2"/>"##, line.join(" "));
    }
    let _ = write!(svg, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">period</text>"#, w / 2.0, h - 8.0);
    let _ = write!(svg, r#"<text x="12" y="{}" font-size="12" transform="rotate(-90 12 {})" text-anchor="middle">budget left ratio</text>"#, h / 2.0, h / 2.0);
    svg.push_str("</svg>\n");
    svg
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `curves.csv`, `budget_bands.csv`, `completion.csv` and optionally
/// `budget_bands.svg` into `dir`.
pub fn export_curves(trajs: &[Trajectory], dir: impl AsRef<Path>, svg: bool) -> Result<()> {
    let dir = dir.as_ref();
    write_text(dir.join("curves.csv"), &curves_csv(trajs))?;
    write_text(dir.join("budget_bands.csv"), &bands_csv(trajs))?;
    write_text(
        dir.join("completion.csv"),
        &format!("threshold,fraction_completed,episodes\n{COMPLETION_THRESHOLD},{},{}\n", budget_completion(trajs), trajs.len()),
    )?;
    if svg {
        write_text(dir.join("budget_bands.svg"), &bands_svg(trajs))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentiles() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 0.5), 2.0);
        assert_eq!(percentile(&v, 0.1), 0.4);
        assert!(percentile(&[], 0.5).is_nan());
    }
}
