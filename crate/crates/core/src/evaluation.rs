//! Scenario evaluation, empirical risk metrics and report tables.
//!
//! Every policy is run on the same scenario streams, so differences between
//! reports come from the policies alone.

use std::io::Write;

use rayon::prelude::*;

use crate::agent::Objective;
use crate::env::{episode, EnvConfig, EpisodeResult, Policy, StepDiagnostics};
use crate::error::{HedgeError, Result};
use crate::market::MarketParams;
use crate::risk::{lower_tail_mean, mean, quantile_sorted, sorted_copy, std_dev};
use crate::scenario::ScenarioSet;

/// Fewest samples accepted by the empirical metrics.
pub const MIN_SAMPLES: usize = 100;

/// Pre-trade exposures below this are left out of the hedge ratios.
pub const RATIO_EXPOSURE_FLOOR: f64 = 1e-12;

/// One episode per scenario, in scenario order.
pub fn run_scenarios<P: Policy + ?Sized>(
    policy: &P,
    env_config: &EnvConfig,
    params: &MarketParams,
    scenarios: &ScenarioSet,
) -> Result<Vec<EpisodeResult>> {
    (0..scenarios.count)
        .into_par_iter()
        .map(|i| episode(policy, scenarios.rng(i), env_config, params))
        .collect()
}

/// Loss-based metrics of a gains sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mean_std: f64,
    pub var95: f64,
    pub cvar95: f64,
}

impl Metrics {
    pub fn get(&self, objective: &Objective) -> Option<f64> {
        match *objective {
            o if o == Objective::MEAN_STD => Some(self.mean_std),
            o if o == Objective::VAR95 => Some(self.var95),
            o if o == Objective::CVAR95 => Some(self.cvar95),
            _ => None,
        }
    }
}

fn check_samples(gains: &[f64]) -> Result<()> {
    if gains.len() < MIN_SAMPLES {
        return Err(HedgeError::InvalidInput(format!(
            "need at least {MIN_SAMPLES} samples, got {}",
            gains.len()
        )));
    }
    if gains.iter().any(|g| !g.is_finite()) {
        return Err(HedgeError::InvalidInput("gains must be finite".into()));
    }
    Ok(())
}

/// Empirical value of `objective` on the losses `−gains`. Standard deviations
/// use divisor `n − 1`; quantiles and tails use the estimator in [`crate::risk`].
pub fn objective_value(gains: &[f64], objective: &Objective) -> Result<f64> {
    check_samples(gains)?;
    objective.validate()?;
    Ok(match *objective {
        Objective::MeanStd { c } => -mean(gains) + c * std_dev(gains, 1),
        Objective::Var { level } => -quantile_sorted(&sorted_copy(gains), 1.0 - level),
        Objective::Cvar { level } => -lower_tail_mean(&sorted_copy(gains), 1.0 - level),
    })
}

pub fn sample_metrics(gains: &[f64]) -> Result<Metrics> {
    Ok(Metrics {
        mean_std: objective_value(gains, &Objective::MEAN_STD)?,
        var95: objective_value(gains, &Objective::VAR95)?,
        cvar95: objective_value(gains, &Objective::CVAR95)?,
    })
}

/// `1 − Σ sign(pre)·post / Σ |pre|` over hedging actions, so each action is
/// weighted by the exposure it started from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HedgeRatios {
    pub gamma: f64,
    pub vega: f64,
    /// Actions that entered each ratio.
    pub gamma_count: usize,
    pub vega_count: usize,
}

pub fn hedge_ratio_stats<'a, I>(steps: I) -> HedgeRatios
where
    I: IntoIterator<Item = &'a StepDiagnostics>,
{
    let (mut g_post, mut g_pre, mut gn) = (0.0, 0.0, 0usize);
    let (mut v_post, mut v_pre, mut vn) = (0.0, 0.0, 0usize);
    for s in steps {
        if s.gamma_pre.abs() >= RATIO_EXPOSURE_FLOOR {
            g_post += s.gamma_pre.signum() * s.gamma_post;
            g_pre += s.gamma_pre.abs();
            gn += 1;
        }
        if s.vega_pre.abs() >= RATIO_EXPOSURE_FLOOR {
            v_post += s.vega_pre.signum() * s.vega_post;
            v_pre += s.vega_pre.abs();
            vn += 1;
        }
    }
    let ratio = |post: f64, pre: f64, n: usize| if n == 0 { f64::NAN } else { 1.0 - post / pre };
    HedgeRatios {
        gamma: ratio(g_post, g_pre, gn),
        vega: ratio(v_post, v_pre, vn),
        gamma_count: gn,
        vega_count: vn,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub label: String,
    pub metrics: Metrics,
    pub mean_gain: f64,
    /// Sample standard deviation of gains.
    pub std_gain: f64,
    pub ratios: HedgeRatios,
    /// Mean total transaction cost per episode.
    pub expected_cost: f64,
    pub gains: Vec<f64>,
}

impl EvalReport {
    pub fn from_episodes(label: &str, episodes: &[EpisodeResult]) -> Result<Self> {
        let gains: Vec<f64> = episodes.iter().map(|e| e.gain).collect();
        let metrics = sample_metrics(&gains)?;
        let costs: Vec<f64> = episodes.iter().map(|e| e.total_cost).collect();
        Ok(Self {
            label: label.to_string(),
            metrics,
            mean_gain: mean(&gains),
            std_gain: std_dev(&gains, 1),
            ratios: hedge_ratio_stats(episodes.iter().flat_map(|e| &e.steps)),
            expected_cost: mean(&costs),
            gains,
        })
    }

    pub const CSV_HEADER: [&'static str; 9] = [
        "policy",
        "mean_std",
        "var95",
        "cvar95",
        "mean_gain",
        "std_gain",
        "gamma_hedge_ratio",
        "vega_hedge_ratio",
        "expected_cost",
    ];

    pub fn csv_record(&self) -> Vec<String> {
        vec![
            self.label.clone(),
            fmt(self.metrics.mean_std),
            fmt(self.metrics.var95),
            fmt(self.metrics.cvar95),
            fmt(self.mean_gain),
            fmt(self.std_gain),
            fmt(self.ratios.gamma),
            fmt(self.ratios.vega),
            fmt(self.expected_cost),
        ]
    }
}

/// Runs `policy` on `scenarios` and summarises the outcome.
pub fn evaluate_policy<P: Policy + ?Sized>(
    label: &str,
    policy: &P,
    env_config: &EnvConfig,
    params: &MarketParams,
    scenarios: &ScenarioSet,
) -> Result<EvalReport> {
    let episodes = run_scenarios(policy, env_config, params, scenarios)?;
    EvalReport::from_episodes(label, &episodes)
}

fn fmt(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x:.6}")
    }
}

/// Header plus string rows, written as CSV.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: ToString>(header: &[S]) -> Self {
        Self {
            header: header.iter().map(ToString::to_string).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| HedgeError::Computation(e.to_string()))
    }

    /// Cell at `row` under column `name`.
    pub fn cell(&self, row: usize, name: &str) -> Option<&str> {
        let col = self.header.iter().position(|h| h == name)?;
        self.rows.get(row)?.get(col).map(String::as_str)
    }
}

fn csv_err(e: csv::Error) -> HedgeError {
    HedgeError::Computation(format!("csv: {e}"))
}

/// Reports evaluated on one scenario set at one cost level.
#[derive(Debug, Clone, PartialEq)]
pub struct CostLevel {
    pub kappa: f64,
    /// Baseline reports in column order.
    pub baselines: Vec<EvalReport>,
    /// Agents keyed by the objective they were trained for.
    pub agents: Vec<(Objective, EvalReport)>,
}

/// Comparison table: one row per cost level and objective, one column per
/// baseline, then the agent trained for that objective with its hedge ratios
/// and expected transaction cost.
pub fn comparison_table(levels: &[CostLevel], objectives: &[Objective], with_vega: bool) -> Table {
    let mut header: Vec<String> = vec!["kappa".into(), "objective".into()];
    let baseline_labels: Vec<String> = levels
        .first()
        .map(|l| l.baselines.iter().map(|b| b.label.clone()).collect())
        .unwrap_or_default();
    header.extend(baseline_labels.iter().cloned());
    header.push("RL".into());
    header.push("RL_gamma_hedge_ratio".into());
    if with_vega {
        header.push("RL_vega_hedge_ratio".into());
    }
    header.push("RL_expected_cost".into());
    let mut table = Table {
        header,
        rows: Vec::new(),
    };
    for level in levels {
        for obj in objectives {
            let mut row = vec![format!("{}", level.kappa), obj.label()];
            for b in &level.baselines {
                row.push(objective_cell(b, obj));
            }
            match level.agents.iter().find(|(o, _)| o == obj) {
                Some((_, r)) => {
                    row.push(objective_cell(r, obj));
                    row.push(fmt(r.ratios.gamma));
                    if with_vega {
                        row.push(fmt(r.ratios.vega));
                    }
                    row.push(fmt(r.expected_cost));
                }
                None => row.extend(std::iter::repeat_n(String::new(), if with_vega { 4 } else { 3 })),
            }
            table.push(row);
        }
    }
    table
}

fn objective_cell(report: &EvalReport, obj: &Objective) -> String {
    match report.metrics.get(obj) {
        Some(v) => fmt(v),
        None => objective_value(&report.gains, obj).map(fmt).unwrap_or_default(),
    }
}

/// Equal-width histogram of gains plus the lowest 5% of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Ascending sample values in the lower 5% tail.
    pub rug: Vec<f64>,
}

pub fn gain_histogram(gains: &[f64], bins: usize) -> Result<Histogram> {
    if gains.is_empty() || bins == 0 {
        return Err(HedgeError::InvalidInput("histogram needs samples and at least one bin".into()));
    }
    if gains.iter().any(|g| !g.is_finite()) {
        return Err(HedgeError::InvalidInput("gains must be finite".into()));
    }
    let sorted = sorted_copy(gains);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0usize; bins];
    for &g in &sorted {
        let idx = (((g - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let boundary = quantile_sorted(&sorted, 0.05);
    let rug = sorted.iter().copied().take_while(|&g| g <= boundary).collect();
    Ok(Histogram { edges, counts, rug })
}

impl Histogram {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["bin_lo", "bin_hi", "count"]);
        for (i, c) in self.counts.iter().enumerate() {
            t.push(vec![fmt(self.edges[i]), fmt(self.edges[i + 1]), c.to_string()]);
        }
        t
    }

    pub fn rug_table(&self) -> Table {
        let mut t = Table::new(&["gain"]);
        for g in &self.rug {
            t.push(vec![fmt(*g)]);
        }
        t
    }
}

/// One point of a risk-return plot.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontierPoint {
    pub label: String,
    /// VaR confidence level the risk is measured at.
    pub level: f64,
    pub risk: f64,
    pub mean_gain: f64,
}

/// Agents are placed at the VaR level they were trained for; every baseline
/// is placed at each of those levels.
pub fn frontier(agents: &[(f64, &EvalReport)], baselines: &[&EvalReport]) -> Result<Vec<FrontierPoint>> {
    let mut points = Vec::new();
    let mut levels: Vec<f64> = Vec::new();
    for &(level, report) in agents {
        points.push(FrontierPoint {
            label: report.label.clone(),
            level,
            risk: objective_value(&report.gains, &Objective::Var { level })?,
            mean_gain: report.mean_gain,
        });
        if !levels.contains(&level) {
            levels.push(level);
        }
    }
    for b in baselines {
        for &level in &levels {
            points.push(FrontierPoint {
                label: b.label.clone(),
                level,
                risk: objective_value(&b.gains, &Objective::Var { level })?,
                mean_gain: b.mean_gain,
            });
        }
    }
    Ok(points)
}

pub fn frontier_table(points: &[FrontierPoint]) -> Table {
    let mut t = Table::new(&["policy", "var_level", "var", "mean_gain"]);
    for p in points {
        t.push(vec![p.label.clone(), format!("{}", p.level), fmt(p.risk), fmt(p.mean_gain)]);
    }
    t
}

/// One evaluated cell of a robustness sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessCell {
    /// Training value of the swept parameter.
    pub value: f64,
    pub objective: Objective,
    pub report: EvalReport,
}

/// Rows per (training value, objective) with the objective value under the
/// true parameters, hedge ratios and expected cost.
pub fn robustness_grid(parameter: &str, cells: &[RobustnessCell]) -> Table {
    let mut t = Table::new(&[
        parameter,
        "objective",
        "value",
        "gamma_hedge_ratio",
        "vega_hedge_ratio",
        "expected_cost",
    ]);
    for c in cells {
        t.push(vec![
            format!("{}", c.value),
            c.objective.label(),
            objective_cell(&c.report, &c.objective),
            fmt(c.report.ratios.gamma),
            fmt(c.report.ratios.vega),
            fmt(c.report.expected_cost),
        ]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(gamma_pre: f64, gamma_post: f64, vega_pre: f64, vega_post: f64) -> StepDiagnostics {
        StepDiagnostics {
            day: 0,
            spot: 10.0,
            vol: 0.3,
            portfolio_value: 0.0,
            portfolio_delta: 0.0,
            gamma_pre,
            gamma_post,
            vega_pre,
            vega_post,
            hedge_contracts: 0.0,
            hedge_price: 0.0,
            cost: 0.0,
            reward: 0.0,
            gate_open: true,
        }
    }

    #[test]
    fn constant_gains_metrics() {
        let m = sample_metrics(&[-5.0; 200]).unwrap();
        assert!((m.mean_std - 5.0).abs() < 1e-12);
        assert_eq!(m.var95, 5.0);
        assert!((m.cvar95 - 5.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_samples_rejected() {
        assert!(sample_metrics(&[1.0; 99]).is_err());
    }

    #[test]
    fn metrics_scale_with_gains() {
        let gains: Vec<f64> = (0..500).map(|i| ((i * 37) % 101) as f64 - 50.0).collect();
        let scaled: Vec<f64> = gains.iter().map(|g| 2.5 * g).collect();
        let (a, b) = (sample_metrics(&gains).unwrap(), sample_metrics(&scaled).unwrap());
        assert!((2.5 * a.mean_std - b.mean_std).abs() < 1e-9);
        assert!((2.5 * a.var95 - b.var95).abs() < 1e-9);
        assert!((2.5 * a.cvar95 - b.cvar95).abs() < 1e-9);
    }

    #[test]
    fn hedge_ratio_examples() {
        let full = [diag(2.0, 0.0, 1.0, 0.0), diag(-3.0, 0.0, -1.0, 0.0)];
        assert_eq!(hedge_ratio_stats(&full).gamma, 1.0);
        let none = [diag(2.0, 2.0, 1.0, 1.0), diag(-3.0, -3.0, -1.0, -1.0)];
        assert_eq!(hedge_ratio_stats(&none).gamma, 0.0);
        let half = [diag(2.0, 1.0, 1.0, 0.5), diag(-3.0, -1.5, 4.0, 2.0)];
        let r = hedge_ratio_stats(&half);
        assert_eq!((r.gamma, r.vega), (0.5, 0.5));
        // actions weigh by their starting exposure
        let mixed = [diag(3.0, 0.0, 1.0, 0.0), diag(-1.0, -1.0, 1.0, 1.0)];
        assert_eq!(hedge_ratio_stats(&mixed).gamma, 0.75);
        // flat books are skipped
        let flat = [diag(0.0, 0.0, 0.0, 0.0), diag(2.0, 1.0, 0.0, 0.0)];
        let r = hedge_ratio_stats(&flat);
        assert_eq!((r.gamma, r.gamma_count, r.vega_count), (0.5, 1, 0));
        assert!(r.vega.is_nan());
    }

    #[test]
    fn histogram_counts_and_rug() {
        let h = gain_histogram(&[3.0; 10], 5).unwrap();
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        let gains: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let h = gain_histogram(&gains, 7).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), 1000);
        assert_eq!(h.rug.len(), 50);
        assert_eq!(*h.rug.last().unwrap(), 49.0);
    }

    #[test]
    fn objective_value_matches_metrics() {
        let gains: Vec<f64> = (0..300).map(|i| ((i * 53) % 97) as f64 * 0.3 - 10.0).collect();
        let m = sample_metrics(&gains).unwrap();
        assert_eq!(objective_value(&gains, &Objective::MEAN_STD).unwrap(), m.mean_std);
        assert_eq!(objective_value(&gains, &Objective::VAR95).unwrap(), m.var95);
        assert_eq!(objective_value(&gains, &Objective::CVAR95).unwrap(), m.cvar95);
    }

    #[test]
    fn csv_quoting() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["x,y".into(), "1".into()]);
        assert_eq!(t.to_csv_string().unwrap(), "a,b\n\"x,y\",1\n");
        assert_eq!(t.cell(0, "b"), Some("1"));
    }
}
