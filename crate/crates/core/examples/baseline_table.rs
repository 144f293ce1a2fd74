//! Prints the rule-based baselines' risk metrics at three cost levels.

use std::time::Instant;

use hedgelab::baselines::{BaselineKind, BaselinePolicy};
use hedgelab::env::EnvConfig;
use hedgelab::evaluation::evaluate_policy;
use hedgelab::market::MarketParams;
use hedgelab::scenario::ScenarioSet;

fn main() -> hedgelab::Result<()> {
    let params = MarketParams::default();
    let scenarios = ScenarioSet::default();
    for kappa in [0.005, 0.01, 0.02] {
        let env = EnvConfig {
            kappa,
            ..EnvConfig::default()
        };
        for kind in [BaselineKind::DeltaOnly, BaselineKind::DeltaGamma] {
            let start = Instant::now();
            let policy = BaselinePolicy::new(kind, &params)?;
            let r = evaluate_policy(kind.label(), &policy, &env, &params, &scenarios)?;
            println!(
                "kappa {kappa:<6} {:<12} mean-std {:>7.3}  VaR95 {:>7.3}  CVaR95 {:>7.3}  mean {:>7.3}  cost {:>6.3}  ({:.1?})",
                r.label,
                r.metrics.mean_std,
                r.metrics.var95,
                r.metrics.cvar95,
                r.mean_gain,
                r.expected_cost,
                start.elapsed()
            );
        }
    }
    Ok(())
}
