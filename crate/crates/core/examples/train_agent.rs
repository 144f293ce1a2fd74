//! Trains one agent on the constant-volatility book and compares it with the
//! baselines on a held-out scenario set.
//!
//! Usage: `train_agent [steps] [kappa] [seed] [vol_of_vol] [hedge_days]`

use std::time::Instant;

use hedgelab::agent::{train, AgentConfig};
use hedgelab::baselines::{BaselineKind, BaselinePolicy};
use hedgelab::env::EnvConfig;
use hedgelab::evaluation::evaluate_policy;
use hedgelab::market::MarketParams;
use hedgelab::scenario::ScenarioSet;

fn main() -> hedgelab::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().collect();
    let steps = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(20_000);
    let kappa = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.01);
    let seed = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1);
    let vol_of_vol = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let hedge_days = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(30);
    let params = MarketParams {
        vol_of_vol,
        ..MarketParams::default()
    };
    let env = EnvConfig {
        kappa,
        hedge_maturity_days: hedge_days,
        ..EnvConfig::default()
    };
    let config = AgentConfig {
        total_steps: steps,
        eval_interval: (steps / 10).max(1),
        ..AgentConfig::default()
    };
    let start = Instant::now();
    let outcome = train(&env, &params, &config, seed)?;
    println!(
        "trained {steps} steps in {:.1?}, selected step {}",
        start.elapsed(),
        outcome.selected_step
    );
    for row in &outcome.log {
        println!("{row:?}");
    }
    let scenarios = ScenarioSet::new(1_000, 99);
    let mut reports = vec![evaluate_policy("RL", &outcome.agent, &env, &params, &scenarios)?];
    for kind in BaselineKind::ALL {
        let Ok(policy) = BaselinePolicy::new(kind, &params) else {
            continue;
        };
        reports.push(evaluate_policy(kind.label(), &policy, &env, &params, &scenarios)?);
    }
    for r in reports {
        println!(
            "{:<12} mean-std {:>7.3}  VaR95 {:>7.3}  CVaR95 {:>7.3}  gamma ratio {:.3}  vega ratio {:.3}  cost {:.3}",
            r.label, r.metrics.mean_std, r.metrics.var95, r.metrics.cvar95, r.ratios.gamma, r.ratios.vega, r.expected_cost
        );
    }
    Ok(())
}
