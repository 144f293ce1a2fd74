use hedgelab::agent::{train, AgentConfig, Objective};
use hedgelab::checkpoint::Checkpoint;
use hedgelab::env::{EnvConfig, Policy};
use hedgelab::evaluation::{evaluate_policy, run_scenarios};
use hedgelab::market::MarketParams;
use hedgelab::scenario::ScenarioSet;

fn small_agent(steps: usize) -> AgentConfig {
    AgentConfig {
        hidden: vec![16, 16],
        atoms: 21,
        warmup: 200,
        total_steps: steps,
        eval_interval: 500,
        eval_episodes: 50,
        ..AgentConfig::default()
    }
}

#[test]
fn training_is_deterministic_per_seed() {
    let env = EnvConfig::default();
    let params = MarketParams::default();
    let cfg = small_agent(600);
    let a = train(&env, &params, &cfg, 3).unwrap();
    let b = train(&env, &params, &cfg, 3).unwrap();
    let rows = |o: &hedgelab::agent::TrainOutcome| o.log.iter().map(|r| r.csv_record()).collect::<Vec<_>>();
    assert_eq!(rows(&a), rows(&b));
    let text = |o: &hedgelab::agent::TrainOutcome| Checkpoint::from_agent(&o.agent, "h").unwrap().to_text().unwrap();
    assert_eq!(text(&a), text(&b));
    let c = train(&env, &params, &cfg, 4).unwrap();
    assert_ne!(text(&a), text(&c));
}

#[test]
fn checkpoint_restores_the_same_policy() {
    let env = EnvConfig::default();
    let params = MarketParams::stochastic();
    let outcome = train(&env, &params, &small_agent(300), 1).unwrap();
    let text = Checkpoint::from_agent(&outcome.agent, "abc").unwrap().to_text().unwrap();
    let restored = Checkpoint::parse(&text).unwrap().to_agent().unwrap();
    let scenarios = ScenarioSet::new(20, 5);
    let before = run_scenarios(&outcome.agent, &env, &params, &scenarios).unwrap();
    let after = run_scenarios(&restored, &env, &params, &scenarios).unwrap();
    for (x, y) in before.iter().zip(&after) {
        assert_eq!(x.gain.to_bits(), y.gain.to_bits());
    }
}

#[test]
fn evaluation_cost_matches_step_costs() {
    let env = EnvConfig::default();
    let params = MarketParams::default();
    let policy = |_: &hedgelab::env::Observation| 0.7;
    let episodes = run_scenarios(&policy, &env, &params, &ScenarioSet::new(50, 9)).unwrap();
    for e in &episodes {
        let summed: f64 = e.steps.iter().map(|s| s.cost).sum();
        assert!((summed - e.total_cost).abs() <= 1e-9 * summed.max(1.0));
        let rewards: f64 = e.steps.iter().map(|s| s.reward).sum();
        assert!((rewards - e.gain).abs() <= 1e-9 * rewards.abs().max(1.0));
    }
}

fn mean_gamma_ratio<P: Policy>(policy: &P, env: &EnvConfig, params: &MarketParams) -> f64 {
    evaluate_policy("agent", policy, env, params, &ScenarioSet::new(200, 11))
        .unwrap()
        .ratios
        .gamma
}

#[test]
fn free_one_day_hedging_is_learned_as_full_gamma_hedge() {
    let env = EnvConfig {
        horizon_days: 1,
        kappa: 0.0,
        ..EnvConfig::default()
    };
    let params = MarketParams::default();
    let cfg = AgentConfig {
        objective: Objective::MEAN_STD,
        ..small_agent(3000)
    };
    let outcome = train(&env, &params, &cfg, 2).unwrap();
    let ratio = mean_gamma_ratio(&outcome.agent, &env, &params);
    assert!(ratio > 0.9, "gamma hedge ratio {ratio}");
}

#[test]
fn prohibitive_costs_are_learned_as_no_trade() {
    let env = EnvConfig {
        kappa: 10.0,
        ..EnvConfig::default()
    };
    let params = MarketParams::default();
    let outcome = train(&env, &params, &small_agent(3000), 2).unwrap();
    let ratio = mean_gamma_ratio(&outcome.agent, &env, &params);
    assert!(ratio < 0.1, "gamma hedge ratio {ratio}");
}
