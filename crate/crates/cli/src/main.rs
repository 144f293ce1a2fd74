use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use hedgelab::agent::{train, Agent, AgentConfig, Objective, TrainLogRow};
use hedgelab::baselines::{BaselineKind, BaselinePolicy};
use hedgelab::checkpoint::Checkpoint;
use hedgelab::config::{training_hash, ExperimentConfig};
use hedgelab::env::{EnvConfig, FeatureMode, HedgingEnv, Origin, StepDiagnostics};
use hedgelab::evaluation::{
    comparison_table, frontier, frontier_table, gain_histogram, robustness_grid, run_scenarios, CostLevel,
    EvalReport, RobustnessCell, Table,
};
use hedgelab::market::MarketParams;

#[derive(Parser)]
#[command(name = "hedgelab", version, about = "Simulate, train and evaluate option-book hedging policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; for `simulate` it selects the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for scenario evaluation (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write daily spot, volatility and client arrivals for each scenario.
    Simulate,
    /// Train one agent and write its checkpoint and training log.
    Train,
    /// Evaluate baselines and checkpoints on the scenario set.
    Evaluate {
        /// Baseline to evaluate: delta, delta_gamma or delta_vega. Repeatable;
        /// every applicable baseline is evaluated when omitted.
        #[arg(long)]
        baseline: Vec<String>,
        /// Agent checkpoint to evaluate. Repeatable.
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
    },
    /// Train agents under mis-specified parameters and evaluate them under the true ones.
    Robustness,
    /// Comparison table across cost levels plus the risk-return frontier.
    Report,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        match cli.command {
            Command::Simulate => config.scenarios.seed = seed,
            _ => config.seed = seed,
        }
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    if let Some(workers) = cli.workers {
        config.workers = workers;
    }
    config.validate()?;
    if config.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build_global()
            .context("configuring worker pool")?;
    }
    let out = config.output_dir.clone();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.toml"), config.to_toml()?).context("writing resolved config")?;

    match cli.command {
        Command::Simulate => simulate(&config, &out),
        Command::Train => train_command(&config, &out),
        Command::Evaluate { baseline, checkpoint } => evaluate(&config, &out, &baseline, &checkpoint),
        Command::Robustness => robustness(&config, &out),
        Command::Report => report(&config, &out),
    }
}

fn write_table(table: &Table, path: &Path) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    table.write_csv(std::io::BufWriter::new(file))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn simulate(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let mut table = Table::new(&["scenario", "day", "spot", "vol", "arrivals"]);
    let env_config = &config.env;
    let arrivals_on = |env: &HedgingEnv, day: u32| {
        env.portfolio()
            .positions
            .iter()
            .filter(|p| p.origin == Origin::Client && p.expiry_day == day + env_config.client_maturity_days)
            .count()
    };
    let no_trade = BaselinePolicy::new(BaselineKind::DeltaOnly, &config.market)?;
    for i in 0..config.scenarios.count {
        let mut env = HedgingEnv::new(*env_config, config.market, config.scenarios.rng(i))?;
        loop {
            let m = env.portfolio().market;
            let arrivals = if env.is_done() { 0 } else { arrivals_on(&env, m.day) };
            table.push(vec![
                i.to_string(),
                m.day.to_string(),
                format!("{:?}", m.spot),
                format!("{:?}", m.vol),
                arrivals.to_string(),
            ]);
            if env.is_done() {
                break;
            }
            let obs = env.observation()?;
            env.step(hedgelab::env::Policy::action(&no_trade, &obs))?;
        }
    }
    write_table(&table, &out.join("paths.csv"))
}

fn log_table(log: &[TrainLogRow]) -> Table {
    let mut t = Table::new(&TrainLogRow::CSV_HEADER);
    for row in log {
        t.push(row.csv_record());
    }
    t
}

/// Trains (or loads from the cache under `out/agents`) the agent for one setup.
fn obtain_agent(
    out: &Path,
    seed: u64,
    market: &MarketParams,
    env: &EnvConfig,
    agent: &AgentConfig,
    allow_train: bool,
) -> Result<Option<Agent>> {
    let hash = training_hash(seed, market, env, agent)?;
    let cache = out.join("agents");
    let path = cache.join(format!("{hash}.ckpt"));
    if path.exists() {
        log::info!("loading cached agent {}", path.display());
        let text = fs::read_to_string(&path)?;
        let agent = Checkpoint::parse(&text)
            .and_then(|c| c.to_agent())
            .with_context(|| format!("reading {}", path.display()))?;
        return Ok(Some(agent));
    }
    if !allow_train {
        return Ok(None);
    }
    log::info!(
        "training {} agent (kappa {}, vol_of_vol {}, sigma0 {}, {} steps)",
        agent.objective.label(),
        env.kappa,
        market.vol_of_vol,
        market.sigma0,
        agent.total_steps
    );
    let outcome = train(env, market, agent, seed)?;
    fs::create_dir_all(&cache)?;
    fs::write(&path, Checkpoint::from_agent(&outcome.agent, &hash)?.to_text()?)?;
    write_table(&log_table(&outcome.log), &cache.join(format!("{hash}.log.csv")))?;
    Ok(Some(outcome.agent))
}

fn train_command(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let hash = config.training_hash()?;
    let outcome = train(&config.env, &config.market, &config.agent, config.seed)?;
    log::info!(
        "trained {} steps over {} episodes; keeping step {}",
        config.agent.total_steps,
        outcome.episodes,
        outcome.selected_step
    );
    let text = Checkpoint::from_agent(&outcome.agent, &hash)?.to_text()?;
    fs::write(out.join("checkpoint.txt"), &text)?;
    let cache = out.join("agents");
    fs::create_dir_all(&cache)?;
    fs::write(cache.join(format!("{hash}.ckpt")), &text)?;
    write_table(&log_table(&outcome.log), &out.join("train_log.csv"))
}

fn applicable_baselines(market: &MarketParams) -> Vec<BaselinePolicy> {
    BaselineKind::ALL
        .iter()
        .filter_map(|&k| BaselinePolicy::new(k, market).ok())
        .collect()
}

fn file_label(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

fn load_checkpoint(path: &Path, config: &ExperimentConfig) -> Result<Agent> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let agent = Checkpoint::parse(&text)
        .and_then(|c| c.to_agent())
        .with_context(|| format!("loading {}", path.display()))?;
    let expected = FeatureMode::for_params(&config.market);
    if agent.feature_mode != expected {
        bail!(
            "{} was trained with feature mode {} but the configured market needs {}",
            path.display(),
            agent.feature_mode.name(),
            expected.name()
        );
    }
    if agent.initial_spot != config.env.initial_spot {
        bail!(
            "{} normalises spot by {} but the configured initial spot is {}",
            path.display(),
            agent.initial_spot,
            config.env.initial_spot
        );
    }
    Ok(agent)
}

fn diagnostics_table(per_scenario: &[Vec<StepDiagnostics>]) -> Table {
    let mut header = vec!["scenario"];
    header.extend(StepDiagnostics::CSV_HEADER);
    let mut t = Table::new(&header);
    for (i, steps) in per_scenario.iter().enumerate() {
        for s in steps {
            let mut row = vec![i.to_string()];
            row.extend(s.csv_record());
            t.push(row);
        }
    }
    t
}

fn evaluate(config: &ExperimentConfig, out: &Path, baselines: &[String], checkpoints: &[PathBuf]) -> Result<()> {
    let mut baseline_policies = Vec::new();
    for name in baselines {
        let kind = BaselineKind::from_name(name)
            .with_context(|| format!("unknown baseline {name:?} (expected delta, delta_gamma or delta_vega)"))?;
        baseline_policies.push(BaselinePolicy::new(kind, &config.market)?);
    }
    if baselines.is_empty() {
        baseline_policies = applicable_baselines(&config.market);
    }
    let mut agents = Vec::new();
    for (i, path) in checkpoints.iter().enumerate() {
        let label = if checkpoints.len() == 1 {
            "RL".to_string()
        } else {
            format!("RL{}", i + 1)
        };
        agents.push((label, load_checkpoint(path, config)?));
    }

    let mut policies: Vec<(String, &dyn hedgelab::env::Policy)> = baseline_policies
        .iter()
        .map(|p| (p.kind.label().to_string(), p as &dyn hedgelab::env::Policy))
        .collect();
    policies.extend(agents.iter().map(|(l, a)| (l.clone(), a as &dyn hedgelab::env::Policy)));

    let mut metrics = Table::new(&EvalReport::CSV_HEADER);
    let mut baseline_reports = Vec::new();
    let mut agent_reports = Vec::new();
    for (i, (label, policy)) in policies.iter().enumerate() {
        let episodes = run_scenarios(*policy, &config.env, &config.market, &config.scenarios)?;
        let report = EvalReport::from_episodes(label, &episodes)?;
        log::info!(
            "{label}: mean-std {:.3}, VaR95 {:.3}, CVaR95 {:.3}, expected cost {:.3}",
            report.metrics.mean_std,
            report.metrics.var95,
            report.metrics.cvar95,
            report.expected_cost
        );
        metrics.push(report.csv_record());
        let stem = file_label(label);
        let hist = gain_histogram(&report.gains, config.evaluation.histogram_bins)?;
        write_table(&hist.table(), &out.join(format!("histogram_{stem}.csv")))?;
        write_table(&hist.rug_table(), &out.join(format!("rug_{stem}.csv")))?;
        let steps: Vec<Vec<StepDiagnostics>> = episodes.into_iter().map(|e| e.steps).collect();
        write_table(&diagnostics_table(&steps), &out.join(format!("diagnostics_{stem}.csv")))?;
        if config.evaluation.export_gains {
            let mut g = Table::new(&["scenario", "gain"]);
            for (j, x) in report.gains.iter().enumerate() {
                g.push(vec![j.to_string(), format!("{x:?}")]);
            }
            write_table(&g, &out.join(format!("gains_{stem}.csv")))?;
        }
        if i < baseline_policies.len() {
            baseline_reports.push(report);
        } else {
            agent_reports.push((agents[i - baseline_policies.len()].1.objective, report));
        }
    }
    write_table(&metrics, &out.join("metrics.csv"))?;

    let mut objectives = vec![Objective::MEAN_STD, Objective::VAR95, Objective::CVAR95];
    for (o, _) in &agent_reports {
        if !objectives.contains(o) {
            objectives.push(*o);
        }
    }
    let level = CostLevel {
        kappa: config.env.kappa,
        baselines: baseline_reports,
        agents: agent_reports,
    };
    let table = comparison_table(&[level], &objectives, !config.market.is_constant_vol());
    write_table(&table, &out.join("comparison.csv"))
}

fn robustness(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let grid = &config.robustness;
    let mut cells = Vec::new();
    for &value in &grid.values {
        let train_market = grid.parameter.apply(&config.market, value);
        for &objective in &grid.objectives {
            let agent_config = AgentConfig {
                objective,
                ..config.agent.clone()
            };
            let agent = obtain_agent(out, config.seed, &train_market, &config.env, &agent_config, grid.allow_train)?
                .with_context(|| {
                    format!(
                        "no cached {} agent for {} = {value} and training is disabled",
                        objective.label(),
                        grid.parameter.name()
                    )
                })?;
            let episodes = run_scenarios(&agent, &config.env, &config.market, &config.scenarios)?;
            cells.push(RobustnessCell {
                value,
                objective,
                report: EvalReport::from_episodes(&objective.label(), &episodes)?,
            });
        }
    }
    write_table(&robustness_grid(grid.parameter.name(), &cells), &out.join("robustness.csv"))
}

fn report(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let eval = &config.evaluation;
    let baselines = applicable_baselines(&config.market);
    let mut levels = Vec::new();
    for &kappa in &eval.kappas {
        let env = EnvConfig { kappa, ..config.env };
        let mut level = CostLevel {
            kappa,
            baselines: Vec::new(),
            agents: Vec::new(),
        };
        for b in &baselines {
            let episodes = run_scenarios(b, &env, &config.market, &config.scenarios)?;
            level.baselines.push(EvalReport::from_episodes(b.kind.label(), &episodes)?);
        }
        for &objective in &eval.objectives {
            let agent_config = AgentConfig {
                objective,
                ..config.agent.clone()
            };
            match obtain_agent(out, config.seed, &config.market, &env, &agent_config, eval.train_missing)? {
                Some(agent) => {
                    let episodes = run_scenarios(&agent, &env, &config.market, &config.scenarios)?;
                    level.agents.push((objective, EvalReport::from_episodes("RL", &episodes)?));
                }
                None => log::warn!("no cached {} agent at kappa {kappa}; cell left empty", objective.label()),
            }
        }
        levels.push(level);
    }
    let table = comparison_table(&levels, &eval.objectives, !config.market.is_constant_vol());
    write_table(&table, &out.join("comparison.csv"))?;

    let mut frontier_agents = Vec::new();
    for &level in &eval.frontier_levels {
        let agent_config = AgentConfig {
            objective: Objective::Var { level },
            ..config.agent.clone()
        };
        if let Some(agent) = obtain_agent(out, config.seed, &config.market, &config.env, &agent_config, eval.train_missing)? {
            let episodes = run_scenarios(&agent, &config.env, &config.market, &config.scenarios)?;
            let label = format!("RL {}", Objective::Var { level }.label());
            frontier_agents.push((level, EvalReport::from_episodes(&label, &episodes)?));
        }
    }
    let mut baseline_reports = Vec::new();
    for b in &baselines {
        let episodes = run_scenarios(b, &config.env, &config.market, &config.scenarios)?;
        baseline_reports.push(EvalReport::from_episodes(b.kind.label(), &episodes)?);
    }
    let agent_refs: Vec<(f64, &EvalReport)> = frontier_agents.iter().map(|(l, r)| (*l, r)).collect();
    let baseline_refs: Vec<&EvalReport> = baseline_reports.iter().collect();
    let points = if agent_refs.is_empty() {
        log::warn!("no frontier agents available; listing baselines at the 95% level");
        let at_95: Vec<(f64, &EvalReport)> = baseline_refs.iter().map(|r| (0.95, *r)).collect();
        frontier(&at_95, &[])?
    } else {
        frontier(&agent_refs, &baseline_refs)?
    };
    write_table(&frontier_table(&points), &out.join("frontier.csv"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_are_file_safe() {
        assert_eq!(file_label("Delta-Gamma"), "delta_gamma");
        assert_eq!(file_label("RL 2"), "rl_2");
    }

    #[test]
    fn cli_parses_global_flags_after_subcommand() {
        let cli = Cli::try_parse_from(["hedgelab", "evaluate", "--baseline", "delta", "--seed", "3"]).unwrap();
        assert_eq!(cli.seed, Some(3));
        assert!(matches!(cli.command, Command::Evaluate { ref baseline, .. } if baseline == &["delta"]));
    }
}
