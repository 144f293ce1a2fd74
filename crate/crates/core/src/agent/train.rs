use rand::Rng;
use rand_distr::StandardNormal;

use super::{risk_functional_with_grad, Agent, AgentConfig, ReplayBuffer, Transition};
use crate::env::{episode, EnvConfig, FeatureMode, HedgingEnv, Policy};
use crate::error::{HedgeError, Result};
use crate::market::MarketParams;
use crate::scenario::{stream_rng, StreamDomain};

/// Adds Gaussian noise of standard deviation `scale` and clips to `[0, 1]`.
pub fn explore<R: Rng + ?Sized>(action: f64, scale: f64, rng: &mut R) -> f64 {
    if scale <= 0.0 {
        return action.clamp(0.0, 1.0);
    }
    let z: f64 = rng.sample(StandardNormal);
    (action + scale * z).clamp(0.0, 1.0)
}

/// Exploration scale after `step` of `total` environment steps, annealed
/// linearly from the start to the end value.
pub fn noise_scale(config: &AgentConfig, step: usize) -> f64 {
    if config.total_steps == 0 {
        return config.noise_end;
    }
    let frac = (step as f64 / config.total_steps as f64).min(1.0);
    config.noise_start + (config.noise_end - config.noise_start) * frac
}

/// One row of the training log, written at every validation snapshot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLogRow {
    pub step: usize,
    /// Mean critic loss since the previous row (`NaN` before learning starts).
    pub critic_loss: f64,
    /// Mean actor objective since the previous row, in currency units.
    pub actor_objective: f64,
    /// Objective of the deterministic policy on the validation episodes.
    pub eval_objective: f64,
    pub noise_scale: f64,
}

impl TrainLogRow {
    pub const CSV_HEADER: [&'static str; 5] =
        ["step", "critic_loss", "actor_objective", "eval_objective", "noise_scale"];

    pub fn csv_record(&self) -> Vec<String> {
        vec![
            self.step.to_string(),
            self.critic_loss.to_string(),
            self.actor_objective.to_string(),
            self.eval_objective.to_string(),
            self.noise_scale.to_string(),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best validation snapshot, or the final agent when `keep_best` is off.
    pub agent: Agent,
    pub log: Vec<TrainLogRow>,
    /// Environment step at which the returned agent was captured.
    pub selected_step: usize,
    pub episodes: usize,
}

/// Trains an agent on episodes drawn from `env_config` and `params`.
///
/// All randomness derives from `seed` through separate streams for network
/// initialisation, training episodes, exploration noise, replay sampling and
/// validation episodes. The loop is single-threaded and bit-reproducible.
pub fn train(
    env_config: &EnvConfig,
    params: &MarketParams,
    config: &AgentConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    env_config.validate()?;
    params.validate()?;
    config.validate()?;
    let mode = FeatureMode::for_params(params);
    let initial_spot = env_config.initial_spot;
    let mut agent = Agent::new(config, mode, initial_spot, &mut stream_rng(seed, StreamDomain::Init, 0))?;
    let mut explore_rng = stream_rng(seed, StreamDomain::Exploration, 0);
    let mut replay_rng = stream_rng(seed, StreamDomain::Replay, 0);
    let mut buffer = ReplayBuffer::new(config.buffer_capacity);

    let validate = |agent: &Agent| validation_objective(agent, env_config, params, config, seed);

    let mut log = Vec::new();
    let first = validate(&agent)?;
    log.push(TrainLogRow {
        step: 0,
        critic_loss: f64::NAN,
        actor_objective: f64::NAN,
        eval_objective: first,
        noise_scale: noise_scale(config, 0),
    });
    let mut best = (first, 0usize, agent.clone());

    let mut episodes = 0usize;
    let mut env = HedgingEnv::new(*env_config, *params, stream_rng(seed, StreamDomain::Training, 0))?;
    let mut nonfinite = 0usize;
    let (mut loss_sum, mut actor_sum, mut updates) = (0.0, 0.0, 0usize);

    for step in 1..=config.total_steps {
        if env.is_done() {
            episodes += 1;
            env = HedgingEnv::new(
                *env_config,
                *params,
                stream_rng(seed, StreamDomain::Training, episodes as u64),
            )?;
        }
        let obs = env.observation()?;
        let state = obs.features.normalized(mode, initial_spot);
        let scale = noise_scale(config, step);
        let action = explore(agent.act(&state)?, scale, &mut explore_rng);
        let outcome = env.step(action)?;
        buffer.push(Transition {
            state,
            action,
            reward: outcome.reward / config.reward_scale,
            next_state: outcome.next_features.normalized(mode, initial_spot),
            done: outcome.done,
        });

        if buffer.len() >= config.warmup.max(1) {
            let batch = buffer.sample(&mut replay_rng, config.batch_size);
            let stats = agent.update(&batch, config.soft_update)?;
            if stats.critic_loss.is_finite() {
                loss_sum += stats.critic_loss;
                actor_sum += stats.actor_objective * config.reward_scale;
                updates += 1;
            } else {
                nonfinite += 1;
                log::warn!("non-finite critic loss at step {step} ({nonfinite} so far)");
                if nonfinite >= config.max_nonfinite {
                    return Err(HedgeError::Diverged {
                        step,
                        message: format!("{nonfinite} non-finite critic losses"),
                    });
                }
            }
            if !(agent.actor.is_finite() && agent.critic.is_finite()) {
                return Err(HedgeError::Diverged {
                    step,
                    message: "network parameters became non-finite".into(),
                });
            }
        }

        if step % config.eval_interval == 0 || step == config.total_steps {
            let eval = validate(&agent)?;
            let (critic_loss, actor_objective) = if updates > 0 {
                (loss_sum / updates as f64, actor_sum / updates as f64)
            } else {
                (f64::NAN, f64::NAN)
            };
            log::info!(
                "step {step}: critic loss {critic_loss:.5}, actor {actor_objective:.4}, validation {eval:.4}, noise {scale:.3}"
            );
            log.push(TrainLogRow {
                step,
                critic_loss,
                actor_objective,
                eval_objective: eval,
                noise_scale: scale,
            });
            (loss_sum, actor_sum, updates) = (0.0, 0.0, 0);
            if eval < best.0 {
                best = (eval, step, agent.clone());
            }
        }
    }

    let (agent, selected_step) = if config.keep_best {
        (best.2, best.1)
    } else {
        (agent, config.total_steps)
    };
    Ok(TrainOutcome {
        agent,
        log,
        selected_step,
        episodes,
    })
}

/// Objective of the deterministic policy over the validation episodes.
fn validation_objective(
    agent: &Agent,
    env_config: &EnvConfig,
    params: &MarketParams,
    config: &AgentConfig,
    seed: u64,
) -> Result<f64> {
    if config.eval_episodes == 0 {
        return Ok(f64::NAN);
    }
    let policy: &dyn Policy = agent;
    let gains = (0..config.eval_episodes)
        .map(|i| {
            episode(policy, stream_rng(seed, StreamDomain::Validation, i as u64), env_config, params).map(|r| r.gain)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(risk_functional_with_grad(&gains, &config.objective).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_noise_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for a in [0.0, 0.3, 1.0] {
            assert_eq!(explore(a, 0.0, &mut rng), a);
        }
    }

    #[test]
    fn large_noise_is_clipped_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| explore(0.5, 1.0, &mut rng)).collect();
        assert!(draws.iter().all(|x| (0.0..=1.0).contains(x)));
        // mass at each end is P(Z > 0.5) = 0.3085
        let at_zero = draws.iter().filter(|&&x| x == 0.0).count() as f64 / n as f64;
        let at_one = draws.iter().filter(|&&x| x == 1.0).count() as f64 / n as f64;
        assert!((at_zero - 0.3085).abs() < 0.01, "{at_zero}");
        assert!((at_one - 0.3085).abs() < 0.01, "{at_one}");
        let interior = draws.iter().filter(|&&x| x > 0.25 && x < 0.75).count() as f64 / n as f64;
        // P(|Z| < 0.25) = 0.1974
        assert!((interior - 0.1974).abs() < 0.01, "{interior}");
    }

    #[test]
    fn noise_schedule_endpoints() {
        let config = AgentConfig {
            total_steps: 100,
            noise_start: 0.2,
            noise_end: 0.0,
            ..AgentConfig::default()
        };
        assert_eq!(noise_scale(&config, 0), 0.2);
        assert!((noise_scale(&config, 50) - 0.1).abs() < 1e-15);
        assert_eq!(noise_scale(&config, 100), 0.0);
        assert_eq!(noise_scale(&config, 500), 0.0);
    }
}
