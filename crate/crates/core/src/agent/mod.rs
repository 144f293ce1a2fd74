//! Distributional deterministic actor-critic with a quantile critic.
//!
//! The critic maps `(state, action)` to `M` quantile atoms of the gain from
//! that step to the horizon and is fitted with the quantile Huber loss against
//! one-step Bellman targets built from target networks. The actor maps a state
//! to an action in `(0, 1)` and descends a risk functional of the critic's
//! distribution through the critic's action input.

mod quantile;
mod replay;
mod train;

pub use quantile::{
    critic_loss, huber, quantile_huber, quantile_huber_derivative, quantile_midpoints,
    risk_functional, risk_functional_with_grad, Objective, QuantileDistribution,
};
pub use replay::{ReplayBuffer, Transition};
pub use train::{explore, noise_scale, train, TrainLogRow, TrainOutcome};

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{FeatureMode, Observation, Policy};
use crate::error::{HedgeError, Result};
use crate::neural::{scale_gradients, Adam, Mlp, NetworkSpec, OutputActivation, StepStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    /// Number of quantile atoms `M`.
    pub atoms: usize,
    pub huber_k: f64,
    pub gamma_discount: f64,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Soft target-update coefficient per learner step.
    pub soft_update: f64,
    pub noise_start: f64,
    pub noise_end: f64,
    pub buffer_capacity: usize,
    /// Transitions collected before learning starts.
    pub warmup: usize,
    /// Environment steps; one learner step follows each step after warmup.
    pub total_steps: usize,
    /// Rewards are divided by this before reaching the critic.
    pub reward_scale: f64,
    pub hidden: Vec<usize>,
    pub objective: Objective,
    /// Environment steps between validation snapshots.
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// Return the best validation snapshot instead of the last one.
    pub keep_best: bool,
    /// Non-finite critic losses tolerated before aborting.
    pub max_nonfinite: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            atoms: 51,
            huber_k: 1.0,
            gamma_discount: 1.0,
            batch_size: 64,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            soft_update: 0.005,
            noise_start: 0.2,
            noise_end: 0.02,
            buffer_capacity: 1_000_000,
            warmup: 1_000,
            total_steps: 200_000,
            reward_scale: 10.0,
            hidden: vec![64, 64],
            objective: Objective::default(),
            eval_interval: 10_000,
            eval_episodes: 200,
            keep_best: true,
            max_nonfinite: 3,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HedgeError::InvalidInput(msg));
        if self.atoms < 2 {
            return bad(format!("atoms must be >= 2, got {}", self.atoms));
        }
        if !(self.huber_k.is_finite() && self.huber_k > 0.0) {
            return bad(format!("huber_k must be positive, got {}", self.huber_k));
        }
        if !(0.0..=1.0).contains(&self.gamma_discount) {
            return bad(format!("gamma_discount must lie in [0, 1], got {}", self.gamma_discount));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        for (name, lr) in [("actor_lr", self.actor_lr), ("critic_lr", self.critic_lr)] {
            if !(lr.is_finite() && lr > 0.0) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        if !(self.soft_update > 0.0 && self.soft_update <= 1.0) {
            return bad(format!("soft_update must lie in (0, 1], got {}", self.soft_update));
        }
        for (name, s) in [("noise_start", self.noise_start), ("noise_end", self.noise_end)] {
            if !(s.is_finite() && s >= 0.0) {
                return bad(format!("{name} must be >= 0, got {s}"));
            }
        }
        if self.buffer_capacity == 0 {
            return bad("buffer_capacity must be positive".into());
        }
        if !(self.reward_scale.is_finite() && self.reward_scale > 0.0) {
            return bad(format!("reward_scale must be positive, got {}", self.reward_scale));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad(format!("hidden widths must be non-empty and positive, got {:?}", self.hidden));
        }
        if self.eval_interval == 0 {
            return bad("eval_interval must be positive".into());
        }
        self.objective.validate()
    }
}

/// Actor, critic, their target copies and optimizers.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub actor: Mlp,
    pub critic: Mlp,
    pub target_actor: Mlp,
    pub target_critic: Mlp,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
    pub objective: Objective,
    pub feature_mode: FeatureMode,
    /// Spot used to normalise the first feature.
    pub initial_spot: f64,
    pub reward_scale: f64,
    pub huber_k: f64,
    pub gamma_discount: f64,
    pub learner_steps: u64,
}

/// Scalar diagnostics of one learner step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    /// Batch-mean critic loss, `NaN` when the step was skipped.
    pub critic_loss: f64,
    /// Batch-mean risk functional in scaled reward units.
    pub actor_objective: f64,
    pub critic_status: StepStatus,
    pub actor_status: StepStatus,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(
        config: &AgentConfig,
        feature_mode: FeatureMode,
        initial_spot: f64,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let features = feature_mode.width();
        let mut actor_widths = vec![features];
        actor_widths.extend(&config.hidden);
        actor_widths.push(1);
        let mut critic_widths = vec![features + 1];
        critic_widths.extend(&config.hidden);
        critic_widths.push(config.atoms);
        let actor_spec = NetworkSpec::new(actor_widths, OutputActivation::Sigmoid)?;
        let critic_spec = NetworkSpec::new(critic_widths, OutputActivation::Identity)?;

        let actor = Mlp::new(actor_spec.clone(), rng);
        let critic = Mlp::new(critic_spec.clone(), rng);
        Ok(Self {
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor_opt: Adam::new(&actor_spec, config.actor_lr),
            critic_opt: Adam::new(&critic_spec, config.critic_lr),
            actor,
            critic,
            objective: config.objective,
            feature_mode,
            initial_spot,
            reward_scale: config.reward_scale,
            huber_k: config.huber_k,
            gamma_discount: config.gamma_discount,
            learner_steps: 0,
        })
    }

    pub fn atoms(&self) -> usize {
        self.critic.spec().output_width()
    }

    pub fn feature_width(&self) -> usize {
        self.actor.spec().input_width()
    }

    /// Deterministic action for a normalised feature vector.
    pub fn act(&self, features: &[f64]) -> Result<f64> {
        Ok(self.actor.forward_one(features)?[0])
    }

    /// Critic's gain distribution for `(features, action)` in currency units.
    pub fn distribution(&self, features: &[f64], action: f64) -> Result<QuantileDistribution> {
        let mut input = features.to_vec();
        input.push(action);
        let atoms = self.critic.forward_one(&input)?;
        QuantileDistribution::new(atoms.into_iter().map(|a| a * self.reward_scale).collect())
    }

    /// One learner step: critic regression, actor descent, target tracking.
    pub fn update(&mut self, batch: &[&Transition], soft_update: f64) -> Result<UpdateStats> {
        if batch.is_empty() {
            return Err(HedgeError::InvalidInput("empty training batch".into()));
        }
        let targets = bellman_targets(batch, &self.target_actor, &self.target_critic, self.gamma_discount)?;
        let (critic_loss, critic_status) = self.critic_step(batch, &targets)?;
        let (actor_objective, actor_status) = self.actor_step(batch)?;
        self.target_actor.soft_update_from(&self.actor, soft_update)?;
        self.target_critic.soft_update_from(&self.critic, soft_update)?;
        self.learner_steps += 1;
        Ok(UpdateStats {
            critic_loss,
            actor_objective,
            critic_status,
            actor_status,
        })
    }

    fn critic_step(&mut self, batch: &[&Transition], targets: &Array2<f64>) -> Result<(f64, StepStatus)> {
        let input = state_action_matrix(batch, |t| t.action, self.feature_width())?;
        let cache = self.critic.forward(input.view())?;
        let predicted = cache.output();
        let taus = quantile_midpoints(self.atoms());
        let inv_batch = 1.0 / batch.len() as f64;
        let mut grad_out = Array2::zeros(predicted.raw_dim());
        let mut total = 0.0;
        for (i, (pred_row, target_row)) in predicted.outer_iter().zip(targets.outer_iter()).enumerate() {
            let pred = pred_row.to_vec();
            let target = target_row.to_vec();
            let (loss, grad) = critic_loss(&pred, &target, self.huber_k, &taus);
            total += loss;
            for (j, g) in grad.into_iter().enumerate() {
                grad_out[[i, j]] = g * inv_batch;
            }
        }
        let mean_loss = total * inv_batch;
        if !mean_loss.is_finite() {
            return Ok((f64::NAN, StepStatus::SkippedNonFinite));
        }
        let (grads, _) = self.critic.backward(&cache, grad_out.view())?;
        let status = self.critic_opt.step(&mut self.critic, &grads)?;
        Ok((mean_loss, status))
    }

    fn actor_step(&mut self, batch: &[&Transition]) -> Result<(f64, StepStatus)> {
        let (objective, grads) = actor_gradient(&self.actor, &self.critic, batch, &self.objective)?;
        let status = self.actor_opt.step(&mut self.actor, &grads)?;
        Ok((objective, status))
    }
}

impl Policy for Agent {
    fn action(&self, obs: &Observation) -> f64 {
        let features = obs.features.normalized(self.feature_mode, self.initial_spot);
        // feature widths are fixed at construction, so this cannot fail
        self.act(&features).expect("actor input width matches feature mode")
    }
}

fn state_action_matrix<F: Fn(&Transition) -> f64>(
    batch: &[&Transition],
    action: F,
    features: usize,
) -> Result<Array2<f64>> {
    let mut m = Array2::zeros((batch.len(), features + 1));
    for (i, t) in batch.iter().enumerate() {
        if t.state.len() != features {
            return Err(HedgeError::ShapeMismatch {
                what: "transition state".into(),
                expected: features,
                got: t.state.len(),
            });
        }
        for (j, &x) in t.state.iter().enumerate() {
            m[[i, j]] = x;
        }
        m[[i, features]] = action(t);
    }
    Ok(m)
}

fn states_matrix(states: &[&[f64]], features: usize) -> Result<Array2<f64>> {
    let mut m = Array2::zeros((states.len(), features));
    for (i, s) in states.iter().enumerate() {
        if s.len() != features {
            return Err(HedgeError::ShapeMismatch {
                what: "state".into(),
                expected: features,
                got: s.len(),
            });
        }
        for (j, &x) in s.iter().enumerate() {
            m[[i, j]] = x;
        }
    }
    Ok(m)
}

/// Target atoms `R + γ·Z_target(S′, π_target(S′))`; terminal transitions
/// collapse to `R`. One row per transition.
pub fn bellman_targets(
    batch: &[&Transition],
    target_actor: &Mlp,
    target_critic: &Mlp,
    gamma_discount: f64,
) -> Result<Array2<f64>> {
    let features = target_actor.spec().input_width();
    let next: Vec<&[f64]> = batch.iter().map(|t| t.next_state.as_slice()).collect();
    let next_states = states_matrix(&next, features)?;
    let next_actions = target_actor.forward(next_states.view())?;
    let mut critic_in = Array2::zeros((batch.len(), features + 1));
    critic_in
        .slice_mut(ndarray::s![.., ..features])
        .assign(&next_states);
    critic_in
        .slice_mut(ndarray::s![.., features..])
        .assign(next_actions.output());
    let next_atoms = target_critic.forward(critic_in.view())?;
    let mut targets = next_atoms.output().clone();
    for (t, mut row) in batch.iter().zip(targets.outer_iter_mut()) {
        if t.done {
            row.fill(t.reward);
        } else {
            row.mapv_inplace(|z| t.reward + gamma_discount * z);
        }
    }
    Ok(targets)
}

/// Batch-mean risk functional of `Z(S, π(S))` and its gradient in the actor's
/// parameters, obtained through the critic's action input.
pub fn actor_gradient(
    actor: &Mlp,
    critic: &Mlp,
    batch: &[&Transition],
    objective: &Objective,
) -> Result<(f64, crate::neural::Gradients)> {
    let features = actor.spec().input_width();
    let states: Vec<&[f64]> = batch.iter().map(|t| t.state.as_slice()).collect();
    let states = states_matrix(&states, features)?;
    actor_gradient_for_states(actor, critic, states.view(), objective)
}

pub(crate) fn actor_gradient_for_states(
    actor: &Mlp,
    critic: &Mlp,
    states: ArrayView2<'_, f64>,
    objective: &Objective,
) -> Result<(f64, crate::neural::Gradients)> {
    let features = actor.spec().input_width();
    let n = states.nrows();
    let actor_cache = actor.forward(states)?;
    let mut critic_in = Array2::zeros((n, features + 1));
    critic_in.slice_mut(ndarray::s![.., ..features]).assign(&states);
    critic_in
        .slice_mut(ndarray::s![.., features..])
        .assign(actor_cache.output());
    let critic_cache = critic.forward(critic_in.view())?;
    let atoms = critic_cache.output();
    let mut grad_atoms = Array2::zeros(atoms.raw_dim());
    let mut total = 0.0;
    for (i, row) in atoms.outer_iter().enumerate() {
        let (f, g) = risk_functional_with_grad(&row.to_vec(), objective);
        total += f;
        for (j, d) in g.into_iter().enumerate() {
            grad_atoms[[i, j]] = d / n as f64;
        }
    }
    let (_, critic_input_grad) = critic.backward(&critic_cache, grad_atoms.view())?;
    let action_grad = critic_input_grad.slice(ndarray::s![.., features..]).to_owned();
    let (mut grads, _) = actor.backward(&actor_cache, action_grad.view())?;
    scale_gradients(&mut grads, 1.0);
    Ok((total / n as f64, grads))
}
