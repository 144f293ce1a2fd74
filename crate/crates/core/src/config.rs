//! Experiment configuration in TOML.
//!
//! Every section and key is optional and falls back to the base case; unknown
//! keys are rejected.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{AgentConfig, Objective};
use crate::env::EnvConfig;
use crate::error::{HedgeError, Result};
use crate::market::MarketParams;
use crate::scenario::ScenarioSet;

/// Market parameter varied by a robustness sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    VolOfVol,
    Sigma0,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            Self::VolOfVol => "vol_of_vol",
            Self::Sigma0 => "sigma0",
        }
    }

    /// `params` with this parameter replaced by `value`.
    pub fn apply(self, params: &MarketParams, value: f64) -> MarketParams {
        let mut p = *params;
        match self {
            Self::VolOfVol => p.vol_of_vol = value,
            Self::Sigma0 => p.sigma0 = value,
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessConfig {
    pub parameter: SweepParameter,
    /// Training values of the swept parameter; evaluation uses `[market]`.
    pub values: Vec<f64>,
    /// One agent is trained per objective and value.
    pub objectives: Vec<Objective>,
    /// Train missing grid agents instead of failing.
    pub allow_train: bool,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self {
            parameter: SweepParameter::VolOfVol,
            values: vec![0.0, 0.15, 0.3, 0.45, 0.6],
            objectives: vec![Objective::MEAN_STD, Objective::VAR95, Objective::CVAR95],
            allow_train: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Transaction-cost levels of the comparison table.
    pub kappas: Vec<f64>,
    /// Agents reported per cost level, one per objective.
    pub objectives: Vec<Objective>,
    /// VaR levels of the agents placed on the risk-return frontier.
    pub frontier_levels: Vec<f64>,
    /// Train agents missing from the cache instead of leaving cells empty.
    pub train_missing: bool,
    pub histogram_bins: usize,
    /// Export raw per-scenario gains.
    pub export_gains: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            kappas: vec![0.005, 0.01, 0.02],
            objectives: vec![Objective::MEAN_STD, Objective::VAR95, Objective::CVAR95],
            frontier_levels: vec![0.9, 0.95, 0.99],
            train_missing: false,
            histogram_bins: 50,
            export_gains: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Worker threads for scenario evaluation; `0` uses all cores.
    pub workers: usize,
    pub market: MarketParams,
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub scenarios: ScenarioSet,
    pub evaluation: EvaluationConfig,
    pub robustness: RobustnessConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            output_dir: PathBuf::from("out"),
            workers: 0,
            market: MarketParams::default(),
            env: EnvConfig::default(),
            agent: AgentConfig::default(),
            scenarios: ScenarioSet::default(),
            evaluation: EvaluationConfig::default(),
            robustness: RobustnessConfig::default(),
        }
    }
}

/// Fields that determine a trained agent.
#[derive(Serialize)]
struct TrainingKey<'a> {
    seed: u64,
    market: &'a MarketParams,
    env: &'a EnvConfig,
    agent: &'a AgentConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| HedgeError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            HedgeError::Config(msg) => HedgeError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Resolved configuration with every default written out.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| HedgeError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let section = |name: &str, r: Result<()>| {
            r.map_err(|e| HedgeError::Config(format!("[{name}] {e}")))
        };
        section("market", self.market.validate())?;
        section("env", self.env.validate())?;
        section("agent", self.agent.validate())?;
        if self.scenarios.count == 0 {
            return Err(HedgeError::Config("[scenarios] count must be positive".into()));
        }
        if self.evaluation.kappas.iter().any(|k| !(k.is_finite() && *k >= 0.0)) {
            return Err(HedgeError::Config("[evaluation] kappas must be finite and >= 0".into()));
        }
        for o in self.evaluation.objectives.iter().chain(&self.robustness.objectives) {
            o.validate().map_err(|e| HedgeError::Config(format!("objective: {e}")))?;
        }
        if self.evaluation.frontier_levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
            return Err(HedgeError::Config("[evaluation] frontier_levels must lie in (0, 1)".into()));
        }
        if self.evaluation.histogram_bins == 0 {
            return Err(HedgeError::Config("[evaluation] histogram_bins must be positive".into()));
        }
        for &v in &self.robustness.values {
            let p = self.robustness.parameter.apply(&self.market, v);
            p.validate()
                .map_err(|e| HedgeError::Config(format!("[robustness] value {v}: {e}")))?;
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical serialization of everything that affects
    /// training. Two configs with the same hash train identical agents.
    pub fn training_hash(&self) -> Result<String> {
        training_hash(self.seed, &self.market, &self.env, &self.agent)
    }
}

/// Hash of an arbitrary training setup, see [`ExperimentConfig::training_hash`].
pub fn training_hash(seed: u64, market: &MarketParams, env: &EnvConfig, agent: &AgentConfig) -> Result<String> {
    let key = TrainingKey {
        seed,
        market,
        env,
        agent,
    };
    let text = toml::to_string(&key).map_err(|e| HedgeError::Config(e.to_string()))?;
    let digest = Sha256::digest(text.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}
