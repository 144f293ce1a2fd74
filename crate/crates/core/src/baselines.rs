//! Rule-based hedging policies.

use serde::{Deserialize, Serialize};

use crate::env::{dollar_gamma, risk_limit_gate, HedgeRange, Observation, Policy};
use crate::error::{HedgeError, Result};
use crate::market::MarketParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Delta hedge only; never trades options.
    DeltaOnly,
    /// Neutralise gamma with the hedge option.
    DeltaGamma,
    /// Neutralise vega with the hedge option.
    DeltaVega,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 3] = [Self::DeltaOnly, Self::DeltaGamma, Self::DeltaVega];

    pub fn name(self) -> &'static str {
        match self {
            Self::DeltaOnly => "delta",
            Self::DeltaGamma => "delta_gamma",
            Self::DeltaVega => "delta_vega",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::DeltaOnly => "Delta",
            Self::DeltaGamma => "Delta-Gamma",
            Self::DeltaVega => "Delta-Vega",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "delta" | "delta_only" => Some(Self::DeltaOnly),
            "delta_gamma" => Some(Self::DeltaGamma),
            "delta_vega" => Some(Self::DeltaVega),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselinePolicy {
    pub kind: BaselineKind,
    pub risk_limit: Option<f64>,
}

/// Chosen action plus whether the requested position had to be clipped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineDecision {
    pub action: f64,
    pub clipped: bool,
}

impl BaselinePolicy {
    pub fn new(kind: BaselineKind, params: &MarketParams) -> Result<Self> {
        if kind == BaselineKind::DeltaVega && params.is_constant_vol() {
            return Err(HedgeError::InvalidInput(
                "delta_vega needs stochastic volatility (vol_of_vol > 0)".into(),
            ));
        }
        Ok(Self {
            kind,
            risk_limit: None,
        })
    }

    pub fn with_risk_limit(mut self, limit: f64) -> Self {
        self.risk_limit = Some(limit);
        self
    }

    pub fn decide(&self, obs: &Observation) -> BaselineDecision {
        if let Some(limit) = self.risk_limit {
            let dg = dollar_gamma(obs.features.portfolio_gamma, obs.features.spot);
            if !risk_limit_gate(dg, limit) {
                return baseline_action(&obs.range, BaselineKind::DeltaOnly);
            }
        }
        baseline_action(&obs.range, self.kind)
    }
}

impl Policy for BaselinePolicy {
    fn action(&self, obs: &Observation) -> f64 {
        let decision = self.decide(obs);
        if decision.clipped {
            log::debug!("{} target clipped into the hedge range", self.kind.name());
        }
        decision.action
    }
}

/// Action in `[0, 1]` that reaches the rule's target position.
pub fn baseline_action(range: &HedgeRange, kind: BaselineKind) -> BaselineDecision {
    let target = match kind {
        BaselineKind::DeltaOnly => 0.0,
        BaselineKind::DeltaGamma => range.gamma_target,
        BaselineKind::DeltaVega => range.vega_target,
    };
    let (action, clipped) = range.action_for(target);
    BaselineDecision { action, clipped }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{action_interval, episode, EnvConfig, HedgingEnv};
    use crate::scenario::ScenarioSet;

    #[test]
    fn targets_reached_exactly() {
        let r = action_interval(-50.0, 20.0, 0.5, 2.0, false).unwrap();
        for kind in BaselineKind::ALL {
            let d = baseline_action(&r, kind);
            assert!(!d.clipped);
            let h = r.position_for(d.action);
            let want = match kind {
                BaselineKind::DeltaOnly => 0.0,
                BaselineKind::DeltaGamma => 100.0,
                BaselineKind::DeltaVega => -10.0,
            };
            assert!((h - want).abs() < 1e-12, "{kind:?}: {h}");
        }
    }

    #[test]
    fn delta_vega_rejected_in_constant_vol() {
        assert!(BaselinePolicy::new(BaselineKind::DeltaVega, &MarketParams::default()).is_err());
    }

    #[test]
    fn delta_gamma_neutralises_every_step() {
        let params = MarketParams::default();
        let policy = BaselinePolicy::new(BaselineKind::DeltaGamma, &params).unwrap();
        let set = ScenarioSet::new(5, 9);
        for i in 0..set.count {
            let res = episode(&policy, set.rng(i), &EnvConfig::default(), &params).unwrap();
            for s in &res.steps {
                assert!(s.gamma_post.abs() <= 1e-9 * (1.0 + s.gamma_pre.abs()));
                if s.gamma_pre.abs() > 1e-12 {
                    assert!((1.0 - s.gamma_post / s.gamma_pre - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn delta_vega_neutralises_vega() {
        let params = MarketParams::stochastic();
        let config = EnvConfig {
            hedge_maturity_days: 90,
            ..EnvConfig::default()
        };
        let policy = BaselinePolicy::new(BaselineKind::DeltaVega, &params).unwrap();
        let mut env = HedgingEnv::new(config, params, ScenarioSet::new(1, 2).rng(0)).unwrap();
        while !env.is_done() {
            let obs = env.observation().unwrap();
            let out = env.step(policy.action(&obs)).unwrap();
            let d = out.diagnostics;
            assert!(d.vega_post.abs() <= 1e-9 * (1.0 + d.vega_pre.abs()));
        }
    }

    #[test]
    fn delta_only_never_pays_costs() {
        let params = MarketParams::stochastic();
        let policy = BaselinePolicy::new(BaselineKind::DeltaOnly, &params).unwrap();
        let res = episode(&policy, ScenarioSet::new(1, 5).rng(0), &EnvConfig::default(), &params).unwrap();
        assert_eq!(res.total_cost, 0.0);
        assert!(res.steps.iter().all(|s| s.hedge_contracts == 0.0));
    }

    #[test]
    fn risk_limit_blocks_small_exposure() {
        let params = MarketParams::default();
        let policy = BaselinePolicy::new(BaselineKind::DeltaGamma, &params)
            .unwrap()
            .with_risk_limit(1e12);
        let res = episode(&policy, ScenarioSet::new(1, 5).rng(0), &EnvConfig::default(), &params).unwrap();
        assert!(res.steps.iter().all(|s| s.hedge_contracts == 0.0));
    }
}
