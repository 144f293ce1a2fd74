//! Episodic hedging environment.
//!
//! Each day the book is quoted, the agent picks a position in a fresh
//! at-the-money call inside the admissible hedge range, the book is made
//! delta neutral with the underlying, and the market moves one day. Client
//! options arrive by a Poisson process and are entered at mid-market.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, HedgeError, Result};
use crate::market::{quote_option, step_market, MarketParams, MarketState, OptionQuote};

/// Tolerance used when checking post-trade ratios and delta neutrality.
const RATIO_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Expected client options per day.
    pub arrival_intensity: f64,
    pub client_maturity_days: u32,
    pub hedge_maturity_days: u32,
    /// Proportional transaction cost on the hedge option's value.
    pub kappa: f64,
    pub horizon_days: u32,
    pub units_per_contract: u32,
    /// Dollar-gamma threshold below which no option trade is allowed.
    pub gamma_limit: Option<f64>,
    pub initial_spot: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            arrival_intensity: 1.0,
            client_maturity_days: 60,
            hedge_maturity_days: 30,
            kappa: 0.01,
            horizon_days: 30,
            units_per_contract: 100,
            gamma_limit: None,
            initial_spot: 10.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.arrival_intensity.is_finite() && self.arrival_intensity >= 0.0) {
            return Err(HedgeError::InvalidInput(format!(
                "arrival_intensity must be >= 0, got {}",
                self.arrival_intensity
            )));
        }
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            return Err(HedgeError::InvalidInput(format!(
                "kappa must be >= 0, got {}",
                self.kappa
            )));
        }
        if self.horizon_days == 0 {
            return Err(HedgeError::InvalidInput("horizon_days must be >= 1".into()));
        }
        if self.client_maturity_days == 0 || self.hedge_maturity_days == 0 {
            return Err(HedgeError::InvalidInput("option maturities must be >= 1 day".into()));
        }
        if self.units_per_contract == 0 {
            return Err(HedgeError::InvalidInput("units_per_contract must be >= 1".into()));
        }
        if let Some(limit) = self.gamma_limit {
            if !(limit.is_finite() && limit > 0.0) {
                return Err(HedgeError::InvalidInput(format!(
                    "gamma_limit must be positive, got {limit}"
                )));
            }
        }
        if !(self.initial_spot.is_finite() && self.initial_spot > 0.0) {
            return Err(HedgeError::InvalidInput(format!(
                "initial_spot must be positive, got {}",
                self.initial_spot
            )));
        }
        Ok(())
    }

    fn units(&self) -> f64 {
        f64::from(self.units_per_contract)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Client,
    Hedge,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptionPosition {
    pub strike: f64,
    pub expiry_day: u32,
    pub is_call: bool,
    /// Signed contract count; one contract covers `units_per_contract` units.
    pub contracts: f64,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioState {
    pub positions: Vec<OptionPosition>,
    pub underlying_units: f64,
    pub cash: f64,
    pub market: MarketState,
}

/// Book-level value and Greeks, in units of the underlying.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Aggregates {
    pub value: f64,
    pub delta: f64,
    pub gamma: f64,
    pub vega: f64,
}

/// Values every position and sums `contracts × units × per-unit quantity`.
pub fn aggregate_portfolio(
    positions: &[OptionPosition],
    market: &MarketState,
    params: &MarketParams,
    units_per_contract: u32,
) -> Result<Aggregates> {
    let units = f64::from(units_per_contract);
    let mut agg = Aggregates::default();
    for pos in positions {
        let quote = quote_option(market, params, pos.strike, pos.expiry_day, pos.is_call)?;
        let size = pos.contracts * units;
        agg.value += size * quote.price_per_unit;
        agg.delta += size * quote.delta;
        agg.gamma += size * quote.gamma;
        agg.vega += size * quote.vega;
    }
    Ok(agg)
}

/// Dollar gamma: change in delta value for a 1% move, scaled by the move.
pub fn dollar_gamma(gamma: f64, spot: f64) -> f64 {
    gamma * spot * spot / 100.0
}

/// Draws the client options that arrive on the market's current day.
pub fn sample_arrivals<R: Rng + ?Sized>(
    rng: &mut R,
    market: &MarketState,
    config: &EnvConfig,
) -> Vec<OptionPosition> {
    let count = if config.arrival_intensity > 0.0 {
        let poisson = Poisson::new(config.arrival_intensity).expect("intensity validated");
        poisson.sample(rng) as usize
    } else {
        0
    };
    (0..count)
        .map(|_| OptionPosition {
            strike: market.spot,
            expiry_day: market.day + config.client_maturity_days,
            is_call: true,
            contracts: if rng.random_bool(0.5) { 1.0 } else { -1.0 },
            origin: Origin::Client,
        })
        .collect()
}

/// Admissible hedge positions for one decision, in contracts.
///
/// `start` and `end` are the positions reached at action 0 and 1. When zero
/// is an endpoint of the range the action reads as the proportion of the
/// maximum hedge, so `start` is always 0 in that case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HedgeRange {
    pub lo: f64,
    pub hi: f64,
    pub start: f64,
    pub end: f64,
    /// Position that zeroes portfolio gamma.
    pub gamma_target: f64,
    /// Position that zeroes portfolio vega (0 in constant-vol mode).
    pub vega_target: f64,
}

impl HedgeRange {
    pub fn no_trade() -> Self {
        Self {
            lo: 0.0,
            hi: 0.0,
            start: 0.0,
            end: 0.0,
            gamma_target: 0.0,
            vega_target: 0.0,
        }
    }

    /// Maps an action in `[0, 1]` linearly onto the range.
    pub fn position_for(&self, action: f64) -> f64 {
        let a = action.clamp(0.0, 1.0);
        let h = self.start + a * (self.end - self.start);
        h.clamp(self.lo, self.hi)
    }

    /// Action that reaches `position`, and whether it had to be clipped.
    pub fn action_for(&self, position: f64) -> (f64, bool) {
        let clipped = position < self.lo || position > self.hi;
        let span = self.end - self.start;
        if span == 0.0 {
            return (0.0, clipped || position != self.start);
        }
        let a = (position.clamp(self.lo, self.hi) - self.start) / span;
        (a.clamp(0.0, 1.0), clipped)
    }

    pub fn is_empty(&self) -> bool {
        self.lo == self.hi
    }
}

/// Builds the hedge range from book and per-contract hedge Greeks.
///
/// Every position inside keeps the post-trade gamma ratio or the post-trade
/// vega ratio within `[0, 1]`. In constant-vol mode only gamma counts.
pub fn action_interval(
    gamma_p: f64,
    vega_p: f64,
    gamma_h: f64,
    vega_h: f64,
    constant_vol: bool,
) -> Result<HedgeRange> {
    ensure_finite(gamma_p, "portfolio gamma")?;
    ensure_finite(vega_p, "portfolio vega")?;
    if !(gamma_h.is_finite() && gamma_h > 0.0) {
        return Err(HedgeError::InvalidInput(format!(
            "hedge option gamma must be positive, got {gamma_h}"
        )));
    }
    let gamma_target = -gamma_p / gamma_h;
    if constant_vol {
        return Ok(HedgeRange {
            lo: gamma_target.min(0.0),
            hi: gamma_target.max(0.0),
            start: 0.0,
            end: gamma_target,
            gamma_target,
            vega_target: 0.0,
        });
    }
    if !(vega_h.is_finite() && vega_h > 0.0) {
        return Err(HedgeError::InvalidInput(format!(
            "hedge option vega must be positive, got {vega_h}"
        )));
    }
    let vega_target = -vega_p / vega_h;
    let lo = 0.0_f64.min(gamma_target).min(vega_target);
    let hi = 0.0_f64.max(gamma_target).max(vega_target);
    let (start, end) = if gamma_target * vega_target >= 0.0 {
        let far = if gamma_target.abs() >= vega_target.abs() {
            gamma_target
        } else {
            vega_target
        };
        (0.0, far)
    } else {
        (vega_target, gamma_target)
    };
    Ok(HedgeRange {
        lo,
        hi,
        start,
        end,
        gamma_target,
        vega_target,
    })
}

/// Whether the book's dollar gamma breaches the limit, which permits a trade.
pub fn risk_limit_gate(dollar_gamma: f64, gamma_limit: f64) -> bool {
    dollar_gamma.abs() > gamma_limit
}

/// Raw (unnormalised) state: spot, book gamma and vega, and the per-contract
/// gamma and vega of today's hedge option.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateFeatures {
    pub spot: f64,
    pub portfolio_gamma: f64,
    pub portfolio_vega: f64,
    pub hedge_gamma: f64,
    pub hedge_vega: f64,
}

/// Which state variables the agent sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// Spot and the two gamma features (constant volatility).
    GammaOnly,
    /// All five features.
    GammaVega,
}

impl FeatureMode {
    pub fn for_params(params: &MarketParams) -> Self {
        if params.is_constant_vol() {
            Self::GammaOnly
        } else {
            Self::GammaVega
        }
    }

    pub fn width(self) -> usize {
        match self {
            Self::GammaOnly => 3,
            Self::GammaVega => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::GammaOnly => "gamma_only",
            Self::GammaVega => "gamma_vega",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "gamma_only" => Some(Self::GammaOnly),
            "gamma_vega" => Some(Self::GammaVega),
            _ => None,
        }
    }
}

impl StateFeatures {
    /// Network input: spot relative to the initial spot, gammas on a
    /// dollar-gamma scale, vegas per hundred.
    pub fn normalized(&self, mode: FeatureMode, initial_spot: f64) -> Vec<f64> {
        let gamma_scale = self.spot * self.spot / 1e4;
        let mut out = vec![
            self.spot / initial_spot,
            self.portfolio_gamma * gamma_scale,
            self.hedge_gamma * gamma_scale,
        ];
        if mode == FeatureMode::GammaVega {
            out.push(self.portfolio_vega / 100.0);
            out.push(self.hedge_vega / 100.0);
        }
        out
    }
}

/// Per-step record kept for hedge-ratio statistics and CSV export.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub day: u32,
    pub spot: f64,
    pub vol: f64,
    /// Option book value before the trade.
    pub portfolio_value: f64,
    /// Option book delta after the trade (the underlying offsets it).
    pub portfolio_delta: f64,
    pub gamma_pre: f64,
    pub gamma_post: f64,
    pub vega_pre: f64,
    pub vega_post: f64,
    pub hedge_contracts: f64,
    pub hedge_price: f64,
    pub cost: f64,
    pub reward: f64,
    /// Whether the risk-limit gate allowed a trade (always true without a limit).
    pub gate_open: bool,
}

impl StepDiagnostics {
    pub const CSV_HEADER: [&'static str; 14] = [
        "day",
        "spot",
        "vol",
        "portfolio_value",
        "portfolio_delta",
        "gamma_pre",
        "gamma_post",
        "vega_pre",
        "vega_post",
        "hedge_contracts",
        "hedge_price",
        "cost",
        "reward",
        "gate_open",
    ];

    pub fn csv_record(&self) -> Vec<String> {
        vec![
            self.day.to_string(),
            self.spot.to_string(),
            self.vol.to_string(),
            self.portfolio_value.to_string(),
            self.portfolio_delta.to_string(),
            self.gamma_pre.to_string(),
            self.gamma_post.to_string(),
            self.vega_pre.to_string(),
            self.vega_post.to_string(),
            self.hedge_contracts.to_string(),
            self.hedge_price.to_string(),
            self.cost.to_string(),
            self.reward.to_string(),
            u8::from(self.gate_open).to_string(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_features: StateFeatures,
    pub reward: f64,
    pub done: bool,
    pub diagnostics: StepDiagnostics,
}

/// What a policy sees when it decides.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub features: StateFeatures,
    pub range: HedgeRange,
    pub day: u32,
}

/// Maps an observation to an action in `[0, 1]`.
pub trait Policy: Sync {
    fn action(&self, obs: &Observation) -> f64;
}

impl<F: Fn(&Observation) -> f64 + Sync> Policy for F {
    fn action(&self, obs: &Observation) -> f64 {
        self(obs)
    }
}

/// One simulated trading book over a fixed horizon.
#[derive(Debug, Clone)]
pub struct HedgingEnv {
    config: EnvConfig,
    params: MarketParams,
    portfolio: PortfolioState,
    rng: ChaCha8Rng,
    total_cost: f64,
    done: bool,
}

impl HedgingEnv {
    /// Starts an episode with an empty book; day-0 arrivals are drawn here.
    pub fn new(config: EnvConfig, params: MarketParams, mut rng: ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        params.validate()?;
        let market = MarketState::new(config.initial_spot, params.sigma0)?;
        let mut portfolio = PortfolioState {
            positions: Vec::new(),
            underlying_units: 0.0,
            cash: 0.0,
            market,
        };
        for pos in sample_arrivals(&mut rng, &market, &config) {
            enter_at_mid(&mut portfolio, pos, &params, config.units())?;
        }
        Ok(Self {
            config,
            params,
            portfolio,
            rng,
            total_cost: 0.0,
            done: false,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn params(&self) -> &MarketParams {
        &self.params
    }

    pub fn portfolio(&self) -> &PortfolioState {
        &self.portfolio
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn total_cost(&self) -> f64 {
        self.total_cost
    }

    pub fn feature_mode(&self) -> FeatureMode {
        FeatureMode::for_params(&self.params)
    }

    /// Mark-to-market wealth: options, underlying and cash. Transaction costs
    /// are tracked separately and not deducted here.
    pub fn wealth(&self) -> Result<f64> {
        let agg = self.aggregates()?;
        let p = &self.portfolio;
        Ok(agg.value + p.underlying_units * p.market.spot + p.cash)
    }

    pub fn aggregates(&self) -> Result<Aggregates> {
        aggregate_portfolio(
            &self.portfolio.positions,
            &self.portfolio.market,
            &self.params,
            self.config.units_per_contract,
        )
    }

    fn hedge_quote(&self) -> Result<OptionQuote> {
        let market = &self.portfolio.market;
        quote_option(
            market,
            &self.params,
            market.spot,
            market.day + self.config.hedge_maturity_days,
            true,
        )
    }

    pub fn features(&self) -> Result<StateFeatures> {
        let agg = self.aggregates()?;
        let hedge = self.hedge_quote()?;
        let units = self.config.units();
        Ok(StateFeatures {
            spot: self.portfolio.market.spot,
            portfolio_gamma: agg.gamma,
            portfolio_vega: agg.vega,
            hedge_gamma: hedge.gamma * units,
            hedge_vega: hedge.vega * units,
        })
    }

    /// Admissible range for today's decision, with the risk-limit gate applied.
    pub fn hedge_range(&self) -> Result<HedgeRange> {
        let features = self.features()?;
        self.range_from(&features).map(|(range, _)| range)
    }

    fn range_from(&self, f: &StateFeatures) -> Result<(HedgeRange, bool)> {
        if let Some(limit) = self.config.gamma_limit {
            if !risk_limit_gate(dollar_gamma(f.portfolio_gamma, f.spot), limit) {
                return Ok((HedgeRange::no_trade(), false));
            }
        }
        let range = action_interval(
            f.portfolio_gamma,
            f.portfolio_vega,
            f.hedge_gamma,
            f.hedge_vega,
            self.params.is_constant_vol(),
        )?;
        Ok((range, true))
    }

    pub fn observation(&self) -> Result<Observation> {
        let features = self.features()?;
        let (range, _) = self.range_from(&features)?;
        Ok(Observation {
            features,
            range,
            day: self.portfolio.market.day,
        })
    }

    /// Executes one trading day. Actions outside `[0, 1]` are clipped.
    pub fn step(&mut self, action: f64) -> Result<StepOutcome> {
        if self.done {
            return Err(HedgeError::EpisodeDone);
        }
        ensure_finite(action, "action")?;
        if !(0.0..=1.0).contains(&action) {
            log::debug!("action {action} clipped to [0, 1]");
        }
        let units = self.config.units();
        let market = self.portfolio.market;

        // (1) today's hedge instrument and the admissible range
        let hedge = self.hedge_quote()?;
        let pre = self.aggregates()?;
        let features = StateFeatures {
            spot: market.spot,
            portfolio_gamma: pre.gamma,
            portfolio_vega: pre.vega,
            hedge_gamma: hedge.gamma * units,
            hedge_vega: hedge.vega * units,
        };
        let (range, gate_open) = self.range_from(&features)?;
        let wealth_before = pre.value + self.portfolio.underlying_units * market.spot + self.portfolio.cash;

        // (2) hedge trade at mid plus proportional cost
        let contracts = range.position_for(action);
        let cost = self.config.kappa * (hedge.price_per_unit * contracts * units).abs();
        if contracts != 0.0 {
            self.portfolio.cash -= contracts * units * hedge.price_per_unit;
            self.portfolio.positions.push(OptionPosition {
                strike: market.spot,
                expiry_day: market.day + self.config.hedge_maturity_days,
                is_call: true,
                contracts,
                origin: Origin::Hedge,
            });
        }
        let gamma_post = pre.gamma + contracts * units * hedge.gamma;
        let vega_post = pre.vega + contracts * units * hedge.vega;
        let delta_post = pre.delta + contracts * units * hedge.delta;
        debug_assert!(
            ratio_ok(pre.gamma, gamma_post) || (!self.params.is_constant_vol() && ratio_ok(pre.vega, vega_post)),
            "hedge left both ratios outside [0, 1]"
        );

        // (3) costless delta rebalance
        let target_units = -delta_post;
        self.portfolio.cash -= (target_units - self.portfolio.underlying_units) * market.spot;
        self.portfolio.underlying_units = target_units;

        // (4) one day of real-world dynamics
        let z1: f64 = self.rng.sample(StandardNormal);
        let z2: f64 = self.rng.sample(StandardNormal);
        let next = step_market(&market, &self.params, self.params.dt(), z1, z2)?;
        self.portfolio.market = next;

        let after = self.aggregates()?;
        let wealth_after = after.value + self.portfolio.underlying_units * next.spot + self.portfolio.cash;

        // expiring positions settle at intrinsic, which leaves wealth unchanged
        self.settle_expired()?;

        // (5) new client business, entered at mid
        self.done = next.day >= self.config.horizon_days;
        if !self.done {
            for pos in sample_arrivals(&mut self.rng, &next, &self.config) {
                enter_at_mid(&mut self.portfolio, pos, &self.params, units)?;
            }
        }

        // (6) reward
        let reward = wealth_after - wealth_before - cost;
        self.total_cost += cost;
        if !reward.is_finite() {
            return Err(HedgeError::Computation(format!("non-finite reward on day {}", market.day)));
        }

        let diagnostics = StepDiagnostics {
            day: market.day,
            spot: market.spot,
            vol: market.vol,
            portfolio_value: pre.value,
            portfolio_delta: delta_post,
            gamma_pre: pre.gamma,
            gamma_post,
            vega_pre: pre.vega,
            vega_post,
            hedge_contracts: contracts,
            hedge_price: hedge.price_per_unit,
            cost,
            reward,
            gate_open,
        };
        Ok(StepOutcome {
            next_features: self.features()?,
            reward,
            done: self.done,
            diagnostics,
        })
    }

    fn settle_expired(&mut self) -> Result<()> {
        let day = self.portfolio.market.day;
        if !self.portfolio.positions.iter().any(|p| p.expiry_day <= day) {
            return Ok(());
        }
        let units = self.config.units();
        let spot = self.portfolio.market.spot;
        let mut cash = self.portfolio.cash;
        self.portfolio.positions.retain(|p| {
            if p.expiry_day <= day {
                let payoff = if p.is_call {
                    (spot - p.strike).max(0.0)
                } else {
                    (p.strike - spot).max(0.0)
                };
                cash += p.contracts * units * payoff;
                false
            } else {
                true
            }
        });
        self.portfolio.cash = cash;
        Ok(())
    }
}

fn enter_at_mid(
    portfolio: &mut PortfolioState,
    pos: OptionPosition,
    params: &MarketParams,
    units: f64,
) -> Result<()> {
    let quote = quote_option(&portfolio.market, params, pos.strike, pos.expiry_day, pos.is_call)?;
    portfolio.cash -= pos.contracts * units * quote.price_per_unit;
    portfolio.positions.push(pos);
    Ok(())
}

fn ratio_ok(pre: f64, post: f64) -> bool {
    if pre == 0.0 {
        return post.abs() <= RATIO_SLACK;
    }
    let ratio = post / pre;
    (-RATIO_SLACK..=1.0 + RATIO_SLACK).contains(&ratio)
}

/// Result of one full episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    /// Undiscounted sum of rewards.
    pub gain: f64,
    pub total_cost: f64,
    pub terminal_wealth: f64,
    pub steps: Vec<StepDiagnostics>,
}

/// Runs `policy` from a fresh environment until the horizon.
pub fn episode<P: Policy + ?Sized>(
    policy: &P,
    rng: ChaCha8Rng,
    config: &EnvConfig,
    params: &MarketParams,
) -> Result<EpisodeResult> {
    let mut env = HedgingEnv::new(*config, *params, rng)?;
    run_episode(&mut env, policy)
}

/// Runs `policy` on an already-constructed environment until done.
pub fn run_episode<P: Policy + ?Sized>(env: &mut HedgingEnv, policy: &P) -> Result<EpisodeResult> {
    let mut gain = 0.0;
    let mut steps = Vec::with_capacity(env.config.horizon_days as usize);
    while !env.is_done() {
        let obs = env.observation()?;
        let outcome = env.step(policy.action(&obs))?;
        gain += outcome.reward;
        steps.push(outcome.diagnostics);
    }
    Ok(EpisodeResult {
        gain,
        total_cost: env.total_cost(),
        terminal_wealth: env.wealth()?,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_intensity_no_arrivals() {
        let config = EnvConfig {
            arrival_intensity: 0.0,
            ..EnvConfig::default()
        };
        let market = MarketState::new(10.0, 0.3).unwrap();
        let mut r = rng(1);
        for _ in 0..100 {
            assert!(sample_arrivals(&mut r, &market, &config).is_empty());
        }
    }

    #[test]
    fn arrival_moments() {
        let config = EnvConfig::default();
        let market = MarketState::new(10.0, 0.3).unwrap();
        let mut r = rng(7);
        let days = 100_000;
        let mut count = 0usize;
        let mut sign_sum = 0.0;
        for _ in 0..days {
            for pos in sample_arrivals(&mut r, &market, &config) {
                count += 1;
                sign_sum += pos.contracts;
                assert_eq!(pos.strike, 10.0);
                assert_eq!(pos.expiry_day, 60);
                assert_eq!(pos.origin, Origin::Client);
            }
        }
        let mean = count as f64 / days as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean arrivals {mean}");
        assert!((sign_sum / count as f64).abs() < 0.01);
    }

    #[test]
    fn empty_and_cancelling_books() {
        let params = MarketParams::default();
        let market = MarketState::new(10.0, 0.3).unwrap();
        assert_eq!(
            aggregate_portfolio(&[], &market, &params, 100).unwrap(),
            Aggregates::default()
        );
        let long = OptionPosition {
            strike: 10.0,
            expiry_day: 60,
            is_call: true,
            contracts: 1.0,
            origin: Origin::Client,
        };
        let short = OptionPosition {
            contracts: -1.0,
            ..long
        };
        let agg = aggregate_portfolio(&[long, short], &market, &params, 100).unwrap();
        assert_eq!(agg, Aggregates::default());
    }

    #[test]
    fn two_long_calls_value() {
        let params = MarketParams::default();
        let market = MarketState::new(10.0, 0.3).unwrap();
        let long = OptionPosition {
            strike: 10.0,
            expiry_day: 60,
            is_call: true,
            contracts: 1.0,
            origin: Origin::Client,
        };
        let agg = aggregate_portfolio(&[long, long], &market, &params, 100).unwrap();
        let single = crate::market::bsm_price(10.0, 10.0, 60.0 / 252.0, 0.0, 0.0, 0.3, true).unwrap();
        approx::assert_relative_eq!(agg.value, 2.0 * 100.0 * single, max_relative = 1e-14);
    }

    #[test]
    fn interval_examples() {
        let r = action_interval(0.0, 0.0, 0.5, 2.0, false).unwrap();
        assert_eq!((r.lo, r.hi), (0.0, 0.0));
        let r = action_interval(-50.0, 0.0, 0.5, 2.0, true).unwrap();
        assert_eq!((r.lo, r.hi), (0.0, 100.0));
        assert_eq!(r.position_for(1.0), 100.0);
        let r = action_interval(-50.0, 20.0, 0.5, 2.0, false).unwrap();
        assert_eq!((r.lo, r.hi), (-10.0, 100.0));
        assert_eq!((r.gamma_target, r.vega_target), (100.0, -10.0));
        assert!(action_interval(1.0, 1.0, 0.0, 1.0, false).is_err());
    }

    #[test]
    fn interval_equals_feasible_set() {
        // brute-force oracle: enumerate positions and test the two ratio conditions
        let cases = [
            (-50.0, 20.0, 0.5, 2.0),
            (-50.0, -20.0, 0.5, 2.0),
            (30.0, 400.0, 0.4, 3.0),
            (12.0, -7.0, 0.3, 1.1),
            (0.0, 5.0, 0.3, 1.0),
        ];
        for (gp, vp, gh, vh) in cases {
            let r = action_interval(gp, vp, gh, vh, false).unwrap();
            let mut feasible_lo = f64::INFINITY;
            let mut feasible_hi = f64::NEG_INFINITY;
            for i in -40_000..=40_000 {
                let h = i as f64 * 0.01;
                let gr = if gp != 0.0 { (gp + h * gh) / gp } else { f64::NAN };
                let vr = if vp != 0.0 { (vp + h * vh) / vp } else { f64::NAN };
                let ok = (0.0..=1.0).contains(&gr) || (0.0..=1.0).contains(&vr) || h == 0.0;
                if ok {
                    feasible_lo = feasible_lo.min(h);
                    feasible_hi = feasible_hi.max(h);
                    assert!(h >= r.lo - 1e-9 && h <= r.hi + 1e-9, "{h} outside {r:?}");
                }
            }
            assert!((feasible_lo - r.lo).abs() <= 0.01 && (feasible_hi - r.hi).abs() <= 0.01);
        }
    }

    #[test]
    fn action_zero_means_no_trade_when_zero_is_an_endpoint() {
        let r = action_interval(-50.0, -20.0, 0.5, 2.0, false).unwrap();
        assert_eq!(r.position_for(0.0), 0.0);
        let (a, clipped) = r.action_for(r.gamma_target);
        assert!(!clipped);
        assert!((r.position_for(a) - r.gamma_target).abs() < 1e-12);
    }

    #[test]
    fn gate_is_strict() {
        assert!(!risk_limit_gate(0.0, 50.0));
        assert!(!risk_limit_gate(50.0, 50.0));
        assert!(!risk_limit_gate(-50.0, 50.0));
        assert!(risk_limit_gate(-50.1, 50.0));
    }

    #[test]
    fn stepping_after_done_is_rejected() {
        let config = EnvConfig {
            horizon_days: 1,
            ..EnvConfig::default()
        };
        let mut env = HedgingEnv::new(config, MarketParams::default(), rng(3)).unwrap();
        let out = env.step(0.0).unwrap();
        assert!(out.done);
        assert!(matches!(env.step(0.0), Err(HedgeError::EpisodeDone)));
    }

    #[test]
    fn zero_kappa_reward_is_wealth_change() {
        let config = EnvConfig {
            kappa: 0.0,
            ..EnvConfig::default()
        };
        let mut env = HedgingEnv::new(config, MarketParams::default(), rng(11)).unwrap();
        while !env.is_done() {
            let w0 = env.wealth().unwrap();
            let out = env.step(0.7).unwrap();
            assert_eq!(out.diagnostics.cost, 0.0);
            let w1 = env.wealth().unwrap();
            assert!((out.reward - (w1 - w0)).abs() < 1e-9 * (1.0 + w0.abs()));
        }
    }

    #[test]
    fn full_gamma_hedge_zeroes_gamma() {
        let mut env = HedgingEnv::new(EnvConfig::default(), MarketParams::default(), rng(5)).unwrap();
        while !env.is_done() {
            let out = env.step(1.0).unwrap();
            let d = out.diagnostics;
            assert!(d.gamma_post.abs() <= 1e-9 * (1.0 + d.gamma_pre.abs()));
        }
    }

    #[test]
    fn no_trade_reward_matches_revaluation() {
        // one client option, no shocks, no drift: reward is the one-day
        // revaluation of the book plus the (zero-move) underlying leg
        let config = EnvConfig {
            arrival_intensity: 0.0,
            ..EnvConfig::default()
        };
        let params = MarketParams::default();
        let mut env = HedgingEnv::new(config, params, rng(0)).unwrap();
        let pos = OptionPosition {
            strike: 10.0,
            expiry_day: 60,
            is_call: true,
            contracts: 3.0,
            origin: Origin::Client,
        };
        env.portfolio.positions.push(pos);
        env.rng = rng(0);
        let mut check = rng(0);
        let s1 = {
            let z1: f64 = check.sample(StandardNormal);
            let z2: f64 = check.sample(StandardNormal);
            step_market(&env.portfolio.market, &params, params.dt(), z1, z2).unwrap()
        };
        let before = aggregate_portfolio(&[pos], &env.portfolio.market, &params, 100).unwrap();
        let after = aggregate_portfolio(&[pos], &s1, &params, 100).unwrap();
        let expected = after.value - before.value - before.delta * (s1.spot - 10.0);
        let out = env.step(0.0).unwrap();
        assert_eq!(out.diagnostics.hedge_contracts, 0.0);
        assert!((out.reward - expected).abs() < 1e-10, "{} vs {}", out.reward, expected);
    }
}
