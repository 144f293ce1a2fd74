//! Asset/volatility simulation and European option pricing.
//!
//! The underlying follows a lognormal SABR process (β = 1):
//!
//! ```text
//! dS = μ S dt + σ S dz₁
//! dσ = v σ dz₂,   dz₁·dz₂ = ρ dt
//! ```
//!
//! Options are valued by plugging the Hagan implied-volatility approximation
//! into Black-Scholes-Merton. Greeks treat the option value as a function of
//! spot and implied volatility (the practitioner convention).

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{ensure_finite, ensure_positive, HedgeError, Result};

/// Log-moneyness below which the Hagan formula switches to its ATM branch.
pub const ATM_LOG_MONEYNESS: f64 = 1e-8;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Parameters of the simulated market.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketParams {
    /// Initial instantaneous volatility (per annum).
    pub sigma0: f64,
    /// Volatility of volatility `v`; zero gives constant volatility.
    pub vol_of_vol: f64,
    /// Correlation between the spot and volatility shocks.
    pub rho: f64,
    pub r: f64,
    pub q: f64,
    /// Real-world drift used when simulating paths.
    pub mu: f64,
    /// Trading days per year.
    pub day_count: u32,
}

impl Default for MarketParams {
    fn default() -> Self {
        Self {
            sigma0: 0.30,
            vol_of_vol: 0.0,
            rho: -0.7,
            r: 0.0,
            q: 0.0,
            mu: 0.0,
            day_count: 252,
        }
    }
}

impl MarketParams {
    /// Stochastic-volatility parameters used for the vega experiments.
    pub fn stochastic() -> Self {
        Self {
            vol_of_vol: 0.3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive(self.sigma0, "sigma0")?;
        if !(self.vol_of_vol.is_finite() && self.vol_of_vol >= 0.0) {
            return Err(HedgeError::InvalidInput(format!(
                "vol_of_vol must be non-negative, got {}",
                self.vol_of_vol
            )));
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(HedgeError::InvalidInput(format!(
                "rho must lie in [-1, 1], got {}",
                self.rho
            )));
        }
        ensure_finite(self.r, "r")?;
        ensure_finite(self.q, "q")?;
        ensure_finite(self.mu, "mu")?;
        if self.day_count == 0 {
            return Err(HedgeError::InvalidInput("day_count must be positive".into()));
        }
        Ok(())
    }

    /// True when volatility is constant and the model reduces to plain BSM.
    pub fn is_constant_vol(&self) -> bool {
        self.vol_of_vol == 0.0
    }

    /// Length of one trading day in years.
    pub fn dt(&self) -> f64 {
        1.0 / f64::from(self.day_count)
    }
}

/// The simulator's evolving world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketState {
    pub spot: f64,
    pub vol: f64,
    pub day: u32,
}

impl MarketState {
    pub fn new(spot: f64, vol: f64) -> Result<Self> {
        ensure_positive(spot, "spot")?;
        ensure_positive(vol, "vol")?;
        Ok(Self { spot, vol, day: 0 })
    }
}

/// Mid-market value and Greeks of one unit of an option.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OptionQuote {
    pub price_per_unit: f64,
    pub delta: f64,
    pub gamma: f64,
    /// Sensitivity to implied volatility (per unit of vol, not per vol point).
    pub vega: f64,
}

/// Delta, gamma and vega of one unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Greeks {
    pub delta: f64,
    pub gamma: f64,
    pub vega: f64,
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Advances the market by `dt` years using exact lognormal updates with the
/// start-of-step volatility. `z1` and `z2` are independent standard normals;
/// the correlation is applied here.
pub fn step_market(
    state: &MarketState,
    params: &MarketParams,
    dt: f64,
    z1: f64,
    z2: f64,
) -> Result<MarketState> {
    ensure_positive(dt, "dt")?;
    ensure_finite(z1, "z1")?;
    ensure_finite(z2, "z2")?;
    ensure_positive(state.spot, "spot")?;
    ensure_positive(state.vol, "vol")?;

    let sqrt_dt = dt.sqrt();
    let vol = state.vol;
    let v = params.vol_of_vol;
    let z2_corr = params.rho * z1 + (1.0 - params.rho * params.rho).max(0.0).sqrt() * z2;

    let spot = state.spot * ((params.mu - 0.5 * vol * vol) * dt + vol * sqrt_dt * z1).exp();
    let next_vol = if v == 0.0 {
        vol
    } else {
        vol * (-0.5 * v * v * dt + v * sqrt_dt * z2_corr).exp()
    };
    if !(spot.is_finite() && spot > 0.0 && next_vol.is_finite() && next_vol > 0.0) {
        return Err(HedgeError::Computation(format!(
            "market step left the positive domain (spot {spot}, vol {next_vol})"
        )));
    }
    Ok(MarketState {
        spot,
        vol: next_vol,
        day: state.day + 1,
    })
}

/// Hagan implied volatility for the β = 1 SABR model.
pub fn implied_vol(
    forward: f64,
    strike: f64,
    t: f64,
    sigma0: f64,
    vol_of_vol: f64,
    rho: f64,
) -> Result<f64> {
    ensure_positive(forward, "forward")?;
    ensure_positive(strike, "strike")?;
    ensure_positive(t, "T")?;
    ensure_positive(sigma0, "sigma0")?;
    ensure_finite(vol_of_vol, "vol_of_vol")?;
    ensure_finite(rho, "rho")?;
    if vol_of_vol == 0.0 {
        return Ok(sigma0);
    }

    let b = 1.0
        + (rho * vol_of_vol * sigma0 / 4.0 + (2.0 - 3.0 * rho * rho) * vol_of_vol * vol_of_vol / 24.0)
            * t;
    let log_moneyness = (forward / strike).ln();
    if log_moneyness.abs() < ATM_LOG_MONEYNESS {
        return positive_vol(sigma0 * b);
    }

    let phi = vol_of_vol / sigma0 * log_moneyness;
    let chi = (((1.0 - 2.0 * rho * phi + phi * phi).sqrt() + phi - rho) / (1.0 - rho)).ln();
    if chi == 0.0 || !chi.is_finite() {
        return Err(HedgeError::Computation(format!(
            "Hagan chi degenerate (phi {phi}, rho {rho})"
        )));
    }
    positive_vol(sigma0 * b * phi / chi)
}

fn positive_vol(vol: f64) -> Result<f64> {
    if vol.is_finite() && vol > 0.0 {
        Ok(vol)
    } else {
        Err(HedgeError::Computation(format!(
            "implied volatility not positive: {vol}"
        )))
    }
}

fn d1_d2(spot: f64, strike: f64, t: f64, r: f64, q: f64, sigma: f64) -> (f64, f64) {
    let sd = sigma * t.sqrt();
    let d1 = ((spot / strike).ln() + (r - q + 0.5 * sigma * sigma) * t) / sd;
    (d1, d1 - sd)
}

fn validate_bsm(spot: f64, strike: f64, t: f64, r: f64, q: f64, sigma: f64) -> Result<()> {
    ensure_positive(spot, "spot")?;
    ensure_positive(strike, "strike")?;
    ensure_positive(sigma, "sigma_imp")?;
    ensure_finite(r, "r")?;
    ensure_finite(q, "q")?;
    if !(t.is_finite() && t >= 0.0) {
        return Err(HedgeError::InvalidInput(format!("T must be >= 0, got {t}")));
    }
    Ok(())
}

fn intrinsic(spot: f64, strike: f64, is_call: bool) -> f64 {
    if is_call {
        (spot - strike).max(0.0)
    } else {
        (strike - spot).max(0.0)
    }
}

/// Black-Scholes-Merton value of one unit. `t = 0` gives intrinsic value.
pub fn bsm_price(
    spot: f64,
    strike: f64,
    t: f64,
    r: f64,
    q: f64,
    sigma_imp: f64,
    is_call: bool,
) -> Result<f64> {
    validate_bsm(spot, strike, t, r, q, sigma_imp)?;
    if t == 0.0 {
        return Ok(intrinsic(spot, strike, is_call));
    }
    let (d1, d2) = d1_d2(spot, strike, t, r, q, sigma_imp);
    let fwd_spot = spot * (-q * t).exp();
    let disc_strike = strike * (-r * t).exp();
    Ok(if is_call {
        fwd_spot * norm_cdf(d1) - disc_strike * norm_cdf(d2)
    } else {
        disc_strike * norm_cdf(-d2) - fwd_spot * norm_cdf(-d1)
    })
}

/// Delta, gamma and vega per unit. At expiry gamma and vega vanish and delta
/// is a step, with an exact at-the-money tie split in half.
pub fn greeks(
    spot: f64,
    strike: f64,
    t: f64,
    r: f64,
    q: f64,
    sigma_imp: f64,
    is_call: bool,
) -> Result<Greeks> {
    validate_bsm(spot, strike, t, r, q, sigma_imp)?;
    if t == 0.0 {
        let call_delta = if spot > strike {
            1.0
        } else if spot == strike {
            0.5
        } else {
            0.0
        };
        return Ok(Greeks {
            delta: if is_call { call_delta } else { call_delta - 1.0 },
            gamma: 0.0,
            vega: 0.0,
        });
    }
    let (d1, _) = d1_d2(spot, strike, t, r, q, sigma_imp);
    let div = (-q * t).exp();
    let sqrt_t = t.sqrt();
    let pdf = norm_pdf(d1);
    let call_delta = norm_cdf(d1) * div;
    Ok(Greeks {
        delta: if is_call { call_delta } else { call_delta - div },
        gamma: pdf * div / (spot * sigma_imp * sqrt_t),
        vega: spot * div * sqrt_t * pdf,
    })
}

/// Values an option on the current market: Hagan implied vol at the current
/// instantaneous volatility, then BSM price and Greeks.
pub fn quote_option(
    market: &MarketState,
    params: &MarketParams,
    strike: f64,
    expiry_day: u32,
    is_call: bool,
) -> Result<OptionQuote> {
    if expiry_day < market.day {
        return Err(HedgeError::InvalidInput(format!(
            "option expired on day {expiry_day}, market is on day {}",
            market.day
        )));
    }
    let t = f64::from(expiry_day - market.day) / f64::from(params.day_count);
    if t == 0.0 {
        let g = greeks(market.spot, strike, 0.0, params.r, params.q, market.vol, is_call)?;
        return Ok(OptionQuote {
            price_per_unit: intrinsic(market.spot, strike, is_call),
            delta: g.delta,
            gamma: 0.0,
            vega: 0.0,
        });
    }
    let forward = market.spot * ((params.r - params.q) * t).exp();
    let sigma_imp = implied_vol(forward, strike, t, market.vol, params.vol_of_vol, params.rho)?;
    let price = bsm_price(market.spot, strike, t, params.r, params.q, sigma_imp, is_call)?;
    let g = greeks(market.spot, strike, t, params.r, params.q, sigma_imp, is_call)?;
    Ok(OptionQuote {
        price_per_unit: price,
        delta: g.delta,
        gamma: g.gamma,
        vega: g.vega,
    })
}

/// Inverts [`bsm_price`] for the implied volatility by safeguarded Newton.
pub fn bsm_implied_vol(
    price: f64,
    spot: f64,
    strike: f64,
    t: f64,
    r: f64,
    q: f64,
    is_call: bool,
) -> Result<f64> {
    ensure_positive(t, "T")?;
    ensure_finite(price, "price")?;
    let lower_bound = bsm_price(spot, strike, t, r, q, 1e-12, is_call)?;
    let upper_bound = if is_call {
        spot * (-q * t).exp()
    } else {
        strike * (-r * t).exp()
    };
    if price <= lower_bound || price >= upper_bound {
        return Err(HedgeError::InvalidInput(format!(
            "price {price} outside no-arbitrage bounds ({lower_bound}, {upper_bound})"
        )));
    }

    let (mut lo, mut hi) = (1e-9, 10.0);
    let mut sigma = 0.3;
    for _ in 0..200 {
        let value = bsm_price(spot, strike, t, r, q, sigma, is_call)? - price;
        if value.abs() < 1e-14 {
            return Ok(sigma);
        }
        if value > 0.0 {
            hi = sigma;
        } else {
            lo = sigma;
        }
        let vega = greeks(spot, strike, t, r, q, sigma, is_call)?.vega;
        let newton = sigma - value / vega;
        sigma = if vega > 1e-300 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constant_vol_step_keeps_vol() {
        let params = MarketParams::default();
        let state = MarketState::new(10.0, 0.3).unwrap();
        let next = step_market(&state, &params, 1.0 / 252.0, 1.3, -0.4).unwrap();
        assert_eq!(next.vol, 0.3);
        assert_eq!(next.day, 1);
    }

    #[test]
    fn zero_shock_step_is_drift_correction() {
        let params = MarketParams::stochastic();
        let state = MarketState::new(10.0, 0.3).unwrap();
        let dt = 1.0 / 252.0;
        let next = step_market(&state, &params, dt, 0.0, 0.0).unwrap();
        assert_relative_eq!(next.spot, 10.0 * (-0.09 * dt / 2.0).exp(), max_relative = 1e-15);
    }

    #[test]
    fn step_rejects_non_finite() {
        let params = MarketParams::default();
        let state = MarketState::new(10.0, 0.3).unwrap();
        assert!(step_market(&state, &params, 1.0 / 252.0, f64::NAN, 0.0).is_err());
        assert!(step_market(&state, &params, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn implied_vol_flat_without_vol_of_vol() {
        for k in [6.0, 9.0, 10.0, 11.5, 14.0] {
            assert_eq!(implied_vol(10.0, k, 0.25, 0.3, 0.0, -0.7).unwrap(), 0.3);
        }
    }

    #[test]
    fn implied_vol_atm_branch_value() {
        // B evaluated by hand: 1 + (-0.01575 + 0.0019875) * 30/252
        let t = 30.0 / 252.0;
        let expected = 0.3 * (1.0 + (-0.7 * 0.3 * 0.3 / 4.0 + (2.0 - 3.0 * 0.49) * 0.09 / 24.0) * t);
        let got = implied_vol(10.0, 10.0, t, 0.3, 0.3, -0.7).unwrap();
        assert_relative_eq!(got, expected, max_relative = 1e-15);
        assert_relative_eq!(got, 0.299_508_482_142_857_1, max_relative = 1e-13);
    }

    #[test]
    fn implied_vol_continuous_across_atm_switch() {
        let t = 30.0 / 252.0;
        let atm = implied_vol(10.0, 10.0, t, 0.3, 0.3, -0.7).unwrap();
        let near = implied_vol(10.0, 10.0 * (1.0 + 1e-6), t, 0.3, 0.3, -0.7).unwrap();
        assert!((atm - near).abs() < 1e-6);
    }

    #[test]
    fn zero_vol_price_is_discounted_intrinsic() {
        let (s, k, t, r, q) = (12.0, 10.0, 0.5, 0.03, 0.01);
        let p = bsm_price(s, k, t, r, q, 1e-9, true).unwrap();
        let limit = s * (-q * t).exp() - k * (-r * t).exp();
        assert_relative_eq!(p, limit, max_relative = 1e-12);
    }

    #[test]
    fn expiry_quote_is_intrinsic() {
        let params = MarketParams::default();
        let market = MarketState {
            spot: 12.0,
            vol: 0.3,
            day: 5,
        };
        let quote = quote_option(&market, &params, 10.0, 5, true).unwrap();
        assert_eq!(quote.price_per_unit, 2.0);
        assert_eq!(quote.delta, 1.0);
        assert_eq!(quote.gamma, 0.0);
        assert_eq!(quote.vega, 0.0);
    }

    #[test]
    fn expiry_atm_delta_is_half() {
        let g = greeks(10.0, 10.0, 0.0, 0.0, 0.0, 0.3, true).unwrap();
        assert_eq!(g.delta, 0.5);
    }

    #[test]
    fn past_expiry_rejected() {
        let params = MarketParams::default();
        let market = MarketState {
            spot: 10.0,
            vol: 0.3,
            day: 6,
        };
        assert!(quote_option(&market, &params, 10.0, 5, true).is_err());
    }

    #[test]
    fn atm_delta_exceeds_half() {
        let t = 30.0 / 252.0;
        let g = greeks(10.0, 10.0, t, 0.0, 0.0, 0.3, true).unwrap();
        assert_relative_eq!(g.delta, norm_cdf(0.3 * t.sqrt() / 2.0), max_relative = 1e-15);
        assert!(g.delta > 0.5 && g.gamma > 0.0 && g.vega > 0.0);
    }

    #[test]
    fn thirty_day_atm_call_value() {
        let params = MarketParams::default();
        let market = MarketState::new(10.0, 0.3).unwrap();
        let quote = quote_option(&market, &params, 10.0, 30, true).unwrap();
        assert!(quote.price_per_unit > 0.41 && quote.price_per_unit < 0.43);
    }

    #[test]
    fn sixty_day_client_option_value() {
        let p = bsm_price(10.0, 10.0, 60.0 / 252.0, 0.0, 0.0, 0.3, true).unwrap();
        let contract = 100.0 * p;
        assert!((58.0..=60.0).contains(&contract), "{contract}");
    }

    #[test]
    fn implied_vol_inversion_roundtrip() {
        let p = bsm_price(10.0, 10.5, 0.2, 0.01, 0.0, 0.27, true).unwrap();
        let iv = bsm_implied_vol(p, 10.0, 10.5, 0.2, 0.01, 0.0, true).unwrap();
        assert_relative_eq!(iv, 0.27, max_relative = 1e-10);
    }

    #[test]
    fn validate_catches_bad_params() {
        let p = MarketParams {
            rho: 1.5,
            ..MarketParams::default()
        };
        assert!(p.validate().is_err());
        let p = MarketParams {
            day_count: 0,
            ..MarketParams::default()
        };
        assert!(p.validate().is_err());
        assert!(MarketParams::stochastic().validate().is_ok());
    }
}
