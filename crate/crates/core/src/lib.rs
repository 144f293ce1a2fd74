//! Gamma and vega hedging of a stochastically arriving option book.
//!
//! The crate bundles a lognormal SABR market simulator with Hagan/BSM
//! pricing, an episodic hedging environment with transaction costs,
//! rule-based hedging baselines, a distributional actor-critic learner with a
//! quantile critic, and the evaluation machinery used to compare them on
//! shared scenario sets.

pub mod agent;
pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod env;
pub mod error;
pub mod evaluation;
pub mod market;
pub mod neural;
pub mod risk;
pub mod scenario;

pub use error::{HedgeError, Result};
