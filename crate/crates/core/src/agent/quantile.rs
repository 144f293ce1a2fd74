//! Quantile representation of the gain distribution, the quantile Huber
//! regression loss, and the risk functionals the actor minimises.

use serde::{Deserialize, Serialize};

use crate::error::{HedgeError, Result};
use crate::risk::{lower_tail_weights, quantile_weights};

/// Huber function `L_k`.
pub fn huber(u: f64, k: f64) -> f64 {
    if u.abs() <= k {
        0.5 * u * u
    } else {
        k * (u.abs() - 0.5 * k)
    }
}

fn huber_derivative(u: f64, k: f64) -> f64 {
    if u.abs() <= k {
        u
    } else {
        k * u.signum()
    }
}

/// Asymmetric Huber loss `|τ − 1{u<0}| · L_k(u)` for residual `u = target − estimate`.
pub fn quantile_huber(u: f64, tau: f64, k: f64) -> f64 {
    let weight = if u < 0.0 { 1.0 - tau } else { tau };
    weight * huber(u, k)
}

/// Derivative of [`quantile_huber`] with respect to `u`.
pub fn quantile_huber_derivative(u: f64, tau: f64, k: f64) -> f64 {
    let weight = if u < 0.0 { 1.0 - tau } else { tau };
    weight * huber_derivative(u, k)
}

/// Quantile midpoints `τ_j = (2j − 1) / 2M`.
pub fn quantile_midpoints(atoms: usize) -> Vec<f64> {
    (0..atoms)
        .map(|j| (2 * j + 1) as f64 / (2 * atoms) as f64)
        .collect()
}

/// `M` atoms at fixed quantile levels.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileDistribution {
    atoms: Vec<f64>,
}

impl QuantileDistribution {
    pub fn new(atoms: Vec<f64>) -> Result<Self> {
        if atoms.len() < 2 {
            return Err(HedgeError::InvalidInput(format!(
                "need at least 2 atoms, got {}",
                atoms.len()
            )));
        }
        if atoms.iter().any(|a| !a.is_finite()) {
            return Err(HedgeError::InvalidInput("atoms must be finite".into()));
        }
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn sorted(&self) -> Vec<f64> {
        crate::risk::sorted_copy(&self.atoms)
    }

    pub fn taus(&self) -> Vec<f64> {
        quantile_midpoints(self.atoms.len())
    }
}

/// Expected quantile Huber loss of `predicted` atoms against `target` atoms,
/// `Σ_j mean_i h_{τ_j}(y_i − z_j)`, with its gradient in `predicted`.
pub fn critic_loss(predicted: &[f64], target: &[f64], k: f64, taus: &[f64]) -> (f64, Vec<f64>) {
    debug_assert_eq!(predicted.len(), taus.len());
    let inv_targets = 1.0 / target.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; predicted.len()];
    for ((z, &tau), g) in predicted.iter().zip(taus).zip(grad.iter_mut()) {
        let mut dz = 0.0;
        for y in target {
            let u = y - z;
            loss += quantile_huber(u, tau, k) * inv_targets;
            dz -= quantile_huber_derivative(u, tau, k) * inv_targets;
        }
        *g = dz;
    }
    (loss, grad)
}

/// Risk objective over the gain distribution, expressed as a loss to minimise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Objective {
    /// Mean loss plus `c` standard deviations.
    MeanStd { c: f64 },
    /// Loss quantile at `level`.
    Var { level: f64 },
    /// Mean loss beyond the `level` quantile.
    Cvar { level: f64 },
}

impl Default for Objective {
    fn default() -> Self {
        Self::Var { level: 0.95 }
    }
}

impl Objective {
    pub const MEAN_STD: Objective = Objective::MeanStd { c: 1.645 };
    pub const VAR95: Objective = Objective::Var { level: 0.95 };
    pub const CVAR95: Objective = Objective::Cvar { level: 0.95 };

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::MeanStd { c } if !c.is_finite() => {
                Err(HedgeError::InvalidInput(format!("mean-std multiplier must be finite, got {c}")))
            }
            Self::Var { level } | Self::Cvar { level } if !(level > 0.0 && level < 1.0) => {
                Err(HedgeError::InvalidInput(format!("confidence level must lie in (0, 1), got {level}")))
            }
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Self::MeanStd { c: 1.645 } => "Mean-Std".to_string(),
            Self::MeanStd { c } => format!("Mean+{c}Std"),
            Self::Var { level } => format!("VaR{}", fmt_level(level)),
            Self::Cvar { level } => format!("CVaR{}", fmt_level(level)),
        }
    }
}

fn fmt_level(level: f64) -> String {
    let pct = level * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{}", pct.round() as i64)
    } else {
        format!("{pct}")
    }
}

/// Value of `objective` (loss units, lower is better) for equally weighted
/// gain atoms, and its gradient with respect to each atom in input order.
pub fn risk_functional_with_grad(gains: &[f64], objective: &Objective) -> (f64, Vec<f64>) {
    let n = gains.len();
    let mut grad = vec![0.0; n];
    match *objective {
        Objective::MeanStd { c } => {
            let m = gains.iter().sum::<f64>() / n as f64;
            let var = gains.iter().map(|g| (g - m) * (g - m)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            for (d, g) in grad.iter_mut().zip(gains) {
                *d = -1.0 / n as f64 + if sd > 0.0 { c * (g - m) / (n as f64 * sd) } else { 0.0 };
            }
            (-m + c * sd, grad)
        }
        Objective::Var { level } => {
            let order = sort_order(gains);
            let (lo, hi, w) = quantile_weights(n, 1.0 - level);
            let q = gains[order[lo]] + w * (gains[order[hi]] - gains[order[lo]]);
            grad[order[lo]] -= 1.0 - w;
            grad[order[hi]] -= w;
            (-q, grad)
        }
        Objective::Cvar { level } => {
            let order = sort_order(gains);
            let weights = lower_tail_weights(n, 1.0 - level);
            let mut tail = 0.0;
            for (rank, w) in weights.iter().enumerate() {
                if *w > 0.0 {
                    tail += w * gains[order[rank]];
                    grad[order[rank]] = -w;
                }
            }
            (-tail, grad)
        }
    }
}

/// Value of `objective` for a quantile distribution of gains.
pub fn risk_functional(dist: &QuantileDistribution, objective: &Objective) -> f64 {
    risk_functional_with_grad(dist.atoms(), objective).0
}

/// Indices that sort `values` ascending; equal values keep index order.
fn sort_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    idx
}
