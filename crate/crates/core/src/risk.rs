//! Tail statistics shared by the critic's risk functionals and the empirical
//! evaluation metrics.
//!
//! Both views treat a sorted vector of `n` values as an equally weighted
//! distribution whose `j`-th value (1-based) sits at probability `(j - ½)/n`.
//! Quantiles interpolate linearly between those midpoints and clamp outside
//! them; expected shortfall averages the tail mass, taking a fractional share
//! of the boundary value.

/// Weight vector for the interpolated `p`-quantile of `n` sorted values.
/// Returns `(lower index, upper index, weight on upper)`.
pub fn quantile_weights(n: usize, p: f64) -> (usize, usize, f64) {
    assert!(n > 0, "quantile of an empty sample");
    let pos = p * n as f64 - 0.5;
    if pos <= 0.0 {
        return (0, 0, 0.0);
    }
    let last = n - 1;
    if pos >= last as f64 {
        return (last, last, 0.0);
    }
    let lower = pos.floor() as usize;
    let frac = pos - lower as f64;
    // ties toward the lower index
    if frac == 0.0 {
        (lower, lower, 0.0)
    } else {
        (lower, lower + 1, frac)
    }
}

/// Interpolated `p`-quantile of ascending `sorted`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let (lo, hi, w) = quantile_weights(sorted.len(), p);
    sorted[lo] + w * (sorted[hi] - sorted[lo])
}

/// Per-element weights of the lower-tail mean over probability mass `alpha`
/// of `n` equally weighted sorted values. Weights sum to one.
pub fn lower_tail_weights(n: usize, alpha: f64) -> Vec<f64> {
    assert!(n > 0, "tail of an empty sample");
    let mass = (alpha * n as f64).clamp(f64::MIN_POSITIVE, n as f64);
    let mut weights = vec![0.0; n];
    let mut remaining = mass;
    for w in weights.iter_mut() {
        if remaining <= 0.0 {
            break;
        }
        let take = remaining.min(1.0);
        *w = take / mass;
        remaining -= take;
    }
    weights
}

/// Mean of the lowest `alpha` probability mass of ascending `sorted`.
pub fn lower_tail_mean(sorted: &[f64], alpha: f64) -> f64 {
    lower_tail_weights(sorted.len(), alpha)
        .iter()
        .zip(sorted)
        .map(|(w, x)| w * x)
        .sum()
}

pub fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Standard deviation with divisor `n - ddof`.
pub fn std_dev(values: &[f64], ddof: usize) -> f64 {
    let m = mean(values);
    let ss: f64 = values.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (values.len() - ddof) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_at_midpoints_is_exact() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.125), 1.0);
        assert_eq!(quantile_sorted(&v, 0.375), 2.0);
        assert_eq!(quantile_sorted(&v, 0.25), 1.5);
        assert_eq!(quantile_sorted(&v, 0.01), 1.0);
        assert_eq!(quantile_sorted(&v, 0.99), 4.0);
    }

    #[test]
    fn tail_mean_fractional_boundary() {
        let v = [1.0, 2.0, 3.0, 4.0];
        // mass 0.5 * 4 = 2 values
        assert_eq!(lower_tail_mean(&v, 0.5), 1.5);
        // mass 1.5 values: (1 + 0.5 * 2) / 1.5
        assert!((lower_tail_mean(&v, 0.375) - 2.0 / 1.5).abs() < 1e-15);
        let w = lower_tail_weights(51, 0.05);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w[2] > 0.0 && w[3] == 0.0);
    }

    #[test]
    fn symmetric_positions() {
        // midpoint positions are symmetric: q_p(-x) = -q_{1-p}(x)
        let v = [-3.0, -1.0, 0.5, 2.0, 7.0];
        let neg = sorted_copy(&v.iter().map(|x| -x).collect::<Vec<_>>());
        for p in [0.05, 0.2, 0.5, 0.77, 0.95] {
            assert!((quantile_sorted(&neg, p) + quantile_sorted(&v, 1.0 - p)).abs() < 1e-12);
        }
    }
}
