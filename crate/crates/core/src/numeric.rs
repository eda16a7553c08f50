//! Small numerical kernels shared by the density, scoring and selection code.

use std::sync::atomic::{AtomicBool, Ordering};

/// Largest exponent passed to `exp` before clamping; `exp(700)` is still
/// comfortably below `f64::MAX`.
pub const EXP_CLAMP: f64 = 700.0;

static CLAMP_WARNED: AtomicBool = AtomicBool::new(false);

/// `ln(exp(a) + exp(b))` without overflow.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// `ln Σ exp(x_i)`, shifted by the maximum. Returns `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let shifted: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + shifted.ln()
}

/// Cascade summation: error grows as O(log n) instead of O(n).
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 8;
    if values.len() <= BLOCK {
        return values.iter().fold(0.0, |acc, &v| acc + v);
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Sum that depends only on the multiset of inputs, not their order.
///
/// Values are sorted by magnitude (sign breaks ties) and then cascade-summed,
/// so any permutation of the input gives a bit-identical result.
pub fn order_invariant_sum(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.abs().total_cmp(&b.abs()).then(a.total_cmp(b)));
    pairwise_sum(&sorted)
}

/// Neumaier-compensated sum of a sequence.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// `exp(x)` with the argument clamped to [`EXP_CLAMP`]. The first clamp in
/// the process logs a warning.
pub fn clamped_exp(x: f64) -> f64 {
    if x > EXP_CLAMP {
        if !CLAMP_WARNED.swap(true, Ordering::Relaxed) {
            log::warn!("log-ratio {x} exceeds {EXP_CLAMP}; clamping exp() to avoid overflow");
        }
        return EXP_CLAMP.exp();
    }
    x.exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_add_exp_large_arguments() {
        let a = 1234.0;
        let b = 1232.0;
        let expected = 1232.0 + (2f64.exp() + 1.0).ln();
        assert!((log_add_exp(a, b) - expected).abs() < 1e-12);
        assert!((a.exp() + b.exp()).ln().is_infinite());
    }

    #[test]
    fn log_add_exp_neg_infinity() {
        assert_eq!(log_add_exp(f64::NEG_INFINITY, 3.0), 3.0);
        assert_eq!(log_add_exp(3.0, f64::NEG_INFINITY), 3.0);
        assert_eq!(
            log_add_exp(f64::NEG_INFINITY, f64::NEG_INFINITY),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn log_sum_exp_matches_pairwise_fold() {
        let xs = [-3.0, 0.5, 2.0, -700.0, 10.0];
        let folded = xs.iter().copied().fold(f64::NEG_INFINITY, log_add_exp);
        assert!((log_sum_exp(&xs) - folded).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn log_sum_exp_of_zeros_is_ln_n() {
        let zeros = vec![0.0; 17];
        assert_eq!(log_sum_exp(&zeros), 17f64.ln());
    }

    #[test]
    fn pairwise_sum_exact_on_integers() {
        let xs: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&xs), 500_500.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn order_invariant_sum_ignores_permutation() {
        let xs = [0.1, -1e-9, 3.7, 1e10, -2.25, 0.3333, 7e-5, -1e10, 12.0];
        let mut rev = xs.to_vec();
        rev.reverse();
        let mut rot = xs.to_vec();
        rot.rotate_left(4);
        let a = order_invariant_sum(&xs);
        assert_eq!(a.to_bits(), order_invariant_sum(&rev).to_bits());
        assert_eq!(a.to_bits(), order_invariant_sum(&rot).to_bits());
    }

    #[test]
    fn compensated_sum_recovers_cancellation() {
        let xs = [1.0, 1e100, 1.0, -1e100];
        assert_eq!(compensated_sum(xs), 2.0);
    }

    #[test]
    fn clamped_exp_stays_finite() {
        assert_eq!(clamped_exp(0.0), 1.0);
        assert!(clamped_exp(1e6).is_finite());
        assert_eq!(clamped_exp(1e6), 700f64.exp());
    }
}
