//! Small numerical helpers shared across modules.

/// Sum after sorting by value, with Neumaier compensation.
///
/// Two calls over the same multiset of terms return bit-identical results
/// regardless of input order, which the score identities in `benchmarks`
/// rely on.
pub(crate) fn ordered_sum(terms: &mut [f64]) -> f64 {
    terms.sort_by(|a, b| a.total_cmp(b));
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &t in terms.iter() {
        let s = sum + t;
        if sum.abs() >= t.abs() {
            comp += (sum - s) + t;
        } else {
            comp += (t - s) + sum;
        }
        sum = s;
    }
    sum + comp
}

/// `log Σ exp(z_i)`; `−∞` entries contribute nothing.
#[cfg(test)]
pub(crate) fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let s: f64 = z.iter().map(|&v| (v - m).exp()).sum();
    m + s.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordered_sum_is_order_independent() {
        let mut a = vec![1e16, 1.0, -1e16, 3.5, 0.1, 0.2];
        let mut b = vec![0.2, -1e16, 3.5, 1.0, 0.1, 1e16];
        assert_eq!(ordered_sum(&mut a), ordered_sum(&mut b));
        assert!((ordered_sum(&mut a) - 4.8).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_handles_infinities() {
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, 0.0]), 0.0);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}
