//! Small log-domain helpers shared by the store, fusion and decoders.

/// `ln(e^a + e^b)` without overflow; `-inf` is the identity.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    if max == f64::INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `ln(1 - e^x)` for `x <= 0`, switching branches at `-ln 2` for accuracy.
#[inline]
pub fn log1m_exp(x: f64) -> f64 {
    if x >= 0.0 {
        return f64::NEG_INFINITY;
    }
    if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// In-place log-softmax.
pub fn log_softmax(row: &mut [f64]) {
    let norm = log_sum_exp(row);
    for v in row.iter_mut() {
        *v -= norm;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_exp_identity_and_symmetry() {
        assert_eq!(log_add_exp(f64::NEG_INFINITY, -3.0), -3.0);
        assert_eq!(log_add_exp(-3.0, f64::NEG_INFINITY), -3.0);
        let x = log_add_exp(-1.0, -2.0);
        assert!((x - ((-1.0f64).exp() + (-2.0f64).exp()).ln()).abs() < 1e-15);
        assert_eq!(log_add_exp(-1.0, -2.0), log_add_exp(-2.0, -1.0));
    }

    #[test]
    fn log1m_exp_matches_direct_form() {
        for &p in &[1e-12, 1e-6, 0.1, 0.5, 0.9, 0.999_999] {
            let got = log1m_exp(f64::ln(p));
            let want = (1.0 - p).ln();
            assert!((got - want).abs() < 1e-9 * want.abs().max(1.0), "{p}: {got} vs {want}");
        }
        assert_eq!(log1m_exp(0.0), f64::NEG_INFINITY);
    }

    #[test]
    fn softmax_normalizes() {
        let mut row = vec![1.0, 2.0, -3.0, 0.5];
        log_softmax(&mut row);
        assert!(log_sum_exp(&row).abs() < 1e-12);
    }
}
