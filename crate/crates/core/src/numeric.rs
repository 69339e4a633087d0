//! Log-space numerics shared across the crate.

/// Natural-log underflow floor. Log probabilities below this are clamped;
/// conditioning on an event at or below it is treated as conditioning on null.
pub const LOG_FLOOR: f64 = -700.0;

pub const LN_2PI: f64 = 1.837877066409345483560659472811;

/// log(exp(a) + exp(b)) without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// log Σ exp(x_i) over a slice; NEG_INFINITY for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let mut hi = f64::NEG_INFINITY;
    for &x in xs {
        if x > hi {
            hi = x;
        }
    }
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut acc = 0.0;
    for &x in xs {
        acc += (x - hi).exp();
    }
    hi + acc.ln()
}

/// logits - log Σ exp(logits), i.e. normalized log probabilities.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(logits);
    logits.iter().map(|&l| l - z).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).iter().map(|&l| l.exp()).collect()
}

pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// Log density of N(mean, exp(log_std)^2) at x.
pub fn normal_log_pdf(x: f64, mean: f64, log_std: f64) -> f64 {
    let inv_std = (-log_std).exp();
    let z = (x - mean) * inv_std;
    -0.5 * z * z - log_std - 0.5 * LN_2PI
}

/// Log CDF of N(mean, exp(log_std)^2) at x, floored at [`LOG_FLOOR`].
///
/// Uses erfc for the left tail so small probabilities keep full relative
/// precision instead of cancelling in 1 + erf.
pub fn normal_log_cdf(x: f64, mean: f64, log_std: f64) -> f64 {
    let inv_std = (-log_std).exp();
    let z = (x - mean) * inv_std;
    let phi = 0.5 * erfc(-z * std::f64::consts::FRAC_1_SQRT_2);
    phi.max(1e-300).ln().max(LOG_FLOOR)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_matches_direct() {
        let xs: [f64; 3] = [-1.0, -2.0, -3.0];
        let direct: f64 = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - direct).abs() < 1e-14);
    }

    #[test]
    fn log_sum_exp_stable_for_large_negatives() {
        let xs = [-1000.0, -1000.0];
        let got = log_sum_exp(&xs);
        assert!((got - (-1000.0 + 2.0f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn log_softmax_normalizes() {
        let p: f64 = softmax(&[0.3, -0.7, 1.1]).iter().sum();
        assert!((p - 1.0).abs() < 1e-14);
    }

    #[test]
    fn normal_cdf_reference_points() {
        // Φ(0) = 0.5, Φ(1.96) ≈ 0.9750021048517795
        assert!((normal_log_cdf(0.0, 0.0, 0.0).exp() - 0.5).abs() < 1e-14);
        assert!((normal_log_cdf(1.96, 0.0, 0.0).exp() - 0.975_002_104_851_779_5).abs() < 1e-12);
        // deep left tail stays finite and floored
        assert!(normal_log_cdf(-1e6, 0.0, 0.0) >= LOG_FLOOR);
    }

    #[test]
    fn erf_accuracy_spot_checks() {
        // reference values to 30 digits: 0.520499877813046537682746653892
        // and 0.00467773498104726583793074363275
        assert!((erf(0.5) - 0.520_499_877_813_046_537_7).abs() < 1e-15);
        assert!((erfc(2.0) - 0.004_677_734_981_047_265_838).abs() < 1e-16);
    }
}
