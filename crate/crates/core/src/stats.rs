//! Sample statistics shared by the solvers and the checks.

use serde::Serialize;
use statrs::function::erf::erfc;

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate {
            mean: value,
            se: 0.0,
            n: 1,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.mean.is_finite() && self.se.is_finite()
    }

    /// `|mean - target| <= k * se + floor`.
    pub fn within(&self, target: f64, k: f64, floor: f64) -> bool {
        (self.mean - target).abs() <= k * self.se + floor
    }
}

/// Mean and standard error of the sample. Uses Welford updates so that
/// large, nearly-constant samples keep their precision.
pub fn mean_se<I: IntoIterator<Item = f64>>(values: I) -> Estimate {
    let mut n = 0usize;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    let mut first = None;
    let mut constant = true;
    for x in values {
        n += 1;
        match first {
            None => first = Some(x),
            Some(f) => constant &= x.to_bits() == f64::to_bits(f),
        }
        let delta = x - mean;
        mean += delta / n as f64;
        m2 += delta * (x - mean);
    }
    if n == 0 {
        return Estimate {
            mean: f64::NAN,
            se: f64::NAN,
            n,
        };
    }
    if constant {
        // Keep constant samples bit-exact.
        return Estimate {
            mean: first.unwrap_or(f64::NAN),
            se: 0.0,
            n,
        };
    }
    let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
    Estimate {
        mean,
        se: (var / n as f64).sqrt(),
        n,
    }
}

/// Sample standard deviation (n - 1 denominator).
pub fn std_dev(values: &[f64]) -> f64 {
    let est = mean_se(values.iter().copied());
    est.se * (est.n as f64).sqrt()
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `ln Φ(x)`, accurate in the far left tail.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x > -30.0 {
        norm_cdf(x).ln()
    } else {
        // Mills-ratio asymptotic: Φ(x) ~ φ(x)/|x| (1 - 1/x² + 3/x⁴).
        let x2 = x * x;
        -0.5 * x2 - (-x).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            + (1.0 - 1.0 / x2 + 3.0 / (x2 * x2)).ln()
    }
}

/// `ln(e^a + e^b)` without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `ln E[exp(k |x + s G|)]` for standard normal `G`, `k >= 0`, `s >= 0`.
///
/// Folded-normal moment generating function:
/// `e^{k²s²/2} (e^{kx} Φ(x/s + ks) + e^{-kx} Φ(-x/s + ks))`.
pub fn log_folded_normal_mgf(k: f64, x: f64, s: f64) -> f64 {
    if s == 0.0 {
        return k * x.abs();
    }
    let half = 0.5 * k * k * s * s;
    half + log_add_exp(
        k * x + log_norm_cdf(x / s + k * s),
        -k * x + log_norm_cdf(-x / s + k * s),
    )
}

/// Rounds to `digits` significant decimal digits.
pub fn round_sig(x: f64, digits: usize) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    let s = format!("{:.*e}", digits.saturating_sub(1), x);
    s.parse().unwrap_or(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_sample_is_exact() {
        let e = mean_se(std::iter::repeat_n(0.1, 1000));
        assert_eq!(e.mean, 0.1);
        assert_eq!(e.se, 0.0);
    }

    #[test]
    fn mean_and_se_of_small_sample() {
        let e = mean_se([1.0, 2.0, 3.0, 4.0]);
        assert!((e.mean - 2.5).abs() < 1e-15);
        // var = 5/3, se = sqrt(5/12)
        assert!((e.se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn folded_mgf_at_origin_matches_closed_form() {
        // E[e^{|G|}] = 2 Φ(1) e^{1/2}
        let want = (2.0 * norm_cdf(1.0) * 0.5f64.exp()).ln();
        assert!((log_folded_normal_mgf(1.0, 0.0, 1.0) - want).abs() < 1e-14);
        // far from the origin the fold is invisible: ln E[e^{x+G}] = x + 1/2
        assert!((log_folded_normal_mgf(1.0, 40.0, 1.0) - 40.5).abs() < 1e-12);
        assert!((log_folded_normal_mgf(1.0, -40.0, 1.0) - 40.5).abs() < 1e-12);
    }

    #[test]
    fn folded_mgf_matches_quadrature() {
        // trapezoid on a wide grid as an independent route
        let (k, x, s) = (1.7f64, 0.4f64, 0.8f64);
        let h = 1e-4;
        let mut acc = 0.0f64;
        let mut g = -12.0f64;
        while g <= 12.0 {
            let dens = (-0.5 * g * g).exp() / (2.0 * std::f64::consts::PI).sqrt();
            acc += (k * (x + s * g)).abs().exp() * dens * h;
            g += h;
        }
        assert!((log_folded_normal_mgf(k, x, s) - acc.ln()).abs() < 1e-7);
    }

    #[test]
    fn log_cdf_tail_is_continuous() {
        let a = log_norm_cdf(-29.999);
        let b = log_norm_cdf(-30.001);
        assert!((a - b).abs() < 0.1);
        assert!(log_norm_cdf(-100.0).is_finite());
    }

    #[test]
    fn round_to_twelve_digits() {
        assert_eq!(round_sig(1.0 / 3.0, 12), 0.333333333333);
        assert_eq!(round_sig(2.0, 12), 2.0);
        assert!(round_sig(f64::NAN, 12).is_nan());
    }
}
