//! Special functions and log-domain helpers.

use std::f64::consts::{LN_2, PI};

use statrs::function::{erf, gamma};

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Normalizes log-weights into probabilities that sum to one.
pub fn softmax(log_weights: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(log_weights);
    log_weights.iter().map(|w| (w - lse).exp()).collect()
}

pub fn normal_ln_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - LN_SQRT_2PI
}

pub fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    normal_ln_pdf(x, mean, sd).exp()
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile via Newton refinement of a rational start.
pub fn std_normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    // Acklam-style starting point, then Newton on the cdf.
    let mut x = -std::f64::consts::SQRT_2 * erf::erfc_inv(2.0 * p);
    for _ in 0..3 {
        let err = std_normal_cdf(x) - p;
        let dens = (-0.5 * x * x - LN_SQRT_2PI).exp();
        if dens <= 0.0 {
            break;
        }
        x -= err / dens;
    }
    x
}

pub fn erf(x: f64) -> f64 {
    erf::erf(x)
}

pub fn ln_gamma(x: f64) -> f64 {
    gamma::ln_gamma(x)
}

/// Regularized lower incomplete gamma P(shape, x).
pub fn gamma_p(shape: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma::gamma_lr(shape, x)
    }
}

/// Log density of Gamma(shape, scale) at `u`.
pub fn gamma_ln_pdf(u: f64, shape: f64, scale: f64) -> f64 {
    if u <= 0.0 {
        return f64::NEG_INFINITY;
    }
    (shape - 1.0) * u.ln() - u / scale - ln_gamma(shape) - shape * scale.ln()
}

/// Quantile of Gamma(shape, scale) by bracketed bisection on the cdf.
pub fn gamma_quantile(prob: f64, shape: f64, scale: f64) -> f64 {
    if prob <= 0.0 {
        return 0.0;
    }
    if prob >= 1.0 {
        return f64::INFINITY;
    }
    let mut lo = 0.0;
    let mut hi = shape.max(1.0);
    while gamma_p(shape, hi) < prob {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gamma_p(shape, mid) < prob {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    0.5 * (lo + hi) * scale
}

/// Matérn correlation `2^{1-ν}/Γ(ν) · r^ν K_ν(r)` for `r ≥ 0`.
///
/// Half-integer smoothness uses the closed polynomial-times-exponential
/// form; other values integrate `K_ν(r) = ∫₀^∞ exp(−r cosh t) cosh(νt) dt`.
pub fn matern_correlation(nu: f64, r: f64) -> f64 {
    let r = r.abs();
    if r == 0.0 {
        return 1.0;
    }
    let twice = 2.0 * nu;
    if (twice - twice.round()).abs() < 1e-12 && twice.round() as i64 % 2 == 1 {
        let p = ((twice.round() as i64 - 1) / 2) as i32;
        return half_integer_matern(p, r);
    }
    let log_norm = (1.0 - nu) * LN_2 - ln_gamma(nu) + nu * r.ln();
    let kv = bessel_k(nu, r);
    if kv <= 0.0 {
        return 0.0;
    }
    (log_norm + kv.ln()).exp().min(1.0)
}

fn half_integer_matern(p: i32, r: f64) -> f64 {
    // p!/(2p)! Σ_{i=0}^{p} (p+i)!/(i!(p−i)!) (2r)^{p−i}
    let ln_fact = |k: i32| ln_gamma(k as f64 + 1.0);
    let mut sum = 0.0;
    for i in 0..=p {
        let coef = (ln_fact(p) - ln_fact(2 * p) + ln_fact(p + i) - ln_fact(i) - ln_fact(p - i)).exp();
        sum += coef * (2.0 * r).powi(p - i);
    }
    (-r).exp() * sum
}

/// Modified Bessel function of the second kind, by quadrature of its
/// integral representation. Intended for moderate arguments (r ≳ 1e-6).
pub fn bessel_k(nu: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return f64::INFINITY;
    }
    // Truncate once x·cosh(t) − ν·t exceeds the underflow margin.
    let mut upper: f64 = 1.0;
    while x * upper.cosh() - nu.abs() * upper < 60.0 + x {
        upper *= 1.5;
    }
    let q = super::quadrature::Quadrature {
        abs_tol: 0.0,
        rel_tol: 1e-12,
        max_panels: 2000,
        initial_panels: 8,
    };
    // Factor out e^{-x} so the integrand is O(1) near t = 0.
    let integrand = |t: f64| (-x * (t.cosh() - 1.0)).exp() * (nu * t).cosh();
    match q.integrate(integrand, 0.0, upper) {
        Ok(r) => r.value * (-x).exp(),
        Err(_) => f64::NAN,
    }
}

/// `log(1 - exp(-x))` for `x > 0`.
pub fn ln_one_minus_exp_neg(x: f64) -> f64 {
    if x > LN_2 {
        (-(-x).exp()).ln_1p()
    } else {
        (-(-x).exp_m1()).ln()
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance (divides by n − 1).
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n as f64 - 1.0)
}

/// Standard error of the mean.
pub fn std_error(values: &[f64]) -> f64 {
    (sample_variance(values) / values.len() as f64).sqrt()
}

/// Ordinary least squares slope of `y` on `x` with its standard error.
pub fn ols_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - intercept - slope * a;
            r * r
        })
        .sum();
    let se = if n > 2.0 {
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    (slope, se)
}

pub const TWO_PI: f64 = 2.0 * PI;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_handles_neg_infinity() {
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + LN_2)).abs() < 1e-12);
    }

    #[test]
    fn normal_quantile_roundtrip() {
        for p in [1e-6, 0.025, 0.3, 0.5, 0.9, 0.999] {
            assert!((std_normal_cdf(std_normal_quantile(p)) - p).abs() < 1e-13);
        }
    }

    #[test]
    fn gamma_quantile_inverts_cdf() {
        for (shape, scale) in [(2.0, 3.0), (0.5, 1.0), (7.0, 0.2)] {
            for p in [0.01, 0.5, 0.97] {
                let q = gamma_quantile(p, shape, scale);
                assert!((gamma_p(shape, q / scale) - p).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn matern_half_integer_closed_forms() {
        for r in [0.1, 0.7, 2.5] {
            assert!((matern_correlation(0.5, r) - (-r).exp()).abs() < 1e-14);
            assert!((matern_correlation(1.5, r) - (1.0 + r) * (-r).exp()).abs() < 1e-14);
            let five = (1.0 + r + r * r / 3.0) * (-r).exp();
            assert!((matern_correlation(2.5, r) - five).abs() < 1e-14);
        }
    }

    #[test]
    fn bessel_matches_closed_form_at_half_integer() {
        // K_{1/2}(x) = sqrt(π/(2x)) e^{-x}
        for x in [0.05, 0.5, 3.0, 20.0] {
            let exact = (PI / (2.0 * x)).sqrt() * (-x).exp();
            let got = bessel_k(0.5, x);
            assert!(((got - exact) / exact).abs() < 1e-10, "x={x}");
        }
    }

    #[test]
    fn matern_general_nu_is_continuous_in_nu() {
        // ν = 1.5 ± tiny goes through the quadrature path.
        for r in [0.2, 1.0, 4.0] {
            let a = matern_correlation(1.5 + 1e-7, r);
            let b = matern_correlation(1.5, r);
            assert!((a - b).abs() < 1e-6, "r={r}: {a} vs {b}");
        }
    }

    #[test]
    fn ols_recovers_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let (s, se) = ols_slope(&x, &y);
        assert!((s + 0.5).abs() < 1e-14);
        assert!(se < 1e-12);
    }
}
