//! Prior density whose MAP estimate is the SIC-penalized estimate, and its split
//! into a flat part plus the proper density `prior_tilde`.

use std::f64::consts::FRAC_PI_2;

use super::SmoothL0;
use crate::error::{Result, SicError};
use crate::quadrature::{integrate, QuadOptions};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorSpec {
    pub lambda: f64,
    pub eps: f64,
    pub sigma2: f64,
}

impl PriorSpec {
    pub fn new(lambda: f64, eps: f64, sigma2: f64) -> Result<Self> {
        for (name, v) in [("lambda", lambda), ("eps", eps), ("sigma2", sigma2)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(SicError::Domain(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(Self { lambda, eps, sigma2 })
    }

    /// `λ / (2σ²)`
    fn rate(&self) -> f64 {
        self.lambda / (2.0 * self.sigma2)
    }
}

/// Unnormalized prior `exp{-(λ/2σ²)·phi_eps(β)}`.
pub fn prior_density(beta: f64, spec: &PriorSpec) -> Result<f64> {
    let pen = SmoothL0::new(spec.eps)?;
    Ok((-spec.rate() * pen.value(beta)).exp())
}

/// `c(λ, ε)·(exp{(λ/2σ²)·ε²/(β²+ε²)} - 1)`, a proper density on the real line.
pub fn prior_tilde(beta: f64, spec: &PriorSpec) -> Result<f64> {
    let log_c = log_norm_const(spec)?;
    Ok(tilde_with_log_const(beta, spec, log_c))
}

fn tilde_with_log_const(beta: f64, spec: &PriorSpec, log_c: f64) -> f64 {
    let e2 = spec.eps * spec.eps;
    let x = spec.rate() * e2 / (beta * beta + e2);
    // ln(e^x - 1) = x + ln(1 - e^{-x})
    let log_expm1 = if x < 30.0 { x.exp_m1().ln() } else { x + (-(-x).exp()).ln_1p() };
    (log_c + log_expm1).exp()
}

/// Normalizing constant `c(λ, ε) = 1 / ∫ (exp{(λ/2σ²)·ε²/(β²+ε²)} - 1) dβ`.
///
/// With `β = ε·tan(u)` and `L = λ/2σ²` the integral becomes
/// `2ε·e^L·∫_0^{π/2} e^{-L sin²u}·(1 - e^{-L cos²u}) / cos²u du`, whose integrand is
/// bounded (it tends to `L·e^{-L}` at `π/2`). The remaining integral is computed by
/// adaptive Gauss–Kronrod with absolute tolerance 1e-9.
pub fn prior_norm_const(spec: &PriorSpec) -> Result<f64> {
    Ok(log_norm_const(spec)?.exp())
}

/// `ln c(λ, ε)`; stays finite when `c` itself underflows.
pub fn log_norm_const(spec: &PriorSpec) -> Result<f64> {
    let l = spec.rate();
    let integrand = |u: f64| {
        let (s, c) = u.sin_cos();
        let c2 = c * c;
        let s2 = s * s;
        if c2 < 1e-300 {
            l * (-l).exp()
        } else {
            (-l * s2).exp() * -(-l * c2).exp_m1() / c2
        }
    };
    let opts = QuadOptions {
        abs_tol: 1e-9,
        rel_tol: 1e-12,
        max_intervals: 4000,
    };
    let j = integrate(integrand, 0.0, FRAC_PI_2, opts)?.value;
    if !(j > 0.0) {
        return Err(SicError::Numeric(format!("prior normalizer integral is {j}")));
    }
    // c = e^{-L} / (2 ε J)
    Ok(-l - (2.0 * spec.eps * j).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn density_at_zero_is_one() {
        for &(l, e, s) in &[(1.0, 0.1, 1.0), (60.0, 1e-3, 2.0), (0.5, 3.0, 0.1)] {
            let spec = PriorSpec::new(l, e, s).unwrap();
            assert_eq!(prior_density(0.0, &spec).unwrap(), 1.0);
        }
    }

    #[test]
    fn density_tail_limit() {
        let spec = PriorSpec::new(2.0, 0.5, 1.0).unwrap();
        let v = prior_density(1e8, &spec).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn decomposition_identity() {
        let spec = PriorSpec::new(3.0, 0.4, 0.7).unwrap();
        let c = prior_norm_const(&spec).unwrap();
        let flat = (-spec.rate()).exp();
        for i in 0..50 {
            let b = -4.0 + 8.0 * i as f64 / 49.0;
            let lhs = prior_density(b, &spec).unwrap();
            let rhs = flat * (1.0 + prior_tilde(b, &spec).unwrap() / c);
            assert!((lhs - rhs).abs() < 1e-12 * lhs.max(1.0));
        }
    }

    #[test]
    fn closed_form_small_rate() {
        // For small L, exp(x)-1 ≈ x and ∫ L ε²/(β²+ε²) dβ = L ε π.
        let spec = PriorSpec::new(2e-6, 0.3, 1.0).unwrap();
        let c = prior_norm_const(&spec).unwrap();
        let approx = 1.0 / (1e-6 * 0.3 * PI);
        assert!((c - approx).abs() / approx < 1e-5);
    }

    #[test]
    fn rejects_invalid_spec() {
        assert!(PriorSpec::new(0.0, 1.0, 1.0).is_err());
        assert!(PriorSpec::new(1.0, -1.0, 1.0).is_err());
        assert!(PriorSpec::new(1.0, 1.0, f64::INFINITY).is_err());
    }

    #[test]
    fn large_rate_does_not_overflow() {
        let spec = PriorSpec::new(2000.0, 0.1, 1.0).unwrap();
        let log_c = log_norm_const(&spec).unwrap();
        assert!(log_c.is_finite());
        let t = prior_tilde(0.0, &spec).unwrap();
        assert!(t.is_finite() && t > 0.0);
    }
}
