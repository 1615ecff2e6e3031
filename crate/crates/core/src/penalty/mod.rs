//! The smooth L0 penalty `phi_eps(x) = x² / (x² + eps²)` and everything built on it:
//! derivatives, the approximate L0 norm, scalar thresholding rules, the geometry of
//! its unit balls and the prior density it induces.

mod prior;
mod threshold;

pub use prior::{log_norm_const, prior_density, prior_norm_const, prior_tilde, PriorSpec};
pub use threshold::{threshold_lasso, threshold_scad, threshold_sic, thresholding_objective};

use crate::error::{Result, SicError};

/// `phi_eps` for a fixed, validated `eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothL0 {
    eps: f64,
    eps2: f64,
}

impl SmoothL0 {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(SicError::Domain(format!("eps must be positive and finite, got {eps}")));
        }
        Ok(Self { eps, eps2: eps * eps })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        let x2 = x * x;
        if x2.is_infinite() {
            return 1.0;
        }
        x2 / (x2 + self.eps2)
    }

    #[inline]
    pub fn d1(&self, x: f64) -> f64 {
        let q = x * x + self.eps2;
        2.0 * x * self.eps2 / (q * q)
    }

    #[inline]
    pub fn d2(&self, x: f64) -> f64 {
        let x2 = x * x;
        let q = x2 + self.eps2;
        2.0 * self.eps2 * (self.eps2 - 3.0 * x2) / (q * q * q)
    }

    pub fn norm(&self, v: &[f64]) -> f64 {
        v.iter().map(|&x| self.value(x)).sum()
    }
}

pub fn phi(x: f64, eps: f64) -> Result<f64> {
    Ok(SmoothL0::new(eps)?.value(x))
}

pub fn phi_d1(x: f64, eps: f64) -> Result<f64> {
    Ok(SmoothL0::new(eps)?.d1(x))
}

pub fn phi_d2(x: f64, eps: f64) -> Result<f64> {
    Ok(SmoothL0::new(eps)?.d2(x))
}

/// Approximate L0 norm: the sum of `phi_eps` over the entries of `v`.
pub fn sic_norm(v: &[f64], eps: f64) -> Result<f64> {
    Ok(SmoothL0::new(eps)?.norm(v))
}

/// Points `(x, ±y)` of the contour `phi(x) + phi(y) = k`, returned as `(y, -y)`.
///
/// `None` when no finite `y` exists for this `x`, i.e. when `phi(x) > k` or when
/// `k - phi(x) >= 1` (the contour runs off to infinity along `y`).
pub fn ball_contour(k: f64, eps: f64, x: f64) -> Result<Option<(f64, f64)>> {
    let pen = SmoothL0::new(eps)?;
    if !(k > 0.0) {
        return Err(SicError::Domain(format!("ball level must be positive, got {k}")));
    }
    let mut rest = k - pen.value(x);
    // keep the y = 0 boundary points despite rounding in phi(x)
    if rest < 0.0 && rest > -8.0 * f64::EPSILON * k {
        rest = 0.0;
    }
    let denom = 1.0 - rest;
    if rest < 0.0 || denom <= 0.0 {
        return Ok(None);
    }
    let y = eps * (rest / denom).sqrt();
    if !y.is_finite() {
        return Ok(None);
    }
    Ok(Some((y, -y)))
}

/// Penalty weight and telescoping schedule for the sparse fit.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyConfig {
    /// Penalty weight; `None` means `ln(n)` for the dataset being fitted.
    pub lambda: Option<f64>,
    pub eps_start: f64,
    pub eps_ratio: f64,
    pub eps_steps: usize,
    /// Entries with `|B| < zero_threshold` are set to exactly zero after telescoping.
    pub zero_threshold: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        let eps_steps = 50;
        Self {
            lambda: None,
            eps_start: 1.0,
            eps_ratio: 1e-5f64.powf(1.0 / (eps_steps as f64 - 1.0)),
            eps_steps,
            zero_threshold: 1e-5,
        }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(l) = self.lambda {
            if !(l >= 0.0) || !l.is_finite() {
                return Err(SicError::Domain(format!("lambda must be nonnegative, got {l}")));
            }
        }
        if !(self.eps_start > 0.0) || !self.eps_start.is_finite() {
            return Err(SicError::Domain(format!("eps_start must be positive, got {}", self.eps_start)));
        }
        if !(self.eps_ratio > 0.0 && self.eps_ratio < 1.0) {
            return Err(SicError::Domain(format!("eps_ratio must lie in (0, 1), got {}", self.eps_ratio)));
        }
        if self.eps_steps == 0 {
            return Err(SicError::Domain("eps_steps must be at least 1".into()));
        }
        if !(self.zero_threshold > 0.0) {
            return Err(SicError::Domain(format!(
                "zero_threshold must be positive, got {}",
                self.zero_threshold
            )));
        }
        Ok(())
    }

    /// `eps_t = eps_start * eps_ratio^(t-1)` for `t = 1..=eps_steps`.
    pub fn schedule(&self) -> Vec<f64> {
        (0..self.eps_steps)
            .map(|t| self.eps_start * self.eps_ratio.powi(t as i32))
            .collect()
    }

    pub fn lambda_for(&self, n: usize) -> f64 {
        self.lambda.unwrap_or_else(|| (n as f64).ln())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn phi_examples() {
        assert_eq!(phi(0.0, 0.5).unwrap(), 0.0);
        assert!((phi(0.3, 0.3).unwrap() - 0.5).abs() < 1e-15);
        assert!((phi(1e6, 0.1).unwrap() - (1.0 - 1e-14)).abs() < 1e-13);
        assert!(phi(1.0, 0.0).is_err());
        assert!(phi(1.0, -1.0).is_err());
        assert!(phi(1.0, f64::NAN).is_err());
    }

    #[test]
    fn derivative_examples() {
        assert_eq!(phi_d1(0.0, 1.0).unwrap(), 0.0);
        assert!((phi_d1(1.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((phi_d2(0.0, 1.0).unwrap() - 2.0).abs() < 1e-15);
        assert!(phi_d2(1.0 / 3f64.sqrt(), 1.0).unwrap().abs() < 1e-12);
        assert!(phi_d1(1.0, 0.0).is_err());
        assert!(phi_d2(1.0, 0.0).is_err());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let p = SmoothL0::new(0.2).unwrap();
        let fd = central(|x| p.value(x), 0.37, 1e-6);
        assert!((p.d1(0.37) - fd).abs() < 1e-7);
        let p = SmoothL0::new(0.3).unwrap();
        let fd = central(|x| p.d1(x), 0.8, 1e-6);
        assert!((p.d2(0.8) - fd).abs() < 1e-6);
    }

    #[test]
    fn d2_negative_beyond_inflection() {
        let p = SmoothL0::new(0.5).unwrap();
        let knee = 0.5 / 3f64.sqrt();
        assert!(p.d2(knee * 1.01) < 0.0);
        assert!(p.d2(knee * 0.99) > 0.0);
    }

    #[test]
    fn sic_norm_examples() {
        assert_eq!(sic_norm(&[0.0, 0.0, 0.0], 0.1).unwrap(), 0.0);
        assert!((sic_norm(&[1.0, 1.0], 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((sic_norm(&[0.5, -2.0, 0.0], 1e-4).unwrap() - 2.0).abs() < 1e-6);
    }

    #[test]
    fn ball_contour_examples() {
        let (y, ny) = ball_contour(0.5, 1.0, 0.0).unwrap().unwrap();
        assert!((y - 1.0).abs() < 1e-15 && (ny + 1.0).abs() < 1e-15);

        let (k, eps): (f64, f64) = (0.4, 0.7);
        let x = eps * (k / (1.0 - k)).sqrt();
        let (y, _) = ball_contour(k, eps, x).unwrap().unwrap();
        assert!(y.abs() < 1e-7);

        let (k, eps) = (0.9, 0.25);
        let pen = SmoothL0::new(eps).unwrap();
        for i in 0..200 {
            let x = -2.0 + 4.0 * i as f64 / 199.0;
            if let Some((y, ny)) = ball_contour(k, eps, x).unwrap() {
                assert!((pen.value(x) + pen.value(y) - k).abs() < 1e-10);
                assert!((pen.value(x) + pen.value(ny) - k).abs() < 1e-10);
            } else {
                assert!(pen.value(x) > k);
            }
        }
    }

    #[test]
    fn ball_contour_large_level_is_unbounded() {
        // k = 1.5 and x = 0: phi(y) would have to be 1.5
        assert!(ball_contour(1.5, 1.0, 0.0).unwrap().is_none());
        assert!(ball_contour(1.5, 1.0, 10.0).unwrap().is_some());
    }

    #[test]
    fn default_schedule() {
        let cfg = PenaltyConfig::default();
        cfg.validate().unwrap();
        let s = cfg.schedule();
        assert_eq!(s.len(), 50);
        assert_eq!(s[0], 1.0);
        assert!((s[49] - 1e-5).abs() < 1e-15);
        assert!(s.windows(2).all(|w| w[1] < w[0]));
        assert!((cfg.lambda_for(1000) - 1000f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn config_rejects_bad_ratio() {
        let mut cfg = PenaltyConfig::default();
        cfg.eps_ratio = 1.0;
        assert!(cfg.validate().is_err());
        cfg.eps_ratio = 0.0;
        assert!(cfg.validate().is_err());
        cfg = PenaltyConfig::default();
        cfg.zero_threshold = 0.0;
        assert!(cfg.validate().is_err());
    }
}
