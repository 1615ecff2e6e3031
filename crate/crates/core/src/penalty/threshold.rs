//! Scalar thresholding rules under the objective `(s - θ)² + λ·pen(θ)`.
//!
//! There is no ½ in front of the quadratic term, so the LASSO rule thresholds at
//! `λ/2` rather than `λ`. The SCAD rule is re-derived under the same convention.

use super::SmoothL0;
use crate::error::{Result, SicError};

/// `(s - θ)² + λ·phi_eps(θ)`.
pub fn thresholding_objective(s: f64, theta: f64, lambda: f64, pen: &SmoothL0) -> f64 {
    let r = s - theta;
    r * r + lambda * pen.value(theta)
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Points `θ > 0` where `h'(θ) = 1 + (λ/2)·phi''(θ)` vanishes.
///
/// With `u = θ²` the sign of `h'` is the sign of the cubic
/// `(u + ε²)³ - 3λε²u + λε⁴`, which is convex on `u >= 0` with its minimum at
/// `u* = ε√λ - ε²`, so it has at most two nonnegative roots.
fn stationarity_turning_points(lambda: f64, eps: f64) -> Vec<f64> {
    let e2 = eps * eps;
    let cubic = |u: f64| {
        let q = u + e2;
        q * q * q - 3.0 * lambda * e2 * u + lambda * e2 * e2
    };
    let u_star = eps * lambda.sqrt() - e2;
    if u_star <= 0.0 || cubic(u_star) >= 0.0 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(2);
    if cubic(0.0) > 0.0 {
        out.push(bisect(cubic, 0.0, u_star).sqrt());
    }
    let mut hi = 2.0 * u_star.max(e2);
    while cubic(hi) < 0.0 {
        hi *= 2.0;
    }
    out.push(bisect(cubic, u_star, hi).sqrt());
    out
}

/// Global minimizer of `(s - θ)² + λ·phi_eps(θ)`.
///
/// Every real root of the stationarity equation `θ - s + λθε²/(θ²+ε²)² = 0` is
/// enclosed by splitting `[0, |s|]` at the turning points of its left-hand side,
/// then the candidates (roots, `0`, `|s|`) are compared by objective value. Ties
/// go to the smallest `|θ|`.
pub fn threshold_sic(s: f64, lambda: f64, eps: f64) -> Result<f64> {
    let pen = SmoothL0::new(eps)?;
    if !(lambda >= 0.0) {
        return Err(SicError::Domain(format!("lambda must be nonnegative, got {lambda}")));
    }
    if s == 0.0 {
        return Ok(0.0);
    }
    if lambda == 0.0 {
        return Ok(s);
    }
    let a = s.abs();
    let e2 = eps * eps;
    let h = |t: f64| {
        let q = t * t + e2;
        t - a + lambda * t * e2 / (q * q)
    };

    let mut edges = vec![0.0];
    edges.extend(
        stationarity_turning_points(lambda, eps)
            .into_iter()
            .filter(|&t| t > 0.0 && t < a),
    );
    edges.push(a);

    let mut candidates = vec![0.0, a];
    for w in edges.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let (hlo, hhi) = (h(lo), h(hi));
        if hlo == 0.0 {
            candidates.push(lo);
        } else if (hlo < 0.0) != (hhi < 0.0) {
            candidates.push(bisect(h, lo, hi));
        }
    }

    let objective = |t: f64| thresholding_objective(a, t, lambda, &pen);
    let best = candidates
        .iter()
        .map(|&t| objective(t))
        .fold(f64::INFINITY, f64::min);
    let tol = 4.0 * f64::EPSILON * best.abs().max(1.0);
    let theta = candidates
        .into_iter()
        .filter(|&t| objective(t) <= best + tol)
        .fold(f64::INFINITY, f64::min);
    Ok(theta.copysign(s))
}

/// Soft thresholding at `λ/2`: the minimizer of `(s - θ)² + λ|θ|`.
pub fn threshold_lasso(s: f64, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(SicError::Domain(format!("lambda must be nonnegative, got {lambda}")));
    }
    Ok(s.signum() * (s.abs() - 0.5 * lambda).max(0.0))
}

/// Minimizer of `(s - θ)² + p(θ)` with `p` the SCAD penalty of slope `λ` at the
/// origin and concavity parameter `a`:
///
/// * `|s| <= λ/2` gives 0
/// * `|s| <= 3λ/2` gives `sign(s)(|s| - λ/2)`
/// * `|s| <= aλ` gives `sign(s)(2(a-1)|s| - aλ)/(2a-3)`
/// * otherwise `s`
///
/// The objective is convex for `a > 2`, so this is the unique minimizer.
pub fn threshold_scad(s: f64, lambda: f64, a: f64) -> Result<f64> {
    if !(a > 2.0) {
        return Err(SicError::Domain(format!("SCAD requires a > 2, got {a}")));
    }
    if !(lambda >= 0.0) {
        return Err(SicError::Domain(format!("lambda must be nonnegative, got {lambda}")));
    }
    let m = s.abs();
    let t = if m <= 0.5 * lambda {
        0.0
    } else if m <= 1.5 * lambda {
        m - 0.5 * lambda
    } else if m <= a * lambda {
        (2.0 * (a - 1.0) * m - a * lambda) / (2.0 * a - 3.0)
    } else {
        m
    };
    Ok(t.copysign(s))
}
