//! Penalized Newton / Fisher scoring for one block of coefficients.
//!
//! Maximizes `f(β) - w·Σ_{k penalized} phi_eps(β_k)` where `f` supplies its value,
//! score and (positive semi-definite) information. The penalty curvature
//! `phi''` can be negative, so the system matrix is ridged until it is positive
//! definite, solved by QR, and the step is halved until the objective does not
//! decrease.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::penalty::SmoothL0;

/// A smooth, concave-ish objective over one coefficient block.
pub trait SmoothObjective {
    fn dim(&self) -> usize;
    /// `-∞` (or NaN) marks an infeasible point; the line search rejects it.
    fn value(&self, beta: &DVector<f64>) -> f64;
    fn score(&self, beta: &DVector<f64>) -> DVector<f64>;
    /// Negative Hessian (or its expectation).
    fn information(&self, beta: &DVector<f64>) -> DMatrix<f64>;
    /// Size of a step, compared against [`ScoringOptions::max_step`].
    fn step_size(&self, delta: &DVector<f64>) -> f64 {
        delta.amax()
    }
}

/// `w·Σ phi_eps(β_k)` over the coordinates flagged in `penalized`.
#[derive(Debug, Clone, Copy)]
pub struct BlockPenalty<'a> {
    pub weight: f64,
    pub phi: SmoothL0,
    pub penalized: &'a [bool],
}

impl BlockPenalty<'_> {
    pub fn value(&self, beta: &DVector<f64>) -> f64 {
        if self.weight == 0.0 {
            return 0.0;
        }
        self.weight
            * beta
                .iter()
                .zip(self.penalized)
                .filter(|(_, &p)| p)
                .map(|(&b, _)| self.phi.value(b))
                .sum::<f64>()
    }

    /// `w·phi'(β)`, zero at unpenalized coordinates.
    pub fn gradient(&self, beta: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            beta.len(),
            beta.iter()
                .zip(self.penalized)
                .map(|(&b, &p)| if p { self.weight * self.phi.d1(b) } else { 0.0 }),
        )
    }

    /// `w·phi''(β)`, zero at unpenalized coordinates.
    pub fn curvature(&self, beta: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            beta.len(),
            beta.iter()
                .zip(self.penalized)
                .map(|(&b, &p)| if p { self.weight * self.phi.d2(b) } else { 0.0 }),
        )
    }
}

pub fn penalized_value<O: SmoothObjective + ?Sized>(obj: &O, pen: &BlockPenalty, beta: &DVector<f64>) -> f64 {
    obj.value(beta) - pen.value(beta)
}

/// `score - w·phi'`
pub fn penalized_score<O: SmoothObjective + ?Sized>(obj: &O, pen: &BlockPenalty, beta: &DVector<f64>) -> DVector<f64> {
    obj.score(beta) - pen.gradient(beta)
}

/// `information + w·diag(phi'')`
pub fn penalized_information<O: SmoothObjective + ?Sized>(
    obj: &O,
    pen: &BlockPenalty,
    beta: &DVector<f64>,
) -> DMatrix<f64> {
    let mut info = obj.information(beta);
    for (k, c) in pen.curvature(beta).iter().enumerate() {
        info[(k, k)] += c;
    }
    info
}

#[derive(Debug, Clone, Copy)]
pub struct ScoringOptions {
    pub max_iters: usize,
    /// Stop once `max |Δβ| < tol`.
    pub tol: f64,
    pub max_halvings: usize,
    /// Steps larger than this (as measured by [`SmoothObjective::step_size`]) are
    /// shrunk to it before the halving search starts.
    pub max_step: f64,
}

impl Default for ScoringOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-7,
            max_halvings: 30,
            max_step: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScoringOutcome {
    pub beta: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Set when a step failed to improve the objective after all halvings.
    pub line_search_failed: bool,
    /// Largest ridge that had to be added to the system matrix.
    pub max_ridge: f64,
    pub value: f64,
}

/// Solves `(I + ridge·Id) δ = g`, escalating the ridge by 10 from 1e-8 until the
/// matrix admits a Cholesky factorization. Returns the step and the ridge used.
pub(crate) fn ridged_solve(info: &DMatrix<f64>, g: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
    let k = info.nrows();
    let mut ridge = 0.0;
    let mut next = 1e-8 * info.diagonal().amax().max(1.0);
    for _ in 0..40 {
        let mut h = info.clone();
        for i in 0..k {
            h[(i, i)] += ridge;
        }
        if h.iter().all(|v| v.is_finite()) && Cholesky::new(h.clone()).is_some() {
            if let Some(step) = h.qr().solve(g) {
                if step.iter().all(|v| v.is_finite()) {
                    return Some((step, ridge));
                }
            }
        }
        ridge = next;
        next *= 10.0;
    }
    None
}

/// One ascent step on the free coordinates. Returns the new point, its penalized
/// value, the length `max|δ|` of the full (unhalved) step and the ridge used;
/// `None` when no halving improves.
pub fn ascent_step<O: SmoothObjective + ?Sized>(
    obj: &O,
    pen: &BlockPenalty,
    beta: &DVector<f64>,
    free: &[bool],
    current: f64,
    opts: &ScoringOptions,
) -> Option<(DVector<f64>, f64, f64, f64)> {
    let idx: Vec<usize> = (0..beta.len()).filter(|&k| free[k]).collect();
    if idx.is_empty() {
        return Some((beta.clone(), current, 0.0, 0.0));
    }
    let g = penalized_score(obj, pen, beta);
    let h = penalized_information(obj, pen, beta);
    let g_free = DVector::from_iterator(idx.len(), idx.iter().map(|&k| g[k]));
    let h_free = DMatrix::from_fn(idx.len(), idx.len(), |a, b| h[(idx[a], idx[b])]);
    let (delta, ridge) = ridged_solve(&h_free, &g_free)?;
    let full = delta.amax();
    let mut embedded = DVector::zeros(beta.len());
    for (a, &k) in idx.iter().enumerate() {
        embedded[k] = delta[a];
    }
    let size = obj.step_size(&embedded);
    let mut t = if size > opts.max_step { opts.max_step / size } else { 1.0 };
    for _ in 0..=opts.max_halvings {
        let mut cand = beta.clone();
        for (a, &k) in idx.iter().enumerate() {
            cand[k] += t * delta[a];
        }
        let v = penalized_value(obj, pen, &cand);
        if v >= current {
            return Some((cand, v, full, ridge));
        }
        if full < opts.tol {
            // stationary up to rounding
            return Some((beta.clone(), current, full, ridge));
        }
        t *= 0.5;
    }
    None
}

/// Iterates [`ascent_step`] until the full step is below `opts.tol`.
pub fn maximize<O: SmoothObjective + ?Sized>(
    obj: &O,
    pen: &BlockPenalty,
    beta0: DVector<f64>,
    free: &[bool],
    opts: &ScoringOptions,
) -> ScoringOutcome {
    let mut beta = beta0;
    let mut value = penalized_value(obj, pen, &beta);
    let mut max_ridge: f64 = 0.0;
    for it in 1..=opts.max_iters {
        match ascent_step(obj, pen, &beta, free, value, opts) {
            Some((next, v, moved, ridge)) => {
                beta = next;
                value = v;
                max_ridge = max_ridge.max(ridge);
                if moved < opts.tol {
                    return ScoringOutcome {
                        beta,
                        iterations: it,
                        converged: true,
                        line_search_failed: false,
                        max_ridge,
                        value,
                    };
                }
            }
            None => {
                return ScoringOutcome {
                    beta,
                    iterations: it,
                    converged: false,
                    line_search_failed: true,
                    max_ridge,
                    value,
                };
            }
        }
    }
    ScoringOutcome {
        beta,
        iterations: opts.max_iters,
        converged: false,
        line_search_failed: false,
        max_ridge,
        value,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `-(β-c)ᵀQ(β-c)/2`
    struct Quadratic {
        q: DMatrix<f64>,
        c: DVector<f64>,
    }

    impl SmoothObjective for Quadratic {
        fn dim(&self) -> usize {
            self.c.len()
        }
        fn value(&self, beta: &DVector<f64>) -> f64 {
            let r = beta - &self.c;
            -0.5 * r.dot(&(&self.q * &r))
        }
        fn score(&self, beta: &DVector<f64>) -> DVector<f64> {
            -(&self.q * (beta - &self.c))
        }
        fn information(&self, _beta: &DVector<f64>) -> DMatrix<f64> {
            self.q.clone()
        }
    }

    fn quad() -> Quadratic {
        Quadratic {
            q: DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]),
            c: DVector::from_vec(vec![1.0, -2.0, 0.5]),
        }
    }

    #[test]
    fn unpenalized_quadratic_lands_in_one_step() {
        let obj = quad();
        let mask = [false; 3];
        let pen = BlockPenalty {
            weight: 0.0,
            phi: SmoothL0::new(1.0).unwrap(),
            penalized: &mask,
        };
        let b0 = DVector::zeros(3);
        let v0 = penalized_value(&obj, &pen, &b0);
        let (b1, _, _, ridge) = ascent_step(&obj, &pen, &b0, &[true; 3], v0, &ScoringOptions::default()).unwrap();
        assert_eq!(ridge, 0.0);
        assert!((b1 - &obj.c).amax() < 1e-12);
    }

    #[test]
    fn frozen_coordinates_do_not_move() {
        let obj = quad();
        let mask = [true; 3];
        let pen = BlockPenalty {
            weight: 0.1,
            phi: SmoothL0::new(0.5).unwrap(),
            penalized: &mask,
        };
        let out = maximize(&obj, &pen, DVector::zeros(3), &[true, false, true], &ScoringOptions::default());
        assert_eq!(out.beta[1], 0.0);
        assert!(out.converged);
    }

    #[test]
    fn ascent_never_decreases_objective() {
        let obj = quad();
        let mask = [true; 3];
        for &eps in &[1.0, 0.1, 0.01, 1e-4] {
            let pen = BlockPenalty {
                weight: 2.0,
                phi: SmoothL0::new(eps).unwrap(),
                penalized: &mask,
            };
            let mut b = DVector::from_vec(vec![0.3, 0.3, -0.3]);
            let mut v = penalized_value(&obj, &pen, &b);
            for _ in 0..50 {
                match ascent_step(&obj, &pen, &b, &[true; 3], v, &ScoringOptions::default()) {
                    Some((nb, nv, _, _)) => {
                        assert!(nv >= v);
                        b = nb;
                        v = nv;
                    }
                    None => break,
                }
            }
        }
    }

    #[test]
    fn strong_penalty_pulls_small_coefficient_to_zero() {
        let obj = Quadratic {
            q: DMatrix::identity(1, 1),
            c: DVector::from_vec(vec![0.05]),
        };
        let mask = [true];
        let pen = BlockPenalty {
            weight: 5.0,
            phi: SmoothL0::new(0.1).unwrap(),
            penalized: &mask,
        };
        let out = maximize(&obj, &pen, DVector::from_vec(vec![0.05]), &[true], &ScoringOptions::default());
        assert!(out.beta[0].abs() < 1e-3);
    }
}
