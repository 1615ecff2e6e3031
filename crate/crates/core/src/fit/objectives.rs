//! Smooth objectives fed to the penalized scoring routine.

use nalgebra::{DMatrix, DVector};

use super::scoring::SmoothObjective;
use crate::model::MAX_EXPONENT;

/// Poisson part of `J/n` for one count column with everything but `b_j` fixed:
/// `(1/n) Σ_i [y_i x_iᵀb - exp(c_i + x_iᵀb)]` with `c = o_j + m_j + s_j²/2`.
pub struct PoissonColumn<'a> {
    pub x: &'a DMatrix<f64>,
    pub y: DVector<f64>,
    pub base: DVector<f64>,
}

impl PoissonColumn<'_> {
    fn rates(&self, beta: &DVector<f64>) -> Option<DVector<f64>> {
        let mut e = self.x * beta + &self.base;
        for v in e.iter_mut() {
            if !(*v <= MAX_EXPONENT) {
                return None;
            }
            *v = v.exp();
        }
        Some(e)
    }

    fn inv_n(&self) -> f64 {
        1.0 / self.x.nrows() as f64
    }
}

impl SmoothObjective for PoissonColumn<'_> {
    fn dim(&self) -> usize {
        self.x.ncols()
    }

    fn value(&self, beta: &DVector<f64>) -> f64 {
        let eta = self.x * beta;
        let mut acc = 0.0;
        for ((&y, &e), &c) in self.y.iter().zip(eta.iter()).zip(self.base.iter()) {
            let z = c + e;
            if !(z <= MAX_EXPONENT) {
                return f64::NEG_INFINITY;
            }
            acc += y * e - z.exp();
        }
        acc * self.inv_n()
    }

    fn score(&self, beta: &DVector<f64>) -> DVector<f64> {
        match self.rates(beta) {
            Some(a) => self.x.tr_mul(&(&self.y - a)) * self.inv_n(),
            None => DVector::from_element(self.dim(), f64::NAN),
        }
    }

    fn information(&self, beta: &DVector<f64>) -> DMatrix<f64> {
        match self.rates(beta) {
            Some(a) => {
                let mut wx = self.x.clone();
                for (mut row, &w) in wx.row_iter_mut().zip(a.iter()) {
                    row *= w;
                }
                self.x.tr_mul(&wx) * self.inv_n()
            }
            None => DMatrix::from_element(self.dim(), self.dim(), f64::NAN),
        }
    }

    /// Largest change of a linear predictor, `max_i |x_iᵀδ|`.
    fn step_size(&self, delta: &DVector<f64>) -> f64 {
        (self.x * delta).amax()
    }
}

/// The Kullback–Leibler part of `J/n` along moves that shift the fixed effect and
/// the variational means in opposite directions, leaving `A` unchanged.
///
/// With `F = XB + M` held fixed and `Θ` the new regression matrix (vectorized by
/// columns), the objective is `-(1/2n) tr(Ω (F - XΘ)ᵀ(F - XΘ))` up to a constant.
pub struct Recentering {
    gram: DMatrix<f64>,
    cross: DMatrix<f64>,
    omega: DMatrix<f64>,
    n: f64,
    d: usize,
    p: usize,
}

impl Recentering {
    pub fn new(x: &DMatrix<f64>, full_mean: &DMatrix<f64>, omega: &DMatrix<f64>) -> Self {
        Self {
            gram: x.tr_mul(x),
            cross: x.tr_mul(full_mean),
            omega: omega.clone(),
            n: x.nrows() as f64,
            d: x.ncols(),
            p: full_mean.ncols(),
        }
    }

    fn unvec(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.d, self.p, theta.as_slice())
    }
}

impl SmoothObjective for Recentering {
    fn dim(&self) -> usize {
        self.d * self.p
    }

    fn value(&self, theta: &DVector<f64>) -> f64 {
        let t = self.unvec(theta);
        let lin = (t.transpose() * &self.cross).component_mul(&self.omega).sum();
        let quad = (t.transpose() * &self.gram * &t).component_mul(&self.omega).sum();
        -(quad - 2.0 * lin) / (2.0 * self.n)
    }

    fn score(&self, theta: &DVector<f64>) -> DVector<f64> {
        let t = self.unvec(theta);
        let g = (&self.cross - &self.gram * t) * &self.omega / self.n;
        DVector::from_column_slice(g.as_slice())
    }

    fn information(&self, _theta: &DVector<f64>) -> DMatrix<f64> {
        self.omega.kronecker(&self.gram) / self.n
    }
}

/// `-(1/2n)‖y - Xβ‖²` for identity-link Gaussian data.
pub struct LeastSquares<'a> {
    pub x: &'a DMatrix<f64>,
    pub y: &'a DVector<f64>,
}

impl SmoothObjective for LeastSquares<'_> {
    fn dim(&self) -> usize {
        self.x.ncols()
    }

    fn value(&self, beta: &DVector<f64>) -> f64 {
        let r = self.y - self.x * beta;
        -r.norm_squared() / (2.0 * self.x.nrows() as f64)
    }

    fn score(&self, beta: &DVector<f64>) -> DVector<f64> {
        self.x.tr_mul(&(self.y - self.x * beta)) / self.x.nrows() as f64
    }

    fn information(&self, _beta: &DVector<f64>) -> DMatrix<f64> {
        self.x.tr_mul(self.x) / self.x.nrows() as f64
    }
}
