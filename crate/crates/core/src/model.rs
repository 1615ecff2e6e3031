//! Poisson log-normal model: data containers, the variational lower bound and its
//! gradients, the closed-form covariance update and the two prediction formulas.
//!
//! Variational means are residuals about the fixed effect: the latent layer is
//! `Z = O + XB + W` with `W_i ~ N(0, Σ)` and `q(W_i) = N(m_i, diag(s_i²))`. Under
//! this convention
//!
//! * `A = exp(O + XB + M + S²/2)`
//! * `J = Σ_ij [y_ij (o_ij + x_iᵀb_j + m_ij) - a_ij + ½ ln s_ij² - ln y_ij!]
//!        + (n/2) ln|Ω| - ½ tr(Ω [MᵀM + diag(1ᵀS²)]) + np/2`
//!
//! and the additive constant makes `J` a true lower bound on `ln p(Y)`.

use nalgebra::{Cholesky, DMatrix, Dyn};
use statrs::function::gamma::ln_gamma;

use crate::error::{Result, SicError};

/// Exponents above this are reported as overflow.
pub const MAX_EXPONENT: f64 = 700.0;

/// Counts `Y` (n×p), covariates `X` (n×d, first column the intercept) and
/// log-scale offsets `O` (n×p).
#[derive(Debug, Clone, PartialEq)]
pub struct CountDataset {
    y: DMatrix<f64>,
    x: DMatrix<f64>,
    o: DMatrix<f64>,
    /// `ln y_ij!`, kept per cell so the ELBO can cancel it against `y·η - a`
    /// before summing.
    log_fact: DMatrix<f64>,
}

impl CountDataset {
    pub fn new(y: DMatrix<f64>, x: DMatrix<f64>, o: Option<DMatrix<f64>>) -> Result<Self> {
        let (n, p) = y.shape();
        if n == 0 || p == 0 {
            return Err(SicError::Dimension(format!("count matrix is {n}x{p}")));
        }
        if x.nrows() != n || x.ncols() == 0 {
            return Err(SicError::Dimension(format!(
                "covariates are {}x{}, expected {n} rows and at least one column",
                x.nrows(),
                x.ncols()
            )));
        }
        let o = o.unwrap_or_else(|| DMatrix::zeros(n, p));
        if o.shape() != (n, p) {
            return Err(SicError::Dimension(format!(
                "offsets are {}x{}, expected {n}x{p}",
                o.nrows(),
                o.ncols()
            )));
        }
        for i in 0..n {
            for j in 0..p {
                let v = y[(i, j)];
                if !(v >= 0.0) || !v.is_finite() || v.fract() != 0.0 {
                    return Err(SicError::Parse {
                        row: i,
                        col: j,
                        msg: format!("count must be a nonnegative integer, got {v}"),
                    });
                }
            }
        }
        for i in 0..n {
            if x[(i, 0)] != 1.0 {
                return Err(SicError::Domain(format!(
                    "first covariate column must be the intercept (row {i} has {})",
                    x[(i, 0)]
                )));
            }
            for k in 0..x.ncols() {
                if !x[(i, k)].is_finite() {
                    return Err(SicError::Parse {
                        row: i,
                        col: k,
                        msg: "covariate is not finite".into(),
                    });
                }
            }
            for j in 0..p {
                if !o[(i, j)].is_finite() {
                    return Err(SicError::Parse {
                        row: i,
                        col: j,
                        msg: "offset is not finite".into(),
                    });
                }
            }
        }
        let log_fact = y.map(|v| ln_gamma(v + 1.0));
        Ok(Self { y, x, o, log_fact })
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }
    pub fn o(&self) -> &DMatrix<f64> {
        &self.o
    }
    pub fn n(&self) -> usize {
        self.y.nrows()
    }
    pub fn p(&self) -> usize {
        self.y.ncols()
    }
    pub fn d(&self) -> usize {
        self.x.ncols()
    }
    /// `Σ ln y_ij!`
    pub fn log_factorial_sum(&self) -> f64 {
        compensated_sum(self.log_fact.iter().copied())
    }
}

/// Regression matrix `B` (d×p) and latent covariance `Σ` with its cached inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub b: DMatrix<f64>,
    sigma: DMatrix<f64>,
    omega: DMatrix<f64>,
    log_det_omega: f64,
}

impl ModelParams {
    /// Fails with [`SicError::NotSpd`] unless `sigma` is symmetric positive definite.
    pub fn new(b: DMatrix<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let p = sigma.nrows();
        if sigma.ncols() != p || b.ncols() != p {
            return Err(SicError::Dimension(format!(
                "B is {}x{} and Sigma is {}x{}",
                b.nrows(),
                b.ncols(),
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        let scale = sigma.amax().max(1.0);
        if (&sigma - sigma.transpose()).amax() > 1e-10 * scale {
            return Err(SicError::NotSpd("Sigma is not symmetric".into()));
        }
        let chol = Cholesky::new(sigma.clone())
            .ok_or_else(|| SicError::NotSpd("Cholesky factorization failed".into()))?;
        let log_det_sigma = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let mut omega = chol.inverse();
        omega = (&omega + omega.transpose()) * 0.5;
        Ok(Self {
            b,
            sigma,
            omega,
            log_det_omega: -log_det_sigma,
        })
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }
    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }
    pub fn log_det_omega(&self) -> f64 {
        self.log_det_omega
    }

    pub fn set_sigma(&mut self, sigma: DMatrix<f64>) -> Result<()> {
        let b = std::mem::replace(&mut self.b, DMatrix::zeros(0, 0));
        *self = Self::new(b, sigma)?;
        Ok(())
    }
}

/// Variational means `M` and standard deviations `S`, both n×p.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalParams {
    pub m: DMatrix<f64>,
    pub s: DMatrix<f64>,
}

impl VariationalParams {
    pub fn new(m: DMatrix<f64>, s: DMatrix<f64>) -> Result<Self> {
        if m.shape() != s.shape() {
            return Err(SicError::Dimension(format!(
                "M is {:?} but S is {:?}",
                m.shape(),
                s.shape()
            )));
        }
        if let Some(bad) = s.iter().find(|&&v| !(v > 0.0) || !v.is_finite()) {
            return Err(SicError::Domain(format!("variational sd must be positive, got {bad}")));
        }
        Ok(Self { m, s })
    }
}

fn check_shapes(data: &CountDataset, params: &ModelParams, vp: &VariationalParams) -> Result<()> {
    let (n, p, d) = (data.n(), data.p(), data.d());
    if params.b.shape() != (d, p) {
        return Err(SicError::Dimension(format!("B is {:?}, expected ({d}, {p})", params.b.shape())));
    }
    if params.sigma.shape() != (p, p) {
        return Err(SicError::Dimension(format!("Sigma is {:?}, expected ({p}, {p})", params.sigma.shape())));
    }
    if vp.m.shape() != (n, p) {
        return Err(SicError::Dimension(format!("M is {:?}, expected ({n}, {p})", vp.m.shape())));
    }
    Ok(())
}

/// `exp(E)` with overflow reported at the first offending cell.
pub(crate) fn checked_exp(exponent: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, p) = exponent.shape();
    for j in 0..p {
        for i in 0..n {
            let e = exponent[(i, j)];
            if !(e <= MAX_EXPONENT) {
                return Err(SicError::Overflow {
                    row: i,
                    col: j,
                    exponent: e,
                });
            }
        }
    }
    Ok(exponent.map(f64::exp))
}

/// `A = exp(O + XB + M + S²/2)`.
pub fn mean_matrix(data: &CountDataset, params: &ModelParams, vp: &VariationalParams) -> Result<DMatrix<f64>> {
    check_shapes(data, params, vp)?;
    let mut e = data.x() * &params.b + data.o() + &vp.m;
    e.zip_apply(&vp.s, |v, s| *v += 0.5 * s * s);
    checked_exp(e)
}

/// Neumaier summation. Large counts make the per-cell ELBO terms cancel heavily,
/// and plain accumulation then leaves noise well above the VEM tolerances.
pub(crate) fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut carry = 0.0;
    for v in values {
        let t = sum + v;
        carry += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + carry
}

/// Variational lower bound, all terms included.
pub fn elbo(data: &CountDataset, params: &ModelParams, vp: &VariationalParams) -> Result<f64> {
    let a = mean_matrix(data, params, vp)?;
    let xb = data.x() * &params.b;
    let n = data.n() as f64;
    let p = data.p() as f64;
    let cells = data
        .y()
        .iter()
        .zip(data.o().iter())
        .zip(xb.iter())
        .zip(vp.m.iter())
        .zip(a.iter().zip(vp.s.iter()).zip(data.log_fact.iter()))
        .map(|((((&y, &o), &mu), &m), ((&ai, &s), &lf))| (y * (o + mu + m) - ai - lf) + s.ln());
    let per_cell = compensated_sum(cells);
    Ok(per_cell + 0.5 * n * params.log_det_omega - 0.5 * kl_trace(params.omega(), vp) + 0.5 * n * p)
}

/// `tr(Ω [MᵀM + diag(1ᵀS²)])`
pub(crate) fn kl_trace(omega: &DMatrix<f64>, vp: &VariationalParams) -> f64 {
    let mo = &vp.m * omega;
    let quad = mo.iter().zip(vp.m.iter()).map(|(a, b)| a * b);
    let var = vp
        .s
        .column_iter()
        .enumerate()
        .flat_map(|(j, col)| col.iter().map(move |s| omega[(j, j)] * s * s).collect::<Vec<_>>());
    compensated_sum(quad.chain(var))
}

/// `∂J/∂M = Y - A - MΩ`
pub fn grad_m(data: &CountDataset, params: &ModelParams, vp: &VariationalParams) -> Result<DMatrix<f64>> {
    let a = mean_matrix(data, params, vp)?;
    Ok(data.y() - a - &vp.m * params.omega())
}

/// `∂J/∂S = 1/S - S⊙A - S·diag(Ω)`
pub fn grad_s(data: &CountDataset, params: &ModelParams, vp: &VariationalParams) -> Result<DMatrix<f64>> {
    let a = mean_matrix(data, params, vp)?;
    let mut g = vp.s.clone();
    for j in 0..g.ncols() {
        let w = params.omega()[(j, j)];
        for i in 0..g.nrows() {
            let s = vp.s[(i, j)];
            g[(i, j)] = 1.0 / s - s * a[(i, j)] - s * w;
        }
    }
    Ok(g)
}

/// `Xᵀ(Y - A) / n`, the gradient of `J/n` with respect to `B`.
pub fn grad_b(data: &CountDataset, params: &ModelParams, vp: &VariationalParams) -> Result<DMatrix<f64>> {
    let a = mean_matrix(data, params, vp)?;
    Ok(data.x().transpose() * (data.y() - a) / data.n() as f64)
}

/// Result of the closed-form covariance update.
#[derive(Debug, Clone)]
pub struct SigmaUpdate {
    pub sigma: DMatrix<f64>,
    /// Diagonal jitter that had to be added to reach positive definiteness.
    pub jitter: f64,
}

/// `Σ = (MᵀM + diag(1ᵀS²)) / n`, the maximizer of `J` over `Σ`.
///
/// If the result does not factorize, `1e-10·tr(Σ)/p` is added to the diagonal
/// (escalating by 10 until it does).
pub fn update_sigma(vp: &VariationalParams) -> SigmaUpdate {
    let n = vp.m.nrows() as f64;
    let p = vp.m.ncols();
    let mut sigma = vp.m.tr_mul(&vp.m);
    for j in 0..p {
        sigma[(j, j)] += vp.s.column(j).iter().map(|s| s * s).sum::<f64>();
    }
    sigma /= n;
    sigma = (&sigma + sigma.transpose()) * 0.5;
    let base = (sigma.trace() / p as f64).max(f64::MIN_POSITIVE);
    let mut jitter = 0.0;
    let mut step = 1e-10 * base;
    while Cholesky::<f64, Dyn>::new(sigma.clone()).is_none() {
        for j in 0..p {
            sigma[(j, j)] += step;
        }
        jitter += step;
        step *= 10.0;
    }
    SigmaUpdate { sigma, jitter }
}

/// In-sample prediction `exp(O + XB + M + S²/2)`; identical to [`mean_matrix`].
pub fn predict_variational(
    data: &CountDataset,
    params: &ModelParams,
    vp: &VariationalParams,
) -> Result<DMatrix<f64>> {
    mean_matrix(data, params, vp)
}

/// Marginal prediction `exp(O + XB + diag(Σ)/2)` for new covariates.
pub fn predict_marginal(x_new: &DMatrix<f64>, o_new: Option<&DMatrix<f64>>, params: &ModelParams) -> Result<DMatrix<f64>> {
    let (n, p) = (x_new.nrows(), params.b.ncols());
    if x_new.ncols() != params.b.nrows() {
        return Err(SicError::Dimension(format!(
            "new covariates have {} columns, B has {} rows",
            x_new.ncols(),
            params.b.nrows()
        )));
    }
    if let Some(i) = (0..n).find(|&i| x_new[(i, 0)] != 1.0) {
        return Err(SicError::Domain(format!("row {i} of new covariates lacks the intercept")));
    }
    let mut e = x_new * &params.b;
    if let Some(o) = o_new {
        if o.shape() != (n, p) {
            return Err(SicError::Dimension(format!("offsets are {:?}, expected ({n}, {p})", o.shape())));
        }
        e += o;
    }
    for j in 0..p {
        let half_var = 0.5 * params.sigma()[(j, j)];
        e.column_mut(j).add_scalar_mut(half_var);
    }
    checked_exp(e)
}
