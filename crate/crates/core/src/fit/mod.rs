//! Sparse PLN estimation: penalized Fisher scoring for `B` inside variational EM,
//! wrapped in a loop that shrinks `eps` geometrically, then hard-thresholding of
//! the smallest coefficients and a final refit with the zero pattern frozen.

pub mod objectives;
pub mod scoring;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Result, SicError};
use crate::model::{self, CountDataset, ModelParams, VariationalParams};
use crate::penalty::{PenaltyConfig, SmoothL0};
use objectives::{LeastSquares, PoissonColumn, Recentering};
use scoring::{BlockPenalty, ScoringOptions, SmoothObjective};

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub penalty: PenaltyConfig,
    pub max_vem_iters: usize,
    pub max_scoring_iters: usize,
    /// Relative change of the penalized objective that ends a VEM stage.
    pub tol_elbo: f64,
    /// Largest coefficient step that ends the scoring loop.
    pub tol_param: f64,
    pub record_path: bool,
    /// Add the exact `(B, M) -> (B + Δ, M - XΔ)` ascent move to each VE step.
    pub recenter: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            penalty: PenaltyConfig::default(),
            max_vem_iters: 200,
            max_scoring_iters: 100,
            tol_elbo: 1e-6,
            tol_param: 1e-7,
            record_path: true,
            recenter: true,
        }
    }
}

impl FitOptions {
    /// Unpenalized PLN fit: `λ = 0` with a single telescoping stage.
    pub fn unpenalized() -> Self {
        let mut o = Self::default();
        o.penalty.lambda = Some(0.0);
        o.penalty.eps_steps = 1;
        o
    }

    pub fn validate(&self) -> Result<()> {
        self.penalty.validate()?;
        if self.max_vem_iters == 0 || self.max_scoring_iters == 0 {
            return Err(SicError::Domain("iteration caps must be at least 1".into()));
        }
        if !(self.tol_elbo > 0.0) || !(self.tol_param > 0.0) {
            return Err(SicError::Domain("tolerances must be positive".into()));
        }
        Ok(())
    }

    fn scoring(&self) -> ScoringOptions {
        ScoringOptions {
            max_iters: self.max_scoring_iters,
            tol: self.tol_param,
            max_halvings: 30,
            max_step: MAX_PREDICTOR_STEP,
        }
    }
}

/// Largest change of any linear predictor allowed in one scoring step.
const MAX_PREDICTOR_STEP: f64 = 5.0;

/// Weight multiplying `Σ phi_eps(B_kj)` in the per-observation objective `J/n`.
///
/// The penalized bound is `J - (λ/2)·Σ phi_eps(B_kj)`; scoring works on that bound
/// divided by `n`, so the penalty carries `λ/(2n)`.
pub fn penalty_weight(lambda: f64, n: usize) -> f64 {
    0.5 * lambda / n as f64
}

/// Parameters and variational parameters evolving together during a fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitState {
    pub params: ModelParams,
    pub vp: VariationalParams,
}

/// Coefficients eligible for the penalty: every row but the intercept.
fn penalized_rows(d: usize) -> Vec<bool> {
    (0..d).map(|k| k != 0).collect()
}

/// `J/n - w·Σ_{k≥1, j} phi_eps(B_kj)`.
pub fn penalized_objective(
    data: &CountDataset,
    params: &ModelParams,
    vp: &VariationalParams,
    lambda: f64,
    eps: f64,
) -> Result<f64> {
    let phi = SmoothL0::new(eps)?;
    let j = model::elbo(data, params, vp)? / data.n() as f64;
    Ok(j - penalty_term(&params.b, lambda, data.n(), &phi))
}

fn penalty_term(b: &DMatrix<f64>, lambda: f64, n: usize, phi: &SmoothL0) -> f64 {
    let w = penalty_weight(lambda, n);
    if w == 0.0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for j in 0..b.ncols() {
        for k in 1..b.nrows() {
            acc += phi.value(b[(k, j)]);
        }
    }
    w * acc
}

fn poisson_column<'a>(data: &'a CountDataset, vp: &VariationalParams, j: usize) -> PoissonColumn<'a> {
    let base = DVector::from_iterator(
        data.n(),
        (0..data.n()).map(|i| {
            let s = vp.s[(i, j)];
            data.o()[(i, j)] + vp.m[(i, j)] + 0.5 * s * s
        }),
    );
    PoissonColumn {
        x: data.x(),
        y: data.y().column(j).into_owned(),
        base,
    }
}

/// Penalized pseudo-Fisher information, `dp × dp`, coefficients stacked column by
/// column of `B`. Block `j` is `Xᵀdiag(A_j)X/n + w·diag(phi''(B_j))` with zero
/// penalty curvature at the intercept; off-diagonal blocks are zero.
pub fn penalized_information(
    data: &CountDataset,
    params: &ModelParams,
    vp: &VariationalParams,
    lambda: f64,
    eps: f64,
) -> Result<DMatrix<f64>> {
    let phi = SmoothL0::new(eps)?;
    let (d, p) = (data.d(), data.p());
    let mask = penalized_rows(d);
    let pen = BlockPenalty {
        weight: penalty_weight(lambda, data.n()),
        phi,
        penalized: &mask,
    };
    model::mean_matrix(data, params, vp)?;
    let mut full = DMatrix::zeros(d * p, d * p);
    for j in 0..p {
        let obj = poisson_column(data, vp, j);
        let beta = params.b.column(j).into_owned();
        let block = scoring::penalized_information(&obj, &pen, &beta);
        full.view_mut((j * d, j * d), (d, d)).copy_from(&block);
    }
    Ok(full)
}

/// Penalized score `vec(Xᵀ(Y - A))/n - w·phi'(vec B)` (intercepts unpenalized).
pub fn penalized_score(
    data: &CountDataset,
    params: &ModelParams,
    vp: &VariationalParams,
    lambda: f64,
    eps: f64,
) -> Result<DVector<f64>> {
    let phi = SmoothL0::new(eps)?;
    let (d, p) = (data.d(), data.p());
    let mask = penalized_rows(d);
    let pen = BlockPenalty {
        weight: penalty_weight(lambda, data.n()),
        phi,
        penalized: &mask,
    };
    let g = model::grad_b(data, params, vp)?;
    let mut out = DVector::zeros(d * p);
    for j in 0..p {
        let beta = params.b.column(j).into_owned();
        let gj = g.column(j) - pen.gradient(&beta);
        out.rows_mut(j * d, d).copy_from(&gj);
    }
    Ok(out)
}

/// Outcome of the blockwise scoring loop on `B`.
#[derive(Debug, Clone)]
pub struct ScoringReport {
    pub b: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub max_ridge: f64,
}

/// Runs penalized Fisher scoring on every column of `B` with `M`, `S` held fixed.
/// `frozen` marks coefficients held at their current value.
pub fn scoring_step(
    data: &CountDataset,
    params: &ModelParams,
    vp: &VariationalParams,
    lambda: f64,
    eps: f64,
    opts: &FitOptions,
    frozen: Option<&DMatrix<bool>>,
) -> Result<ScoringReport> {
    let phi = SmoothL0::new(eps)?;
    let (d, p) = (data.d(), data.p());
    let mask = penalized_rows(d);
    let pen = BlockPenalty {
        weight: penalty_weight(lambda, data.n()),
        phi,
        penalized: &mask,
    };
    let sopts = opts.scoring();
    let mut b = params.b.clone();
    let mut iterations = 0;
    let mut converged = true;
    let mut max_ridge: f64 = 0.0;
    for j in 0..p {
        let obj = poisson_column(data, vp, j);
        let free: Vec<bool> = (0..d).map(|k| !frozen.is_some_and(|f| f[(k, j)])).collect();
        let out = scoring::maximize(&obj, &pen, params.b.column(j).into_owned(), &free, &sopts);
        iterations = iterations.max(out.iterations);
        converged &= out.converged;
        max_ridge = max_ridge.max(out.max_ridge);
        b.set_column(j, &out.beta);
    }
    Ok(ScoringReport {
        b,
        iterations,
        converged,
        max_ridge,
    })
}

/// Moves `(B, M)` to `(Θ, XB + M - XΘ)` with `Θ` maximizing the penalized
/// objective along that family; `A` is unchanged.
fn recenter(
    data: &CountDataset,
    state: &mut FitState,
    lambda: f64,
    phi: SmoothL0,
    opts: &FitOptions,
    frozen: Option<&DMatrix<bool>>,
) {
    let (d, p) = (data.d(), data.p());
    let xb = data.x() * &state.params.b;
    let full_mean = &xb + &state.vp.m;
    let obj = Recentering::new(data.x(), &full_mean, state.params.omega());
    let mask: Vec<bool> = (0..d * p).map(|idx| idx % d != 0).collect();
    let free: Vec<bool> = (0..d * p)
        .map(|idx| !frozen.is_some_and(|f| f[(idx % d, idx / d)]))
        .collect();
    let pen = BlockPenalty {
        weight: penalty_weight(lambda, data.n()),
        phi,
        penalized: &mask,
    };
    let theta0 = DVector::from_column_slice(state.params.b.as_slice());
    let out = scoring::maximize(&obj, &pen, theta0, &free, &opts.scoring());
    let b_new = DMatrix::from_column_slice(d, p, out.beta.as_slice());
    state.vp.m = full_mean - data.x() * &b_new;
    state.params.b = b_new;
}

/// Newton ascent on each row of `M`, then on each entry of `ln S`.
fn variational_step(data: &CountDataset, state: &mut FitState) {
    let (n, p) = (data.n(), data.p());
    let eta = data.x() * &state.params.b + data.o();
    let omega = state.params.omega().clone();

    for i in 0..n {
        let y = data.y().row(i).transpose();
        let c = DVector::from_iterator(p, (0..p).map(|j| {
            let s = state.vp.s[(i, j)];
            eta[(i, j)] + 0.5 * s * s
        }));
        let m = state.vp.m.row(i).transpose();
        let row_obj = |m: &DVector<f64>| -> f64 {
            let mut v = -0.5 * m.dot(&(&omega * m));
            for j in 0..p {
                let z = c[j] + m[j];
                if !(z <= model::MAX_EXPONENT) {
                    return f64::NEG_INFINITY;
                }
                v += y[j] * m[j] - z.exp();
            }
            v
        };
        let a = DVector::from_iterator(p, (0..p).map(|j| (c[j] + m[j]).min(model::MAX_EXPONENT).exp()));
        let g = &y - &a - &omega * &m;
        let mut h = omega.clone();
        for j in 0..p {
            h[(j, j)] += a[j];
        }
        let Some(chol) = Cholesky::new(h) else { continue };
        let delta = chol.solve(&g);
        let current = row_obj(&m);
        let mut t = 1.0;
        for _ in 0..=30 {
            let cand = &m + &delta * t;
            if row_obj(&cand) >= current {
                state.vp.m.set_row(i, &cand.transpose());
                break;
            }
            t *= 0.5;
        }
    }

    for j in 0..p {
        let w = omega[(j, j)];
        for i in 0..n {
            let c = eta[(i, j)] + state.vp.m[(i, j)];
            // f(u) = -exp(c + e^{2u}/2) + u - w e^{2u}/2, concave in u = ln s
            let f = |u: f64| {
                let s2 = (2.0 * u).exp();
                let z = c + 0.5 * s2;
                if !(z <= model::MAX_EXPONENT) || !s2.is_finite() {
                    return f64::NEG_INFINITY;
                }
                -z.exp() + u - 0.5 * w * s2
            };
            let s = state.vp.s[(i, j)];
            let u = s.ln();
            let s2 = s * s;
            let a = (c + 0.5 * s2).min(model::MAX_EXPONENT).exp();
            let grad = 1.0 - s2 * (a + w);
            let curv = s2 * (2.0 * a + s2 * a + 2.0 * w);
            if !(curv > 0.0) {
                continue;
            }
            let delta = grad / curv;
            let current = f(u);
            let mut t = 1.0;
            for _ in 0..=30 {
                let cand = u + t * delta;
                if f(cand) >= current {
                    state.vp.s[(i, j)] = cand.exp();
                    break;
                }
                t *= 0.5;
            }
        }
    }
}

/// Per-stage convergence record.
#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub eps: f64,
    /// Penalized objective at stage start, then after each VEM iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub scoring_converged: bool,
}

/// Alternates VE (scoring on `B`, optional recentering, `Σ` update) and VM
/// (`M`, `S`) steps at fixed `eps` until the penalized objective stabilizes.
/// An iteration that lowers the objective is undone and ends the stage, so the
/// recorded trace never decreases.
pub fn vem(
    data: &CountDataset,
    state: &mut FitState,
    lambda: f64,
    eps: f64,
    opts: &FitOptions,
    frozen: Option<&DMatrix<bool>>,
) -> Result<StageReport> {
    let phi = SmoothL0::new(eps)?;
    let mut current = penalized_objective(data, &state.params, &state.vp, lambda, eps)?;
    let mut trace = vec![current];
    let mut converged = false;
    let mut scoring_converged = true;
    let mut iterations = 0;
    for _ in 0..opts.max_vem_iters {
        iterations += 1;
        let previous = state.clone();
        let report = scoring_step(data, &state.params, &state.vp, lambda, eps, opts, frozen)?;
        scoring_converged &= report.converged;
        state.params.b = report.b;
        if opts.recenter {
            recenter(data, state, lambda, phi, opts, frozen);
        }
        let update = model::update_sigma(&state.vp);
        state.params.set_sigma(update.sigma)?;
        variational_step(data, state);

        let next = penalized_objective(data, &state.params, &state.vp, lambda, eps)?;
        let tol = opts.tol_elbo * current.abs().max(1e-12);
        if next < current {
            // Every sub-step ascends its own objective, so a loss here is rounding
            // in large-count cells. Keep the better state and stop.
            *state = previous;
            converged = current - next <= tol.max(1e-10 * current.abs().max(1.0));
            break;
        }
        trace.push(next);
        let change = next - current;
        current = next;
        if change <= tol {
            converged = true;
            break;
        }
    }
    Ok(StageReport {
        eps,
        trace,
        iterations,
        converged,
        scoring_converged,
    })
}

/// Least-squares solution of `X β = rhs` (column by column) via thin QR.
pub fn least_squares(x: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, d) = x.shape();
    if n < d {
        return Err(SicError::Dimension(format!("{n} rows cannot identify {d} coefficients")));
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let scale = r.diagonal().amax();
    if r.diagonal().iter().any(|v| v.abs() <= 1e-12 * scale) {
        return Err(SicError::Numeric("covariate matrix is rank deficient".into()));
    }
    let qty = qr.q().tr_mul(rhs);
    r.solve_upper_triangular(&qty)
        .ok_or_else(|| SicError::Numeric("covariate matrix is rank deficient".into()))
}

/// Deterministic warm start: least squares of `ln(1+Y) - O` on `X`, residuals as
/// variational means, `S = 0.1`, and `Σ` from the closed-form update.
pub fn initialize(data: &CountDataset) -> Result<FitState> {
    let target = data.y().map(|v| v.ln_1p()) - data.o();
    let b = least_squares(data.x(), &target)?;
    let m = &target - data.x() * &b;
    let s = DMatrix::from_element(data.n(), data.p(), 0.1);
    let vp = VariationalParams::new(m, s)?;
    let sigma = model::update_sigma(&vp).sigma;
    Ok(FitState {
        params: ModelParams::new(b, sigma)?,
        vp,
    })
}

/// One recorded point of the regularization path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathPoint {
    pub step: usize,
    pub eps: f64,
    pub b: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ModelParams,
    pub vp: VariationalParams,
    pub lambda: f64,
    pub path: Vec<PathPoint>,
    pub stages: Vec<StageReport>,
    /// Refit after thresholding, with the zero pattern frozen.
    pub refit: StageReport,
    /// `true` where the final `B` is nonzero.
    pub active_set: DMatrix<bool>,
    /// Penalized objective of the initialization at the final `eps`.
    pub initial_objective: f64,
    /// Penalized objective of the returned fit at the final `eps`.
    pub final_objective: f64,
}

impl FitResult {
    /// Every penalized-objective value, stage after stage.
    pub fn elbo_trace(&self) -> Vec<f64> {
        self.stages
            .iter()
            .chain(std::iter::once(&self.refit))
            .flat_map(|s| s.trace.iter().copied())
            .collect()
    }

    pub fn converged(&self) -> bool {
        self.stages.iter().all(|s| s.converged) && self.refit.converged
    }
}

/// Sets every `|B_kj| < threshold` to exactly zero. Returns the mask of zeroed cells.
pub fn zero_small(b: &mut DMatrix<f64>, threshold: f64) -> DMatrix<bool> {
    let mut zeroed = DMatrix::from_element(b.nrows(), b.ncols(), false);
    for (v, z) in b.iter_mut().zip(zeroed.iter_mut()) {
        if v.abs() < threshold {
            *v = 0.0;
            *z = true;
        }
    }
    zeroed
}

/// Full sparse fit: telescoping over the `eps` schedule, thresholding, refit.
pub fn sicpln_fit(data: &CountDataset, opts: &FitOptions) -> Result<FitResult> {
    opts.validate()?;
    let lambda = opts.penalty.lambda_for(data.n());
    let schedule = opts.penalty.schedule();
    let eps_final = *schedule.last().expect("schedule has at least one step");

    let mut state = initialize(data)?;
    let initial_objective = penalized_objective(data, &state.params, &state.vp, lambda, eps_final)?;
    let mut path = Vec::new();
    let mut stages = Vec::with_capacity(schedule.len());
    for (t, &eps) in schedule.iter().enumerate() {
        stages.push(vem(data, &mut state, lambda, eps, opts, None)?);
        if opts.record_path {
            path.push(PathPoint {
                step: t + 1,
                eps,
                b: state.params.b.clone(),
            });
        }
    }

    let frozen = zero_small(&mut state.params.b, opts.penalty.zero_threshold);
    let refit = vem(data, &mut state, lambda, eps_final, opts, Some(&frozen))?;
    let active_set = state.params.b.map(|v| v != 0.0);
    let final_objective = penalized_objective(data, &state.params, &state.vp, lambda, eps_final)?;
    Ok(FitResult {
        params: state.params,
        vp: state.vp,
        lambda,
        path,
        stages,
        refit,
        active_set,
        initial_objective,
        final_objective,
    })
}

/// Smooth-L0 penalized least squares, `min ‖y - Xβ‖²/n + (λ/n)·Σ phi_eps(β_k)`,
/// solved by the same scoring routine over the `eps` schedule of `penalty`.
/// All coefficients are penalized; no thresholding is applied.
pub fn sic_least_squares(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, penalty: &PenaltyConfig) -> Result<DVector<f64>> {
    penalty.validate()?;
    let n = x.nrows();
    let obj = LeastSquares { x, y };
    let beta0 = least_squares(x, &DMatrix::from_column_slice(n, 1, y.as_slice()))?.column(0).into_owned();
    let mask = vec![true; obj.dim()];
    let free = vec![true; obj.dim()];
    let opts = ScoringOptions {
        max_iters: 500,
        tol: 1e-12,
        max_halvings: 60,
        max_step: f64::INFINITY,
    };
    let mut beta = beta0;
    for eps in penalty.schedule() {
        let pen = BlockPenalty {
            // ‖r‖²/n + (λ/n)Σφ  ⇔  maximize -‖r‖²/(2n) - (λ/2n)Σφ
            weight: lambda / (2.0 * n as f64),
            phi: SmoothL0::new(eps)?,
            penalized: &mask,
        };
        beta = scoring::maximize(&obj, &pen, beta, &free, &opts).beta;
    }
    Ok(beta)
}
