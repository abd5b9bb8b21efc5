//! Levenberg–Marquardt for `min Σ r_i(θ)²`.
//!
//! Problems supply residuals and optionally an analytic Jacobian; the
//! default Jacobian uses central differences with step `1e-6 · max(1, |θ_i|)`.
//! Steps are only accepted when they lower the objective, so the recorded
//! objective history never increases.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmOptions {
    pub initial_damping: f64,
    /// Multiplier applied to the damping after a rejected step (> 1).
    pub damping_up: f64,
    /// Multiplier applied after an accepted step (< 1).
    pub damping_down: f64,
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the objective by less than this fraction.
    pub relative_tolerance: f64,
    /// Random restarts per fitted constraint row.
    pub multistart: usize,
    pub seed: u64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            initial_damping: 1e-3,
            damping_up: 10.0,
            damping_down: 0.1,
            max_iterations: 500,
            relative_tolerance: 1e-10,
            multistart: 8,
            seed: 0,
        }
    }
}

impl LmOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.initial_damping > 0.0
            && self.damping_up > 1.0
            && self.damping_down > 0.0
            && self.damping_down < 1.0
            && self.max_iterations > 0
            && self.relative_tolerance > 0.0
            && self.multistart >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Levenberg-Marquardt options: {self:?}")))
        }
    }
}

pub trait LeastSquaresProblem {
    fn residuals(&self, params: &DVector<f64>) -> DVector<f64>;

    fn jacobian(&self, params: &DVector<f64>) -> DMatrix<f64> {
        finite_difference_jacobian(|p| self.residuals(p), params)
    }

    /// `(JᵀJ, Jᵀr)` at `params` given the residuals `r` there.
    fn normal_equations(&self, params: &DVector<f64>, residuals: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let jac = self.jacobian(params);
        // An explicit transpose lets the product use the blocked GEMM kernel.
        let jac_t = jac.transpose();
        (&jac_t * &jac, jac_t * residuals)
    }
}

/// Wraps a closure as a problem with a finite-difference Jacobian.
pub struct FnProblem<F>(pub F);

impl<F: Fn(&DVector<f64>) -> DVector<f64>> LeastSquaresProblem for FnProblem<F> {
    fn residuals(&self, params: &DVector<f64>) -> DVector<f64> {
        (self.0)(params)
    }
}

pub fn finite_difference_jacobian<F>(f: F, params: &DVector<f64>) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut p = params.clone();
    let m = f(params).len();
    let mut jac = DMatrix::zeros(m, params.len());
    for i in 0..params.len() {
        let h = 1e-6 * params[i].abs().max(1.0);
        p[i] = params[i] + h;
        let plus = f(&p);
        p[i] = params[i] - h;
        let minus = f(&p);
        p[i] = params[i];
        jac.set_column(i, &((plus - minus) / (2.0 * h)));
    }
    jac
}

/// Jacobian whose row `n` is `g_n ⊗ φ_n`, for parameters laid out as
/// `k · Φ + m` for output `k` and feature `m`.
pub(crate) fn kronecker_jacobian(features: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let (n_obs, phi) = features.shape();
    let mut jac = DMatrix::zeros(n_obs, g.ncols() * phi);
    for i in 0..g.ncols() {
        for m in 0..phi {
            let mut col = jac.column_mut(i * phi + m);
            for n in 0..n_obs {
                col[n] = g[(n, i)] * features[(n, m)];
            }
        }
    }
    jac
}

/// `(JᵀJ, Jᵀr)` for [`kronecker_jacobian`], assembled from the blocks
/// `Φᵀ diag(g_i ∘ g_k) Φ`.
pub(crate) fn kronecker_normal_equations(
    features: &DMatrix<f64>,
    features_t: &DMatrix<f64>,
    g: &DMatrix<f64>,
    residuals: &DVector<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let (n_obs, phi) = features.shape();
    let p = g.ncols();
    let mut jtj = DMatrix::zeros(p * phi, p * phi);
    let mut grad = DVector::zeros(p * phi);
    let mut scaled = DMatrix::zeros(n_obs, phi);
    for i in 0..p {
        let gr = DVector::from_fn(n_obs, |n, _| g[(n, i)] * residuals[n]);
        grad.rows_mut(i * phi, phi).copy_from(&(features_t * gr));
        for k in i..p {
            for m in 0..phi {
                let mut col = scaled.column_mut(m);
                for n in 0..n_obs {
                    col[n] = g[(n, i)] * g[(n, k)] * features[(n, m)];
                }
            }
            let block = features_t * &scaled;
            jtj.view_mut((i * phi, k * phi), (phi, phi)).copy_from(&block);
            if k != i {
                jtj.view_mut((k * phi, i * phi), (phi, phi)).copy_from(&block.transpose());
            }
        }
    }
    (jtj, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    ZeroResidual,
    RelativeTolerance,
    /// Damping grew without finding a better point.
    Stalled,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub params: DVector<f64>,
    pub objective: f64,
    pub initial_objective: f64,
    pub iterations: usize,
    /// Objective after each outer iteration.
    pub history: Vec<f64>,
    pub termination: Termination,
}

fn sum_sq(r: &DVector<f64>) -> f64 {
    r.norm_squared()
}

pub fn minimize<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    theta0: DVector<f64>,
    opts: &LmOptions,
) -> Result<LmReport> {
    opts.validate()?;
    let mut params = theta0;
    let mut r = problem.residuals(&params);
    if !r.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidStart);
    }
    let mut cost = sum_sq(&r);
    let initial = cost;
    let mut history = Vec::new();
    let mut lambda = opts.initial_damping;
    let n = params.len();

    if cost == 0.0 || n == 0 {
        return Ok(LmReport {
            params,
            objective: cost,
            initial_objective: initial,
            iterations: 0,
            history,
            termination: Termination::ZeroResidual,
        });
    }

    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    'outer: for it in 0..opts.max_iterations {
        iterations = it + 1;
        let (jtj, grad) = problem.normal_equations(&params, &r);
        let max_diag = jtj.diagonal().max();
        if grad.amax() == 0.0 || max_diag == 0.0 {
            termination = Termination::Stalled;
            history.push(cost);
            break;
        }
        let floor = max_diag * 1e-10;
        loop {
            let mut damped = jtj.clone();
            for i in 0..n {
                damped[(i, i)] += lambda * jtj[(i, i)].max(floor);
            }
            let step = match damped.cholesky() {
                Some(ch) => -ch.solve(&grad),
                None => {
                    lambda *= opts.damping_up;
                    if lambda > 1e30 {
                        termination = Termination::Stalled;
                        history.push(cost);
                        break 'outer;
                    }
                    continue;
                }
            };
            let candidate = &params + &step;
            let r_new = problem.residuals(&candidate);
            let cost_new = sum_sq(&r_new);
            if cost_new.is_finite() && cost_new < cost {
                let rel = (cost - cost_new) / cost;
                params = candidate;
                r = r_new;
                cost = cost_new;
                lambda = (lambda * opts.damping_down).max(1e-15);
                history.push(cost);
                if cost == 0.0 {
                    termination = Termination::ZeroResidual;
                    break 'outer;
                }
                if rel < opts.relative_tolerance {
                    termination = Termination::RelativeTolerance;
                    break 'outer;
                }
                break;
            }
            lambda *= opts.damping_up;
            if lambda > 1e30 {
                termination = Termination::Stalled;
                history.push(cost);
                break 'outer;
            }
        }
    }

    Ok(LmReport {
        params,
        objective: cost,
        initial_objective: initial,
        iterations,
        history,
        termination,
    })
}

/// Minimizes `Σ r(θ)²` from `theta0` with a finite-difference Jacobian and
/// returns the parameters with their objective.
pub fn levenberg_marquardt<F>(residual_fn: F, theta0: DVector<f64>, opts: &LmOptions) -> Result<(DVector<f64>, f64)>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let report = minimize(&FnProblem(residual_fn), theta0, opts)?;
    Ok((report.params, report.objective))
}
