//! Recovering the constraint from decomposed observations `(x, ũ_ns, ũ_ts)`.
//!
//! A candidate projection `Ñ` must leave the null-space component untouched
//! and annihilate the task-space component. Rows are added one at a time in
//! the orthogonal complement of the rows already accepted, and a row is kept
//! only while it does not increase the combined error.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arm::{jacobian, ArmModel, SelectionMatrix};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::lm::{kronecker_jacobian, kronecker_normal_equations, minimize, FnProblem, LeastSquaresProblem, LmOptions};
use crate::projection::{
    householder_frame, orthonormal_complement_basis, project_onto_row_space,
    pseudo_inverse, unit_vector_into, unit_vector_jacobian_into, ConstraintField, ConstraintMatrix,
    ProjectionMatrix, DEFAULT_PINV_TOL,
};
use crate::rbf::{RbfFeatureMap, RbfVectorModel};

/// Relative slack of the "does not increase" test when adding a row.
pub const ACCEPT_RELATIVE_TOL: f64 = 1e-6;
/// Absolute slack of the same test.
pub const ACCEPT_ABSOLUTE_TOL: f64 = 1e-12;

/// An observation split into estimated null-space and task-space parts.
#[derive(Debug, Clone, PartialEq)]
pub struct DecomposedPoint {
    pub x: DVector<f64>,
    pub u_ns: DVector<f64>,
    pub u_ts: DVector<f64>,
}

impl DecomposedPoint {
    pub fn new(x: DVector<f64>, u_ns: DVector<f64>, u_ts: DVector<f64>) -> Self {
        Self { x, u_ns, u_ts }
    }
}

/// Splits every action with a learnt null-space model.
pub fn decompose_with_model(dataset: &Dataset, model: &RbfVectorModel) -> Vec<DecomposedPoint> {
    dataset
        .observations
        .iter()
        .map(|o| {
            let ns = model.predict(&o.x);
            DecomposedPoint::new(o.x.clone(), ns.clone(), &o.u - ns)
        })
        .collect()
}

/// Uses the true decomposition stored with the dataset.
pub fn decompose_with_ground_truth(dataset: &Dataset) -> Result<Vec<DecomposedPoint>> {
    let gts = dataset.ground_truth()?;
    Ok(dataset
        .observations
        .iter()
        .zip(gts)
        .map(|(o, g)| DecomposedPoint::new(o.x.clone(), g.u_ns.clone(), g.u_ts.clone()))
        .collect())
}

/// Maps a state to hyperspherical angles, `θ(x) = W φ(x)`, for one
/// constraint row living in an `local_dim`-dimensional complement.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfAngleModel {
    pub features: RbfFeatureMap,
    /// `(local_dim - 1) × Φ`.
    pub weights: DMatrix<f64>,
    local_dim: usize,
}

impl RbfAngleModel {
    pub fn new(features: RbfFeatureMap, weights: DMatrix<f64>, local_dim: usize) -> Result<Self> {
        if local_dim == 0 || weights.nrows() + 1 != local_dim {
            return Err(Error::DimensionMismatch {
                expected: local_dim.saturating_sub(1),
                found: weights.nrows(),
            });
        }
        if weights.ncols() != features.n_features() {
            return Err(Error::DimensionMismatch {
                expected: features.n_features(),
                found: weights.ncols(),
            });
        }
        Ok(Self {
            features,
            weights,
            local_dim,
        })
    }

    pub fn local_dim(&self) -> usize {
        self.local_dim
    }

    pub fn angles(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.weights * self.features.features(x)
    }

    /// Unit vector in the row's complement coordinates.
    pub fn local_direction(&self, x: &DVector<f64>) -> DVector<f64> {
        let theta = self.angles(x);
        let mut y = DVector::zeros(self.local_dim);
        unit_vector_into(theta.as_slice(), y.as_mut_slice());
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintEstimate {
    /// Constant orthonormal rows `Â`.
    FixedRows(ConstraintMatrix),
    /// Learnt task-space selection; the constraint is `Λ̂ J(q)`.
    Selection { lambda: ConstraintMatrix, arm: ArmModel },
    /// State-dependent orthonormal rows, each in the complement of its predecessors.
    StateDependent { dim: usize, rows: Vec<RbfAngleModel> },
}

impl ConstraintEstimate {
    pub fn n_rows(&self) -> usize {
        match self {
            ConstraintEstimate::FixedRows(a) => a.n_rows(),
            ConstraintEstimate::Selection { lambda, .. } => lambda.n_rows(),
            ConstraintEstimate::StateDependent { rows, .. } => rows.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows() == 0
    }

    pub fn method_name(&self) -> &'static str {
        match self {
            ConstraintEstimate::FixedRows(_) => "fixed_rows",
            ConstraintEstimate::Selection { .. } => "selection",
            ConstraintEstimate::StateDependent { .. } => "state_dependent",
        }
    }

    /// The learnt selection as a validated matrix, when there is one.
    pub fn selection_matrix(&self) -> Option<SelectionMatrix> {
        match self {
            ConstraintEstimate::Selection { lambda, .. } if lambda.n_rows() > 0 => {
                SelectionMatrix::new(lambda.matrix().clone()).ok()
            }
            _ => None,
        }
    }

    /// `Â(x)` for the state-dependent variant; rows are orthonormal by construction.
    fn state_dependent_rows(dim: usize, rows: &[RbfAngleModel], x: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(rows.len(), dim);
        let mut frame = DMatrix::identity(dim, dim);
        for (s, row) in rows.iter().enumerate() {
            let y = row.local_direction(x);
            let a = &frame * &y;
            out.set_row(s, &a.transpose());
            if s + 1 < rows.len() {
                let h = householder_frame(y.as_slice());
                frame = &frame * h.columns(1, y.len() - 1);
            }
        }
        out
    }

    /// `I - Â(x)†Â(x)` without failing on rank loss; a rank-deficient `Â(x)`
    /// projects onto the complement of its actual row space.
    pub fn null_projector(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let dim = self.dim();
        let eye = DMatrix::identity(dim, dim);
        match self {
            ConstraintEstimate::FixedRows(a) => eye - a.matrix().tr_mul(a.matrix()),
            ConstraintEstimate::StateDependent { rows, .. } => {
                let a = Self::state_dependent_rows(dim, rows, x);
                eye - a.tr_mul(&a)
            }
            ConstraintEstimate::Selection { lambda, arm } => {
                if lambda.n_rows() == 0 {
                    return eye;
                }
                let a = selection_constraint(lambda.matrix(), x.as_slice(), arm);
                match pseudo_inverse(&a, DEFAULT_PINV_TOL) {
                    Ok(p) => eye - p * a,
                    Err(_) => DMatrix::from_element(dim, dim, f64::NAN),
                }
            }
        }
    }

    /// `Â(x)† Â(x) v`, tolerating rank loss.
    fn row_space_component(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        match self {
            ConstraintEstimate::FixedRows(a) => orthonormal_row_projection(a.matrix(), v),
            ConstraintEstimate::StateDependent { dim, rows } => {
                orthonormal_row_projection(&Self::state_dependent_rows(*dim, rows, x), v)
            }
            ConstraintEstimate::Selection { lambda, arm } => {
                let a = selection_constraint(lambda.matrix(), x.as_slice(), arm);
                general_row_projection(&a, v)
            }
        }
    }
}

fn orthonormal_row_projection(a: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    if a.nrows() == 0 {
        return DVector::zeros(v.len());
    }
    a.tr_mul(&(a * v))
}

fn general_row_projection(a: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    let (k, dim) = a.shape();
    if k == 0 {
        return DVector::zeros(dim);
    }
    let row_major: Vec<f64> = (0..k).flat_map(|i| a.row(i).iter().copied().collect::<Vec<_>>()).collect();
    let mut out = DVector::zeros(dim);
    let mut scratch = Vec::new();
    if project_onto_row_space(&row_major, k, dim, v.as_slice(), out.as_mut_slice(), &mut scratch).is_some() {
        return out;
    }
    match pseudo_inverse(a, DEFAULT_PINV_TOL) {
        Ok(p) => p * (a * v),
        Err(_) => DVector::from_element(dim, f64::NAN),
    }
}

fn selection_constraint(lambda: &DMatrix<f64>, q: &[f64], arm: &ArmModel) -> DMatrix<f64> {
    let j = jacobian(q, arm);
    lambda * DMatrix::from_fn(3, 3, |r, c| j[(r, c)])
}

impl ConstraintField for ConstraintEstimate {
    fn dim(&self) -> usize {
        match self {
            ConstraintEstimate::FixedRows(a) => a.dim(),
            ConstraintEstimate::Selection { .. } => crate::arm::N_JOINTS,
            ConstraintEstimate::StateDependent { dim, .. } => *dim,
        }
    }

    fn constraint_at(&self, x: &DVector<f64>) -> Result<ConstraintMatrix> {
        match self {
            ConstraintEstimate::FixedRows(a) => Ok(a.clone()),
            ConstraintEstimate::Selection { lambda, arm } => {
                if x.len() != crate::arm::N_JOINTS {
                    return Err(Error::DimensionMismatch {
                        expected: crate::arm::N_JOINTS,
                        found: x.len(),
                    });
                }
                Ok(ConstraintMatrix::new(selection_constraint(lambda.matrix(), x.as_slice(), arm)))
            }
            ConstraintEstimate::StateDependent { dim, rows } => {
                if let Some(r) = rows.first() {
                    if x.len() != r.features.state_dim() {
                        return Err(Error::DimensionMismatch {
                            expected: r.features.state_dim(),
                            found: x.len(),
                        });
                    }
                }
                Ok(ConstraintMatrix::new(Self::state_dependent_rows(*dim, rows, x)))
            }
        }
    }
}

/// `Ñ(x) = I - Â(x)†Â(x)`.
pub fn predict_projection(estimate: &ConstraintEstimate, x: &DVector<f64>) -> Result<ProjectionMatrix> {
    estimate.projection_at(x)
}

fn projections<F: ConstraintField + ?Sized>(field: &F, points: &[DecomposedPoint]) -> Result<Vec<ProjectionMatrix>> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| field.projection_at(&p.x).map_err(|e| e.at_index(i)))
        .collect()
}

/// `Σ ‖ũ_ns - Ñ ũ_ns‖²`.
pub fn objective_image<F: ConstraintField + ?Sized>(field: &F, points: &[DecomposedPoint]) -> Result<f64> {
    Ok(projections(field, points)?
        .iter()
        .zip(points)
        .map(|(n, p)| (&p.u_ns - n.apply(&p.u_ns)).norm_squared())
        .sum())
}

/// `Σ ‖Ñ ũ_ts‖²`.
pub fn objective_orthogonal<F: ConstraintField + ?Sized>(field: &F, points: &[DecomposedPoint]) -> Result<f64> {
    Ok(projections(field, points)?
        .iter()
        .zip(points)
        .map(|(n, p)| n.apply(&p.u_ts).norm_squared())
        .sum())
}

/// Sum of [`objective_image`] and [`objective_orthogonal`].
pub fn objective_combined<F: ConstraintField + ?Sized>(field: &F, points: &[DecomposedPoint]) -> Result<f64> {
    Ok(objective_image(field, points)? + objective_orthogonal(field, points)?)
}

/// The combined error with rank loss tolerated, as used while fitting.
fn fitting_objective(estimate: &ConstraintEstimate, points: &[DecomposedPoint]) -> f64 {
    points
        .iter()
        .map(|p| {
            let leak_ns = estimate.row_space_component(&p.x, &p.u_ns);
            let kept_ts = &p.u_ts - estimate.row_space_component(&p.x, &p.u_ts);
            leak_ns.norm_squared() + kept_ts.norm_squared()
        })
        .sum()
}

/// The row-acceptance test: the combined error must not increase.
pub fn accepts(with_row: f64, without_row: f64) -> bool {
    with_row <= without_row * (1.0 + ACCEPT_RELATIVE_TOL) + ACCEPT_ABSOLUTE_TOL
}

/// One candidate row considered while fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct RowDecision {
    pub objective_without: f64,
    pub objective_with: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct ConstraintFit {
    pub estimate: ConstraintEstimate,
    /// Combined error of the returned estimate.
    pub objective: f64,
    pub decisions: Vec<RowDecision>,
    /// Set when not even the first row could be accepted.
    pub diagnostic: Option<String>,
}

fn check_points(points: &[DecomposedPoint]) -> Result<(usize, usize)> {
    let first = points
        .first()
        .ok_or_else(|| Error::InvalidInput("no points to learn a constraint from".into()))?;
    let (nx, nu) = (first.x.len(), first.u_ns.len());
    for p in points {
        if p.x.len() != nx {
            return Err(Error::DimensionMismatch {
                expected: nx,
                found: p.x.len(),
            });
        }
        if p.u_ns.len() != nu || p.u_ts.len() != nu {
            return Err(Error::DimensionMismatch {
                expected: nu,
                found: p.u_ns.len().max(p.u_ts.len()),
            });
        }
    }
    Ok((nx, nu))
}

fn row_rng(opts: &LmOptions, row: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(opts.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(row as u64))
}

/// Random hyperspherical angles: polar angles in `[0, π)`, the azimuth in `[0, 2π)`.
fn random_angles<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    use std::f64::consts::{PI, TAU};
    DVector::from_fn(n, |i, _| {
        if i + 1 == n {
            rng.random_range(0.0..TAU)
        } else {
            rng.random_range(0.0..PI)
        }
    })
}

fn unit(theta: &[f64]) -> DVector<f64> {
    let mut y = DVector::zeros(theta.len() + 1);
    unit_vector_into(theta, y.as_mut_slice());
    y
}

/// `r_n = z_n · y(θ)` for fixed vectors `z_n`.
struct ConstantAngleRow<'a> {
    z: &'a DMatrix<f64>,
}

impl LeastSquaresProblem for ConstantAngleRow<'_> {
    fn residuals(&self, theta: &DVector<f64>) -> DVector<f64> {
        self.z * unit(theta.as_slice())
    }

    fn jacobian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let p = theta.len();
        let mut d = vec![0.0; (p + 1) * p];
        unit_vector_jacobian_into(theta.as_slice(), &mut d);
        self.z * DMatrix::from_row_slice(p + 1, p, &d)
    }
}

/// Best of `opts.multistart` seeded starts; ties keep the earliest.
fn multistart<P: LeastSquaresProblem>(
    problem: &P,
    n_params: usize,
    opts: &LmOptions,
    row: usize,
) -> Result<(DVector<f64>, f64)> {
    let mut rng = row_rng(opts, row);
    let mut best: Option<(DVector<f64>, f64)> = None;
    for _ in 0..opts.multistart {
        let start = random_angles(&mut rng, n_params);
        let report = minimize(problem, start, opts)?;
        if best.as_ref().is_none_or(|(_, f)| report.objective < *f) {
            best = Some((report.params, report.objective));
        }
    }
    Ok(best.expect("multistart >= 1"))
}

/// `z_n = Cᵀ v_n` stacked as rows.
fn project_rows(basis: &DMatrix<f64>, vs: impl Iterator<Item = DVector<f64>>) -> DMatrix<f64> {
    let rows: Vec<DVector<f64>> = vs.map(|v| basis.tr_mul(&v)).collect();
    DMatrix::from_fn(rows.len(), basis.ncols(), |r, c| rows[r][c])
}

fn complement_matrix(rows: &[DVector<f64>], dim: usize) -> Result<DMatrix<f64>> {
    let basis = orthonormal_complement_basis(rows, dim)?;
    Ok(DMatrix::from_columns(&basis))
}

/// Runs the row-by-row acceptance loop. `candidate(s, accepted)` proposes the
/// estimate with row `s` added; `None` means no further row is possible.
fn grow_rows<C>(
    empty: ConstraintEstimate,
    max_rows: usize,
    points: &[DecomposedPoint],
    mut candidate: C,
) -> Result<ConstraintFit>
where
    C: FnMut(usize, &ConstraintEstimate) -> Result<ConstraintEstimate>,
{
    let mut current = empty;
    let mut current_obj = fitting_objective(&current, points);
    let mut decisions = Vec::new();
    for s in 0..max_rows {
        let next = candidate(s, &current)?;
        let next_obj = fitting_objective(&next, points);
        let ok = accepts(next_obj, current_obj);
        decisions.push(RowDecision {
            objective_without: current_obj,
            objective_with: next_obj,
            accepted: ok,
        });
        if !ok {
            break;
        }
        current = next;
        current_obj = next_obj;
    }
    let diagnostic = current
        .is_empty()
        .then(|| "the first candidate row increased the combined error; returning an empty constraint".to_string());
    Ok(ConstraintFit {
        estimate: current,
        objective: current_obj,
        decisions,
        diagnostic,
    })
}

/// Points under a random constant constraint of the given rank: `ũ_ts` is a
/// Gaussian combination of the constraint rows and `ũ_ns` a projected
/// Gaussian vector, so both components span their subspaces.
pub fn random_rank_points(dim: usize, rank: usize, n_points: usize, seed: u64) -> Result<(ConstraintMatrix, Vec<DecomposedPoint>)> {
    if rank == 0 || rank > dim {
        return Err(Error::Config(format!("rank {rank} is not in 1..={dim}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = rand_distr::StandardNormal;
    let mut draw = |n: usize| DVector::from_fn(n, |_, _| rng.sample::<f64, _>(normal));
    let q = DMatrix::from_columns(&(0..dim).map(|_| draw(dim)).collect::<Vec<_>>()).qr().q();
    let a = ConstraintMatrix::new(q.columns(0, rank).transpose());
    let n = DMatrix::identity(dim, dim) - a.matrix().tr_mul(a.matrix());
    let points = (0..n_points)
        .map(|_| {
            let x = draw(dim);
            let u_ts = a.matrix().tr_mul(&draw(rank));
            let u_ns = &n * draw(dim);
            DecomposedPoint::new(x, u_ns, u_ts)
        })
        .collect();
    Ok((a, points))
}

/// Constant constraint rows learnt row by row. Each candidate row minimizes
/// the image error `Σ (â_s·ũ_ns)²` over unit vectors orthogonal to the
/// accepted rows.
pub fn fit_constraint_rows(points: &[DecomposedPoint], dim: usize, opts: &LmOptions) -> Result<ConstraintFit> {
    opts.validate()?;
    let (_, nu) = check_points(points)?;
    if nu != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: nu });
    }
    grow_rows(ConstraintEstimate::FixedRows(ConstraintMatrix::empty(dim)), dim, points, |s, current| {
        let accepted = match current {
            ConstraintEstimate::FixedRows(a) => a.rows(),
            _ => unreachable!("fixed-row fitting only grows fixed rows"),
        };
        let basis = complement_matrix(&accepted, dim)?;
        let m = basis.ncols();
        let y = if m == 1 {
            DVector::from_element(1, 1.0)
        } else {
            let z = project_rows(&basis, points.iter().map(|p| p.u_ns.clone()));
            let (theta, _) = multistart(&ConstantAngleRow { z: &z }, m - 1, opts, s)?;
            unit(theta.as_slice())
        };
        let mut rows = accepted;
        rows.push(&basis * y);
        Ok(ConstraintEstimate::FixedRows(ConstraintMatrix::from_rows(&rows, dim)?))
    })
}

/// `Σ_n ũ_nsᵀ (ΛJ_n)†(ΛJ_n) ũ_ns` for a full candidate selection.
fn selection_residuals(lambda: &DMatrix<f64>, jacobians: &[DMatrix<f64>], points: &[DecomposedPoint]) -> DVector<f64> {
    let (k, _) = lambda.shape();
    let dim = points[0].u_ns.len();
    let mut out = DVector::zeros(points.len() * dim);
    let mut rows = vec![0.0; k * dim];
    let mut scratch = Vec::new();
    for (n, (j, p)) in jacobians.iter().zip(points).enumerate() {
        let a = lambda * j;
        for r in 0..k {
            for c in 0..dim {
                rows[r * dim + c] = a[(r, c)];
            }
        }
        let slot = &mut out.as_mut_slice()[n * dim..(n + 1) * dim];
        if project_onto_row_space(&rows, k, dim, p.u_ns.as_slice(), slot, &mut scratch).is_none() {
            let proj = general_row_projection(&a, &p.u_ns);
            slot.copy_from_slice(proj.as_slice());
        }
    }
    out
}

/// Learns the rows of a task-space selection `Λ` for a known arm, row by row,
/// minimizing `Σ ũ_nsᵀ (ΛJ)†(ΛJ) ũ_ns` over unit rows orthogonal to those
/// already accepted.
pub fn fit_selection_matrix(points: &[DecomposedPoint], arm: &ArmModel, opts: &LmOptions) -> Result<ConstraintFit> {
    opts.validate()?;
    let (nx, nu) = check_points(points)?;
    let n_joints = crate::arm::N_JOINTS;
    if nx != n_joints || nu != n_joints {
        return Err(Error::DimensionMismatch {
            expected: n_joints,
            found: if nx != n_joints { nx } else { nu },
        });
    }
    let task_dim = 3;
    let jacobians: Vec<DMatrix<f64>> = points
        .iter()
        .map(|p| {
            let j = jacobian(p.x.as_slice(), arm);
            DMatrix::from_fn(3, 3, |r, c| j[(r, c)])
        })
        .collect();
    let empty = ConstraintEstimate::Selection {
        lambda: ConstraintMatrix::empty(task_dim),
        arm: *arm,
    };
    grow_rows(empty, task_dim, points, |s, current| {
        let accepted = match current {
            ConstraintEstimate::Selection { lambda, .. } => lambda.rows(),
            _ => unreachable!("selection fitting only grows selections"),
        };
        let basis = complement_matrix(&accepted, task_dim)?;
        let m = basis.ncols();
        let with_row = |y: &DVector<f64>| {
            let mut rows = accepted.clone();
            rows.push(&basis * y);
            DMatrix::from_fn(rows.len(), task_dim, |r, c| rows[r][c])
        };
        let y = if m == 1 {
            DVector::from_element(1, 1.0)
        } else {
            let problem = FnProblem(|theta: &DVector<f64>| {
                selection_residuals(&with_row(&unit(theta.as_slice())), &jacobians, points)
            });
            let (theta, _) = multistart(&problem, m - 1, opts, s)?;
            unit(theta.as_slice())
        };
        Ok(ConstraintEstimate::Selection {
            lambda: ConstraintMatrix::new(with_row(&y)),
            arm: *arm,
        })
    })
}

/// `r_n = z_n · y(W φ_n)` with per-point complement coordinates `z_n`.
struct StateAngleRow<'a> {
    z: &'a DMatrix<f64>,
    phi: &'a DMatrix<f64>,
    phi_t: &'a DMatrix<f64>,
}

impl StateAngleRow<'_> {
    fn angles(&self, params: &DVector<f64>) -> DMatrix<f64> {
        let n_feat = self.phi.ncols();
        let p = self.z.ncols() - 1;
        let w_t = DMatrix::from_fn(n_feat, p, |j, i| params[i * n_feat + j]);
        self.phi * w_t
    }
}

impl LeastSquaresProblem for StateAngleRow<'_> {
    fn residuals(&self, params: &DVector<f64>) -> DVector<f64> {
        let theta = self.angles(params);
        let m = self.z.ncols();
        let mut y = vec![0.0; m];
        let mut t = vec![0.0; m - 1];
        DVector::from_fn(self.z.nrows(), |n, _| {
            for (i, ti) in t.iter_mut().enumerate() {
                *ti = theta[(n, i)];
            }
            unit_vector_into(&t, &mut y);
            (0..m).map(|c| self.z[(n, c)] * y[c]).sum()
        })
    }

    fn jacobian(&self, params: &DVector<f64>) -> DMatrix<f64> {
        kronecker_jacobian(self.phi, &self.angle_gradients(params))
    }

    fn normal_equations(&self, params: &DVector<f64>, residuals: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        kronecker_normal_equations(self.phi, self.phi_t, &self.angle_gradients(params), residuals)
    }
}

impl StateAngleRow<'_> {
    /// Rows hold `∂r_n/∂θ_n = D(θ_n)ᵀ z_n`.
    fn angle_gradients(&self, params: &DVector<f64>) -> DMatrix<f64> {
        let theta = self.angles(params);
        let (n_obs, m) = self.z.shape();
        let p = m - 1;
        let mut out = DMatrix::zeros(n_obs, p);
        let mut d = vec![0.0; m * p];
        let mut t = vec![0.0; p];
        for n in 0..n_obs {
            for (i, ti) in t.iter_mut().enumerate() {
                *ti = theta[(n, i)];
            }
            unit_vector_jacobian_into(&t, &mut d);
            for i in 0..p {
                out[(n, i)] = (0..m).map(|c| d[c * p + i] * self.z[(n, c)]).sum();
            }
        }
        out
    }
}

/// State-dependent rows `â_s(x) = C_s(x) y(W_s φ(x))`, where `C_s(x)` spans the
/// complement of the earlier rows at `x`. Each row is first fitted with
/// constant angles (multistart), then refined over the full weight matrix.
pub fn fit_state_dependent_rows(
    points: &[DecomposedPoint],
    features: &RbfFeatureMap,
    opts: &LmOptions,
) -> Result<ConstraintFit> {
    opts.validate()?;
    let (nx, dim) = check_points(points)?;
    if nx != features.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: features.state_dim(),
            found: nx,
        });
    }
    let phi = features.feature_matrix(&points.iter().map(|p| p.x.clone()).collect::<Vec<_>>());
    let phi_t = phi.transpose();
    let n_feat = features.n_features();
    // Per-point complement frames of the rows fitted so far.
    let mut frames: Vec<DMatrix<f64>> = vec![DMatrix::identity(dim, dim); points.len()];

    let empty = ConstraintEstimate::StateDependent { dim, rows: Vec::new() };
    grow_rows(empty, dim, points, |s, current| {
        let mut rows = match current {
            ConstraintEstimate::StateDependent { rows, .. } => rows.clone(),
            _ => unreachable!("state-dependent fitting only grows state-dependent rows"),
        };
        // Candidate s is only proposed once row s - 1 was accepted.
        if let Some(prev) = s.checked_sub(1).map(|i| &rows[i]) {
            for (frame, p) in frames.iter_mut().zip(points) {
                let y = prev.local_direction(&p.x);
                let h = householder_frame(y.as_slice());
                *frame = &*frame * h.columns(1, y.len() - 1);
            }
        }
        let m = dim - s;
        let z = DMatrix::from_fn(points.len(), m, |n, c| frames[n].column(c).dot(&points[n].u_ns));
        let weights = if m == 1 {
            DMatrix::zeros(0, n_feat)
        } else {
            let (theta, _) = multistart(&ConstantAngleRow { z: &z }, m - 1, opts, s)?;
            let start = DVector::from_fn((m - 1) * n_feat, |k, _| theta[k / n_feat]);
            let report = minimize(&StateAngleRow { z: &z, phi: &phi, phi_t: &phi_t }, start, opts)?;
            DMatrix::from_fn(m - 1, n_feat, |i, j| report.params[i * n_feat + j])
        };
        let model = RbfAngleModel::new(features.clone(), weights, m)?;
        rows.push(model);
        Ok(ConstraintEstimate::StateDependent { dim, rows })
    })
}
