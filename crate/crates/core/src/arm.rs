//! Planar three-link arm: forward kinematics, analytic Jacobian, task
//! constraints `A = ΛJ` and a damped-least-squares feasibility check.
//!
//! Joint angles are relative; link `i` points along the cumulative angle
//! `c_i = q₁ + … + q_i` measured from the +x axis, with z vertical and the
//! base at the origin.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projection::{pseudo_inverse, ConstraintField, ConstraintMatrix, DEFAULT_PINV_TOL};

pub const N_JOINTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    pub link_lengths: [f64; 3],
}

impl Default for ArmModel {
    fn default() -> Self {
        Self {
            link_lengths: [1.0, 1.0, 1.0],
        }
    }
}

impl ArmModel {
    pub fn new(link_lengths: [f64; 3]) -> Result<Self> {
        if link_lengths.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "link lengths must be positive, got {link_lengths:?}"
            )));
        }
        Ok(Self { link_lengths })
    }

    pub fn reach(&self) -> f64 {
        self.link_lengths.iter().sum()
    }

    pub fn forward_kinematics(&self, q: &[f64]) -> Vector3<f64> {
        forward_kinematics(q, self)
    }

    pub fn jacobian(&self, q: &[f64]) -> Matrix3<f64> {
        jacobian(q, self)
    }
}

/// Task pose `(r_x, r_z, r_θ)`.
pub fn forward_kinematics(q: &[f64], arm: &ArmModel) -> Vector3<f64> {
    let mut c = 0.0;
    let mut r = Vector3::zeros();
    for (qi, li) in q.iter().zip(arm.link_lengths) {
        c += qi;
        r[0] += li * c.cos();
        r[1] += li * c.sin();
    }
    r[2] = c;
    r
}

/// `∂r/∂q`; the orientation row is always `(1, 1, 1)`.
pub fn jacobian(q: &[f64], arm: &ArmModel) -> Matrix3<f64> {
    let mut cum = [0.0; 3];
    let mut c = 0.0;
    for i in 0..3 {
        c += q[i];
        cum[i] = c;
    }
    let mut j = Matrix3::zeros();
    for col in 0..3 {
        for i in col..3 {
            let l = arm.link_lengths[i];
            j[(0, col)] -= l * cum[i].sin();
            j[(1, col)] += l * cum[i].cos();
        }
        j[(2, col)] = 1.0;
    }
    j
}

/// `k × 3` selection of constrained task coordinates with orthonormal rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SelectionMatrix(DMatrix<f64>);

impl SelectionMatrix {
    pub fn new(rows: DMatrix<f64>) -> Result<Self> {
        if rows.ncols() != 3 || rows.nrows() == 0 || rows.nrows() > 3 {
            return Err(Error::InvalidInput(format!(
                "selection matrix must be k x 3 with 1 <= k <= 3, got {:?}",
                rows.shape()
            )));
        }
        let s = Self(rows);
        if !ConstraintMatrix::new(s.0.clone()).is_orthonormal(1e-8) {
            return Err(Error::InvalidInput("selection rows must be orthonormal".into()));
        }
        Ok(s)
    }

    fn axes(idx: &[usize]) -> Self {
        let mut m = DMatrix::zeros(idx.len(), 3);
        for (r, &c) in idx.iter().enumerate() {
            m[(r, c)] = 1.0;
        }
        Self(m)
    }

    /// Constrains the end-effector position.
    pub fn xz() -> Self {
        Self::axes(&[0, 1])
    }

    pub fn x_theta() -> Self {
        Self::axes(&[0, 2])
    }

    pub fn z_theta() -> Self {
        Self::axes(&[1, 2])
    }

    pub fn identity() -> Self {
        Self::axes(&[0, 1, 2])
    }

    pub fn n_rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn rows(&self) -> Vec<DVector<f64>> {
        (0..self.0.nrows()).map(|i| self.0.row(i).transpose()).collect()
    }

    /// `Λ v` for a task-space vector.
    pub fn select(&self, v: &Vector3<f64>) -> DVector<f64> {
        &self.0 * DVector::from_column_slice(v.as_slice())
    }
}

impl TryFrom<Vec<Vec<f64>>> for SelectionMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.iter().any(|r| r.len() != 3) {
            return Err(Error::InvalidInput("selection rows must have 3 entries".into()));
        }
        SelectionMatrix::new(DMatrix::from_fn(rows.len(), 3, |i, j| rows[i][j]))
    }
}

impl From<SelectionMatrix> for Vec<Vec<f64>> {
    fn from(s: SelectionMatrix) -> Self {
        (0..s.0.nrows())
            .map(|i| s.0.row(i).iter().copied().collect())
            .collect()
    }
}

fn to_dmatrix(m: &Matrix3<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(3, 3, |i, j| m[(i, j)])
}

/// `A = ΛJ(q)`. The rows need not be orthonormal and may lose rank at
/// singular configurations; that surfaces as a degenerate-constraint error
/// once a projection is built from the result.
pub fn task_constraint(lambda: &SelectionMatrix, q: &[f64], arm: &ArmModel) -> ConstraintMatrix {
    ConstraintMatrix::new(lambda.matrix() * to_dmatrix(&jacobian(q, arm)))
}

/// Damped-least-squares IK on the selected coordinates of the full task target
/// `r_star = (r_x, r_z, r_θ)`. True iff `‖Λ(r* - r(q))‖ < tol` within `max_iter`
/// iterations.
pub fn ik_feasible(
    r_star: &Vector3<f64>,
    lambda: &SelectionMatrix,
    arm: &ArmModel,
    q_init: &[f64],
    tol: f64,
    max_iter: usize,
) -> bool {
    ik_solve(r_star, lambda, arm, q_init, tol, max_iter, IK_DAMPING).is_some()
}

pub const IK_DAMPING: f64 = 0.1;
pub const IK_TOL: f64 = 1e-6;
pub const IK_MAX_ITER: usize = 200;

/// Returns the joint solution when the selected residual drops below `tol`.
pub fn ik_solve(
    r_star: &Vector3<f64>,
    lambda: &SelectionMatrix,
    arm: &ArmModel,
    q_init: &[f64],
    tol: f64,
    max_iter: usize,
    damping: f64,
) -> Option<Vec<f64>> {
    let mut q = q_init.to_vec();
    let k = lambda.n_rows();
    for _ in 0..=max_iter {
        let err = lambda.select(&(r_star - forward_kinematics(&q, arm)));
        if !err.iter().all(|e| e.is_finite()) {
            return None;
        }
        if err.norm() < tol {
            return Some(q);
        }
        let js = lambda.matrix() * to_dmatrix(&jacobian(&q, arm));
        let damped = &js * js.transpose() + DMatrix::identity(k, k) * (damping * damping);
        let step = js.transpose() * damped.cholesky()?.solve(&err);
        for (qi, d) in q.iter_mut().zip(step.iter()) {
            *qi += d;
        }
    }
    None
}

/// The ground-truth arm constraint `ΛJ(q)` as a state field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmConstraint {
    pub arm: ArmModel,
    pub lambda: SelectionMatrix,
}

impl ConstraintField for ArmConstraint {
    fn dim(&self) -> usize {
        N_JOINTS
    }

    fn constraint_at(&self, x: &DVector<f64>) -> Result<ConstraintMatrix> {
        Ok(task_constraint(&self.lambda, x.as_slice(), &self.arm))
    }
}

/// `J(q)⁺ ṙ`: joint velocity realizing a task-space velocity.
pub fn joint_velocity_for(arm: &ArmModel, q: &[f64], r_dot: &Vector3<f64>) -> Result<DVector<f64>> {
    let jp = pseudo_inverse(&to_dmatrix(&jacobian(q, arm)), DEFAULT_PINV_TOL)?;
    Ok(jp * DVector::from_column_slice(r_dot.as_slice()))
}
