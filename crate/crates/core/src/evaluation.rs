//! Error measures for learnt projections and rollouts under learnt constraints.
//!
//! All three errors are sums of squared distances normalized by `N σ_u²`,
//! where `σ_u²` is the total variance of the observed actions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constraint::ConstraintEstimate;
use crate::data::{total_variance, Dataset};
#[cfg(test)]
use crate::data::ConstraintDescription;
use crate::error::{Error, Result};
use crate::projection::ConstraintField;
use crate::rbf::RbfVectorModel;

pub const CSV_HEADER: &str = "scenario,method,trial,nnce,nppe,npoe";

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

fn check_sigma(sigma_u_sq: f64) -> Result<()> {
    if sigma_u_sq > 0.0 && sigma_u_sq.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "normalization variance must be positive, got {sigma_u_sq}"
        )))
    }
}

/// Total variance of the actions about their mean.
pub fn observation_variance(us: &[DVector<f64>]) -> f64 {
    total_variance(us)
}

/// Normalized projected policy error: `Σ ‖N π - Ñ π‖² / (N σ²)`.
pub fn nppe(true_n: &[DMatrix<f64>], est_n: &[DMatrix<f64>], pis: &[DVector<f64>], sigma_u_sq: f64) -> Result<f64> {
    check_len(true_n.len(), est_n.len())?;
    check_len(true_n.len(), pis.len())?;
    check_sigma(sigma_u_sq)?;
    let total: f64 = true_n
        .iter()
        .zip(est_n)
        .zip(pis)
        .map(|((n, e), pi)| (n * pi - e * pi).norm_squared())
        .sum();
    Ok(total / (pis.len() as f64 * sigma_u_sq))
}

/// Normalized projected observation error:
/// `Σ (‖u_ns - Ñ u_ns‖² + ‖Ñ u_ts‖²) / (N σ²)`.
pub fn npoe(u_ns: &[DVector<f64>], u_ts: &[DVector<f64>], est_n: &[DMatrix<f64>], sigma_u_sq: f64) -> Result<f64> {
    check_len(u_ns.len(), u_ts.len())?;
    check_len(u_ns.len(), est_n.len())?;
    check_sigma(sigma_u_sq)?;
    let total: f64 = u_ns
        .iter()
        .zip(u_ts)
        .zip(est_n)
        .map(|((ns, ts), e)| (ns - e * ns).norm_squared() + (e * ts).norm_squared())
        .sum();
    Ok(total / (u_ns.len() as f64 * sigma_u_sq))
}

/// Normalized null-space component error: `Σ ‖u_ns - ũ_ns‖² / (N σ²)`.
pub fn nnce(true_ns: &[DVector<f64>], est_ns: &[DVector<f64>], sigma_u_sq: f64) -> Result<f64> {
    check_len(true_ns.len(), est_ns.len())?;
    check_sigma(sigma_u_sq)?;
    let total: f64 = true_ns.iter().zip(est_ns).map(|(a, b)| (a - b).norm_squared()).sum();
    Ok(total / (true_ns.len() as f64 * sigma_u_sq))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub nnce: f64,
    pub nppe: f64,
    pub npoe: f64,
    pub sigma_u_sq: f64,
    pub n_points: usize,
}

impl EvaluationReport {
    pub fn csv_row(&self, scenario: &str, method: &str, trial: usize) -> String {
        format!(
            "{scenario},{method},{trial},{:e},{:e},{:e}",
            self.nnce, self.nppe, self.npoe
        )
    }
}

/// Scores an estimate on held-out data with ground truth. With a null-space
/// model the NNCE compares its predictions to the true `u_ns`; without one
/// the true decomposition was used for learning and the NNCE is zero.
pub fn evaluate(estimate: &ConstraintEstimate, model: Option<&RbfVectorModel>, test: &Dataset) -> Result<EvaluationReport> {
    if test.is_empty() {
        return Err(Error::InvalidInput("cannot evaluate on an empty dataset".into()));
    }
    let gts = test.ground_truth()?;
    let sigma_u_sq = observation_variance(&test.actions());
    let true_n = gts
        .iter()
        .enumerate()
        .map(|(i, g)| g.projection().map(|p| p.into_inner()).map_err(|e| e.at_index(i)))
        .collect::<Result<Vec<_>>>()?;
    let est_n: Vec<DMatrix<f64>> = test.observations.iter().map(|o| estimate.null_projector(&o.x)).collect();
    let pis: Vec<DVector<f64>> = gts.iter().map(|g| g.pi.clone()).collect();
    let u_ns: Vec<DVector<f64>> = gts.iter().map(|g| g.u_ns.clone()).collect();
    let u_ts: Vec<DVector<f64>> = gts.iter().map(|g| g.u_ts.clone()).collect();
    let nnce_value = match model {
        Some(m) => {
            let est: Vec<DVector<f64>> = test.observations.iter().map(|o| m.predict(&o.x)).collect();
            nnce(&u_ns, &est, sigma_u_sq)?
        }
        None => 0.0,
    };
    Ok(EvaluationReport {
        nnce: nnce_value,
        nppe: nppe(&true_n, &est_n, &pis, sigma_u_sq)?,
        npoe: npoe(&u_ns, &u_ts, &est_n, sigma_u_sq)?,
        sigma_u_sq,
        n_points: test.len(),
    })
}

/// Two rollouts from the same start and their separation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryComparison {
    pub learnt: Vec<DVector<f64>>,
    pub truth: Vec<DVector<f64>>,
    pub max_deviation: f64,
    pub mean_deviation: f64,
    /// Arc length of the ground-truth rollout.
    pub path_length: f64,
}

fn rollout<F, T, P>(field: &F, task: &T, policy: &P, x0: &DVector<f64>, n_steps: usize, dt: f64) -> Result<Vec<DVector<f64>>>
where
    F: ConstraintField + ?Sized,
    T: Fn(&DVector<f64>) -> Result<DVector<f64>>,
    P: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let dim = field.dim();
    let mut xs = Vec::with_capacity(n_steps + 1);
    let mut x = x0.clone();
    xs.push(x.clone());
    for step in 0..n_steps {
        let n = field.projection_at(&x).map_err(|e| e.at_index(step))?.into_inner();
        let u = (DMatrix::identity(dim, dim) - &n) * task(&x)? + n * policy(&x)?;
        x += u * dt;
        xs.push(x.clone());
    }
    Ok(xs)
}

/// Integrates `u = (I - Ñ) v(x) + Ñ π(x)` under the learnt and the true
/// constraint, where `v(x)` is the action the task-space policy asks for.
/// Under the true constraint `(I - N) v` equals the task-space term `A†b`.
pub fn reproduce_trajectory<L, G, T, P>(
    learnt: &L,
    truth: &G,
    task: T,
    policy: P,
    x0: &DVector<f64>,
    n_steps: usize,
    dt: f64,
) -> Result<TrajectoryComparison>
where
    L: ConstraintField + ?Sized,
    G: ConstraintField + ?Sized,
    T: Fn(&DVector<f64>) -> Result<DVector<f64>>,
    P: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    if learnt.dim() != truth.dim() || x0.len() != truth.dim() {
        return Err(Error::DimensionMismatch {
            expected: truth.dim(),
            found: if learnt.dim() != truth.dim() { learnt.dim() } else { x0.len() },
        });
    }
    let a = rollout(learnt, &task, &policy, x0, n_steps, dt)?;
    let b = rollout(truth, &task, &policy, x0, n_steps, dt)?;
    let devs: Vec<f64> = a.iter().zip(&b).map(|(p, q)| (p - q).norm()).collect();
    let path_length = b.windows(2).map(|w| (&w[1] - &w[0]).norm()).sum();
    Ok(TrajectoryComparison {
        max_deviation: devs.iter().copied().fold(0.0, f64::max),
        mean_deviation: devs.iter().sum::<f64>() / devs.len() as f64,
        path_length,
        learnt: a,
        truth: b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint::{decompose_with_ground_truth, objective_combined};
    use crate::data::generate_toy_split;
    use crate::policies::PolicySpec;
    use crate::projection::{projection_from_constraint, ConstraintMatrix};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn rows(rs: &[&[f64]]) -> ConstraintMatrix {
        let dim = rs[0].len();
        let rs: Vec<DVector<f64>> = rs.iter().map(|r| v(r)).collect();
        ConstraintMatrix::from_rows(&rs, dim).unwrap()
    }

    fn null(rs: &[&[f64]]) -> DMatrix<f64> {
        projection_from_constraint(&rows(rs)).unwrap().into_inner()
    }

    fn limit_cycle() -> PolicySpec {
        PolicySpec::LimitCycle { rho: 0.75, angular_rate: 1.0 }
    }

    #[test]
    fn observation_variance_examples() {
        assert_eq!(observation_variance(&[v(&[0.0, 0.0]), v(&[2.0, 0.0])]), 1.0);
        assert_eq!(observation_variance(&[v(&[1.0, 1.0]), v(&[1.0, 1.0])]), 0.0);
        let us = [v(&[1.0, 0.0]), v(&[-1.0, 0.0]), v(&[0.0, 3.0]), v(&[0.0, -3.0])];
        assert!((observation_variance(&us) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn error_examples() {
        let true_n = null(&[&[1.0, 0.0]]);
        let est_n = null(&[&[0.0, 1.0]]);
        let pi = v(&[1.0, 2.0]);
        assert!((nppe(&[true_n], std::slice::from_ref(&est_n), &[pi], 2.0).unwrap() - 2.5).abs() < 1e-12);
        let npoe_value = npoe(&[v(&[0.0, 2.0])], &[v(&[1.0, 0.0])], &[est_n], 1.0).unwrap();
        assert!((npoe_value - 5.0).abs() < 1e-12);
        assert_eq!(nnce(&[v(&[1.0, 0.0])], &[v(&[0.0, 0.0])], 0.5).unwrap(), 2.0);
    }

    #[test]
    fn errors_scale_inversely_with_variance() {
        let true_n = vec![null(&[&[1.0, 0.0]]); 3];
        let est_n = vec![null(&[&[0.6, 0.8]]); 3];
        let pis = vec![v(&[1.0, -1.0]), v(&[0.5, 2.0]), v(&[-3.0, 0.2])];
        let e1 = nppe(&true_n, &est_n, &pis, 1.0).unwrap();
        let e4 = nppe(&true_n, &est_n, &pis, 4.0).unwrap();
        assert!(e1 > 0.0);
        assert!((e1 - 4.0 * e4).abs() < 1e-14);
    }

    #[test]
    fn projection_errors_ignore_row_mixing() {
        let a = rows(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        let mixed = rows(&[&[1.0, 1.0, 0.0], &[1.0, -1.0, 0.0]]);
        let truth = null(&[&[0.0, 0.6, 0.8]]);
        let pis = [v(&[0.3, -1.0, 2.0]), v(&[1.0, 1.0, 1.0])];
        let na = projection_from_constraint(&a).unwrap().into_inner();
        let nm = projection_from_constraint(&mixed).unwrap().into_inner();
        let ea = nppe(&[truth.clone(), truth.clone()], &[na.clone(), na], &pis, 1.3).unwrap();
        let em = nppe(&[truth.clone(), truth], &[nm.clone(), nm], &pis, 1.3).unwrap();
        assert!((ea - em).abs() < 1e-14);
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let ns = [null(&[&[1.0, 0.0]])];
        let pis = [v(&[1.0, 0.0])];
        assert!(matches!(nppe(&ns, &[], &pis, 1.0), Err(Error::DimensionMismatch { .. })));
        assert!(nppe(&ns, &ns, &pis, 0.0).is_err());
        assert!(npoe(&pis, &pis, &ns, f64::NAN).is_err());
        assert!(nnce(&pis, &[pis[0].clone(), pis[0].clone()], 1.0).is_err());
    }

    #[test]
    fn true_constraint_scores_zero() {
        let (_, test) = generate_toy_split(&limit_cycle(), 10, 60, 3).unwrap();
        let ConstraintDescription::Fixed { rows: truth } = &test.meta.constraint else {
            panic!("toy data have a fixed constraint");
        };
        let estimate = ConstraintEstimate::FixedRows(rows(&[&truth[0]]));
        let report = evaluate(&estimate, None, &test).unwrap();
        assert!(report.nppe < 1e-28 && report.npoe < 1e-28);
        assert_eq!(report.nnce, 0.0);
        assert_eq!(report.n_points, 60);
        assert!((report.sigma_u_sq - observation_variance(&test.actions())).abs() < 1e-15);
    }

    #[test]
    fn npoe_is_the_normalized_combined_objective() {
        let (_, test) = generate_toy_split(&limit_cycle(), 10, 80, 5).unwrap();
        let estimate = ConstraintEstimate::FixedRows(rows(&[&[0.6, -0.8]]));
        let report = evaluate(&estimate, None, &test).unwrap();
        let points = decompose_with_ground_truth(&test).unwrap();
        let combined = objective_combined(&estimate, &points).unwrap();
        let expected = combined / (test.len() as f64 * report.sigma_u_sq);
        assert!((report.npoe - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn evaluation_needs_ground_truth() {
        let (_, mut test) = generate_toy_split(&limit_cycle(), 10, 5, 1).unwrap();
        test.observations[2].ground_truth = None;
        let estimate = ConstraintEstimate::FixedRows(rows(&[&[1.0, 0.0]]));
        assert!(evaluate(&estimate, None, &test).is_err());
        test.observations.clear();
        assert!(evaluate(&estimate, None, &test).is_err());
    }

    #[test]
    fn matching_constraints_reproduce_the_same_path() {
        let a = rows(&[&[0.6, 0.8]]);
        let task = |x: &DVector<f64>| Ok(v(&[0.6, 0.8]) * (1.0 - v(&[0.6, 0.8]).dot(x)));
        let policy = |x: &DVector<f64>| Ok(v(&[-x[1], x[0]]));
        let cmp = reproduce_trajectory(&a, &a, task, policy, &v(&[0.5, -0.2]), 40, 0.05).unwrap();
        assert_eq!(cmp.max_deviation, 0.0);
        assert_eq!(cmp.learnt.len(), 41);
        assert!(cmp.path_length > 0.0);
    }

    #[test]
    fn unconstrained_path_length_follows_the_policy() {
        let free = ConstraintMatrix::empty(2);
        let task = |_: &DVector<f64>| Ok(v(&[5.0, 5.0]));
        let policy = |_: &DVector<f64>| Ok(v(&[3.0, 4.0]));
        let cmp = reproduce_trajectory(&free, &free, task, policy, &v(&[0.0, 0.0]), 10, 0.1).unwrap();
        assert!((cmp.path_length - 5.0).abs() < 1e-12);
        assert!((&cmp.truth[10] - v(&[3.0, 4.0])).norm() < 1e-12);
    }

    #[test]
    fn different_constraints_separate() {
        let a = rows(&[&[1.0, 0.0]]);
        let b = rows(&[&[0.0, 1.0]]);
        let task = |_: &DVector<f64>| Ok(v(&[0.0, 0.0]));
        let policy = |_: &DVector<f64>| Ok(v(&[1.0, 1.0]));
        let cmp = reproduce_trajectory(&a, &b, task, policy, &v(&[0.0, 0.0]), 10, 0.1).unwrap();
        assert!((cmp.max_deviation - 2f64.sqrt()).abs() < 1e-12);
        assert!(reproduce_trajectory(&a, &rows(&[&[0.0, 0.0, 1.0]]), task, policy, &v(&[0.0, 0.0]), 1, 0.1).is_err());
    }
}
