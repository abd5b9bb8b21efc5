//! Ground-truth null-space and task-space policies used to synthesize
//! demonstrations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default task-space attractor gain.
pub const DEFAULT_TASK_GAIN: f64 = 0.1;

/// Rows of the linear toy policy matrix `L` (2 × 3, acting on `(x₁, x₂, 1)`).
pub const LINEAR_POLICY_ROWS: [[f64; 3]; 2] = [[2.0, 4.0, 0.0], [1.0, 3.0, -1.0]];

/// Null-space policy description; serialized into dataset metadata and
/// experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    /// `π(x) = -L (x, 1)`.
    Linear { l: Vec<Vec<f64>> },
    /// Polar limit cycle `ṙ = r(ρ - r²)`, `φ̇ = rate`.
    LimitCycle { rho: f64, angular_rate: f64 },
    /// `(cos z₁ cos z₂, -sin z₁ sin z₂)` with `z₁ = πx₁`, `z₂ = π(x₂ + ½)`.
    Sinusoidal,
    /// `π(x) = -L (x - x*)`.
    JointAttractor { target: Vec<f64>, gain: Vec<Vec<f64>> },
    /// Negative gradient of `coefficient · ‖x‖²`.
    QuadraticPotential { coefficient: f64 },
}

impl PolicySpec {
    pub fn linear() -> Self {
        PolicySpec::Linear {
            l: LINEAR_POLICY_ROWS.iter().map(|r| r.to_vec()).collect(),
        }
    }

    pub fn limit_cycle() -> Self {
        PolicySpec::LimitCycle {
            rho: 0.75,
            angular_rate: 1.0,
        }
    }

    pub fn sinusoidal() -> Self {
        PolicySpec::Sinusoidal
    }

    /// `-(x - 0)` in `R^dim`.
    pub fn joint_attractor(dim: usize) -> Self {
        PolicySpec::JointAttractor {
            target: vec![0.0; dim],
            gain: (0..dim)
                .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
        }
    }

    pub fn quadratic_potential() -> Self {
        PolicySpec::QuadraticPotential { coefficient: 0.05 }
    }

    /// Checks parameter shapes against the state/action dimension.
    pub fn validate(&self, dim: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match self {
            PolicySpec::Linear { l } => {
                if dim != 2 || l.len() != 2 || l.iter().any(|r| r.len() != 3) {
                    return bad("linear policy needs a 2x3 matrix in a 2-D state space".into());
                }
            }
            PolicySpec::LimitCycle { rho, angular_rate } => {
                if dim != 2 {
                    return bad("limit-cycle policy is defined in 2-D only".into());
                }
                if !rho.is_finite() || !angular_rate.is_finite() {
                    return bad("limit-cycle parameters must be finite".into());
                }
            }
            PolicySpec::Sinusoidal => {
                if dim != 2 {
                    return bad("sinusoidal policy is defined in 2-D only".into());
                }
            }
            PolicySpec::JointAttractor { target, gain } => {
                if target.len() != dim || gain.len() != dim || gain.iter().any(|r| r.len() != dim) {
                    return bad(format!("joint attractor parameters must be {dim}-dimensional"));
                }
            }
            PolicySpec::QuadraticPotential { coefficient } => {
                if !coefficient.is_finite() {
                    return bad("potential coefficient must be finite".into());
                }
            }
        }
        Ok(())
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            PolicySpec::Linear { l } => {
                let l = DMatrix::from_fn(2, 3, |i, j| l[i][j]);
                let xb = DVector::from_vec(vec![x[0], x[1], 1.0]);
                Ok(-(l * xb))
            }
            PolicySpec::LimitCycle { rho, angular_rate } => {
                limit_cycle_with(x, *rho, *angular_rate)
            }
            PolicySpec::Sinusoidal => Ok(sinusoidal_policy(x)),
            PolicySpec::JointAttractor { target, gain } => {
                let n = x.len();
                let l = DMatrix::from_fn(n, n, |i, j| gain[i][j]);
                Ok(joint_attractor_policy(x, &DVector::from_column_slice(target), &l))
            }
            PolicySpec::QuadraticPotential { coefficient } => Ok(x * (-2.0 * coefficient)),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::Linear { .. } => "linear",
            PolicySpec::LimitCycle { .. } => "limit_cycle",
            PolicySpec::Sinusoidal => "sinusoidal",
            PolicySpec::JointAttractor { .. } => "joint_attractor",
            PolicySpec::QuadraticPotential { .. } => "quadratic_potential",
        }
    }
}

pub fn linear_policy(x: &DVector<f64>) -> DVector<f64> {
    let [r0, r1] = LINEAR_POLICY_ROWS;
    DVector::from_vec(vec![
        -(r0[0] * x[0] + r0[1] * x[1] + r0[2]),
        -(r1[0] * x[0] + r1[1] * x[1] + r1[2]),
    ])
}

pub fn limit_cycle_policy(x: &DVector<f64>) -> Result<DVector<f64>> {
    limit_cycle_with(x, 0.75, 1.0)
}

fn limit_cycle_with(x: &DVector<f64>, rho: f64, rate: f64) -> Result<DVector<f64>> {
    let r = x[0].hypot(x[1]);
    if r == 0.0 {
        return Err(Error::SingularState(x.iter().copied().collect()));
    }
    let r_dot = r * (rho - r * r);
    let (cos_phi, sin_phi) = (x[0] / r, x[1] / r);
    Ok(DVector::from_vec(vec![
        r_dot * cos_phi - r * rate * sin_phi,
        r_dot * sin_phi + r * rate * cos_phi,
    ]))
}

pub fn sinusoidal_policy(x: &DVector<f64>) -> DVector<f64> {
    let z1 = std::f64::consts::PI * x[0];
    let z2 = std::f64::consts::PI * (x[1] + 0.5);
    DVector::from_vec(vec![z1.cos() * z2.cos(), -z1.sin() * z2.sin()])
}

pub fn joint_attractor_policy(x: &DVector<f64>, x_star: &DVector<f64>, l: &DMatrix<f64>) -> DVector<f64> {
    -(l * (x - x_star))
}

/// Gradient-descent policy on `0.05‖x‖²`, i.e. `-0.1 x`.
pub fn quadratic_potential_policy(x: &DVector<f64>) -> DVector<f64> {
    x * -0.1
}

/// `β (ρ* - ρ)`.
pub fn task_linear_attractor(rho: &DVector<f64>, rho_star: &DVector<f64>, beta: f64) -> DVector<f64> {
    (rho_star - rho) * beta
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn close(a: &DVector<f64>, b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn linear_examples() {
        assert!(close(&linear_policy(&v(&[0.0, 0.0])), &[0.0, 1.0], 0.0));
        assert!(close(&linear_policy(&v(&[1.0, 0.0])), &[-2.0, 0.0], 0.0));
        assert!(close(&linear_policy(&v(&[0.0, 1.0])), &[-4.0, -2.0], 0.0));
        let spec = PolicySpec::linear();
        assert_eq!(spec.evaluate(&v(&[0.3, -0.7])).unwrap(), linear_policy(&v(&[0.3, -0.7])));
    }

    #[test]
    fn limit_cycle_examples() {
        let s = 0.75f64.sqrt();
        assert!(close(&limit_cycle_policy(&v(&[s, 0.0])).unwrap(), &[0.0, s], 1e-12));
        assert!(close(&limit_cycle_policy(&v(&[0.0, s])).unwrap(), &[-s, 0.0], 1e-12));
        assert!(close(&limit_cycle_policy(&v(&[0.5, 0.0])).unwrap(), &[0.25, 0.5], 1e-15));
        assert!(matches!(
            limit_cycle_policy(&v(&[0.0, 0.0])),
            Err(Error::SingularState(_))
        ));
    }

    #[test]
    fn limit_cycle_is_tangential_on_cycle() {
        let r = 0.75f64.sqrt();
        for k in 0..32 {
            let phi = k as f64 * 0.2;
            let x = v(&[r * phi.cos(), r * phi.sin()]);
            let u = limit_cycle_policy(&x).unwrap();
            let radial = u.dot(&x) / r;
            assert!(radial.abs() < 1e-12);
        }
    }

    #[test]
    fn sinusoidal_examples() {
        assert!(close(&sinusoidal_policy(&v(&[0.0, -0.5])), &[1.0, 0.0], 1e-15));
        assert!(close(&sinusoidal_policy(&v(&[0.5, 0.0])), &[0.0, -1.0], 1e-15));
        assert!(close(&sinusoidal_policy(&v(&[1.0, -0.5])), &[-1.0, 0.0], 1e-15));
    }

    #[test]
    fn attractors_vanish_at_target() {
        let l = DMatrix::identity(3, 3);
        let x_star = v(&[0.4, -1.0, 2.0]);
        assert_eq!(joint_attractor_policy(&x_star, &x_star, &l), DVector::zeros(3));
        let zero = DVector::zeros(3);
        assert_eq!(joint_attractor_policy(&v(&[1.0, 0.0, 0.0]), &zero, &l), v(&[-1.0, 0.0, 0.0]));
        assert_eq!(
            joint_attractor_policy(&v(&[0.1, 1.6, 0.1]), &zero, &l),
            v(&[-0.1, -1.6, -0.1])
        );
        let rho = v(&[1.5, -0.5]);
        assert_eq!(task_linear_attractor(&rho, &rho, 0.1), DVector::zeros(2));
    }

    #[test]
    fn task_attractor_examples() {
        let b = task_linear_attractor(&v(&[0.0]), &v(&[2.0]), DEFAULT_TASK_GAIN);
        assert!((b[0] - 0.2).abs() < 1e-15);
        let b = task_linear_attractor(&v(&[1.0, 1.0]), &v(&[-1.0, 2.0]), 0.1);
        assert!(close(&b, &[-0.2, 0.1], 1e-15));
    }

    #[test]
    fn quadratic_potential_examples() {
        assert_eq!(quadratic_potential_policy(&DVector::zeros(3)), DVector::zeros(3));
        assert!(close(&quadratic_potential_policy(&v(&[1.0, 0.0, 0.0])), &[-0.1, 0.0, 0.0], 1e-15));
        assert!(close(&quadratic_potential_policy(&v(&[0.0, 2.0, 0.0])), &[0.0, -0.2, 0.0], 1e-15));
        let spec = PolicySpec::quadratic_potential();
        assert!(close(&spec.evaluate(&v(&[0.0, 2.0, 0.0])).unwrap(), &[0.0, -0.2, 0.0], 1e-15));
    }

    #[test]
    fn spec_validation_and_serde() {
        assert!(PolicySpec::linear().validate(2).is_ok());
        assert!(PolicySpec::linear().validate(3).is_err());
        assert!(PolicySpec::joint_attractor(3).validate(3).is_ok());
        assert!(PolicySpec::joint_attractor(3).validate(2).is_err());
        let json = serde_json::to_string(&PolicySpec::limit_cycle()).unwrap();
        let back: PolicySpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, PolicySpec::limit_cycle());
    }

    #[test]
    fn policies_are_deterministic() {
        let x = v(&[0.123, -0.456]);
        for spec in [PolicySpec::linear(), PolicySpec::limit_cycle(), PolicySpec::sinusoidal()] {
            let a = spec.evaluate(&x).unwrap();
            let b = spec.evaluate(&x).unwrap();
            assert!(a.iter().zip(b.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }
}
