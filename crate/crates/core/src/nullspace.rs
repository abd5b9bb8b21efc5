//! Learning the null-space component `ũ_ns(x) = W φ(x)` from raw `(x, u)`.
//!
//! The model is fitted so that projecting each observed action onto the
//! predicted direction reproduces the prediction, `P̃_n u_n = ũ_ns,n` with
//! `P̃_n = ũ ũᵀ / ‖ũ‖²`. Since `P̃_n u_n - ũ_n = (ũ̂·u_n - ‖ũ_n‖) ũ̂`, each
//! observation contributes the scalar residual `ũ̂·u_n - ‖ũ_n‖`, whose square
//! equals the vector residual's squared norm.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::lm::{kronecker_jacobian, kronecker_normal_equations, minimize, LeastSquaresProblem, LmOptions, LmReport};
use crate::rbf::{RbfFeatureMap, RbfVectorModel};

/// Predictions shorter than this contribute no residual.
pub const PREDICTION_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullspaceOptions {
    /// Ridge regularizer of the initial regression of `u` on `φ`.
    pub ridge: f64,
    pub epsilon: f64,
    /// Number of starting points. The first regresses `u` itself; each
    /// further start regresses `u` with one random direction removed.
    pub starts: usize,
    /// Seeds the directions of the further starts.
    pub seed: u64,
    pub lm: LmOptions,
}

impl Default for NullspaceOptions {
    fn default() -> Self {
        Self {
            ridge: 1e-6,
            epsilon: PREDICTION_EPSILON,
            starts: 1,
            seed: 0,
            lm: LmOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NullspaceFit {
    pub model: RbfVectorModel,
    pub objective: f64,
    pub report: LmReport,
}

struct ProjectionResidual<'a> {
    features: &'a DMatrix<f64>,
    features_t: &'a DMatrix<f64>,
    actions: &'a DMatrix<f64>,
    epsilon: f64,
}

impl ProjectionResidual<'_> {
    fn predictions(&self, params: &DVector<f64>) -> DMatrix<f64> {
        let phi = self.features.ncols();
        let u_dim = self.actions.ncols();
        let w_t = DMatrix::from_fn(phi, u_dim, |m, i| params[i * phi + m]);
        self.features * w_t
    }
}

impl LeastSquaresProblem for ProjectionResidual<'_> {
    fn residuals(&self, params: &DVector<f64>) -> DVector<f64> {
        let v = self.predictions(params);
        DVector::from_fn(v.nrows(), |n, _| {
            let vn = v.row(n);
            let norm = vn.norm();
            if norm < self.epsilon {
                0.0
            } else {
                vn.dot(&self.actions.row(n)) / norm - norm
            }
        })
    }

    fn jacobian(&self, params: &DVector<f64>) -> DMatrix<f64> {
        kronecker_jacobian(self.features, &self.residual_gradients(params))
    }

    fn normal_equations(&self, params: &DVector<f64>, residuals: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let g = self.residual_gradients(params);
        kronecker_normal_equations(self.features, self.features_t, &g, residuals)
    }
}

impl ProjectionResidual<'_> {
    /// Rows hold `∂r_n/∂ṽ_n`, zero where the prediction is below epsilon.
    fn residual_gradients(&self, params: &DVector<f64>) -> DMatrix<f64> {
        let v = self.predictions(params);
        let n_obs = v.nrows();
        let u_dim = self.actions.ncols();
        let mut g = DMatrix::zeros(n_obs, u_dim);
        for n in 0..n_obs {
            let vn = v.row(n);
            let norm = vn.norm();
            if norm < self.epsilon {
                continue;
            }
            let un = self.actions.row(n);
            let proj = vn.dot(&un) / norm;
            // ∂/∂v (v̂·u - ‖v‖) = (u - (v̂·u) v̂)/‖v‖ - v̂
            for i in 0..u_dim {
                let hat = vn[i] / norm;
                g[(n, i)] = (un[i] - proj * hat) / norm - hat;
            }
        }
        g
    }
}

fn stack_rows(vs: &[DVector<f64>]) -> DMatrix<f64> {
    let cols = vs.first().map_or(0, |v| v.len());
    DMatrix::from_fn(vs.len(), cols, |r, c| vs[r][c])
}

/// Least-squares `W` for `u ≈ W φ(x)` with a small ridge term.
pub fn ridge_regression(features: &DMatrix<f64>, targets: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    let phi = features.ncols();
    let mut gram = features.tr_mul(features);
    for i in 0..phi {
        gram[(i, i)] += ridge;
    }
    let rhs = features.tr_mul(targets);
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::InvalidInput("ridge system is not positive definite".into()))?;
    Ok(chol.solve(&rhs).transpose())
}

/// Fits `ũ_ns` over `feature_map` from `opts.starts` ridge-regression starts
/// and keeps the lowest objective; ties keep the earliest start.
pub fn fit_nullspace_with_features(
    feature_map: RbfFeatureMap,
    states: &[DVector<f64>],
    actions: &[DVector<f64>],
    opts: &NullspaceOptions,
) -> Result<NullspaceFit> {
    if states.is_empty() {
        return Err(Error::InvalidInput("cannot fit a model to an empty dataset".into()));
    }
    if states.len() != actions.len() {
        return Err(Error::DimensionMismatch {
            expected: states.len(),
            found: actions.len(),
        });
    }
    if opts.starts == 0 {
        return Err(Error::Config("the null-space fit needs at least one start".into()));
    }
    let features = feature_map.feature_matrix(states);
    let targets = stack_rows(actions);
    let phi = features.ncols();
    let u_dim = targets.ncols();
    let features_t = features.transpose();
    let problem = ProjectionResidual {
        features: &features,
        features_t: &features_t,
        actions: &targets,
        epsilon: opts.epsilon,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<LmReport> = None;
    for start in 0..opts.starts {
        let start_targets = if start == 0 {
            targets.clone()
        } else {
            let d = DVector::from_fn(u_dim, |_, _| rng.sample::<f64, _>(StandardNormal)).normalize();
            &targets - (&targets * &d) * d.transpose()
        };
        let w0 = ridge_regression(&features, &start_targets, opts.ridge)?;
        let theta0 = DVector::from_fn(u_dim * phi, |k, _| w0[(k / phi, k % phi)]);
        let report = minimize(&problem, theta0, &opts.lm)?;
        if best.as_ref().is_none_or(|b| report.objective < b.objective) {
            best = Some(report);
        }
    }
    let report = best.expect("at least one start");
    let weights = DMatrix::from_fn(u_dim, phi, |i, m| report.params[i * phi + m]);
    Ok(NullspaceFit {
        model: RbfVectorModel::new(feature_map, weights)?,
        objective: report.objective,
        report,
    })
}

/// Learns `ũ_ns` from a dataset with `phi` k-means centres.
pub fn fit_nullspace_component(
    dataset: &Dataset,
    phi: usize,
    seed: u64,
    opts: &NullspaceOptions,
) -> Result<NullspaceFit> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput("cannot fit a model to an empty dataset".into()));
    }
    let states = dataset.states();
    let feature_map = RbfFeatureMap::from_states(&states, phi, seed)?;
    fit_nullspace_with_features(feature_map, &states, &dataset.actions(), opts)
}

pub fn predict_nullspace_component(model: &RbfVectorModel, x: &DVector<f64>) -> DVector<f64> {
    model.predict(x)
}

/// `ũ_ts = u - ũ_ns`.
pub fn residual_task_component(model: &RbfVectorModel, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    u - model.predict(x)
}

/// `Σ_n ‖P̃_n u_n - ũ_ns,n‖²` evaluated with explicit projection matrices.
pub fn projection_objective(model: &RbfVectorModel, states: &[DVector<f64>], actions: &[DVector<f64>], epsilon: f64) -> f64 {
    states
        .iter()
        .zip(actions)
        .map(|(x, u)| {
            let v = model.predict(x);
            let nsq = v.norm_squared();
            if nsq.sqrt() < epsilon {
                return 0.0;
            }
            let p = &v * v.transpose() / nsq;
            (p * u - v).norm_squared()
        })
        .sum()
}

/// Gradient of [`projection_objective`] with respect to `W`.
pub fn projection_objective_gradient(
    model: &RbfVectorModel,
    states: &[DVector<f64>],
    actions: &[DVector<f64>],
    epsilon: f64,
) -> DMatrix<f64> {
    let mut grad = DMatrix::zeros(model.output_dim(), model.features.n_features());
    for (x, u) in states.iter().zip(actions) {
        let phi = model.features.features(x);
        let v = &model.weights * &phi;
        let norm = v.norm();
        if norm < epsilon {
            continue;
        }
        let hat = &v / norm;
        let proj = hat.dot(u);
        let e = proj - norm;
        let g = (u - &hat * proj) / norm - &hat;
        grad += (g * (2.0 * e)) * phi.transpose();
    }
    grad
}
