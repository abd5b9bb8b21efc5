//! Synthetic demonstrations `u = A⁺b + Nπ` with the ground-truth
//! decomposition kept alongside every observation.

use nalgebra::{DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::arm::{self, ArmModel, SelectionMatrix};
use crate::error::{Error, Result};
use crate::policies::{PolicySpec, DEFAULT_TASK_GAIN};
use crate::projection::{
    projection_from_constraint, pseudo_inverse, ConstraintMatrix, ProjectionMatrix, DEFAULT_PINV_TOL,
};

/// Redraw budget for task targets without an IK solution.
const MAX_TARGET_REDRAWS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub a: ConstraintMatrix,
    pub b: DVector<f64>,
    pub pi: DVector<f64>,
    pub u_ts: DVector<f64>,
    pub u_ns: DVector<f64>,
}

impl GroundTruth {
    pub fn projection(&self) -> Result<ProjectionMatrix> {
        projection_from_constraint(&self.a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub ground_truth: Option<GroundTruth>,
}

/// How the data were constrained; kept for provenance and for rebuilding the
/// true constraint at unseen states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintDescription {
    Fixed { rows: Vec<Vec<f64>> },
    Arm { arm: ArmModel, lambda: SelectionMatrix },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub scenario: String,
    pub seed: u64,
    pub constraint: ConstraintDescription,
    pub policy: PolicySpec,
    pub noise_fraction: f64,
    /// Half-open `[start, end)` index ranges, one per trajectory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectories: Option<Vec<(usize, usize)>>,
    #[serde(default)]
    pub n_observations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub observations: Vec<Observation>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.observations.first().map_or(0, |o| o.x.len())
    }

    pub fn action_dim(&self) -> usize {
        self.observations.first().map_or(0, |o| o.u.len())
    }

    pub fn has_ground_truth(&self) -> bool {
        !self.observations.is_empty() && self.observations.iter().all(|o| o.ground_truth.is_some())
    }

    pub fn states(&self) -> Vec<DVector<f64>> {
        self.observations.iter().map(|o| o.x.clone()).collect()
    }

    pub fn actions(&self) -> Vec<DVector<f64>> {
        self.observations.iter().map(|o| o.u.clone()).collect()
    }

    pub fn ground_truth(&self) -> Result<Vec<&GroundTruth>> {
        self.observations
            .iter()
            .map(|o| o.ground_truth.as_ref().ok_or(Error::MissingGroundTruth))
            .collect()
    }

    /// Checks shared dimensions and that trajectory ranges partition the data.
    pub fn validate(&self) -> Result<()> {
        let (nx, nu) = (self.state_dim(), self.action_dim());
        for o in &self.observations {
            if o.x.len() != nx {
                return Err(Error::DimensionMismatch { expected: nx, found: o.x.len() });
            }
            if o.u.len() != nu {
                return Err(Error::DimensionMismatch { expected: nu, found: o.u.len() });
            }
        }
        if let Some(ranges) = &self.meta.trajectories {
            let mut next = 0;
            for &(s, e) in ranges {
                if s != next || e <= s {
                    return Err(Error::InvalidInput(format!(
                        "trajectory range [{s}, {e}) does not continue at {next}"
                    )));
                }
                next = e;
            }
            if next != self.len() {
                return Err(Error::InvalidInput(format!(
                    "trajectory ranges cover {next} of {} observations",
                    self.len()
                )));
            }
        }
        Ok(())
    }
}

/// Builds one observation from its parts: `u = A⁺b + Nπ`.
pub fn compose_observation(x: DVector<f64>, a: ConstraintMatrix, b: DVector<f64>, pi: DVector<f64>) -> Result<Observation> {
    let n = projection_from_constraint(&a)?;
    let u_ts = pseudo_inverse(a.matrix(), DEFAULT_PINV_TOL)? * &b;
    let u_ns = n.apply(&pi);
    let u = &u_ts + &u_ns;
    Ok(Observation {
        x,
        u,
        ground_truth: Some(GroundTruth { a, b, pi, u_ts, u_ns }),
    })
}

/// Unit direction at an angle drawn from `U(0, π]`.
pub fn draw_toy_direction<R: Rng>(rng: &mut R) -> DVector<f64> {
    let theta = std::f64::consts::PI - rng.random_range(0.0..std::f64::consts::PI);
    DVector::from_vec(vec![theta.cos(), theta.sin()])
}

/// Toy points in `[-1, 1]²` under the 1-D constraint `direction`, each with
/// its own task target `ρ* ~ U[-2, 2]`.
pub fn generate_toy_points<R: Rng>(
    policy: &PolicySpec,
    direction: &DVector<f64>,
    n_points: usize,
    rng: &mut R,
) -> Result<Vec<Observation>> {
    policy.validate(2)?;
    let a = ConstraintMatrix::from_rows(std::slice::from_ref(direction), 2)?;
    let mut out = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let x = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let rho = direction.dot(&x);
        let rho_star: f64 = rng.random_range(-2.0..=2.0);
        let b = DVector::from_element(1, DEFAULT_TASK_GAIN * (rho_star - rho));
        let pi = policy.evaluate(&x)?;
        out.push(compose_observation(x, a.clone(), b, pi)?);
    }
    Ok(out)
}

fn toy_meta(policy: &PolicySpec, direction: &DVector<f64>, seed: u64, n: usize) -> DatasetMeta {
    DatasetMeta {
        scenario: format!("toy_{}", policy.name()),
        seed,
        constraint: ConstraintDescription::Fixed {
            rows: vec![direction.iter().copied().collect()],
        },
        policy: policy.clone(),
        noise_fraction: 0.0,
        trajectories: None,
        n_observations: n,
    }
}

pub fn generate_toy_dataset(policy: &PolicySpec, n_points: usize, seed: u64) -> Result<Dataset> {
    Ok(generate_toy_split(policy, n_points, 0, seed)?.0)
}

/// Training and held-out sets sharing one constraint direction. The training
/// set is identical to `generate_toy_dataset(policy, n_train, seed)`.
pub fn generate_toy_split(
    policy: &PolicySpec,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if n_train == 0 {
        return Err(Error::Config("toy dataset needs at least one point".into()));
    }
    policy.validate(2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let direction = draw_toy_direction(&mut rng);
    let train = generate_toy_points(policy, &direction, n_train, &mut rng)?;
    let test = generate_toy_points(policy, &direction, n_test, &mut rng)?;
    Ok((
        Dataset {
            meta: toy_meta(policy, &direction, seed, train.len()),
            observations: train,
        },
        Dataset {
            meta: toy_meta(policy, &direction, seed, test.len()),
            observations: test,
        },
    ))
}

/// Settings for constrained arm trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmScenario {
    pub arm: ArmModel,
    pub lambda: SelectionMatrix,
    pub policy: PolicySpec,
    pub task_gain: f64,
    pub n_traj: usize,
    pub n_steps: usize,
    pub dt: f64,
}

impl ArmScenario {
    pub fn new(lambda: SelectionMatrix) -> Self {
        Self {
            arm: ArmModel::default(),
            lambda,
            policy: PolicySpec::joint_attractor(3),
            task_gain: DEFAULT_TASK_GAIN,
            n_traj: 50,
            n_steps: 50,
            dt: 0.1,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_traj == 0 || self.n_steps == 0 {
            return Err(Error::Config("need at least one trajectory of one step".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        self.policy.validate(3)
    }
}

/// Start state with `q₁ ~ U[0°,10°]`, `q₂ ~ U[90°,100°]`, `q₃ ~ U[0°,10°]`.
pub fn draw_arm_start<R: Rng>(rng: &mut R) -> [f64; 3] {
    let d = std::f64::consts::PI / 180.0;
    [
        rng.random_range(0.0..=10.0) * d,
        rng.random_range(90.0..=100.0) * d,
        rng.random_range(0.0..=10.0) * d,
    ]
}

/// Task target with `r_x ~ U[-1,1]`, `r_z ~ U[0,2]`, `r_θ ~ U[0,π]`, redrawn
/// until the selected coordinates are reachable from `q0`.
pub fn draw_arm_target<R: Rng>(rng: &mut R, lambda: &SelectionMatrix, arm: &ArmModel, q0: &[f64]) -> Result<Vector3<f64>> {
    for _ in 0..MAX_TARGET_REDRAWS {
        let r = Vector3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(0.0..=2.0),
            rng.random_range(0.0..=std::f64::consts::PI),
        );
        if arm::ik_feasible(&r, lambda, arm, q0, arm::IK_TOL, arm::IK_MAX_ITER) {
            return Ok(r);
        }
    }
    Err(Error::Generation(format!(
        "no reachable task target after {MAX_TARGET_REDRAWS} draws"
    )))
}

/// Integrates one constrained trajectory `q ← q + dt·u`.
pub fn rollout_arm_trajectory(scenario: &ArmScenario, q0: [f64; 3], r_star: &Vector3<f64>) -> Result<Vec<Observation>> {
    let lam = &scenario.lambda;
    let target = lam.select(r_star);
    let mut q = DVector::from_column_slice(&q0);
    let mut out = Vec::with_capacity(scenario.n_steps);
    for step in 0..scenario.n_steps {
        let a = arm::task_constraint(lam, q.as_slice(), &scenario.arm);
        let r = lam.select(&scenario.arm.forward_kinematics(q.as_slice()));
        let b = (&target - r) * scenario.task_gain;
        let pi = scenario.policy.evaluate(&q)?;
        let obs = compose_observation(q.clone(), a, b, pi).map_err(|e| e.at_index(step))?;
        q += &obs.u * scenario.dt;
        out.push(obs);
    }
    Ok(out)
}

fn arm_trajectories<R: Rng>(scenario: &ArmScenario, n_traj: usize, rng: &mut R) -> Result<(Vec<Observation>, Vec<(usize, usize)>)> {
    let mut obs = Vec::with_capacity(n_traj * scenario.n_steps);
    let mut ranges = Vec::with_capacity(n_traj);
    for _ in 0..n_traj {
        let q0 = draw_arm_start(rng);
        let r_star = draw_arm_target(rng, &scenario.lambda, &scenario.arm, &q0)?;
        let start = obs.len();
        obs.extend(rollout_arm_trajectory(scenario, q0, &r_star)?);
        ranges.push((start, obs.len()));
    }
    Ok((obs, ranges))
}

fn arm_meta(scenario: &ArmScenario, seed: u64, ranges: Vec<(usize, usize)>, n: usize) -> DatasetMeta {
    DatasetMeta {
        scenario: format!("arm_{}", selection_label(&scenario.lambda)),
        seed,
        constraint: ConstraintDescription::Arm {
            arm: scenario.arm,
            lambda: scenario.lambda.clone(),
        },
        policy: scenario.policy.clone(),
        noise_fraction: 0.0,
        trajectories: Some(ranges),
        n_observations: n,
    }
}

/// Short label for the coordinate axes a selection matrix picks out.
pub fn selection_label(lambda: &SelectionMatrix) -> String {
    if *lambda == SelectionMatrix::xz() {
        "xz".into()
    } else if *lambda == SelectionMatrix::x_theta() {
        "xtheta".into()
    } else if *lambda == SelectionMatrix::z_theta() {
        "ztheta".into()
    } else {
        format!("k{}", lambda.n_rows())
    }
}

pub fn generate_arm_trajectories(
    lambda: &SelectionMatrix,
    n_traj: usize,
    n_steps: usize,
    dt: f64,
    seed: u64,
    arm: &ArmModel,
) -> Result<Dataset> {
    let scenario = ArmScenario {
        arm: *arm,
        n_traj,
        n_steps,
        dt,
        ..ArmScenario::new(lambda.clone())
    };
    Ok(generate_arm_split(&scenario, 0, seed)?.0)
}

/// `scenario.n_traj` training trajectories followed by `n_test_traj` held-out
/// ones from the same random stream.
pub fn generate_arm_split(scenario: &ArmScenario, n_test_traj: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (train, train_ranges) = arm_trajectories(scenario, scenario.n_traj, &mut rng)?;
    let (test, test_ranges) = arm_trajectories(scenario, n_test_traj, &mut rng)?;
    Ok((
        Dataset {
            meta: arm_meta(scenario, seed, train_ranges, train.len()),
            observations: train,
        },
        Dataset {
            meta: arm_meta(scenario, seed, test_ranges, test.len()),
            observations: test,
        },
    ))
}

/// Total variance `(1/N) Σ ‖v_n - v̄‖²`.
pub fn total_variance(vs: &[DVector<f64>]) -> f64 {
    if vs.is_empty() {
        return 0.0;
    }
    let n = vs.len() as f64;
    let mean = vs.iter().fold(DVector::zeros(vs[0].len()), |acc, v| acc + v) / n;
    vs.iter().map(|v| (v - &mean).norm_squared()).sum::<f64>() / n
}

/// Isotropic Gaussian perturbations whose total variance is `fraction` times
/// the total variance of `pis`.
pub fn sample_policy_noise<R: Rng>(pis: &[DVector<f64>], fraction: f64, rng: &mut R) -> Result<Vec<DVector<f64>>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidInput(format!("noise fraction {fraction} outside [0, 1]")));
    }
    let dim = pis.first().map_or(0, |p| p.len());
    let per_component = fraction * total_variance(pis) / dim.max(1) as f64;
    let normal = Normal::new(0.0, per_component.sqrt())
        .map_err(|e| Error::InvalidInput(format!("noise distribution: {e}")))?;
    Ok(pis
        .iter()
        .map(|_| DVector::from_fn(dim, |_, _| normal.sample(rng)))
        .collect())
}

/// Regenerates every action with `π + ε` in place of `π`. Ground-truth fields
/// keep their noiseless values.
pub fn add_policy_noise(dataset: &Dataset, noise_fraction: f64, seed: u64) -> Result<Dataset> {
    let gts = dataset.ground_truth()?;
    let mut out = dataset.clone();
    out.meta.noise_fraction = noise_fraction;
    if noise_fraction == 0.0 {
        return Ok(out);
    }
    let pis: Vec<DVector<f64>> = gts.iter().map(|g| g.pi.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = sample_policy_noise(&pis, noise_fraction, &mut rng)?;
    for ((obs, gt), eps) in out.observations.iter_mut().zip(&gts).zip(noise) {
        let n = gt.projection()?;
        obs.u = &gt.u_ts + n.apply(&(&gt.pi + eps));
    }
    Ok(out)
}
