//! Experiment protocols: scenarios, flat `key=value` configuration, seeded
//! trials, the two result tables, the data-size and noise sweeps, and arm
//! rollouts under unseen policies.
//!
//! Trial `t` of a run with seed `s` uses seed `s + t` for everything it
//! draws, so trials can run in any order and still give identical output.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::arm::{self, ArmConstraint, ArmModel, SelectionMatrix};
use crate::constraint::{
    decompose_with_ground_truth, decompose_with_model, fit_constraint_rows, fit_selection_matrix,
    fit_state_dependent_rows, ConstraintEstimate, ConstraintFit,
};
use crate::data::{
    add_policy_noise, draw_arm_start, draw_arm_target, generate_arm_split, generate_toy_split, ArmScenario,
    ConstraintDescription, Dataset,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, reproduce_trajectory, EvaluationReport, TrajectoryComparison, CSV_HEADER};
use crate::lm::LmOptions;
use crate::nullspace::{fit_nullspace_with_features, NullspaceOptions};
use crate::policies::{PolicySpec, DEFAULT_TASK_GAIN};
use crate::rbf::{RbfFeatureMap, RbfVectorModel};

/// Training sizes of the data-size sweep.
pub const DATA_SIZE_GRID: [usize; 7] = [10, 25, 50, 100, 150, 200, 250];
/// Noise fractions of the noise sweep.
pub const NOISE_GRID: [f64; 6] = [0.0, 0.01, 0.02, 0.05, 0.1, 0.2];
/// Task target of the unseen task policy, in the selected coordinates.
pub const NEW_TASK_TARGET: [f64; 2] = [-1.0, 2.0];

// Offset between a trial's data seed and the seed of its policy noise.
const NOISE_SEED_OFFSET: u64 = 0x006E_015E;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    ToyLinear,
    ToyLimitCycle,
    ToySinusoidal,
    ArmXz,
    ArmXtheta,
    ArmZtheta,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::ToyLinear,
        Scenario::ToyLimitCycle,
        Scenario::ToySinusoidal,
        Scenario::ArmXz,
        Scenario::ArmXtheta,
        Scenario::ArmZtheta,
    ];
    pub const TOY: [Scenario; 3] = [Scenario::ToyLinear, Scenario::ToyLimitCycle, Scenario::ToySinusoidal];
    pub const ARM: [Scenario; 3] = [Scenario::ArmXz, Scenario::ArmXtheta, Scenario::ArmZtheta];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::ToyLinear => "toy_linear",
            Scenario::ToyLimitCycle => "toy_limit_cycle",
            Scenario::ToySinusoidal => "toy_sinusoidal",
            Scenario::ArmXz => "arm_xz",
            Scenario::ArmXtheta => "arm_xtheta",
            Scenario::ArmZtheta => "arm_ztheta",
        }
    }

    pub fn is_arm(self) -> bool {
        self.selection().is_some()
    }

    /// Null-space policy of a toy scenario.
    pub fn toy_policy(self) -> Option<PolicySpec> {
        match self {
            Scenario::ToyLinear => Some(PolicySpec::linear()),
            Scenario::ToyLimitCycle => Some(PolicySpec::limit_cycle()),
            Scenario::ToySinusoidal => Some(PolicySpec::sinusoidal()),
            _ => None,
        }
    }

    pub fn selection(self) -> Option<SelectionMatrix> {
        match self {
            Scenario::ArmXz => Some(SelectionMatrix::xz()),
            Scenario::ArmXtheta => Some(SelectionMatrix::x_theta()),
            Scenario::ArmZtheta => Some(SelectionMatrix::z_theta()),
            _ => None,
        }
    }

    pub fn default_method(self) -> Method {
        if self.is_arm() {
            Method::Selection
        } else {
            Method::FixedRows
        }
    }

    /// Number of RBF centres.
    pub fn default_phi(self) -> usize {
        match self {
            Scenario::ToySinusoidal => 25,
            s if s.is_arm() => 100,
            _ => 16,
        }
    }

    /// Bandwidth in median nearest-neighbour distances between centres.
    pub fn default_bandwidth_factor(self) -> f64 {
        match self {
            Scenario::ToySinusoidal => 2.0,
            _ => 4.0,
        }
    }

    /// Starting points of the null-space fit.
    pub fn default_nullspace_starts(self) -> usize {
        match self {
            Scenario::ToyLinear | Scenario::ToyLimitCycle => 4,
            _ => 1,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Scenario::ALL.iter().map(|sc| sc.name()).collect();
                Error::Config(format!("unknown scenario {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    FixedRows,
    Selection,
    StateDependent,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::FixedRows, Method::Selection, Method::StateDependent];

    pub fn name(self) -> &'static str {
        match self {
            Method::FixedRows => "fixed_rows",
            Method::Selection => "selection",
            Method::StateDependent => "state_dependent",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown method {s:?}; expected fixed_rows, selection or state_dependent"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Unset means "take it from the data" where data are given, else `toy_linear`.
    pub scenario: Option<Scenario>,
    /// Unset means the scenario's default method.
    pub method: Option<Method>,
    pub n_points: usize,
    pub n_test_points: usize,
    pub n_traj: usize,
    pub n_test_traj: usize,
    pub n_steps: usize,
    pub dt: f64,
    pub phi: Option<usize>,
    pub bandwidth_factor: Option<f64>,
    pub nullspace_starts: Option<usize>,
    pub noise_fraction: f64,
    pub n_trials: usize,
    pub seed: u64,
    pub ridge: f64,
    /// Learn the constraint from the true decomposition instead of a learnt `ũ_ns`.
    pub oracle: bool,
    pub lm: LmOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: None,
            method: None,
            n_points: 150,
            n_test_points: 150,
            n_traj: 50,
            n_test_traj: 50,
            n_steps: 50,
            dt: 0.1,
            phi: None,
            bandwidth_factor: None,
            nullspace_starts: None,
            noise_fraction: 0.0,
            n_trials: 50,
            seed: 0,
            ridge: NullspaceOptions::default().ridge,
            oracle: false,
            lm: LmOptions::default(),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for `{key}`")))
}

impl ExperimentConfig {
    pub fn for_scenario(scenario: Scenario) -> Self {
        Self {
            scenario: Some(scenario),
            ..Self::default()
        }
    }

    pub fn scenario(&self) -> Scenario {
        self.scenario.unwrap_or(Scenario::ToyLinear)
    }

    pub fn method(&self) -> Method {
        self.method.unwrap_or_else(|| self.scenario().default_method())
    }

    pub fn phi(&self) -> usize {
        self.phi.unwrap_or_else(|| self.scenario().default_phi())
    }

    pub fn bandwidth_factor(&self) -> f64 {
        self.bandwidth_factor
            .unwrap_or_else(|| self.scenario().default_bandwidth_factor())
    }

    pub fn nullspace_starts(&self) -> usize {
        self.nullspace_starts
            .unwrap_or_else(|| self.scenario().default_nullspace_starts())
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.seed.wrapping_add(trial as u64)
    }

    /// Sets one key; keys match the field names, with `lm_` prefixing the
    /// optimizer settings.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "scenario" => self.scenario = Some(value.parse()?),
            "method" => self.method = Some(value.parse()?),
            "n_points" => self.n_points = parse_value(key, value)?,
            "n_test_points" => self.n_test_points = parse_value(key, value)?,
            "n_traj" => self.n_traj = parse_value(key, value)?,
            "n_test_traj" => self.n_test_traj = parse_value(key, value)?,
            "n_steps" => self.n_steps = parse_value(key, value)?,
            "dt" => self.dt = parse_value(key, value)?,
            "phi" => self.phi = Some(parse_value(key, value)?),
            "bandwidth_factor" => self.bandwidth_factor = Some(parse_value(key, value)?),
            "nullspace_starts" => self.nullspace_starts = Some(parse_value(key, value)?),
            "noise_fraction" => self.noise_fraction = parse_value(key, value)?,
            "n_trials" => self.n_trials = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "ridge" => self.ridge = parse_value(key, value)?,
            "oracle" => self.oracle = parse_value(key, value)?,
            "lm_initial_damping" => self.lm.initial_damping = parse_value(key, value)?,
            "lm_damping_up" => self.lm.damping_up = parse_value(key, value)?,
            "lm_damping_down" => self.lm.damping_down = parse_value(key, value)?,
            "lm_max_iterations" => self.lm.max_iterations = parse_value(key, value)?,
            "lm_relative_tolerance" => self.lm.relative_tolerance = parse_value(key, value)?,
            "lm_multistart" => self.lm.multistart = parse_value(key, value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, found {raw:?}", i + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_trials == 0 {
            return bad("n_trials must be at least 1".into());
        }
        if self.method() == Method::Selection && !self.scenario().is_arm() {
            return bad(format!("the selection method needs an arm scenario, not {}", self.scenario()));
        }
        if self.phi() == 0 {
            return bad("phi must be at least 1".into());
        }
        if !(self.bandwidth_factor() > 0.0 && self.bandwidth_factor().is_finite()) {
            return bad("bandwidth_factor must be positive".into());
        }
        if self.nullspace_starts() == 0 {
            return bad("nullspace_starts must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.noise_fraction) {
            return bad(format!("noise_fraction {} outside [0, 1]", self.noise_fraction));
        }
        if !(self.ridge > 0.0) {
            return bad("ridge must be positive".into());
        }
        if self.scenario().is_arm() {
            if self.n_traj == 0 || self.n_steps == 0 {
                return bad("arm scenarios need n_traj and n_steps of at least 1".into());
            }
            if !(self.dt > 0.0) {
                return bad("dt must be positive".into());
            }
        } else if self.n_points == 0 {
            return bad("n_points must be at least 1".into());
        }
        self.lm.validate()
    }

    fn arm_scenario(&self) -> Option<ArmScenario> {
        self.scenario().selection().map(|lambda| ArmScenario {
            n_traj: self.n_traj,
            n_steps: self.n_steps,
            dt: self.dt,
            ..ArmScenario::new(lambda)
        })
    }
}

/// Training and held-out data for one seed; policy noise touches only the
/// training actions.
pub fn generate_data(cfg: &ExperimentConfig, seed: u64) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let (train, test) = match (cfg.scenario().toy_policy(), cfg.arm_scenario()) {
        (Some(policy), _) => generate_toy_split(&policy, cfg.n_points, cfg.n_test_points, seed)?,
        (None, Some(scenario)) => generate_arm_split(&scenario, cfg.n_test_traj, seed)?,
        (None, None) => unreachable!("every scenario is either toy or arm"),
    };
    let train = add_policy_noise(&train, cfg.noise_fraction, seed.wrapping_add(NOISE_SEED_OFFSET))?;
    Ok((train, test))
}

/// Everything learnt from one training set.
#[derive(Debug, Clone)]
pub struct Learnt {
    /// `None` when the true decomposition was used.
    pub model: Option<RbfVectorModel>,
    pub fits: Vec<(Method, ConstraintFit)>,
}

fn distinct_states(states: &[DVector<f64>]) -> usize {
    let mut keys: Vec<Vec<u64>> = states.iter().map(|s| s.iter().map(|v| v.to_bits()).collect()).collect();
    keys.sort();
    keys.dedup();
    keys.len()
}

fn arm_of(dataset: &Dataset) -> ArmModel {
    match &dataset.meta.constraint {
        ConstraintDescription::Arm { arm, .. } => *arm,
        ConstraintDescription::Fixed { .. } => ArmModel::default(),
    }
}

/// Learns `ũ_ns` once and then each requested constraint method from it.
/// The centre count is capped at the number of distinct training states.
pub fn learn(cfg: &ExperimentConfig, train: &Dataset, methods: &[Method], seed: u64) -> Result<Learnt> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidInput("cannot learn from an empty dataset".into()));
    }
    let states = train.states();
    let phi = cfg.phi().min(distinct_states(&states));
    let map = RbfFeatureMap::from_states_scaled(&states, phi, cfg.bandwidth_factor(), seed)?;
    let (model, points) = if cfg.oracle {
        (None, decompose_with_ground_truth(train)?)
    } else {
        let opts = NullspaceOptions {
            ridge: cfg.ridge,
            starts: cfg.nullspace_starts(),
            seed,
            lm: cfg.lm.clone(),
            ..NullspaceOptions::default()
        };
        let fit = fit_nullspace_with_features(map.clone(), &states, &train.actions(), &opts)?;
        let points = decompose_with_model(train, &fit.model);
        (Some(fit.model), points)
    };
    let lm = LmOptions {
        seed,
        ..cfg.lm.clone()
    };
    let fits = methods
        .iter()
        .map(|&m| {
            let fit = match m {
                Method::FixedRows => fit_constraint_rows(&points, train.action_dim(), &lm)?,
                Method::Selection => fit_selection_matrix(&points, &arm_of(train), &lm)?,
                Method::StateDependent => fit_state_dependent_rows(&points, &map, &lm)?,
            };
            Ok((m, fit))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Learnt { model, fits })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub scenario: Scenario,
    pub method: Method,
    pub trial: usize,
    pub n_rows: usize,
    pub report: EvaluationReport,
}

impl TrialOutcome {
    pub fn csv_row(&self) -> String {
        self.report.csv_row(self.scenario.name(), self.method.name(), self.trial)
    }
}

/// Generates, learns and evaluates one trial for each method.
pub fn run_trial(cfg: &ExperimentConfig, trial: usize, methods: &[Method]) -> Result<Vec<TrialOutcome>> {
    let seed = cfg.trial_seed(trial);
    let (train, test) = generate_data(cfg, seed)?;
    let learnt = learn(cfg, &train, methods, seed)?;
    learnt
        .fits
        .iter()
        .map(|(method, fit)| {
            Ok(TrialOutcome {
                scenario: cfg.scenario(),
                method: *method,
                trial,
                n_rows: fit.estimate.n_rows(),
                report: evaluate(&fit.estimate, learnt.model.as_ref(), &test)?,
            })
        })
        .collect()
}

/// All `cfg.n_trials` trials, in trial order.
pub fn run_trials(cfg: &ExperimentConfig, methods: &[Method]) -> Result<Vec<TrialOutcome>> {
    cfg.validate()?;
    let per_trial = (0..cfg.n_trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, t, methods))
        .collect::<Result<Vec<_>>>()?;
    Ok(per_trial.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
}

/// Mean, sample standard deviation and median.
pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    if n == 0 {
        return Summary {
            mean: f64::NAN,
            sd: f64::NAN,
            median: f64::NAN,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    Summary { mean, sd, median }
}

fn cell(s: &Summary) -> String {
    format!("{:.3e}±{:.3e}", s.mean, s.sd)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Nnce,
    Nppe,
    Npoe,
}

impl Metric {
    pub fn of(self, r: &EvaluationReport) -> f64 {
        match self {
            Metric::Nnce => r.nnce,
            Metric::Nppe => r.nppe,
            Metric::Npoe => r.npoe,
        }
    }
}

/// Summary of one metric over the outcomes matching a scenario and method.
pub fn metric_summary(outcomes: &[TrialOutcome], scenario: Scenario, method: Method, metric: Metric) -> Summary {
    let vals: Vec<f64> = outcomes
        .iter()
        .filter(|o| o.scenario == scenario && o.method == method)
        .map(|o| metric.of(&o.report))
        .collect();
    summarize(&vals)
}

/// A summary table plus the per-trial rows it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub trials: Vec<TrialOutcome>,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }

    pub fn trials_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for t in &self.trials {
            out.push_str(&t.csv_row());
            out.push('\n');
        }
        out
    }
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn scenario_config(base: &ExperimentConfig, scenario: Scenario) -> ExperimentConfig {
    ExperimentConfig {
        scenario: Some(scenario),
        method: None,
        ..base.clone()
    }
}

/// NNCE, NPPE and NPOE (mean±s.d.) for the three toy policies, learnt with
/// constant constraint rows.
pub fn reproduce_table1(base: &ExperimentConfig) -> Result<Table> {
    let mut rows = Vec::new();
    let mut trials = Vec::new();
    for scenario in Scenario::TOY {
        let cfg = scenario_config(base, scenario);
        let outcomes = run_trials(&cfg, &[Method::FixedRows])?;
        let s = |m| metric_summary(&outcomes, scenario, Method::FixedRows, m);
        rows.push(vec![
            scenario.toy_policy().map(|p| p.name().to_string()).unwrap_or_default(),
            cell(&s(Metric::Nnce)),
            cell(&s(Metric::Nppe)),
            cell(&s(Metric::Npoe)),
        ]);
        trials.extend(outcomes);
    }
    Ok(Table {
        header: strings(&["policy", "nnce", "nppe", "npoe"]),
        rows,
        trials,
    })
}

/// Per arm constraint: NNCE, then NPPE and NPOE for the learnt selection and
/// for the learnt state-dependent rows. Both methods share each trial's `ũ_ns`.
pub fn reproduce_table2(base: &ExperimentConfig) -> Result<Table> {
    let methods = [Method::Selection, Method::StateDependent];
    let mut rows = Vec::new();
    let mut trials = Vec::new();
    for scenario in Scenario::ARM {
        let cfg = scenario_config(base, scenario);
        let outcomes = run_trials(&cfg, &methods)?;
        let s = |method, m| metric_summary(&outcomes, scenario, method, m);
        rows.push(vec![
            scenario.name().trim_start_matches("arm_").to_string(),
            cell(&s(Method::Selection, Metric::Nnce)),
            cell(&s(Method::Selection, Metric::Nppe)),
            cell(&s(Method::Selection, Metric::Npoe)),
            cell(&s(Method::StateDependent, Metric::Nppe)),
            cell(&s(Method::StateDependent, Metric::Npoe)),
        ]);
        trials.extend(outcomes);
    }
    Ok(Table {
        header: strings(&[
            "constraint",
            "nnce",
            "learn_lambda_nppe",
            "learn_lambda_npoe",
            "learn_a_nppe",
            "learn_a_npoe",
        ]),
        rows,
        trials,
    })
}

/// One sweep point: the swept value and the per-trial outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub outcomes: Vec<TrialOutcome>,
}

impl SweepPoint {
    pub fn summary(&self, metric: Metric) -> Summary {
        let vals: Vec<f64> = self.outcomes.iter().map(|o| metric.of(&o.report)).collect();
        summarize(&vals)
    }
}

fn sweep_table(parameter: &str, points: &[SweepPoint]) -> Table {
    let mut header = vec![parameter.to_string()];
    for m in ["nnce", "nppe", "npoe"] {
        for stat in ["mean", "sd", "median"] {
            header.push(format!("{m}_{stat}"));
        }
    }
    let rows = points
        .iter()
        .map(|p| {
            let mut row = vec![format!("{}", p.value)];
            for metric in [Metric::Nnce, Metric::Nppe, Metric::Npoe] {
                let s = p.summary(metric);
                row.extend([s.mean, s.sd, s.median].iter().map(|v| format!("{v:e}")));
            }
            row
        })
        .collect();
    Table {
        header,
        rows,
        trials: points.iter().flat_map(|p| p.outcomes.clone()).collect(),
    }
}

fn sweep_base(base: &ExperimentConfig) -> ExperimentConfig {
    ExperimentConfig {
        scenario: Some(base.scenario.unwrap_or(Scenario::ToyLimitCycle)),
        ..base.clone()
    }
}

/// Metrics against the number of training points (toy scenarios).
pub fn sweep_data_size_points(base: &ExperimentConfig, grid: &[usize]) -> Result<Vec<SweepPoint>> {
    let base = sweep_base(base);
    if base.scenario().is_arm() {
        return Err(Error::Config("the data-size sweep runs on toy scenarios".into()));
    }
    grid.iter()
        .map(|&n| {
            let cfg = ExperimentConfig {
                n_points: n,
                ..base.clone()
            };
            Ok(SweepPoint {
                value: n as f64,
                outcomes: run_trials(&cfg, &[cfg.method()])?,
            })
        })
        .collect()
}

/// Metrics against the injected policy-noise fraction.
pub fn sweep_noise_points(base: &ExperimentConfig, grid: &[f64]) -> Result<Vec<SweepPoint>> {
    let base = sweep_base(base);
    grid.iter()
        .map(|&f| {
            let cfg = ExperimentConfig {
                noise_fraction: f,
                ..base.clone()
            };
            Ok(SweepPoint {
                value: f,
                outcomes: run_trials(&cfg, &[cfg.method()])?,
            })
        })
        .collect()
}

pub fn sweep_data_size(base: &ExperimentConfig) -> Result<Table> {
    Ok(sweep_table("n_points", &sweep_data_size_points(base, &DATA_SIZE_GRID)?))
}

pub fn sweep_noise(base: &ExperimentConfig) -> Result<Table> {
    Ok(sweep_table("noise_fraction", &sweep_noise_points(base, &NOISE_GRID)?))
}

/// Rollouts under the learnt and the true arm constraint with an unseen
/// null-space policy and with an unseen task target.
#[derive(Debug, Clone)]
pub struct Generalization {
    pub new_policy: TrajectoryComparison,
    pub new_target: TrajectoryComparison,
}

/// Joint velocity asking the end effector to move `β (target - Λ r(q))` in
/// the selected coordinates and to hold the others.
fn task_velocity(arm: &ArmModel, lambda: &SelectionMatrix, target: &DVector<f64>, q: &DVector<f64>) -> Result<DVector<f64>> {
    let r = lambda.select(&arm.forward_kinematics(q.as_slice()));
    let b = (target - r) * DEFAULT_TASK_GAIN;
    let r_dot = lambda.matrix().tr_mul(&b);
    arm::joint_velocity_for(arm, q.as_slice(), &Vector3::new(r_dot[0], r_dot[1], r_dot[2]))
}

/// From a start pose drawn with `seed`: (i) the demonstrated task target with
/// the unseen policy `-0.1 q`, and (ii) the demonstrated policy with the
/// unseen target [`NEW_TASK_TARGET`].
pub fn arm_generalization(
    estimate: &ConstraintEstimate,
    scenario: &ArmScenario,
    seed: u64,
    n_steps: usize,
) -> Result<Generalization> {
    let truth = ArmConstraint {
        arm: scenario.arm,
        lambda: scenario.lambda.clone(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q0 = draw_arm_start(&mut rng);
    let r_star = draw_arm_target(&mut rng, &scenario.lambda, &scenario.arm, &q0)?;
    let x0 = DVector::from_column_slice(&q0);
    let old_target = scenario.lambda.select(&r_star);
    let new_target = DVector::from_column_slice(&NEW_TASK_TARGET);
    if new_target.len() != scenario.lambda.n_rows() {
        return Err(Error::Config("the unseen target needs a two-row selection".into()));
    }
    let arm = scenario.arm;
    let lambda = &scenario.lambda;
    let unseen = PolicySpec::quadratic_potential();
    let new_policy = reproduce_trajectory(
        estimate,
        &truth,
        |q: &DVector<f64>| task_velocity(&arm, lambda, &old_target, q),
        |q: &DVector<f64>| unseen.evaluate(q),
        &x0,
        n_steps,
        scenario.dt,
    )?;
    let new_target_run = reproduce_trajectory(
        estimate,
        &truth,
        |q: &DVector<f64>| task_velocity(&arm, lambda, &new_target, q),
        |q: &DVector<f64>| scenario.policy.evaluate(q),
        &x0,
        n_steps,
        scenario.dt,
    )?;
    Ok(Generalization {
        new_policy,
        new_target: new_target_run,
    })
}

/// The arm scenario a configuration describes, if any.
pub fn arm_scenario(cfg: &ExperimentConfig) -> Option<ArmScenario> {
    cfg.arm_scenario()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for s in Scenario::ALL {
            assert_eq!(s.name().parse::<Scenario>().unwrap(), s);
        }
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!(matches!("arm_xy".parse::<Scenario>(), Err(Error::Config(_))));
    }

    #[test]
    fn config_text_overrides_defaults() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text("# comment\nscenario = arm_ztheta\n\nn_trials=3  # inline\nlm_multistart = 2\nphi = 40\n")
            .unwrap();
        assert_eq!(cfg.scenario(), Scenario::ArmZtheta);
        assert_eq!(cfg.method(), Method::Selection);
        assert_eq!(cfg.n_trials, 3);
        assert_eq!(cfg.lm.multistart, 2);
        assert_eq!(cfg.phi(), 40);
        assert_eq!(cfg.bandwidth_factor(), 4.0);
        assert_eq!(cfg.nullspace_starts(), 1);
        cfg.apply_text("nullspace_starts = 3").unwrap();
        assert_eq!(cfg.nullspace_starts(), 3);
        cfg.apply_text("nullspace_starts = 0").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        assert!(matches!(cfg.apply_text("colour = red"), Err(Error::Config(_))));
        assert!(matches!(cfg.apply_text("n_trials = many"), Err(Error::Config(_))));
        assert!(matches!(cfg.apply_text("just words"), Err(Error::Config(_))));
    }

    #[test]
    fn selection_needs_an_arm() {
        let cfg = ExperimentConfig {
            method: Some(Method::Selection),
            ..ExperimentConfig::for_scenario(Scenario::ToyLinear)
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let zero = ExperimentConfig {
            n_trials: 0,
            ..ExperimentConfig::default()
        };
        assert!(matches!(zero.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn summary_statistics() {
        let s = summarize(&[1.0, 2.0, 3.0, 10.0]);
        assert_eq!(s.mean, 4.0);
        assert_eq!(s.median, 2.5);
        assert!((s.sd - (50.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(summarize(&[5.0]).sd, 0.0);
    }

    #[test]
    fn trials_are_reproducible_and_independent_of_order() {
        let cfg = ExperimentConfig {
            n_trials: 3,
            n_points: 40,
            n_test_points: 40,
            seed: 5,
            ..ExperimentConfig::for_scenario(Scenario::ToyLimitCycle)
        };
        let all = run_trials(&cfg, &[Method::FixedRows]).unwrap();
        let third = run_trial(&cfg, 2, &[Method::FixedRows]).unwrap();
        assert_eq!(all[2], third[0]);
        assert_eq!(all, run_trials(&cfg, &[Method::FixedRows]).unwrap());
    }

    #[test]
    fn phi_is_capped_by_the_data() {
        let cfg = ExperimentConfig {
            n_points: 6,
            n_test_points: 10,
            ..ExperimentConfig::for_scenario(Scenario::ToyLinear)
        };
        let (train, _) = generate_data(&cfg, 0).unwrap();
        let learnt = learn(&cfg, &train, &[Method::FixedRows], 0).unwrap();
        assert_eq!(learnt.model.unwrap().features.n_features(), 6);
    }

    #[test]
    fn noise_only_touches_training_actions() {
        let cfg = ExperimentConfig {
            noise_fraction: 0.1,
            n_points: 20,
            n_test_points: 20,
            ..ExperimentConfig::for_scenario(Scenario::ToyLimitCycle)
        };
        let clean_cfg = ExperimentConfig {
            noise_fraction: 0.0,
            ..cfg.clone()
        };
        let (noisy_train, noisy_test) = generate_data(&cfg, 1).unwrap();
        let (clean_train, clean_test) = generate_data(&clean_cfg, 1).unwrap();
        assert_eq!(noisy_test, clean_test);
        assert_eq!(noisy_train.states(), clean_train.states());
        assert_ne!(noisy_train.actions(), clean_train.actions());
    }
}
