//! Normalized Gaussian radial basis features with k-means centres.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const KMEANS_MAX_ITER: usize = 100;

/// Number of pairwise-distinct states (exact comparison).
fn distinct_count(states: &[DVector<f64>]) -> usize {
    let mut keys: Vec<Vec<u64>> = states
        .iter()
        .map(|s| s.iter().map(|v| v.to_bits()).collect())
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

fn nearest(x: &DVector<f64>, centres: &[DVector<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centres.iter().enumerate() {
        let d = (x - c).norm_squared();
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Lloyd's algorithm with k-means++ seeding. Runs until the assignment stops
/// changing or for 100 iterations.
pub fn kmeans_centres(states: &[DVector<f64>], phi: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
    if phi == 0 {
        return Err(Error::Config("need at least one centre".into()));
    }
    let distinct = distinct_count(states);
    if phi > distinct {
        return Err(Error::Config(format!(
            "{phi} centres requested but only {distinct} distinct states"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centres = Vec::with_capacity(phi);
    centres.push(states[rng.random_range(0..states.len())].clone());
    let mut d2: Vec<f64> = states.iter().map(|s| (s - &centres[0]).norm_squared()).collect();
    while centres.len() < phi {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut idx = d2.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    idx = i;
                    break;
                }
                target -= w;
            }
            idx
        } else {
            rng.random_range(0..states.len())
        };
        let c = states[pick].clone();
        for (d, s) in d2.iter_mut().zip(states) {
            *d = d.min((s - &c).norm_squared());
        }
        centres.push(c);
    }

    let dim = states[0].len();
    let mut assign = vec![usize::MAX; states.len()];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (a, s) in assign.iter_mut().zip(states) {
            let (i, _) = nearest(s, &centres);
            if *a != i {
                *a = i;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![DVector::zeros(dim); phi];
        let mut counts = vec![0usize; phi];
        for (&a, s) in assign.iter().zip(states) {
            sums[a] += s;
            counts[a] += 1;
        }
        for k in 0..phi {
            if counts[k] > 0 {
                centres[k] = &sums[k] / counts[k] as f64;
            } else {
                // Re-seed an empty cluster at the worst-served state.
                let (far, _) = states
                    .iter()
                    .enumerate()
                    .map(|(i, s)| (i, (s - &centres[assign[i]]).norm_squared()))
                    .fold((0, -1.0), |b, c| if c.1 > b.1 { c } else { b });
                centres[k] = states[far].clone();
                assign[far] = k;
            }
        }
    }
    Ok(centres)
}

/// Bandwidth multiplier of the median nearest-neighbour distance.
pub const DEFAULT_BANDWIDTH_FACTOR: f64 = 2.0;

/// Twice the median nearest-neighbour distance among the centres, or 1 for a
/// single centre.
pub fn default_bandwidth(centres: &[DVector<f64>]) -> f64 {
    scaled_bandwidth(centres, DEFAULT_BANDWIDTH_FACTOR)
}

/// `factor` times the median nearest-neighbour distance among the centres,
/// or 1 when that distance is undefined or zero.
pub fn scaled_bandwidth(centres: &[DVector<f64>], factor: f64) -> f64 {
    if centres.len() < 2 {
        return 1.0;
    }
    let mut nn: Vec<f64> = centres
        .iter()
        .enumerate()
        .map(|(i, c)| {
            centres
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, d)| (c - d).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    nn.sort_by(f64::total_cmp);
    let m = nn.len();
    let median = if m % 2 == 1 {
        nn[m / 2]
    } else {
        0.5 * (nn[m / 2 - 1] + nn[m / 2])
    };
    if median > 0.0 {
        factor * median
    } else {
        1.0
    }
}

/// `φ_i(x) = K(x - c_i) / Σ_m K(x - c_m)` with Gaussian `K` of width `bandwidth`.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfFeatureMap {
    centres: Vec<DVector<f64>>,
    bandwidth: f64,
}

impl RbfFeatureMap {
    pub fn new(centres: Vec<DVector<f64>>, bandwidth: f64) -> Result<Self> {
        if centres.is_empty() {
            return Err(Error::Config("feature map needs at least one centre".into()));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::Config(format!("bandwidth must be positive, got {bandwidth}")));
        }
        let dim = centres[0].len();
        if let Some(c) = centres.iter().find(|c| c.len() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, found: c.len() });
        }
        Ok(Self { centres, bandwidth })
    }

    /// k-means centres over `states` with the default bandwidth rule.
    pub fn from_states(states: &[DVector<f64>], phi: usize, seed: u64) -> Result<Self> {
        let centres = kmeans_centres(states, phi, seed)?;
        let bw = default_bandwidth(&centres);
        Self::new(centres, bw)
    }

    /// k-means centres with a bandwidth of `factor` median nearest-neighbour distances.
    pub fn from_states_scaled(states: &[DVector<f64>], phi: usize, factor: f64, seed: u64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::Config(format!("bandwidth factor must be positive, got {factor}")));
        }
        let centres = kmeans_centres(states, phi, seed)?;
        let bw = scaled_bandwidth(&centres, factor);
        Self::new(centres, bw)
    }

    /// A single constant feature; models built on it are state independent.
    pub fn constant(state_dim: usize) -> Self {
        Self {
            centres: vec![DVector::zeros(state_dim)],
            bandwidth: 1.0,
        }
    }

    pub fn n_features(&self) -> usize {
        self.centres.len()
    }

    pub fn state_dim(&self) -> usize {
        self.centres[0].len()
    }

    pub fn centres(&self) -> &[DVector<f64>] {
        &self.centres
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn features_into(&self, x: &[f64], out: &mut [f64]) {
        let inv = 1.0 / (2.0 * self.bandwidth * self.bandwidth);
        let mut max_log = f64::NEG_INFINITY;
        for (o, c) in out.iter_mut().zip(&self.centres) {
            let d2: f64 = c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            *o = -d2 * inv;
            max_log = max_log.max(*o);
        }
        // Shift by the largest exponent so far-away states do not underflow.
        let mut total = 0.0;
        for o in out.iter_mut() {
            *o = (*o - max_log).exp();
            total += *o;
        }
        for o in out.iter_mut() {
            *o /= total;
        }
    }

    pub fn features(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_features());
        self.features_into(x.as_slice(), out.as_mut_slice());
        out
    }

    /// `N × Φ` matrix of feature rows.
    pub fn feature_matrix(&self, states: &[DVector<f64>]) -> DMatrix<f64> {
        let phi = self.n_features();
        let mut m = DMatrix::zeros(states.len(), phi);
        let mut buf = vec![0.0; phi];
        for (n, s) in states.iter().enumerate() {
            self.features_into(s.as_slice(), &mut buf);
            for (j, v) in buf.iter().enumerate() {
                m[(n, j)] = *v;
            }
        }
        m
    }
}

/// `x ↦ W φ(x)` with `W ∈ R^{out × Φ}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfVectorModel {
    pub features: RbfFeatureMap,
    pub weights: DMatrix<f64>,
}

impl RbfVectorModel {
    pub fn new(features: RbfFeatureMap, weights: DMatrix<f64>) -> Result<Self> {
        if weights.ncols() != features.n_features() {
            return Err(Error::DimensionMismatch {
                expected: features.n_features(),
                found: weights.ncols(),
            });
        }
        Ok(Self { features, weights })
    }

    pub fn zeros(features: RbfFeatureMap, out_dim: usize) -> Self {
        let phi = features.n_features();
        Self {
            features,
            weights: DMatrix::zeros(out_dim, phi),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn predict(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.weights * self.features.features(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn scatter(seed: u64, n: usize) -> Vec<DVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn single_centre_is_the_mean() {
        let states = scatter(1, 40);
        let c = kmeans_centres(&states, 1, 0).unwrap();
        let mean = states.iter().fold(DVector::zeros(2), |a, s| a + s) / 40.0;
        assert!((&c[0] - mean).norm() < 1e-12);
    }

    #[test]
    fn two_clusters_are_separated() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut states = Vec::new();
        for k in 0..30 {
            let base = if k % 2 == 0 { -5.0 } else { 5.0 };
            states.push(v(&[base + rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)]));
        }
        let c = kmeans_centres(&states, 2, 1).unwrap();
        // Brute force: every state is nearest to the centre on its own side.
        assert!(c[0][0].signum() != c[1][0].signum());
        for s in &states {
            let (i, _) = nearest(s, &c);
            assert_eq!(c[i][0].signum(), s[0].signum());
        }
    }

    #[test]
    fn kmeans_is_seeded() {
        let states = scatter(2, 100);
        assert_eq!(kmeans_centres(&states, 16, 5).unwrap(), kmeans_centres(&states, 16, 5).unwrap());
    }

    #[test]
    fn too_many_centres() {
        let states = vec![v(&[0.0, 0.0]), v(&[0.0, 0.0]), v(&[1.0, 0.0])];
        assert!(matches!(kmeans_centres(&states, 3, 0), Err(Error::Config(_))));
        assert!(kmeans_centres(&states, 2, 0).is_ok());
    }

    #[test]
    fn features_peak_at_isolated_centre() {
        let map = RbfFeatureMap::new(vec![v(&[0.0, 0.0]), v(&[10.0, 0.0]), v(&[0.0, 10.0])], 1.0).unwrap();
        let f = map.features(&v(&[10.0, 0.0]));
        assert!(f[1] > 0.999_999);
        let one = RbfFeatureMap::new(vec![v(&[0.3, 0.3])], 0.5).unwrap();
        assert_eq!(one.features(&v(&[100.0, -4.0])).as_slice(), &[1.0]);
    }

    #[test]
    fn far_states_do_not_underflow() {
        let map = RbfFeatureMap::new(vec![v(&[0.0, 0.0]), v(&[1.0, 0.0])], 0.01).unwrap();
        let f = map.features(&v(&[500.0, 0.0]));
        assert!(f.iter().all(|x| x.is_finite()));
        assert!((f.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bandwidth_rule() {
        let centres = vec![v(&[0.0]), v(&[1.0]), v(&[3.0])];
        // nn distances 1, 1, 2 -> median 1
        assert_eq!(default_bandwidth(&centres), 2.0);
        assert_eq!(default_bandwidth(&centres[..1]), 1.0);
        assert_eq!(scaled_bandwidth(&centres, 4.0), 4.0);
    }

    proptest! {
        #[test]
        fn features_form_a_partition_of_unity(x in -3.0f64..3.0, y in -3.0f64..3.0, seed in 0u64..20) {
            let states = scatter(seed, 60);
            let map = RbfFeatureMap::from_states(&states, 16, seed).unwrap();
            let f = map.features(&v(&[x, y]));
            prop_assert!((f.sum() - 1.0).abs() < 1e-12);
            prop_assert!(f.iter().all(|&p| p >= 0.0));
        }
    }
}
