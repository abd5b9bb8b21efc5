//! Linear-algebra primitives shared by every learner: the Moore–Penrose
//! pseudo-inverse, null-space projections `N = I - A⁺A`, the hyperspherical
//! parameterization of unit vectors and orthonormal complement bases.
//!
//! Constraint matrices are always stored as `k × U` row stacks.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative singular-value cut-off used when no tolerance is given.
pub const DEFAULT_PINV_TOL: f64 = 1e-10;

const ORTHONORMAL_TOL: f64 = 1e-8;

/// A `k × U` constraint matrix, one constraint per row.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintMatrix(DMatrix<f64>);

impl ConstraintMatrix {
    pub fn new(rows: DMatrix<f64>) -> Self {
        Self(rows)
    }

    /// A constraint with no rows; its projection is the identity.
    pub fn empty(dim: usize) -> Self {
        Self(DMatrix::zeros(0, dim))
    }

    pub fn from_rows(rows: &[DVector<f64>], dim: usize) -> Result<Self> {
        let mut m = DMatrix::zeros(rows.len(), dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.len(),
                });
            }
            m.row_mut(i).copy_from(&r.transpose());
        }
        Ok(Self(m))
    }

    pub fn n_rows(&self) -> usize {
        self.0.nrows()
    }

    /// Action dimension `U`.
    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.0.row(i).transpose()
    }

    pub fn rows(&self) -> Vec<DVector<f64>> {
        (0..self.n_rows()).map(|i| self.row(i)).collect()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// True when the rows have unit norm and are mutually orthogonal within `tol`.
    pub fn is_orthonormal(&self, tol: f64) -> bool {
        let gram = &self.0 * self.0.transpose();
        let k = gram.nrows();
        (0..k).all(|i| {
            (0..k).all(|j| {
                let target = if i == j { 1.0 } else { 0.0 };
                (gram[(i, j)] - target).abs() <= tol
            })
        })
    }
}

/// A symmetric idempotent `U × U` projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix(DMatrix<f64>);

impl ProjectionMatrix {
    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.0 * v
    }

    /// Numerical rank, counting eigenvalues above one half.
    pub fn rank(&self) -> usize {
        self.0
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .filter(|&&e| e > 0.5)
            .count()
    }
}

/// Hyperspherical angles `θ ∈ R^{U-1}` of a unit vector in `R^U`.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalAngles(DVector<f64>);

impl SphericalAngles {
    pub fn new(theta: DVector<f64>) -> Self {
        Self(theta)
    }

    pub fn from_slice(theta: &[f64]) -> Self {
        Self(DVector::from_column_slice(theta))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.0
    }
}

/// Anything that yields a constraint matrix at a state: ground truth
/// constraints as well as learnt estimates.
pub trait ConstraintField {
    /// Action dimension `U`.
    fn dim(&self) -> usize;

    fn constraint_at(&self, x: &DVector<f64>) -> Result<ConstraintMatrix>;

    fn projection_at(&self, x: &DVector<f64>) -> Result<ProjectionMatrix> {
        projection_from_constraint(&self.constraint_at(x)?)
    }
}

/// A state-independent constraint.
impl ConstraintField for ConstraintMatrix {
    fn dim(&self) -> usize {
        self.0.ncols()
    }

    fn constraint_at(&self, _x: &DVector<f64>) -> Result<ConstraintMatrix> {
        Ok(self.clone())
    }
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput("matrix has non-finite entries".into()))
    }
}

/// Moore–Penrose pseudo-inverse through the SVD. Singular values below
/// `tol · σ_max` are treated as zero.
pub fn pseudo_inverse(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    check_finite(m)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tolerance must be positive, got {tol}")));
    }
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok(DMatrix::zeros(cols, rows));
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("left singular vectors requested");
    let v_t = svd.v_t.expect("right singular vectors requested");
    let s = &svd.singular_values;
    let cutoff = tol * s.max();
    let mut pinv = DMatrix::zeros(cols, rows);
    for (i, &sigma) in s.iter().enumerate() {
        if sigma > cutoff && sigma > 0.0 {
            pinv += (v_t.row(i).transpose() * u.column(i).transpose()) / sigma;
        }
    }
    Ok(pinv)
}

/// Orthonormal basis (as rows) of the row space of `a`, with its numerical rank
/// decided by the same relative cut-off as [`pseudo_inverse`].
fn row_space_svd(a: &DMatrix<f64>, tol: f64) -> Result<(DMatrix<f64>, usize)> {
    check_finite(a)?;
    let svd = a.clone().svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let s = &svd.singular_values;
    let cutoff = tol * s.max();
    let keep: Vec<usize> = (0..s.len()).filter(|&i| s[i] > cutoff && s[i] > 0.0).collect();
    let mut basis = DMatrix::zeros(keep.len(), a.ncols());
    for (r, &i) in keep.iter().enumerate() {
        basis.row_mut(r).copy_from(&v_t.row(i));
    }
    Ok((basis, keep.len()))
}

/// `N = I - A⁺A` for a full-row-rank constraint.
pub fn projection_from_constraint(a: &ConstraintMatrix) -> Result<ProjectionMatrix> {
    let dim = a.dim();
    let k = a.n_rows();
    if k == 0 {
        return Ok(ProjectionMatrix::identity(dim));
    }
    if k > dim {
        return Err(Error::DegenerateConstraint {
            rank: dim,
            rows: k,
            index: None,
        });
    }
    let (basis, rank) = row_space_svd(a.matrix(), DEFAULT_PINV_TOL)?;
    if rank < k {
        return Err(Error::DegenerateConstraint {
            rank,
            rows: k,
            index: None,
        });
    }
    // A⁺A = VᵣVᵣᵀ; building it from the right singular vectors keeps N exactly symmetric.
    let n = DMatrix::identity(dim, dim) - basis.transpose() * &basis;
    Ok(ProjectionMatrix(n))
}

/// Writes the unit vector parameterized by `theta` into `out` (`out.len() == theta.len() + 1`).
pub(crate) fn unit_vector_into(theta: &[f64], out: &mut [f64]) {
    debug_assert_eq!(out.len(), theta.len() + 1);
    let mut sin_prod = 1.0;
    for (i, &t) in theta.iter().enumerate() {
        out[i] = sin_prod * t.cos();
        sin_prod *= t.sin();
    }
    out[theta.len()] = sin_prod;
}

/// Partial derivatives of the hyperspherical map. `jac[i][m] = ∂a_i/∂θ_m`,
/// stored row-major into `jac` of length `U · (U-1)`.
pub(crate) fn unit_vector_jacobian_into(theta: &[f64], jac: &mut [f64]) {
    let p = theta.len();
    let dim = p + 1;
    debug_assert_eq!(jac.len(), dim * p);
    let (s, c): (Vec<f64>, Vec<f64>) = theta.iter().map(|t| (t.sin(), t.cos())).unzip();
    for i in 0..dim {
        for m in 0..p {
            let v = if m > i {
                0.0
            } else if m == i {
                // i < dim - 1 here since m < p.
                let prefix: f64 = s[..i].iter().product();
                -prefix * s[i]
            } else {
                let mut prod = c[m];
                for (j, sj) in s.iter().enumerate().take(i) {
                    if j != m {
                        prod *= sj;
                    }
                }
                if i < p {
                    prod * c[i]
                } else {
                    prod
                }
            };
            jac[i * p + m] = v;
        }
    }
}

/// Maps hyperspherical angles to a unit vector in `R^dim`:
/// `a₁ = cos θ₁`, `a_i = (∏_{j<i} sin θ_j) cos θ_i`, `a_U = ∏ sin θ_j`.
pub fn unit_vector_from_angles(theta: &SphericalAngles, dim: usize) -> Result<DVector<f64>> {
    if dim < 2 {
        return Err(Error::InvalidInput(format!(
            "unit vectors need dimension >= 2, got {dim}"
        )));
    }
    if theta.len() + 1 != dim {
        return Err(Error::DimensionMismatch {
            expected: dim - 1,
            found: theta.len(),
        });
    }
    let mut out = DVector::zeros(dim);
    unit_vector_into(theta.as_slice(), out.as_mut_slice());
    Ok(out)
}

/// Inverse of [`unit_vector_from_angles`]. All angles land in `[0, π]` except
/// the last, which is wrapped to `[0, 2π)`.
pub fn angles_from_unit_vector(a: &DVector<f64>) -> Result<SphericalAngles> {
    let dim = a.len();
    if dim < 2 {
        return Err(Error::InvalidInput(format!(
            "unit vectors need dimension >= 2, got {dim}"
        )));
    }
    let norm = a.norm();
    if !norm.is_finite() || norm == 0.0 {
        return Err(Error::InvalidInput("cannot take angles of a zero vector".into()));
    }
    if (norm - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidInput(format!("vector is not unit length (norm {norm})")));
    }
    let mut theta = DVector::zeros(dim - 1);
    // tail[i] = ‖(a_i, ..., a_U)‖
    let mut tail = vec![0.0f64; dim + 1];
    for i in (0..dim).rev() {
        tail[i] = tail[i + 1].hypot(a[i]);
    }
    for i in 0..dim - 2 {
        theta[i] = tail[i + 1].atan2(a[i]);
    }
    let last = a[dim - 1].atan2(a[dim - 2]);
    theta[dim - 2] = if last < 0.0 {
        last + std::f64::consts::TAU
    } else {
        last
    };
    Ok(SphericalAngles(theta))
}

/// Orthonormal basis of the complement of `rows` in `R^dim`, by Gram–Schmidt
/// against the standard basis with one re-orthogonalization pass.
pub fn orthonormal_complement_basis(rows: &[DVector<f64>], dim: usize) -> Result<Vec<DVector<f64>>> {
    for r in rows {
        if r.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: r.len(),
            });
        }
    }
    if rows.len() > dim {
        return Err(Error::InvalidInput(format!(
            "{} rows cannot be orthonormal in R^{dim}",
            rows.len()
        )));
    }
    for (i, a) in rows.iter().enumerate() {
        for (j, b) in rows.iter().enumerate().skip(i) {
            let target = if i == j { 1.0 } else { 0.0 };
            if (a.dot(b) - target).abs() > ORTHONORMAL_TOL {
                return Err(Error::InvalidInput("rows are not orthonormal".into()));
            }
        }
    }

    let mut basis: Vec<DVector<f64>> = rows.to_vec();
    let want = dim - rows.len();
    let mut out = Vec::with_capacity(want);
    let mut used = vec![false; dim];
    let residual = |e: usize, basis: &[DVector<f64>]| {
        let mut v = DVector::zeros(dim);
        v[e] = 1.0;
        for _ in 0..2 {
            for b in basis {
                let d = b.dot(&v);
                v.axpy(-d, b, 1.0);
            }
        }
        v
    };
    while out.len() < want {
        // Pivot on the standard basis vector least explained by the current
        // span; its residual norm is at least 1/√dim.
        let (e, v) = (0..dim)
            .filter(|&e| !used[e])
            .map(|e| (e, residual(e, &basis)))
            .fold(None::<(usize, DVector<f64>)>, |best, (e, v)| match best {
                Some((be, bv)) if bv.norm() >= v.norm() => Some((be, bv)),
                _ => Some((e, v)),
            })
            .expect("an unused standard basis vector remains");
        used[e] = true;
        let v = v.normalize();
        basis.push(v.clone());
        out.push(v);
    }
    Ok(out)
}

/// Householder reflector `H` with `H e₁ = y` for unit `y`; the remaining
/// columns `H e₂ … H e_n` form an orthonormal basis of `y^⊥` that varies
/// smoothly with `y` away from `y = -e₁`.
///
/// Returns the full `n × n` reflector, column-major.
pub(crate) fn householder_frame(y: &[f64]) -> DMatrix<f64> {
    let n = y.len();
    let mut v: Vec<f64> = y.to_vec();
    v[0] += 1.0;
    let vv: f64 = v.iter().map(|x| x * x).sum();
    if vv < 1e-300 {
        // y = -e₁: reflect through e₁ instead.
        let mut h = DMatrix::identity(n, n);
        h[(0, 0)] = -1.0;
        return h;
    }
    // With v = y + e₁, H = vvᵀ/‖v‖²·2 - I maps e₁ to y (a reflection times -1 on v^⊥).
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let id = if i == j { 1.0 } else { 0.0 };
            h[(i, j)] = 2.0 * v[i] * v[j] / vv - id;
        }
    }
    h
}

/// `P_row(A) v` for a `k × U` matrix given in row-major slices, via modified
/// Gram–Schmidt on the rows. Returns `None` when `A` is rank deficient under
/// the relative tolerance. Used in inner optimization loops where an SVD per
/// point is too costly; agrees with `A⁺A v`.
pub(crate) fn project_onto_row_space(
    rows: &[f64],
    k: usize,
    dim: usize,
    v: &[f64],
    out: &mut [f64],
    scratch: &mut Vec<f64>,
) -> Option<()> {
    scratch.clear();
    scratch.extend_from_slice(&rows[..k * dim]);
    let max_norm = (0..k)
        .map(|i| scratch[i * dim..(i + 1) * dim].iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    if max_norm == 0.0 {
        return None;
    }
    for i in 0..k {
        for _ in 0..2 {
            for j in 0..i {
                let d: f64 = (0..dim).map(|c| scratch[i * dim + c] * scratch[j * dim + c]).sum();
                for c in 0..dim {
                    scratch[i * dim + c] -= d * scratch[j * dim + c];
                }
            }
        }
        let n: f64 = scratch[i * dim..(i + 1) * dim].iter().map(|x| x * x).sum::<f64>().sqrt();
        if n <= DEFAULT_PINV_TOL * max_norm {
            return None;
        }
        for c in 0..dim {
            scratch[i * dim + c] /= n;
        }
    }
    out[..dim].iter_mut().for_each(|o| *o = 0.0);
    for i in 0..k {
        let q = &scratch[i * dim..(i + 1) * dim];
        let d: f64 = q.iter().zip(v).map(|(a, b)| a * b).sum();
        for c in 0..dim {
            out[c] += d * q[c];
        }
    }
    Some(())
}
