use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use nullspace_core::projection::{
    angles_from_unit_vector, orthonormal_complement_basis, projection_from_constraint, pseudo_inverse,
    unit_vector_from_angles, ConstraintMatrix, SphericalAngles, DEFAULT_PINV_TOL,
};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-3.0..3.0f64, rows * cols).prop_map(move |v| DMatrix::from_row_slice(rows, cols, &v))
}

fn constraint() -> impl Strategy<Value = DMatrix<f64>> {
    (2usize..=4).prop_flat_map(|u| (1usize..=u).prop_flat_map(move |k| matrix(k, u)))
}

proptest! {
    #[test]
    fn null_projector_is_a_symmetric_idempotent_annihilator(a in constraint()) {
        let n = projection_from_constraint(&ConstraintMatrix::new(a.clone()));
        prop_assume!(n.is_ok());
        let n = n.unwrap().into_inner();
        prop_assert!((&n - n.transpose()).amax() < 1e-8);
        prop_assert!((&n * &n - &n).amax() < 1e-8);
        prop_assert!((&a * &n).amax() < 1e-8 * a.amax().max(1.0));
    }

    #[test]
    fn pseudo_inverse_satisfies_the_penrose_conditions(m in (1usize..=4, 1usize..=4).prop_flat_map(|(r, c)| matrix(r, c))) {
        let p = pseudo_inverse(&m, DEFAULT_PINV_TOL).unwrap();
        let scale = m.amax().max(1.0);
        prop_assert!((&m * &p * &m - &m).amax() < 1e-8 * scale);
        prop_assert!((&p * &m * &p - &p).amax() < 1e-8 * p.amax().max(1.0));
        let mp = &m * &p;
        let pm = &p * &m;
        prop_assert!((&mp - mp.transpose()).amax() < 1e-8);
        prop_assert!((&pm - pm.transpose()).amax() < 1e-8);
    }

    #[test]
    fn angles_give_unit_vectors(theta in prop::collection::vec(-10.0..10.0f64, 1..5)) {
        let dim = theta.len() + 1;
        let v = unit_vector_from_angles(&SphericalAngles::from_slice(&theta), dim).unwrap();
        prop_assert!((v.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unit_vectors_survive_an_angle_round_trip(raw in prop::collection::vec(-1.0..1.0f64, 2..6)) {
        let v = DVector::from_vec(raw);
        prop_assume!(v.norm() > 1e-3);
        let v = v.normalize();
        let theta = angles_from_unit_vector(&v).unwrap();
        let back = unit_vector_from_angles(&theta, v.len()).unwrap();
        prop_assert!((back - v).amax() < 1e-10);
    }

    #[test]
    fn complement_basis_is_orthonormal_and_complete(a in constraint()) {
        let dim = a.ncols();
        let q = a.transpose().qr().q();
        let k = a.nrows();
        let rows: Vec<DVector<f64>> = (0..k).map(|i| q.column(i).into_owned()).collect();
        let basis = orthonormal_complement_basis(&rows, dim).unwrap();
        prop_assert_eq!(basis.len(), dim - k);
        for (i, b) in basis.iter().enumerate() {
            prop_assert!((b.norm() - 1.0).abs() < 1e-10);
            for r in &rows {
                prop_assert!(b.dot(r).abs() < 1e-10);
            }
            for c in &basis[..i] {
                prop_assert!(b.dot(c).abs() < 1e-10);
            }
        }
    }
}
