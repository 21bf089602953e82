mod common;

use common::{gps_strategy, jacobi_eigenvalues, joint_strategy};
use hetid::algebra::{extreme_eigenvalues, is_singular, is_singular_with, SINGULAR_RTOL};
use hetid::{
    conditional_variance, moment_matrix_from_gps, moment_matrix_from_joint, null_space_direction,
    schur_complement_of_diag_block, smallest_eigenvalue, GpsVector, JointDistribution,
};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn scores_below_one_iff_nonsingular(g in gps_strategy(5)) {
        let m = moment_matrix_from_gps(&g);
        let nonsingular = !is_singular(&m);
        prop_assert_eq!(nonsingular, g.sum() < 1.0 - 1e-12, "gps {:?}", g.probs());
    }

    #[test]
    fn moment_and_variance_agree(d in joint_strategy(4)) {
        let m = moment_matrix_from_joint(&d);
        let var = conditional_variance(&m);
        prop_assert_eq!(is_singular(&m), is_singular_with(&var, SINGULAR_RTOL));
    }

    #[test]
    fn null_direction_contract(d in joint_strategy(4)) {
        let m = moment_matrix_from_joint(&d);
        let (lo, hi) = extreme_eigenvalues(m.as_matrix());
        match null_space_direction(&m) {
            Some(dir) => {
                prop_assert!((dir.norm() - 1.0).abs() < 1e-12);
                let v: Vec<f64> = dir.iter().copied().collect();
                prop_assert!(m.quadratic_form(&v) <= 1e-8 * hi);
                prop_assert!((m.as_matrix() * &dir).norm() <= 1e-8 * hi);
                let first = v.iter().find(|x| x.abs() > 1e-10).unwrap();
                prop_assert!(*first > 0.0);
            }
            None => prop_assert!(lo > m.dim() as f64 * hi * SINGULAR_RTOL),
        }
    }

    #[test]
    fn gps_matrix_matches_induced_joint(g in gps_strategy(5)) {
        let a = moment_matrix_from_gps(&g);
        let b = moment_matrix_from_joint(&JointDistribution::from_gps(&g));
        for i in 0..a.dim() {
            for j in 0..a.dim() {
                prop_assert!((a.get(i, j) - b.get(i, j)).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn eigenvalue_matches_jacobi(d in joint_strategy(4)) {
        let m = moment_matrix_from_joint(&d);
        let oracle = jacobi_eigenvalues(&m.to_rows());
        let lmax = oracle[oracle.len() - 1];
        prop_assert!((smallest_eigenvalue(&m) - oracle[0]).abs() <= 1e-12 * lmax);
    }

    #[test]
    fn moment_matrix_invariants(d in joint_strategy(4)) {
        let m = moment_matrix_from_joint(&d);
        let (lo, hi) = extreme_eigenvalues(m.as_matrix());
        prop_assert!(lo >= -(m.dim() as f64) * hi * 1e-12);
        prop_assert_eq!(m.get(0, 0), 1.0);
        for i in 0..m.dim() {
            for j in 0..m.dim() {
                prop_assert_eq!(m.get(i, j), m.get(j, i));
                prop_assert!((-1e-15..=1.0 + 1e-15).contains(&m.get(i, j)));
            }
        }
    }

    #[test]
    fn diag_complement_is_one_minus_sum(g in gps_strategy(5)) {
        let s = schur_complement_of_diag_block(&moment_matrix_from_gps(&g)).unwrap();
        prop_assert!((s - (1.0 - g.sum())).abs() <= 1e-12);
    }
}

#[test]
fn binary_variance_grid() {
    for k in 0..=10 {
        let p = k as f64 / 10.0;
        let m = moment_matrix_from_gps(&GpsVector::new(vec![p]).unwrap());
        let v = conditional_variance(&m);
        assert!((v[(0, 0)] - p * (1.0 - p)).abs() <= 1e-14);
        // singular exactly at the ends of the grid
        assert_eq!(is_singular(&m), k == 0 || k == 10, "p = {p}");
    }
}
