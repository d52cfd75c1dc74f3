mod common;

use common::*;
use proptest::prelude::*;
use specsurg::linalg::{self, c64, max_abs, rank_one_proj_2x2, OrthProjection};
use specsurg::surgery::complementary_projection_2x2;

fn cfg(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(cfg(20))]

    #[test]
    fn scattering_matrix_is_unitary_and_reflects(k in 0.05f64..6.0) {
        let spec = two_channel();
        prop_assert!(unitarity_residual(&spec, k) < 1e-8);
    }

    #[test]
    fn regular_solution_matches_jost_and_physical_representations(k in 0.2f64..3.0, x in 0.0f64..3.0) {
        let spec = two_channel();
        prop_assert!(representation_residual(&spec, k, x) < 1e-6);
    }
}

proptest! {
    #![proptest_config(cfg(100))]

    #[test]
    fn pseudoinverse_satisfies_penrose_identities(
        rows in 1usize..4,
        cols in 1usize..4,
        rank in 0usize..4,
        vals in prop::collection::vec(-2.0f64..2.0, 48),
    ) {
        let m = low_rank(rows, cols, rank.min(rows).min(cols), &vals);
        if max_abs(&m) > 0.0 {
            prop_assert!(penrose(&m) < 1e-10);
        }
    }

    #[test]
    fn rank_one_projector_and_complement_are_orthogonal_projections(
        radius in 0.0f64..=0.5,
        angle in 0.0f64..std::f64::consts::TAU,
        sign in prop::sample::select(vec![-1i32, 1]),
    ) {
        let (beta, gamma) = (radius * angle.cos(), radius * angle.sin());
        let p = rank_one_proj_2x2(beta, gamma, sign).unwrap();
        prop_assert_eq!(p.rank(), 1);
        prop_assert!(linalg::projection_residual(p.matrix()) < 1e-12);
        let q = complementary_projection_2x2(&p).unwrap();
        prop_assert!(max_abs(&(p.matrix() * q.matrix())) < 1e-12);
        let sum = p.matrix() + q.matrix();
        prop_assert!(max_abs(&(sum - linalg::eye(2))) < 1e-12);
    }

    #[test]
    fn projection_from_any_nonzero_vector_is_hermitian_idempotent(
        a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0, d in -2.0f64..2.0,
    ) {
        prop_assume!(a.abs() + b.abs() + c.abs() + d.abs() > 1e-3);
        let v = specsurg::linalg::CMat::from_column_slice(2, 1, &[c64(a, b), c64(c, d)]);
        let p = OrthProjection::from_orthonormal(&(v.clone() / c64(v.norm(), 0.0)));
        prop_assert!(linalg::projection_residual(p.matrix()) < 1e-12);
        prop_assert!(linalg::herm_residual(p.matrix()) < 1e-12);
    }
}

proptest! {
    #![proptest_config(cfg(10))]

    #[test]
    fn scattering_and_bound_state_data_are_gauge_invariant(v in prop::array::uniform8(-2.0f64..2.0)) {
        let t = gauge_matrix(&v);
        prop_assume!(linalg::det(&t).norm() > 0.05);
        let spec = two_channel();
        prop_assert!(gauge_residual(&spec, &t) < 1e-6);
    }
}
