use outflow::covering::{face_id, opposite_face};
use outflow::semigroup::{dense_expm, evolve, resolvent, resolvent_residual, EvolutionMethod, EvolutionSpec};
use outflow::ulam::{estimate, SamplingSpec, UlamMode};
use outflow::{assemble, BoxCovering, FaceQuadratureSpec, FieldSpec, SparseMatrix, StateSpace};
use proptest::prelude::*;

fn square() -> StateSpace {
    StateSpace::boxed(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap()
}

fn linear_field() -> impl Strategy<Value = FieldSpec> {
    (prop::array::uniform4(-2.0..2.0f64), prop::array::uniform2(-0.5..0.5f64)).prop_map(|(m, b)| {
        FieldSpec::Linear2d { matrix: [[m[0], m[1]], [m[2], m[3]]], offset: b }
    })
}

fn nonnegative(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.0f64, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn projection_of_interpolant_is_identity(n in 2usize..12, values in prop::collection::vec(-5.0..5.0f64, 144)) {
        let c = BoxCovering::build(&square(), &[n, n]).unwrap();
        let u = c.density(values[..c.len()].to_vec()).unwrap();
        let back = c.project(|x| c.interpolant(&u, x)).unwrap();
        prop_assert!(back.l1_distance(&u).unwrap() <= 1e-12 * (1.0 + u.l1_norm()));
    }

    #[test]
    fn projection_does_not_increase_l1(n in 1usize..40, k in 1.0..30.0f64, phase in 0.0..6.3f64) {
        let c = BoxCovering::build(&StateSpace::unit_interval(), &[n]).unwrap();
        let f = |x: &[f64]| (k * x[0] + phase).sin();
        // ∫₀¹ |sin(kx + φ)| dx on a fine grid
        let m = 200_000;
        let exact: f64 = (0..m).map(|i| f(&[(i as f64 + 0.5) / m as f64]).abs()).sum::<f64>() / m as f64;
        let u = c.project(f).unwrap();
        prop_assert!(u.l1_norm() <= exact + 1e-6);
    }

    #[test]
    fn ball_neighbors_are_symmetric(nx in 2usize..14, ny in 2usize..14, r in 0.3..1.0f64) {
        let space = StateSpace::ball(vec![0.0, 0.0], r, vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let c = BoxCovering::build(&space, &[nx, ny]).unwrap();
        for a in 0..c.len() {
            for axis in 0..2 {
                for high in [false, true] {
                    let face = face_id(axis, high);
                    if let Some(b) = c.neighbor(a, face) {
                        prop_assert_eq!(c.neighbor(b, opposite_face(face)), Some(a));
                    }
                }
            }
            prop_assert_eq!(c.locate(&c.box_center(a)), Some(a));
        }
    }

    #[test]
    fn generator_sign_pattern_and_column_sums(field in linear_field(), n in 2usize..16) {
        let c = BoxCovering::build(&square(), &[n, n]).unwrap();
        let g = assemble(&field, &c, &FaceQuadratureSpec::default()).unwrap();
        let scale = g.max_outflow_rate().max(1.0);
        for (i, j, v) in g.matrix().triplets() {
            if i == j {
                prop_assert!(v <= 0.0);
            } else {
                prop_assert!(v >= 0.0);
            }
        }
        for s in g.matrix().column_sums() {
            prop_assert!(s <= 1e-12 * scale);
        }
    }

    #[test]
    fn evolve_is_positive_and_contractive(field in linear_field(), values in nonnegative(64), t in 0.0..3.0f64) {
        let c = BoxCovering::build(&square(), &[8, 8]).unwrap();
        let g = assemble(&field, &c, &FaceQuadratureSpec::default()).unwrap();
        let u = c.density(values).unwrap();
        let w = evolve(&g, &u, &EvolutionSpec::at(t)).unwrap();
        prop_assert!(w.min() >= 0.0);
        prop_assert!(w.l1_norm() <= u.l1_norm() * (1.0 + 1e-12));
    }

    #[test]
    fn taylor_matches_dense_exponential(field in linear_field(), values in prop::collection::vec(-1.0..1.0f64, 36), t in 0.0..2.0f64) {
        let c = BoxCovering::build(&square(), &[6, 6]).unwrap();
        let g = assemble(&field, &c, &FaceQuadratureSpec::default()).unwrap();
        let u = c.density(values).unwrap();
        let e = dense_expm(g.matrix(), t);
        let oracle: Vec<f64> = (0..u.len()).map(|i| (0..u.len()).map(|j| e[(i, j)] * u.values()[j]).sum()).collect();
        for method in [EvolutionMethod::ScaledTaylor, EvolutionMethod::Krylov] {
            let w = evolve(&g, &u, &EvolutionSpec::at(t).with_method(method).with_tolerance(1e-10)).unwrap();
            let err: f64 = w.values().iter().zip(&oracle).map(|(a, b)| (a - b).abs()).sum::<f64>() * c.box_measure();
            prop_assert!(err <= 1e-9 * (u.l1_norm() + 1e-300), "{:?}: {}", method, err);
        }
    }

    #[test]
    fn resolvent_is_positive(field in linear_field(), values in nonnegative(100), lambda in 0.05..10.0f64) {
        let c = BoxCovering::build(&square(), &[10, 10]).unwrap();
        let g = assemble(&field, &c, &FaceQuadratureSpec::default()).unwrap();
        let u = c.density(values).unwrap();
        let w = resolvent(&g, &u, lambda).unwrap();
        prop_assert!(resolvent_residual(&g, &u, &w, lambda).unwrap() <= 1e-10);
        prop_assert!(w.min() >= -1e-10 * u.values().iter().copied().fold(0.0, f64::max));
    }

    #[test]
    fn ulam_columns_are_substochastic(field in linear_field(), t in 0.0..1.0f64, killed in any::<bool>()) {
        let c = BoxCovering::build(&square(), &[6, 6]).unwrap();
        let mode = if killed { UlamMode::Killed } else { UlamMode::FullFlow };
        let u = estimate(&field, &c, t, mode, &SamplingSpec::Grid { per_axis: 3 }, &Default::default()).unwrap();
        for (_, _, v) in u.matrix().triplets() {
            prop_assert!(v > 0.0 && v <= 1.0);
        }
        for s in u.matrix().column_sums() {
            prop_assert!(s <= 1.0 + 1e-15);
        }
    }

    #[test]
    fn sparse_text_formats_round_trip(entries in prop::collection::vec((0usize..9, 0usize..7, -1e6..1e6f64), 0..40)) {
        let m = SparseMatrix::from_triplets(9, 7, &entries).unwrap();
        let mm = SparseMatrix::from_matrix_market(&m.to_matrix_market()).unwrap();
        prop_assert_eq!(&mm, &m);
        let csv = SparseMatrix::from_coordinate_csv(&m.to_coordinate_csv(), 9, 7).unwrap();
        prop_assert_eq!(&csv, &m);
    }

    #[test]
    fn density_formats_round_trip(values in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 16)) {
        let c = BoxCovering::build(&square(), &[4, 4]).unwrap();
        let u = c.density(values).unwrap();
        prop_assert_eq!(&outflow::DensityVector::from_binary(&u.to_binary(), &c).unwrap(), &u);
        prop_assert_eq!(&outflow::DensityVector::from_csv(&u.to_csv(), &c).unwrap(), &u);
    }
}
