use super::*;
use crate::risk::test_support::{random_factor_model, random_spd};
use crate::risk::{DenseCovariance, DiagonalCovariance};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_e(n: usize, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

#[test]
fn single_term_is_the_sharpe_direction() {
    let c = DenseCovariance::new(random_spd(6, 1)).unwrap();
    let e = random_e(6, 2);
    let w = multiply_optimized_weights(&c, &e, &MultiOptSpec::new(1, 1.0)).unwrap();
    let raw = c.solve(&e).unwrap();
    assert!((w.weights - &raw / linalg::l1_norm(&raw)).amax() < 1e-14);
}

#[test]
fn scaled_identity_collapses_the_series() {
    let c = DiagonalCovariance::new(DVector::from_element(5, 3.0)).unwrap();
    let e = random_e(5, 4);
    let one = multiply_optimized_weights(&c, &e, &MultiOptSpec::new(1, 1.0)).unwrap().weights;
    for n_opt in 2..=5 {
        let w = multiply_optimized_weights(&c, &e, &MultiOptSpec::new(n_opt, 0.7)).unwrap();
        assert!((w.weights - &one).amax() < 1e-14);
        assert!((w.iterated.h - 3.0).abs() < 1e-12);
    }
}

#[test]
fn two_by_two_hand_computation() {
    let c = DiagonalCovariance::new(DVector::from_element(2, 2.0)).unwrap();
    let e = DVector::from_vec(vec![1.0, 0.0]);
    let w = multiply_optimized_weights(&c, &e, &MultiOptSpec::new(2, 1.0)).unwrap();
    assert!((w.iterated.h - 2.0).abs() < 1e-15);
    assert!((w.b_tilde - 2.0).abs() < 1e-15);
    assert!((w.e_hat[0] - 2.0).abs() < 1e-15 && w.e_hat[1] == 0.0);
    assert_eq!(w.weights.as_slice(), &[1.0, 0.0]);
}

#[test]
fn zero_second_level_is_degenerate() {
    let c = DiagonalCovariance::new(DVector::from_element(2, 1.0)).unwrap();
    assert!(multiply_optimized_weights(&c, &DVector::zeros(2), &MultiOptSpec::default()).is_err());
    assert!(MultiOptSpec::new(0, 1.0).validate(2).is_err());
}

#[test]
fn series_matches_explicit_sum() {
    let c = DenseCovariance::new(random_spd(7, 5)).unwrap();
    let e = random_e(7, 6);
    for n_opt in 1..=5 {
        let b_hat = 0.8;
        let w = multiply_optimized_weights(&c, &e, &MultiOptSpec::new(n_opt, b_hat)).unwrap();
        let h = w.iterated.h;
        let mut sum = DVector::zeros(7);
        let mut level = e.clone();
        for p in 0..n_opt {
            sum += c.solve(&level).unwrap() * (w.a * (b_hat * h).powi(p as i32));
            level = c.solve(&level).unwrap();
        }
        assert!((sum - &w.weights).amax() < 1e-10);
    }
}

#[test]
fn dollar_neutral_at_every_order_dense_and_factor() {
    let e = random_e(12, 8);
    let dense = DenseCovariance::new(random_spd(12, 9)).unwrap();
    let factor = random_factor_model(12, 3, 10);
    for n_opt in 1..=5 {
        let spec = MultiOptSpec::new(n_opt, 1.0).dollar_neutral(12);
        for model in [&dense as &dyn RiskModel, &factor] {
            let w = multiply_optimized_weights(model, &e, &spec).unwrap().weights;
            assert!(w.sum().abs() <= 1e-10);
            assert!((linalg::l1_norm(&w) - 1.0).abs() <= 1e-12);
        }
    }
}

#[test]
fn padded_and_projected_routes_agree() {
    let f = random_factor_model(15, 2, 11);
    let dense = DenseCovariance::new(f.to_dense().unwrap()).unwrap();
    let e = random_e(15, 12);
    let spec = MultiOptSpec::new(3, 1.0).dollar_neutral(15);
    let a = multiply_optimized_weights(&f, &e, &spec).unwrap().weights;
    let b = multiply_optimized_weights(&dense, &e, &spec).unwrap().weights;
    assert!((a - b).amax() < 1e-10);
}

#[test]
fn rescaling_examples() {
    let c = DenseCovariance::new(random_spd(8, 13)).unwrap();
    let e = random_e(8, 14);
    let spec = MultiOptSpec::new(3, 1.0);
    let r = rescaling_check(&c, &e, &spec, &[(3.0, 1.0), (1.0, 7.0), (0.2, 5.0)]).unwrap();
    assert!(r.passed, "max diff {}", r.max_abs_diff);
}

#[test]
fn linearized_solution_satisfies_its_equation() {
    let c = DenseCovariance::new(random_spd(6, 15)).unwrap();
    let e = random_e(6, 16);
    let b_tilde = 0.05;
    let lin = linearized_weights(&c, &e, b_tilde, 5).unwrap();
    assert!(lin.exact);
    let rhs = c.solve(&(&e * lin.a + &lin.weights * b_tilde)).unwrap();
    assert!((rhs - &lin.weights).amax() < 1e-10);
}

#[test]
fn linearized_factor_route_matches_dense() {
    let f = random_factor_model(10, 2, 17);
    let dense = DenseCovariance::new(f.to_dense().unwrap()).unwrap();
    let e = random_e(10, 18);
    let a = linearized_weights(&f, &e, 0.1, 3).unwrap();
    let b = linearized_weights(&dense, &e, 0.1, 3).unwrap();
    assert!(a.exact && b.exact);
    assert!((a.weights - b.weights).amax() < 1e-10);
}

#[test]
fn linearized_falls_back_when_shift_is_too_large() {
    let c = DiagonalCovariance::new(DVector::from_vec(vec![1.0, 2.0])).unwrap();
    let e = DVector::from_vec(vec![1.0, 1.0]);
    let lin = linearized_weights(&c, &e, 5.0, 2).unwrap();
    assert!(!lin.exact);
    // C^{-1} E + 5 C^{-2} E = (6, 1.75)
    let expect = DVector::from_vec(vec![6.0, 1.75]) / 7.75;
    assert!((lin.weights - expect).amax() < 1e-14);
}

#[test]
fn regression_limit_without_factors_is_inverse_variance() {
    let xi2 = DVector::from_vec(vec![0.5, 1.0, 2.0]);
    let f = FactorModel::diagonal(xi2.clone()).unwrap();
    let e = DVector::from_vec(vec![1.0, -1.0, 2.0]);
    let w = regression_limit_weights(&f, &e, 1.0).unwrap();
    let raw = e.component_div(&xi2);
    assert!((w - &raw / linalg::l1_norm(&raw)).amax() < 1e-15);
}

#[test]
fn regression_limit_at_zero_is_plain_inverse() {
    let f = random_factor_model(9, 2, 19);
    let e = random_e(9, 20);
    let w = regression_limit_weights(&f, &e, 0.0).unwrap();
    let raw = f.solve(&e).unwrap();
    assert!((w - &raw / linalg::l1_norm(&raw)).amax() < 1e-13);
    assert!(regression_limit_weights(&f, &e, 1.5).is_err());
}

#[test]
fn regression_limit_is_continuous() {
    for seed in 0..20 {
        let f = random_factor_model(20, 3, 100 + seed);
        let e = random_e(20, 200 + seed);
        let near = regression_limit_weights(&f, &e, 0.999).unwrap();
        let limit = regression_limit_weights(&f, &e, 1.0).unwrap();
        assert!(linalg::angle_between(&near, &limit) < 1e-2);
        // residuals are orthogonal to the loadings under the 1/xi^2 weights
        let eps = weighted_residuals(f.loadings(), f.xi2(), &e).unwrap();
        let ortho = f.loadings().transpose() * eps.component_div(f.xi2());
        assert!(ortho.amax() < 1e-12);
    }
}

#[test]
fn bounded_weights_within_bounds_and_neutral() {
    let f = random_factor_model(20, 2, 21);
    let e = random_e(20, 22);
    let mut spec = MultiOptSpec::new(2, 1.0).dollar_neutral(20);
    spec.bounds = Some(PositionBounds::symmetric(DVector::from_element(20, 0.08)).unwrap());
    let w = multiply_optimized_weights(&f, &e, &spec).unwrap();
    let sol = w.bounded.as_ref().unwrap();
    assert!(!sol.at_upper.is_empty() || !sol.at_lower.is_empty());
    assert!(w.weights.iter().all(|x| x.abs() <= 0.08 + 1e-12));
    assert!(w.weights.sum().abs() < 1e-10);
    assert!((linalg::l1_norm(&w.weights) - 1.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn weights_are_scale_invariant(seed in 0u64..10_000, n_opt in 1usize..=5, zi in 0usize..3, li in 0usize..3) {
        let factors = [0.2, 1.0, 5.0];
        let f = random_factor_model(10, 2, seed);
        let e = random_e(10, seed + 1);
        let spec = MultiOptSpec::new(n_opt, 1.0).dollar_neutral(10);
        let r = rescaling_check(&f, &e, &spec, &[(factors[zi], factors[li])]).unwrap();
        prop_assert!(r.passed, "diff {}", r.max_abs_diff);
    }

    #[test]
    fn normalization_holds(seed in 0u64..10_000, n_opt in 1usize..=5, b_hat in -2.0f64..2.0) {
        let c = DenseCovariance::new(random_spd(6, seed)).unwrap();
        let e = random_e(6, seed + 7);
        let w = multiply_optimized_weights(&c, &e, &MultiOptSpec::new(n_opt, b_hat)).unwrap();
        prop_assert!((linalg::l1_norm(&w.weights) - 1.0).abs() <= 1e-12);
        prop_assert!(w.a > 0.0);
    }
}
