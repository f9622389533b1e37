use carts_core::convergence::{
    binomial_upper_tail, expected_iterations_bound, lambda_bound, verify_corollary, verify_theorem, SimParams,
};
use proptest::prelude::*;
use statrs::distribution::{Binomial, DiscreteCDF};

#[test]
fn lambda_examples() {
    assert_eq!(lambda_bound(1.0, 0.8, 0.75, 10, 0, 0.05).unwrap(), 27);
    assert_eq!(lambda_bound(1.0, 1.0, 1.0, 1, 0, (-0.5f64).exp()).unwrap(), 2);
    assert_eq!(lambda_bound(0.5, 1.0, 0.5, 10, 5, 0.1).unwrap(), 10);
}

#[test]
fn corollary_bound_examples() {
    let close = |a: f64, b: f64| (a - b).abs() < 1e-9;
    assert!(close(expected_iterations_bound(10, 0, 0.8, 0.75).unwrap(), 20.0));
    assert!(close(expected_iterations_bound(5, 5, 0.5, 1.0).unwrap(), 4.0));
    assert!(close(expected_iterations_bound(5, 2, 1.0, 1.0).unwrap(), 5.0));
}

#[test]
fn tail_matches_statrs() {
    for (n, p, k) in [
        (27u32, 0.6, 10u32),
        (40, 0.3, 5),
        (132, 0.5, 60),
        (10, 0.9, 10),
        (5, 0.5, 0),
    ] {
        let b = Binomial::new(p, u64::from(n)).unwrap();
        let expected = if k == 0 { 1.0 } else { b.sf(u64::from(k) - 1) };
        assert!(
            (binomial_upper_tail(n, p, k) - expected).abs() < 1e-10,
            "n={n} p={p} k={k}"
        );
    }
}

#[test]
fn unit_probability_always_succeeds() {
    let r = verify_theorem(&SimParams::new(1.0, 1.0, 12, 3, 1.0, 0.3).with_trials(500)).unwrap();
    assert_eq!(r.empirical_success, Some(1.0));
}

#[test]
fn goal_already_met() {
    let r = verify_theorem(&SimParams::new(0.4, 0.5, 10, 8, 0.5, 0.1).with_trials(500)).unwrap();
    assert_eq!(r.empirical_success, Some(1.0));
}

#[test]
fn corollary_example_mean() {
    let r = verify_corollary(
        &SimParams::new(0.8, 0.75, 10, 0, 1.0, 0.05)
            .with_trials(10_000)
            .with_seed(3),
    )
    .unwrap();
    let mean = r.mean_hitting_time.unwrap();
    let se = r.hitting_time_std_error.unwrap();
    assert!((mean - 10.0 / 0.6).abs() < 3.0 * se, "mean {mean} se {se}");
    assert!(mean <= r.corollary_bound);
}

#[test]
fn failing_region_is_flagged() {
    let r = verify_theorem(&SimParams::new(0.5, 1.0, 60, 0, 1.0, 0.05).with_trials(2_000)).unwrap();
    assert_eq!(r.lambda, 132);
    assert!(r.exact_success.unwrap() < 0.95);
    assert!(r.bound_violated);
}

fn unit() -> impl Strategy<Value = f64> {
    0.01f64..=1.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn lambda_is_monotone(
        alpha in unit(), beta in unit(), gamma in unit(), eps in 0.001f64..0.999,
        opt in 0u32..200, c0 in 0u32..200, bump in 0.0f64..0.5, extra in 1u32..20,
    ) {
        let base = lambda_bound(alpha, beta, gamma, opt, c0, eps).unwrap();
        // Higher success probability or looser confidence never needs more rounds.
        prop_assert!(lambda_bound(alpha, (beta + bump).min(1.0), gamma, opt, c0, eps).unwrap() <= base);
        prop_assert!(lambda_bound(alpha, beta, (gamma + bump).min(1.0), opt, c0, eps).unwrap() <= base);
        prop_assert!(lambda_bound(alpha, beta, gamma, opt, c0, (eps + bump).min(0.999)).unwrap() <= base);
        // A higher target or a larger optimum never needs fewer.
        prop_assert!(lambda_bound((alpha + bump).min(1.0), beta, gamma, opt, c0, eps).unwrap() >= base);
        prop_assert!(lambda_bound(alpha, beta, gamma, opt + extra, c0, eps).unwrap() >= base);
        prop_assert!(lambda_bound(alpha, beta, gamma, opt, c0 + extra, eps).unwrap() <= base);
    }

    #[test]
    fn lambda_covers_corollary_gap(
        beta in unit(), gamma in unit(), (opt, c0) in (0u32..100).prop_flat_map(|opt| (Just(opt), 0..=opt)),
    ) {
        let p = beta * gamma;
        let lambda = lambda_bound(1.0, beta, gamma, opt, c0, 0.5).unwrap();
        prop_assert!(f64::from(lambda) + 1e-6 >= f64::from(opt - c0) / p);
    }
}
