mod common;

use common::{mc_renyi_mixture, rel_err};
use pflkit::accountant::{
    calibrate_sigma, compose_and_convert, xi, xi_fractional, xi_integer, AlphaGrid, SgmParams,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

#[test]
fn integer_order_matches_monte_carlo_at_competition_rate() {
    let exact = xi_integer(8, 0.025, 1.0).unwrap();
    let mc = mc_renyi_mixture(8.0, 0.025, 1.0, 2_000_000, 1);
    assert!(rel_err(exact, mc) < 0.02, "xi={exact} mc={mc}");
}

#[test]
fn fractional_order_matches_monte_carlo() {
    for (alpha, q, sigma) in [(2.5, 0.025, 1.0), (5.5, 0.2, 1.5), (1.5, 0.4, 0.8), (12.5, 0.05, 2.0)] {
        let exact = xi_fractional(alpha, q, sigma).unwrap();
        let mc = mc_renyi_mixture(alpha, q, sigma, 2_000_000, 2);
        assert!(rel_err(exact, mc) < 0.02, "a={alpha} q={q} s={sigma}: xi={exact} mc={mc}");
    }
}

#[test]
fn random_triples_match_monte_carlo() {
    let mut rng = ChaCha20Rng::seed_from_u64(2024);
    for i in 0..10 {
        let q = rng.random_range(0.01..0.5);
        let sigma = rng.random_range(0.5..4.0);
        let alpha = [2.0, 4.0, 8.0][rng.random_range(0..3)];
        let exact = xi(alpha, q, sigma).unwrap();
        let mc = mc_renyi_mixture(alpha, q, sigma, 1_000_000, 100 + i);
        assert!(rel_err(exact, mc) < 0.02, "a={alpha} q={q} s={sigma}: xi={exact} mc={mc}");
    }
}

#[test]
fn round_trip_calibration_for_competition_budgets() {
    let grid = AlphaGrid::default();
    let mut last_sigma = f64::INFINITY;
    for target in [1.0, 4.0, 8.0] {
        let sigma = calibrate_sigma(target, 1e-5, 0.025, 5, &grid).unwrap();
        let spend = compose_and_convert(&SgmParams::new(0.025, sigma, 5).unwrap(), 1e-5, &grid).unwrap();
        assert!(spend.epsilon <= target && spend.epsilon >= target * (1.0 - 1e-3), "{target}: {spend:?}");
        assert!(sigma < last_sigma);
        last_sigma = sigma;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn epsilon_monotone_in_sigma_steps_and_rate(
        q in 0.005f64..0.5,
        sigma in 0.5f64..5.0,
        steps in 1u64..50,
        bump in 1.01f64..2.0,
    ) {
        let grid = AlphaGrid::default();
        let eps = |q: f64, s: f64, t: u64| {
            compose_and_convert(&SgmParams::new(q, s, t).unwrap(), 1e-5, &grid).unwrap().epsilon
        };
        let base = eps(q, sigma, steps);
        prop_assert!(eps(q, sigma * bump, steps) <= base + 1e-12);
        prop_assert!(eps(q, sigma, steps + 1) >= base - 1e-12);
        prop_assert!(eps((q * bump).min(1.0), sigma, steps) >= base - 1e-12);
    }
}
