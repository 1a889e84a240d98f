//! Structural properties of the solved surface, the regime model and the
//! configuration format, checked at random points.

use std::sync::OnceLock;

use proptest::prelude::*;
use smgbm::bsm_kernel::bs_call;
use smgbm::config::ExperimentConfig;
use smgbm::greeks::delta_integral;
use smgbm::mc::path_rng;
use smgbm::{ContractSpec, HazardFn, PriceSurface, RegimeModel, SolverConfig};

const STRIKE: f64 = 100.0;
const MATURITY: f64 = 1.0;
const SIGMA: [f64; 2] = [0.2, 0.4];

fn weibull_surface() -> &'static PriceSurface {
    static SURFACE: OnceLock<PriceSurface> = OnceLock::new();
    SURFACE.get_or_init(|| {
        let model = RegimeModel::fully_connected(vec![0.05; 2], SIGMA.to_vec(), vec![0.08, 0.1], HazardFn::weibull(1.0, 2.0));
        let contract = ContractSpec::new(STRIKE, MATURITY).unwrap();
        smgbm::solve(&model, &contract, &SolverConfig::default()).unwrap()
    })
}

/// `(t, s, i, y)` with `0 ≤ y ≤ t < T` and spots within two strikes either side.
fn point() -> impl Strategy<Value = (f64, f64, usize, f64)> {
    (0.0..0.999f64, -0.7..0.7f64, 0..2usize, 0.0..1.0f64)
        .prop_map(|(t, x, i, frac)| (t * MATURITY, STRIKE * x.exp(), i, frac * t * MATURITY))
}

fn hazard() -> impl Strategy<Value = HazardFn> {
    prop_oneof![
        (0.1..5.0f64).prop_map(HazardFn::constant),
        (0.2..3.0f64, 0.5..4.0f64).prop_map(|(scale, shape)| HazardFn::weibull(scale, shape)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn price_lies_in_the_envelope((t, s, i, y) in point()) {
        let raw = weibull_surface().price_at_raw(t, s, i, y).unwrap();
        let slack = 1e-9 * (1.0 + s);
        prop_assert!(raw >= (s - STRIKE).max(0.0) - slack && raw <= s + slack, "raw {raw} at s {s}");
    }

    #[test]
    fn price_lies_between_the_regime_black_scholes_prices((t, s, i, y) in point()) {
        let phi = weibull_surface().price_at(t, s, i, y).unwrap();
        let tau = MATURITY - t;
        let lo = bs_call(s, STRIKE, 0.05, SIGMA[0], tau);
        let hi = bs_call(s, STRIKE, 0.05, SIGMA[1], tau);
        let slack = 1e-5 * (1.0 + s);
        prop_assert!(phi >= lo - slack && phi <= hi + slack, "{lo} <= {phi} <= {hi}");
    }

    #[test]
    fn price_increases_with_spot((t, s, i, y) in point(), bump in 0.001..0.2f64) {
        let surface = weibull_surface();
        let a = surface.price_at(t, s, i, y).unwrap();
        let b = surface.price_at(t, s * (1.0 + bump), i, y).unwrap();
        prop_assert!(b >= a - 1e-8 * (1.0 + s), "{a} then {b}");
    }

    #[test]
    fn delta_is_a_fraction_of_a_share((t, s, i, y) in point()) {
        let psi = delta_integral(weibull_surface(), t, s, i, y).unwrap();
        prop_assert!((-1e-6..=1.0 + 1e-6).contains(&psi), "psi {psi}");
    }

    #[test]
    fn price_is_continuous_in_age((t, s, i, y) in point()) {
        prop_assume!(t > 1e-3);
        let surface = weibull_surface();
        let y2 = (y + 1e-6).min(t);
        let gap = (surface.price_at(t, s, i, y).unwrap() - surface.price_at(t, s, i, y2).unwrap()).abs();
        prop_assert!(gap < 1e-4 * (1.0 + s), "gap {gap}");
    }

    #[test]
    fn survival_is_decreasing_and_rows_are_stochastic(h in hazard(), g in hazard(), y in 0.0..3.0f64, dy in 0.0..1.0f64) {
        let model = RegimeModel::new(
            vec![0.05, 0.03],
            vec![0.2, 0.3],
            vec![0.05, 0.05],
            vec![vec![None, Some(h)], vec![Some(g), None]],
        );
        for i in 0..2 {
            let a = model.survival(i, y).unwrap();
            let b = model.survival(i, y + dy).unwrap();
            prop_assert!(b <= a && b >= 0.0 && a <= 1.0);
            let row = model.transition_prob(i, y + 0.01).unwrap();
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn sojourn_draws_invert_the_conditional_survival(h in hazard(), y0 in 0.0..2.0f64, u in 0.01..1.0f64) {
        let model = RegimeModel::fully_connected(vec![0.05; 2], vec![0.2, 0.3], vec![0.05; 2], h);
        let tau = model.sample_sojourn(0, y0, u).unwrap();
        let back = model.conditional_survival(0, y0, tau).unwrap();
        prop_assert!((back - u).abs() < 1e-9 * u.max(1e-3), "{back} vs {u}");
        let longer = model.sample_sojourn(0, y0, u * 0.5).unwrap();
        prop_assert!(longer >= tau);
    }

    #[test]
    fn config_round_trips(h in hazard(), g in hazard(), r in 0.0..0.1f64, sigma in 0.05..0.8f64, strike in 1.0..500.0f64) {
        let model = RegimeModel::new(
            vec![r, 0.02],
            vec![sigma, 0.25],
            vec![0.07, 0.07],
            vec![vec![None, Some(h)], vec![Some(g), None]],
        );
        let config = ExperimentConfig::new(&model, ContractSpec::new(strike, 2.0).unwrap());
        let again = ExperimentConfig::parse(&config.to_toml().unwrap()).unwrap();
        prop_assert_eq!(again.model(), model);
        prop_assert_eq!(again.solve_key(), config.solve_key());
    }

    #[test]
    fn path_streams_are_reproducible(seed in any::<u64>(), index in any::<u64>()) {
        use rand::Rng;
        let a: [u64; 4] = path_rng(seed, index).gen();
        let b: [u64; 4] = path_rng(seed, index).gen();
        let c: [u64; 4] = path_rng(seed, index.wrapping_add(1)).gen();
        prop_assert_eq!(a, b);
        prop_assert_ne!(a, c);
    }
}
