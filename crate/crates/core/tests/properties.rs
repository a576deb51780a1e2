//! Property suites for the model and equilibrium invariants.

mod common;

use agency::equilibrium::{
    best_response, g_eval, nash_solve, verify_nash, IncentiveState, NashConfig,
};
use agency::model::builders::{linquad_problem, linquad_utility};
use agency::model::{CatalogEntry, Family};
use proptest::prelude::*;

proptest! {
    /// Analytic gradients and Hessians of the quadratic and CARA
    /// families agree with central differences at random points.
    #[test]
    fn catalog_derivatives_match_finite_differences(
        kappa in 0.2f64..3.0,
        gamma in 0.0f64..0.5,
        alpha in 0.3f64..2.0,
        rho in 0.2f64..2.0,
        x0 in 0.05f64..0.95,
        x1 in 0.05f64..0.95,
        c in 0.05f64..0.95,
    ) {
        let entries: Vec<CatalogEntry<f64>> = vec![
            linquad_utility(2, 0, kappa, gamma),
            CatalogEntry::new(Family::ExpCara {
                alpha,
                rho,
                w: vec![-0.7, -0.3, 1.0],
                b: 0.0,
            }).unwrap(),
        ];
        let x = [x0, x1, c];
        let h = 1e-5;
        for entry in &entries {
            let g = entry.grad(&x).unwrap();
            for k in 0..3 {
                let mut xp = x; xp[k] += h;
                let mut xm = x; xm[k] -= h;
                let fd = (entry.value(&xp).unwrap() - entry.value(&xm).unwrap()) / (2.0 * h);
                prop_assert!((g[k] - fd).abs() / g[k].abs().max(1.0) <= 1e-6);
            }
        }
    }

    /// The best-response ratio g is nondecreasing on the action domain
    /// for admissible quadratic instances (the monotonicity every solver
    /// step relies on).
    #[test]
    fn g_is_monotone_for_admissible_instances(
        kappa in 0.2f64..3.0,
        gamma in 0.0f64..0.5,
        a_other in 0.0f64..1.0,
        c in 0.0f64..1.0,
    ) {
        let spec = linquad_problem(2, kappa, gamma, 0.1, 1.0, 0.2);
        let a = [0.0, a_other];
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=60 {
            let x = k as f64 / 60.0;
            let g = g_eval(&spec, 0, &a, c, x).unwrap();
            prop_assert!(g >= prev - 1e-12);
            prev = g;
        }
    }

    /// The root found by best_response maximizes the stage objective
    /// against a dense scan.
    #[test]
    fn best_response_dominates_grid_scan(
        kappa in 0.4f64..2.0,
        gamma in 0.0f64..0.4,
        a_other in 0.0f64..1.0,
        y in 0.0f64..1.2,
        c in 0.2f64..1.0,
    ) {
        let spec = linquad_problem(2, kappa, gamma, 0.1, 1.0, 0.2);
        let a = [0.0, a_other];
        let x_star = best_response(&spec, 0, &a, c, y).unwrap();
        let objective = |x: f64| {
            let acts = [x, a_other];
            y * x + spec.agent_utility(0, &acts, c).unwrap()
        };
        let best = objective(x_star);
        for k in 0..=400 {
            let x = k as f64 / 400.0;
            prop_assert!(objective(x) <= best + 1e-8);
        }
    }

    /// Fixed points returned by nash_solve carry their certificates:
    /// consistency with best responses, no profitable deviation, and
    /// nonnegative utility.
    #[test]
    fn nash_certificates_hold_on_random_games(
        kappa in 0.5f64..2.0,
        gamma in 0.0f64..0.4,
        y0 in 0.0f64..0.8,
        y1 in 0.0f64..0.8,
    ) {
        let spec = linquad_problem(2, kappa, gamma, 0.1, 1.0, 0.2);
        let inc = IncentiveState::new(vec![y0, y1], vec![1.0, 1.0]);
        let result = nash_solve(&spec, &inc, &NashConfig::default()).unwrap();
        for a in &result.equilibria {
            for i in 0..2 {
                let b = best_response(&spec, i, a, inc.c[i], inc.y[i]).unwrap();
                prop_assert!((a[i] - b).abs() <= 1e-10);
                prop_assert!(spec.agent_utility(i, a, inc.c[i]).unwrap() >= -1e-9);
            }
            let gains = verify_nash(&spec, a, &inc, 201).unwrap();
            prop_assert!(gains.iter().all(|&g| g <= 1e-6));
        }
    }

    /// Decoupled games collapse to per-agent best responses exactly.
    #[test]
    fn decoupled_games_reduce_exactly(
        kappa in 0.5f64..2.0,
        y0 in 0.0f64..1.0,
        y1 in 0.0f64..1.0,
    ) {
        let spec = linquad_problem(2, kappa, 0.0, 0.1, 1.0, 0.2);
        let inc = IncentiveState::new(vec![y0, y1], vec![1.0, 1.0]);
        let result = nash_solve(&spec, &inc, &NashConfig::default()).unwrap();
        let a = result.selected_actions();
        for i in 0..2 {
            let b = best_response(&spec, i, a, inc.c[i], inc.y[i]).unwrap();
            prop_assert_eq!(a[i], b);
        }
    }
}

/// The discounted constant-utility payoff matches its closed form to
/// first order in dt, across discount rates and horizons.
#[test]
fn constant_utility_payoff_matches_closed_form_across_rates() {
    use agency::dynamics::{payoff_estimates, simulate_batch, ConstantPolicy, SimConfig};
    for (r, horizon) in [(0.05, 1.0), (0.1, 2.0), (0.5, 0.5), (1.0, 1.0)] {
        let spec = common::bench_n1(1.0, 0.0, r, horizon);
        let policy = ConstantPolicy::with_actions(
            IncentiveState::new(vec![0.0], vec![1.0]),
            vec![0.0],
        );
        let dt = horizon / 800.0;
        let cfg = SimConfig {
            n_paths: 1,
            dt,
            seed: 1,
            keep_paths: 0,
            ..SimConfig::default()
        };
        // Phi(z) = z with a = 0 contributes nothing: Z stays 0
        let batch = simulate_batch(&spec, &policy, &cfg, &[0.0], &[0.0]).unwrap();
        let est = payoff_estimates(&batch);
        let exact = 1.0 - (-r * horizon as f64).exp();
        let bound = r * dt; // left-rule bias is (dt/2) r (1 - e^{-rT}) at u = 1
        assert!(
            (est.agents[0].mean - exact).abs() <= bound,
            "r={r} T={horizon}: {} vs {exact}",
            est.agents[0].mean
        );
    }
}

/// The whole equilibrium pipeline runs in f32 as well; tolerances are
/// relaxed to single precision.
#[test]
fn single_precision_smoke() {
    use agency::model::builders::linquad_problem;
    let spec = linquad_problem::<f32>(2, 1.0, 0.2, 0.1, 1.0, 0.2);
    let inc = IncentiveState::new(vec![0.5f32, 0.5], vec![0.5, 0.5]);
    let cfg = NashConfig {
        fp_tol: 1e-6,
        dev_tol: 1e-3,
        ..NashConfig::default()
    };
    let result = nash_solve(&spec, &inc, &cfg).unwrap();
    let a = result.selected_actions();
    assert!((a[0] - 0.41666667f32).abs() < 1e-4);
    assert!((a[1] - 0.41666667f32).abs() < 1e-4);
}
