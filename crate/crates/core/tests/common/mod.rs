//! Shared fixtures for the integration suites.

use agency::equilibrium::y_bounds_all;
use agency::hjb::Grid;
use agency::model::builders::{linquad_agent, net_output_principal};
use agency::model::{CatalogEntry, Family, PrincipalSpec, ProblemSpec, ZSpec};
use agency::rng::CounterRng;

/// n = 1 quadratic benchmark with identity terminal payoff and the
/// net-output principal; the workhorse for the PDE criteria.
pub fn bench_n1(kappa: f64, sigma: f64, r: f64, horizon: f64) -> ProblemSpec<f64> {
    let agents = vec![linquad_agent(
        1,
        0,
        kappa,
        0.0,
        1.0,
        1.0,
        CatalogEntry::coordinate(1, 0),
    )];
    ProblemSpec::new(
        r,
        horizon,
        agents,
        net_output_principal(1),
        ZSpec::action_integral(1),
        vec![vec![sigma]],
    )
    .unwrap()
}

/// Zero problem: u_P = 0, Phi = 0.
pub fn zero_problem(sigma: f64) -> ProblemSpec<f64> {
    let agents = vec![linquad_agent(1, 0, 1.0, 0.0, 1.0, 1.0, CatalogEntry::zero(1))];
    ProblemSpec::new(
        0.1,
        1.0,
        agents,
        PrincipalSpec {
            utility: CatalogEntry::zero(2),
        },
        ZSpec::action_integral(1),
        vec![vec![sigma]],
    )
    .unwrap()
}

/// Regular n = 1 grid with enough time steps for the CFL bound.
pub fn stable_grid_n1(
    spec: &ProblemSpec<f64>,
    w_max: f64,
    w_points: usize,
    z_max: f64,
    z_points: usize,
    min_steps: usize,
) -> Grid<f64> {
    let probe = Grid::regular(spec, 1, &[w_max], w_points, &[(0.0, z_max)], z_points).unwrap();
    let bounds = y_bounds_all(spec).unwrap();
    let dt_max = probe.max_stable_dt(spec, &bounds).unwrap();
    let steps = ((spec.horizon() / dt_max).ceil() as usize).max(min_steps);
    Grid::regular(spec, steps, &[w_max], w_points, &[(0.0, z_max)], z_points).unwrap()
}

/// Randomized catalog instance `k`: mixes one- and two-agent quadratic
/// games with CARA utilities. Parameters stay inside the admissible
/// region the assumption checks accept.
pub fn random_instance(k: u64) -> ProblemSpec<f64> {
    let rng = CounterRng::new(0x5EED ^ k);
    let u = |j: u64| rng.uniform::<f64>(k, 0, j);
    match k % 3 {
        0 => {
            // coupled two-agent quadratic
            let kappa = 0.5 + 1.5 * u(0);
            let gamma = 0.4 * u(1);
            agency::model::builders::linquad_problem(2, kappa, gamma, 0.1, 1.0, 0.2)
        }
        1 => {
            // single-agent quadratic with varying curvature
            let kappa = 0.5 + 1.5 * u(0);
            agency::model::builders::linquad_problem(1, kappa, 0.0, 0.1, 1.0, 0.2)
        }
        _ => {
            // CARA: u = alpha (1 - exp(-rho (c - theta a))) / rho, f = a
            let alpha = 0.5 + 1.5 * u(0);
            let rho = 0.3 + 1.2 * u(1);
            let theta = 0.4 + 0.8 * u(2);
            let c_max = 0.4 * theta;
            let agent = agency::model::AgentSpec {
                a_max: 1.0,
                c_max,
                utility: CatalogEntry::new(Family::ExpCara {
                    alpha,
                    rho,
                    w: vec![-theta, 1.0],
                    b: 0.0,
                })
                .unwrap(),
                drift: CatalogEntry::coordinate(1, 0),
                terminal: CatalogEntry::zero(1),
            };
            ProblemSpec::new(
                0.1,
                1.0,
                vec![agent],
                net_output_principal(1),
                ZSpec::action_integral(1),
                vec![vec![0.2]],
            )
            .unwrap()
        }
    }
}
