//! Sampled validation of the model assumptions.
//!
//! The equilibrium and PDE solvers rely on monotone/concave structure:
//! each assumption is checked numerically at quasi-random points of the
//! action and compensation domains (tolerance 1e-9 on inequality
//! violations), with a witness point recorded on failure. Unbounded-action
//! growth conditions are replaced by the compact domains themselves; that
//! replacement is what check 5 records.

use crate::sampling::{corners, Halton};
use crate::scalar::{lit, Scalar};

use super::{ModelError, ProblemSpec};

const INEQ_TOL: f64 = 1e-9;
const DERIV_FLOOR: f64 = 1e-10;

/// A sample point at which an inequality failed, with the offending value.
#[derive(Clone, Debug)]
pub struct Witness<T> {
    pub agent: usize,
    pub point: Vec<T>,
    pub value: T,
}

#[derive(Clone, Debug)]
pub struct AssumptionCheck<T> {
    pub id: u8,
    pub label: &'static str,
    pub pass: bool,
    pub witness: Option<Witness<T>>,
}

impl<T: Scalar> AssumptionCheck<T> {
    fn passing(id: u8, label: &'static str) -> Self {
        AssumptionCheck {
            id,
            label,
            pass: true,
            witness: None,
        }
    }

    fn record(&mut self, agent: usize, point: &[T], value: T) {
        if self.pass {
            self.pass = false;
            self.witness = Some(Witness {
                agent,
                point: point.to_vec(),
                value,
            });
        }
    }
}

#[derive(Clone, Debug)]
pub struct ValidationReport<T> {
    pub checks: Vec<AssumptionCheck<T>>,
    /// Advisory only: the coupled quadratic family fails joint concavity
    /// across all agents' actions while satisfying everything the solvers
    /// use (own-action concavity).
    pub joint_concavity_ok: bool,
    pub samples: usize,
    pub seed: u64,
}

impl<T: Scalar> ValidationReport<T> {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

impl<T: Scalar> std::fmt::Display for ValidationReport<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "assumption checks ({} samples, seed {}):",
            self.samples, self.seed
        )?;
        for c in &self.checks {
            write!(f, "  ({}) {:<44} {}", c.id, c.label, if c.pass { "pass" } else { "FAIL" })?;
            if let Some(w) = &c.witness {
                write!(f, "  agent {} at {:?} -> {}", w.agent, w.point, w.value)?;
            }
            writeln!(f)?;
        }
        if !self.joint_concavity_ok {
            writeln!(
                f,
                "  advisory: utilities are not jointly concave across agents' actions"
            )?;
        }
        Ok(())
    }
}

/// Cholesky-based positive-definiteness test of `m + tol I`; `m` must be
/// symmetric. Used as the PSD test for the joint-concavity advisory.
fn is_psd<T: Scalar>(m: &[Vec<T>], tol: T) -> bool {
    let n = m.len();
    let mut a: Vec<Vec<T>> = m.to_vec();
    for i in 0..n {
        a[i][i] = a[i][i] + tol;
    }
    for k in 0..n {
        for j in 0..k {
            let s = a[k][j];
            a[k][k] = a[k][k] - s * s;
        }
        if a[k][k] < T::zero() {
            return false;
        }
        let d = a[k][k].sqrt();
        for i in k + 1..n {
            for j in 0..k {
                let prod = a[i][j] * a[k][j];
                a[i][k] = a[i][k] - prod;
            }
            a[i][k] = if d > T::zero() { a[i][k] / d } else { T::zero() };
        }
    }
    true
}

/// Check the model assumptions at `samples` quasi-random points per agent
/// domain (plus the domain corners). Deterministic given `seed`.
pub fn validate_spec<T: Scalar>(
    spec: &ProblemSpec<T>,
    samples: usize,
    seed: u64,
) -> Result<ValidationReport<T>, ModelError> {
    let n = spec.n();
    let tol = lit::<T>(INEQ_TOL);
    let floor = lit::<T>(DERIV_FLOOR);

    let mut c1 = AssumptionCheck::passing(1, "u_i C^2, increasing in c_i, concave in a_i");
    let mut c2 = AssumptionCheck::passing(2, "f_i C^2, increasing, concave in a_i");
    let mut c3 = AssumptionCheck::passing(3, "df_i/da_i bounded away from zero");
    let mut c4 = AssumptionCheck::passing(4, "participation set nonempty (witness a = 0)");
    let c5 = AssumptionCheck::passing(5, "maximizers bounded (compact action domains)");
    let mut c6 = AssumptionCheck::passing(6, "u_i(a_-i, 0, c_i) nonnegative");
    let mut joint_ok = true;

    // Box over (a_1..a_n, c_i) for each agent's checks.
    let lo: Vec<T> = vec![T::zero(); n + 1];
    for (i, agent) in spec.agents().iter().enumerate() {
        let mut hi: Vec<T> = spec.agents().iter().map(|ag| ag.a_max).collect();
        hi.push(agent.c_max);
        let sampler = Halton::new(n + 1, seed ^ ((i as u64) << 32));
        let mut points: Vec<Vec<T>> = (0..samples as u64)
            .map(|k| sampler.point_in_box(k, &lo, &hi))
            .collect();
        if n + 1 <= 12 {
            points.extend(corners(&lo, &hi));
        }

        for p in &points {
            let (a, c_i) = (&p[..n], p[n]);
            let mut args = a.to_vec();
            args.push(c_i);

            // (1) du/dc_i >= 0, d2u/da_i^2 <= 0
            let grad_u = agent.utility.grad(&args)?;
            let hess_u = agent.utility.hessian(&args)?;
            if grad_u[n] < -tol {
                c1.record(i, p, grad_u[n]);
            }
            if hess_u[i][i] > tol {
                c1.record(i, p, hess_u[i][i]);
            }
            // advisory: joint concavity of u_i in all actions
            if joint_ok {
                let neg_a_block: Vec<Vec<T>> = (0..n)
                    .map(|r| (0..n).map(|c| -hess_u[r][c]).collect())
                    .collect();
                if !is_psd(&neg_a_block, tol) {
                    joint_ok = false;
                }
            }

            // (2) f increasing in every action, concave in own action
            let grad_f = agent.drift.grad(a)?;
            let hess_f = agent.drift.hessian(a)?;
            for (j, &g) in grad_f.iter().enumerate() {
                if g < -tol {
                    c2.record(i, p, g);
                    let _ = j;
                    break;
                }
            }
            if hess_f[i][i] > tol {
                c2.record(i, p, hess_f[i][i]);
            }

            // (3) derivative floor for the own-action drift slope
            if grad_f[i].is_finite() && grad_f[i] < floor {
                c3.record(i, p, grad_f[i]);
            }

            // (6) zero own action gives nonnegative utility
            let mut zero_own = args.clone();
            zero_own[i] = T::zero();
            let u0 = agent.utility.value(&zero_own)?;
            if u0 < -tol {
                c6.record(i, p, u0);
            }

            // (4) witnessed at the all-zero action profile
            let mut all_zero = vec![T::zero(); n + 1];
            all_zero[n] = c_i;
            let uz = agent.utility.value(&all_zero)?;
            if uz < -tol {
                c4.record(i, &all_zero, uz);
            }
        }
    }

    Ok(ValidationReport {
        checks: vec![c1, c2, c3, c4, c5, c6],
        joint_concavity_ok: joint_ok,
        samples,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builders::*;
    use crate::model::{CatalogEntry, Family, ProblemSpec, ZSpec};

    fn with_drift(drift: CatalogEntry<f64>) -> ProblemSpec<f64> {
        let mut agent = linquad_agent(1, 0, 1.0, 0.0, 1.0, 1.0, CatalogEntry::zero(1));
        agent.drift = drift;
        ProblemSpec::new(
            0.1,
            1.0,
            vec![agent],
            net_output_principal(1),
            ZSpec::action_integral(1),
            vec![vec![0.1]],
        )
        .unwrap()
    }

    #[test]
    fn coupled_linquad_passes_with_advisory_flag() {
        let spec = linquad_two_agent(0.2);
        let report = validate_spec(&spec, 64, 9).unwrap();
        assert!(report.pass(), "{report}");
        assert!(!report.joint_concavity_ok);

        let decoupled = linquad_two_agent(0.0);
        let report = validate_spec(&decoupled, 64, 9).unwrap();
        assert!(report.pass());
        assert!(report.joint_concavity_ok);
    }

    #[test]
    fn decreasing_drift_fails_assumption_two_with_witness() {
        let spec = with_drift(
            CatalogEntry::new(Family::Linear {
                w: vec![-1.0],
                b: 1.0,
            })
            .unwrap(),
        );
        let report = validate_spec(&spec, 32, 3).unwrap();
        let c2 = &report.checks[1];
        assert!(!c2.pass);
        assert!(c2.witness.is_some());
        // derivative floor also violated
        assert!(!report.checks[2].pass);
    }

    #[test]
    fn zero_compensation_cap_passes_assumption_six_with_equality() {
        let mut agent = linquad_agent(1, 0, 2.0, 0.0, 1.0, 0.0, CatalogEntry::zero(1));
        agent.c_max = 0.0;
        let spec = ProblemSpec::new(
            0.1,
            1.0,
            vec![agent],
            net_output_principal(1),
            ZSpec::action_integral(1),
            vec![vec![0.1]],
        )
        .unwrap();
        let report = validate_spec(&spec, 32, 3).unwrap();
        assert!(report.checks[5].pass, "{report}");
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = linquad_two_agent(0.4);
        let a = validate_spec(&spec, 48, 11).unwrap();
        let b = validate_spec(&spec, 48, 11).unwrap();
        assert_eq!(a.pass(), b.pass());
        assert_eq!(a.joint_concavity_ok, b.joint_concavity_ok);
        for (x, y) in a.checks.iter().zip(&b.checks) {
            assert_eq!(x.pass, y.pass);
        }
    }
}
