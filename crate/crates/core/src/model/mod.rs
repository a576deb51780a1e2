//! Problem instances: one principal, `n` agents, finite horizon.
//!
//! A `ProblemSpec` bundles the discount rate, horizon, output diffusion,
//! and the catalog functions for each agent (utility, output drift,
//! terminal payoff), the principal, and the terminal-state aggregate `Z`.
//! Construction enforces structural invariants (dimensions, positive
//! rates, nonempty domains); the sampled assumption checks live in
//! [`validate`].

pub mod catalog;
mod validate;

pub use catalog::{CatalogEntry, CatalogError, Family};
pub use validate::{validate_spec, AssumptionCheck, ValidationReport};

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{what} must be positive, got {got}")]
    NonPositive { what: &'static str, got: f64 },
    #[error("agent {agent}: empty domain ({what} = {got})")]
    EmptyDomain {
        agent: usize,
        what: &'static str,
        got: f64,
    },
    #[error("dimension mismatch: {what} for {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        context: String,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
}

/// One agent: action domain `[0, a_max]`, compensation domain `[0, c_max]`,
/// utility `u(a, c_i)`, output drift `f(a)` and terminal payoff `phi(z_i)`.
#[derive(Clone, Debug)]
pub struct AgentSpec<T> {
    pub a_max: T,
    pub c_max: T,
    pub utility: CatalogEntry<T>,
    pub drift: CatalogEntry<T>,
    pub terminal: CatalogEntry<T>,
}

/// Principal payoff rate `u_P(a, c)` over all actions and compensations.
#[derive(Clone, Debug)]
pub struct PrincipalSpec<T> {
    pub utility: CatalogEntry<T>,
}

/// Terminal-state dynamics: `dZ_i = r mu_i(a, c) dt + r sigma_i . dB_Z`.
#[derive(Clone, Debug)]
pub struct ZSpec<T> {
    pub mu: Vec<CatalogEntry<T>>,
    /// n x m_z diffusion matrix (rows per agent).
    pub sigma: Vec<Vec<T>>,
    pub m_z: usize,
}

impl<T: Scalar> ZSpec<T> {
    /// Default aggregate: `mu_i = a_i`, no noise. This is the action
    /// integral the terminal payoff usually conditions on.
    pub fn action_integral(n: usize) -> Self {
        ZSpec {
            mu: (0..n).map(|i| CatalogEntry::coordinate(2 * n, i)).collect(),
            sigma: vec![vec![T::zero()]; n],
            m_z: 1,
        }
    }

    pub fn is_noiseless(&self) -> bool {
        self.sigma
            .iter()
            .all(|row| row.iter().all(|s| s.is_zero()))
    }
}

/// Full problem instance. Immutable after construction; solvers take it
/// by shared reference.
#[derive(Clone, Debug)]
pub struct ProblemSpec<T> {
    n: usize,
    m: usize,
    r: T,
    horizon: T,
    agents: Vec<AgentSpec<T>>,
    principal: PrincipalSpec<T>,
    z_spec: ZSpec<T>,
    /// n x m output diffusion; row i drives agent i's output.
    sigma: Vec<Vec<T>>,
}

impl<T: Scalar> ProblemSpec<T> {
    pub fn new(
        r: T,
        horizon: T,
        agents: Vec<AgentSpec<T>>,
        principal: PrincipalSpec<T>,
        z_spec: ZSpec<T>,
        sigma: Vec<Vec<T>>,
    ) -> Result<Self, ModelError> {
        let n = agents.len();
        if n == 0 {
            return Err(ModelError::DimensionMismatch {
                what: "agent count",
                context: "problem".into(),
                expected: 1,
                got: 0,
            });
        }
        if r <= T::zero() {
            return Err(ModelError::NonPositive {
                what: "discount rate r",
                got: r.to_f64().unwrap_or(f64::NAN),
            });
        }
        if horizon <= T::zero() {
            return Err(ModelError::NonPositive {
                what: "horizon T",
                got: horizon.to_f64().unwrap_or(f64::NAN),
            });
        }
        if sigma.len() != n {
            return Err(ModelError::DimensionMismatch {
                what: "sigma rows",
                context: "output diffusion".into(),
                expected: n,
                got: sigma.len(),
            });
        }
        let m = sigma.first().map_or(0, |row| row.len());
        if m == 0 {
            return Err(ModelError::DimensionMismatch {
                what: "sigma columns",
                context: "output diffusion".into(),
                expected: 1,
                got: 0,
            });
        }
        for (i, row) in sigma.iter().enumerate() {
            if row.len() != m {
                return Err(ModelError::DimensionMismatch {
                    what: "sigma columns",
                    context: format!("row {i}"),
                    expected: m,
                    got: row.len(),
                });
            }
        }
        for (i, agent) in agents.iter().enumerate() {
            if agent.a_max <= T::zero() {
                return Err(ModelError::EmptyDomain {
                    agent: i,
                    what: "a_max",
                    got: agent.a_max.to_f64().unwrap_or(f64::NAN),
                });
            }
            if agent.c_max < T::zero() {
                return Err(ModelError::EmptyDomain {
                    agent: i,
                    what: "c_max",
                    got: agent.c_max.to_f64().unwrap_or(f64::NAN),
                });
            }
            Self::expect_arity("agent utility", i, &agent.utility, n + 1)?;
            Self::expect_arity("agent drift", i, &agent.drift, n)?;
            Self::expect_arity("agent terminal", i, &agent.terminal, 1)?;
        }
        Self::expect_arity("principal utility", 0, &principal.utility, 2 * n)?;
        if z_spec.mu.len() != n {
            return Err(ModelError::DimensionMismatch {
                what: "z drift entries",
                context: "z spec".into(),
                expected: n,
                got: z_spec.mu.len(),
            });
        }
        for (i, mu) in z_spec.mu.iter().enumerate() {
            Self::expect_arity("z drift", i, mu, 2 * n)?;
        }
        if z_spec.sigma.len() != n
            || z_spec.sigma.iter().any(|row| row.len() != z_spec.m_z)
            || z_spec.m_z == 0
        {
            return Err(ModelError::DimensionMismatch {
                what: "z diffusion",
                context: "z spec".into(),
                expected: z_spec.m_z.max(1),
                got: z_spec.sigma.first().map_or(0, |r| r.len()),
            });
        }
        Ok(ProblemSpec {
            n,
            m,
            r,
            horizon,
            agents,
            principal,
            z_spec,
            sigma,
        })
    }

    fn expect_arity(
        what: &'static str,
        idx: usize,
        entry: &CatalogEntry<T>,
        expected: usize,
    ) -> Result<(), ModelError> {
        if entry.arity() != expected {
            return Err(ModelError::DimensionMismatch {
                what,
                context: format!("index {idx}"),
                expected,
                got: entry.arity(),
            });
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn r(&self) -> T {
        self.r
    }

    pub fn horizon(&self) -> T {
        self.horizon
    }

    pub fn agent(&self, i: usize) -> &AgentSpec<T> {
        &self.agents[i]
    }

    pub fn agents(&self) -> &[AgentSpec<T>] {
        &self.agents
    }

    pub fn principal(&self) -> &PrincipalSpec<T> {
        &self.principal
    }

    pub fn z_spec(&self) -> &ZSpec<T> {
        &self.z_spec
    }

    pub fn sigma(&self) -> &[Vec<T>] {
        &self.sigma
    }

    pub fn is_output_noiseless(&self) -> bool {
        self.sigma
            .iter()
            .all(|row| row.iter().all(|s| s.is_zero()))
    }

    /// `(sigma sigma')_{ij}` for the output diffusion.
    pub fn sigma_outer(&self, i: usize, j: usize) -> T {
        self.sigma[i]
            .iter()
            .zip(&self.sigma[j])
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
    }

    /// `(sigma_Z sigma_Z')_{ij}`.
    pub fn sigma_z_outer(&self, i: usize, j: usize) -> T {
        self.z_spec.sigma[i]
            .iter()
            .zip(&self.z_spec.sigma[j])
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
    }

    /// Agent i's utility at actions `a` and own compensation `c_i`.
    pub fn agent_utility(&self, i: usize, a: &[T], c_i: T) -> Result<T, ModelError> {
        let mut args = Vec::with_capacity(self.n + 1);
        args.extend_from_slice(a);
        args.push(c_i);
        Ok(self.agents[i].utility.value(&args)?)
    }

    /// Principal's payoff rate at `(a, c)`.
    pub fn principal_utility(&self, a: &[T], c: &[T]) -> Result<T, ModelError> {
        let mut args = Vec::with_capacity(2 * self.n);
        args.extend_from_slice(a);
        args.extend_from_slice(c);
        Ok(self.principal.utility.value(&args)?)
    }

    /// Z-drift for agent i at `(a, c)`.
    pub fn z_drift(&self, i: usize, a: &[T], c: &[T]) -> Result<T, ModelError> {
        let mut args = Vec::with_capacity(2 * self.n);
        args.extend_from_slice(a);
        args.extend_from_slice(c);
        Ok(self.z_spec.mu[i].value(&args)?)
    }
}

/// Builders for the quadratic benchmark family used throughout the tests
/// and the sample configs: `u_i = c_i - (kappa/2) a_i^2 - gamma a_i
/// sum_{j!=i} a_j`, `f_i = a_i`, principal `u_P = sum_i (a_i - c_i)`.
pub mod builders {
    use super::*;
    use crate::scalar::lit;

    pub fn linquad_utility<T: Scalar>(
        n: usize,
        i: usize,
        kappa: T,
        gamma: T,
    ) -> CatalogEntry<T> {
        let arity = n + 1;
        let mut w = vec![T::zero(); arity];
        w[n] = T::one();
        let mut q = vec![vec![T::zero(); arity]; arity];
        q[i][i] = -kappa;
        for j in 0..n {
            if j != i {
                q[i][j] = -gamma;
                q[j][i] = -gamma;
            }
        }
        CatalogEntry::new(Family::LinQuad {
            b: T::zero(),
            w,
            q,
        })
        .expect("linquad parameters are well formed")
    }

    /// `u_P = sum_i (a_i - c_i)`: output drift minus compensation.
    pub fn net_output_principal<T: Scalar>(n: usize) -> PrincipalSpec<T> {
        let mut w = vec![T::one(); 2 * n];
        for wi in w.iter_mut().skip(n) {
            *wi = -T::one();
        }
        PrincipalSpec {
            utility: CatalogEntry::new(Family::Linear { w, b: T::zero() }).unwrap(),
        }
    }

    pub fn linquad_agent<T: Scalar>(
        n: usize,
        i: usize,
        kappa: T,
        gamma: T,
        a_max: T,
        c_max: T,
        terminal: CatalogEntry<T>,
    ) -> AgentSpec<T> {
        AgentSpec {
            a_max,
            c_max,
            utility: linquad_utility(n, i, kappa, gamma),
            drift: CatalogEntry::coordinate(n, i),
            terminal,
        }
    }

    /// The symmetric n-agent quadratic benchmark with coordinate drifts,
    /// zero terminal payoff and unit domains.
    pub fn linquad_problem<T: Scalar>(
        n: usize,
        kappa: T,
        gamma: T,
        r: T,
        horizon: T,
        sigma_level: T,
    ) -> ProblemSpec<T> {
        let agents = (0..n)
            .map(|i| {
                linquad_agent(
                    n,
                    i,
                    kappa,
                    gamma,
                    T::one(),
                    T::one(),
                    CatalogEntry::zero(1),
                )
            })
            .collect();
        let sigma = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| if i == j { sigma_level } else { T::zero() })
                    .collect()
            })
            .collect();
        ProblemSpec::new(
            r,
            horizon,
            agents,
            net_output_principal(n),
            ZSpec::action_integral(n),
            sigma,
        )
        .expect("benchmark problem is structurally valid")
    }

    /// Two-agent benchmark at the spec's default coupling.
    pub fn linquad_two_agent<T: Scalar>(gamma: T) -> ProblemSpec<T> {
        linquad_problem(2, T::one(), gamma, lit(0.1), T::one(), lit(0.2))
    }
}

#[cfg(test)]
mod tests {
    use super::builders::*;
    use super::*;

    #[test]
    fn structural_errors_are_reported() {
        let bad_r = ProblemSpec::new(
            0.0,
            1.0,
            vec![linquad_agent(
                1,
                0,
                1.0,
                0.0,
                1.0,
                1.0,
                CatalogEntry::zero(1),
            )],
            net_output_principal(1),
            ZSpec::action_integral(1),
            vec![vec![0.1]],
        );
        assert!(matches!(bad_r, Err(ModelError::NonPositive { .. })));

        let bad_sigma = ProblemSpec::new(
            0.1,
            1.0,
            vec![linquad_agent(
                1,
                0,
                1.0,
                0.0,
                1.0,
                1.0,
                CatalogEntry::zero(1),
            )],
            net_output_principal(1),
            ZSpec::action_integral(1),
            vec![vec![0.1], vec![0.2]],
        );
        assert!(matches!(
            bad_sigma,
            Err(ModelError::DimensionMismatch { .. })
        ));

        let empty_domain = ProblemSpec::new(
            0.1,
            1.0,
            vec![linquad_agent(
                1,
                0,
                1.0,
                0.0,
                0.0,
                1.0,
                CatalogEntry::zero(1),
            )],
            net_output_principal(1),
            ZSpec::action_integral(1),
            vec![vec![0.1]],
        );
        assert!(matches!(empty_domain, Err(ModelError::EmptyDomain { .. })));
    }

    #[test]
    fn benchmark_builders_are_consistent() {
        let spec = linquad_two_agent(0.2f64);
        assert_eq!(spec.n(), 2);
        assert_eq!(spec.m(), 2);
        assert_eq!(spec.sigma_outer(0, 0), 0.2 * 0.2);
        assert_eq!(spec.sigma_outer(0, 1), 0.0);
        // u_1 at a = (0.5, 0.5), c_1 = 1, gamma = 0.2:
        // 1 - 0.125 - 0.2 * 0.25 = 0.825
        let u = spec.agent_utility(0, &[0.5, 0.5], 1.0).unwrap();
        assert!((u - 0.825).abs() < 1e-15);
        // principal nets output minus pay
        let up = spec.principal_utility(&[0.5, 0.5], &[0.2, 0.3]).unwrap();
        assert!((up - 0.5).abs() < 1e-15);
    }
}
