//! Solvers for finite-horizon continuous-time principal-multi-agent
//! incentive contracts.
//!
//! The pipeline has three legs that the modules mirror:
//!
//! * [`equilibrium`] computes the agents' static Nash equilibrium for
//!   given incentives `(y, c)` by inverting the monotone first-order
//!   condition per agent and iterating damped best responses, then
//!   certifies the result with deviation audits.
//! * [`hjb`] solves the principal's value PDE backward in time on a
//!   tensor grid over continuation values `w` and terminal-state
//!   aggregates `z`, nesting the equilibrium-constrained static
//!   maximization over `(y, c)` at every node.
//! * [`dynamics`] simulates the coupled output/continuation/terminal
//!   SDE system under a policy and estimates the payoff functionals;
//!   [`verify`] ties the three together with promise-keeping,
//!   incentive-compatibility, participation and martingale-drift audits.
//!
//! Everything is generic over the scalar type through [`scalar::Scalar`];
//! the aliases below fix `f64`, which the default tolerances assume.

pub mod dynamics;
pub mod equilibrium;
pub mod hjb;
pub mod model;
pub mod rng;
pub mod sampling;
pub mod scalar;
pub mod verify;

pub use scalar::Scalar;

/// Working precision of the concrete aliases.
pub type Real = f64;

pub type Problem = model::ProblemSpec<Real>;
pub type Incentives = equilibrium::IncentiveState<Real>;
pub type Equilibrium = equilibrium::EquilibriumResult<Real>;
pub type Batch = dynamics::SimulationBatch<Real>;
pub type Value = hjb::ValueField<Real>;
pub type Controls = hjb::PolicyField<Real>;
pub type Audit = verify::AuditReport<Real>;
