//! Static Nash equilibria of the agents' stage game.
//!
//! For incentives `(y, c)` agent i solves
//! `max_x  y_i f_i(a_-i, x) + u_i(a_-i, x, c_i)` over `[0, a_max_i]`.
//! Under the model assumptions the ratio
//! `g_i(x) = -du_i/da_i / df_i/da_i` is nondecreasing in `x`, so the
//! best response is the (clamped) solution of `g_i(x) = y_i` and a Nash
//! equilibrium is a fixed point of the joint best-response map. The
//! solver runs damped fixed-point iteration from several low-discrepancy
//! starts, deduplicates, and certifies every candidate by a deviation
//! audit plus the nonnegative-utility property equilibria must satisfy.

use thiserror::Error;

use crate::model::{CatalogError, ModelError, ProblemSpec};
use crate::sampling::{corners, Halton};
use crate::scalar::{lit, Scalar};

/// Default number of sample points when extremizing the incentive bounds.
const BOUNDS_SAMPLES: usize = 128;
const BOUNDS_SEED: u64 = 0x5942_4E44; // "YBND"

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EquilibriumError {
    #[error("agent {agent}: |df/da| = {slope} below floor at x = {x} (drift slope must stay away from zero)")]
    DerivativeFloor { agent: usize, x: f64, slope: f64 },
    #[error("agent {agent}: g is decreasing on the action domain (monotone best-response premise violated)")]
    NonMonotone { agent: usize },
    #[error("agent {agent}: empty incentive interval (beta = {beta} >= gamma = {gamma}); action domain too small")]
    EmptyInterval {
        agent: usize,
        beta: f64,
        gamma: f64,
    },
    #[error("incentive vector length {got}, expected {expected}")]
    BadIncentiveLength { expected: usize, got: usize },
    #[error("no start converged within {max_iter} iterations (best residual {best_residual})")]
    NoConvergence { max_iter: usize, best_residual: f64 },
    #[error("fixed points found but none certified (best deviation gain {best_gain})")]
    NoCertifiedEquilibrium { best_gain: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
}

/// The principal's per-time controls offered to the agents.
#[derive(Clone, Debug, PartialEq)]
pub struct IncentiveState<T> {
    /// Continuation-value sensitivities, one per agent.
    pub y: Vec<T>,
    /// Compensation rates, one per agent.
    pub c: Vec<T>,
}

impl<T: Scalar> IncentiveState<T> {
    pub fn new(y: Vec<T>, c: Vec<T>) -> Self {
        IncentiveState { y, c }
    }
}

/// Per-agent incentive interval `[beta_i, gamma_i]`; the product set is
/// the admissible sensitivity region.
#[derive(Clone, Debug, PartialEq)]
pub struct YBounds<T> {
    pub beta: Vec<T>,
    pub gamma: Vec<T>,
}

impl<T: Scalar> YBounds<T> {
    pub fn clamp(&self, y: &mut [T]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = yi.max(self.beta[i]).min(self.gamma[i]);
        }
    }
}

/// Certified equilibria for one incentive state.
#[derive(Clone, Debug)]
pub struct EquilibriumResult<T> {
    /// Distinct certified action profiles, in discovery (start-index) order.
    pub equilibria: Vec<Vec<T>>,
    /// Max fixed-point residual per profile.
    pub residuals: Vec<T>,
    /// Per-profile, per-agent maximal gain from unilateral deviation.
    pub deviation_gains: Vec<Vec<T>>,
    /// Index of the profile preferred under the selection score.
    pub selected: usize,
    /// True when two or more distinct certified equilibria survive.
    pub multiplicity: bool,
}

impl<T: Scalar> EquilibriumResult<T> {
    pub fn selected_actions(&self) -> &[T] {
        &self.equilibria[self.selected]
    }
}

/// Solver knobs. The defaults are the contract: tests pin them.
#[derive(Clone, Debug)]
pub struct NashConfig {
    pub starts: usize,
    pub damping: f64,
    pub fp_tol: f64,
    pub dev_tol: f64,
    pub max_iter: usize,
    pub dedup_tol: f64,
    pub verify_grid_points: usize,
    pub seed: u64,
}

impl Default for NashConfig {
    fn default() -> Self {
        NashConfig {
            starts: 8,
            damping: 0.5,
            fp_tol: 1e-10,
            dev_tol: 1e-6,
            max_iter: 10_000,
            dedup_tol: 1e-8,
            verify_grid_points: 201,
            seed: 0x4E41_5348, // "NASH"
        }
    }
}

/// Scratch for repeated objective and derivative evaluations of one
/// agent: the argument vectors are built once and mutated in place.
struct AgentEval<'a, T> {
    spec: &'a ProblemSpec<T>,
    i: usize,
    /// `[a_1 .. a_n, c_i]`, own entry mutated per evaluation.
    u_args: Vec<T>,
    /// `[a_1 .. a_n]`, own entry mutated per evaluation.
    f_args: Vec<T>,
    y_i: T,
}

impl<'a, T: Scalar> AgentEval<'a, T> {
    fn new(spec: &'a ProblemSpec<T>, i: usize, a: &[T], c_i: T, y_i: T) -> Self {
        let mut u_args = Vec::with_capacity(spec.n() + 1);
        u_args.extend_from_slice(a);
        u_args.push(c_i);
        AgentEval {
            spec,
            i,
            u_args,
            f_args: a.to_vec(),
            y_i,
        }
    }

    fn set_own(&mut self, x: T) {
        self.u_args[self.i] = x;
        self.f_args[self.i] = x;
    }

    /// `y_i f_i + u_i` at own action `x`.
    fn objective(&mut self, x: T) -> Result<T, EquilibriumError> {
        self.set_own(x);
        let f = self.spec.agent(self.i).drift.value(&self.f_args)?;
        let u = self.spec.agent(self.i).utility.value(&self.u_args)?;
        Ok(self.y_i * f + u)
    }

    /// `g_i(x) = -u'/f'`, with the derivative-floor guard.
    fn g(&mut self, x: T) -> Result<T, EquilibriumError> {
        self.set_own(x);
        let du = self.spec.agent(self.i).utility.partial(&self.u_args, self.i)?;
        let df = self.spec.agent(self.i).drift.partial(&self.f_args, self.i)?;
        if df.abs() < lit(1e-10) {
            return Err(EquilibriumError::DerivativeFloor {
                agent: self.i,
                x: x.to_f64().unwrap_or(f64::NAN),
                slope: df.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(-du / df)
    }

    /// `g_i'(x)` from the analytic second partials (used by the Newton
    /// polish; infinities fall back to bisection).
    fn g_slope(&mut self, x: T) -> Result<T, EquilibriumError> {
        self.set_own(x);
        let agent = self.spec.agent(self.i);
        let du = agent.utility.partial(&self.u_args, self.i)?;
        let duu = agent.utility.second_partial(&self.u_args, self.i, self.i)?;
        let df = agent.drift.partial(&self.f_args, self.i)?;
        let dff = agent.drift.second_partial(&self.f_args, self.i, self.i)?;
        Ok(-(duu * df - du * dff) / (df * df))
    }
}

/// `g_i` at own action `x`, the other entries of `a` fixed (`a[i]` is
/// ignored). The best response solves `g_i = y_i` on the action domain.
pub fn g_eval<T: Scalar>(
    spec: &ProblemSpec<T>,
    i: usize,
    a: &[T],
    c_i: T,
    x: T,
) -> Result<T, EquilibriumError> {
    AgentEval::new(spec, i, a, c_i, T::zero()).g(x)
}

/// Incentive interval `[beta_i, gamma_i]` for agent `i`, extremized over
/// low-discrepancy samples plus the corners of the opponents' action box
/// and the compensation interval. The unbounded-domain limits are
/// replaced by the action-domain endpoints.
pub fn y_bounds<T: Scalar>(
    spec: &ProblemSpec<T>,
    i: usize,
) -> Result<(T, T), EquilibriumError> {
    y_bounds_sampled(spec, i, BOUNDS_SAMPLES, BOUNDS_SEED)
}

pub fn y_bounds_sampled<T: Scalar>(
    spec: &ProblemSpec<T>,
    i: usize,
    samples: usize,
    seed: u64,
) -> Result<(T, T), EquilibriumError> {
    let n = spec.n();
    let a_max_i = spec.agent(i).a_max;
    // box over (a_j for j != i, c_i)
    let mut lo = vec![T::zero(); n];
    let mut hi: Vec<T> = spec
        .agents()
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, ag)| ag.a_max)
        .collect();
    hi.push(spec.agent(i).c_max);
    lo.truncate(hi.len());

    let sampler = Halton::new(hi.len(), seed ^ ((i as u64) << 16));
    let mut points: Vec<Vec<T>> = (0..samples as u64)
        .map(|k| sampler.point_in_box(k, &lo, &hi))
        .collect();
    if hi.len() <= 12 {
        points.extend(corners(&lo, &hi));
    }

    let mut beta = T::zero();
    let mut gamma = T::infinity();
    for p in &points {
        let mut a = vec![T::zero(); n];
        let mut idx = 0;
        for (j, slot) in a.iter_mut().enumerate() {
            if j != i {
                *slot = p[idx];
                idx += 1;
            }
        }
        let c_i = p[idx];
        let mut eval = AgentEval::new(spec, i, &a, c_i, T::zero());
        beta = beta.max(eval.g(T::zero())?);
        gamma = gamma.min(eval.g(a_max_i)?);
    }
    if beta >= gamma {
        return Err(EquilibriumError::EmptyInterval {
            agent: i,
            beta: beta.to_f64().unwrap_or(f64::NAN),
            gamma: gamma.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok((beta, gamma))
}

/// Bounds for all agents.
pub fn y_bounds_all<T: Scalar>(spec: &ProblemSpec<T>) -> Result<YBounds<T>, EquilibriumError> {
    let mut beta = Vec::with_capacity(spec.n());
    let mut gamma = Vec::with_capacity(spec.n());
    for i in 0..spec.n() {
        let (b, g) = y_bounds(spec, i)?;
        beta.push(b);
        gamma.push(g);
    }
    Ok(YBounds { beta, gamma })
}

/// Agent `i`'s best response to `a` (own entry ignored) under `(c_i,
/// y_i)`: the clamped solution of the monotone equation `g_i(x) = y_i`,
/// found by bracketing with a safeguarded Newton/bisection hybrid.
pub fn best_response<T: Scalar>(
    spec: &ProblemSpec<T>,
    i: usize,
    a: &[T],
    c_i: T,
    y_i: T,
) -> Result<T, EquilibriumError> {
    let mut eval = AgentEval::new(spec, i, a, c_i, y_i);
    best_response_inner(&mut eval, spec.agent(i).a_max, y_i)
}

fn best_response_inner<T: Scalar>(
    eval: &mut AgentEval<'_, T>,
    a_max: T,
    y_i: T,
) -> Result<T, EquilibriumError> {
    let g_lo = eval.g(T::zero())?;
    let g_hi = eval.g(a_max)?;
    let span_tol = lit::<T>(1e-9) * (T::one() + g_lo.abs().max(g_hi.abs()));
    if g_lo > g_hi + span_tol {
        return Err(EquilibriumError::NonMonotone { agent: eval.i });
    }
    // clamped first-order condition at the endpoints
    if g_lo >= y_i {
        return Ok(T::zero());
    }
    if g_hi <= y_i {
        return Ok(a_max);
    }

    let mut lo = T::zero();
    let mut hi = a_max;
    let mut x = (lo + hi) * lit(0.5);
    let x_tol = lit::<T>(1e-15) * a_max.max(T::one());
    for _ in 0..200 {
        let gx = eval.g(x)?;
        if gx < g_lo - span_tol || gx > g_hi + span_tol {
            return Err(EquilibriumError::NonMonotone { agent: eval.i });
        }
        let diff = gx - y_i;
        if diff.abs() <= lit::<T>(1e-13) * (T::one() + y_i.abs()) {
            return Ok(x);
        }
        if diff > T::zero() {
            hi = x;
        } else {
            lo = x;
        }
        if hi - lo <= x_tol {
            break;
        }
        // Newton step when it stays inside the bracket, bisection otherwise
        let slope = eval.g_slope(x)?;
        let mut next = if slope.is_finite() && slope > T::zero() {
            x - diff / slope
        } else {
            T::nan()
        };
        if !(next > lo && next < hi) {
            next = (lo + hi) * lit(0.5);
        }
        x = next;
    }
    Ok((lo + hi) * lit(0.5))
}

/// Maximal gain each agent can obtain by unilateral deviation from `a`:
/// dense scan of the own-action domain followed by golden-section
/// refinement around the best grid point. Pure audit; gains at or below
/// the certification tolerance mean `a` is a Nash equilibrium.
pub fn verify_nash<T: Scalar>(
    spec: &ProblemSpec<T>,
    a: &[T],
    inc: &IncentiveState<T>,
    grid_points: usize,
) -> Result<Vec<T>, EquilibriumError> {
    let n = spec.n();
    let mut gains = Vec::with_capacity(n);
    for i in 0..n {
        let mut eval = AgentEval::new(spec, i, a, inc.c[i], inc.y[i]);
        let a_max = spec.agent(i).a_max;
        let pts = grid_points.max(3);
        let step = a_max / lit(pts as f64 - 1.0);
        let mut best_x = T::zero();
        let mut best_v = T::neg_infinity();
        for k in 0..pts {
            let x = (lit::<T>(k as f64) * step).min(a_max);
            let v = eval.objective(x)?;
            if v > best_v {
                best_v = v;
                best_x = x;
            }
        }
        // golden-section refinement on the bracketing cell pair
        let phi = lit::<T>(0.618_033_988_749_894_9);
        let mut lo = (best_x - step).max(T::zero());
        let mut hi = (best_x + step).min(a_max);
        let mut x1 = hi - phi * (hi - lo);
        let mut x2 = lo + phi * (hi - lo);
        let mut f1 = eval.objective(x1)?;
        let mut f2 = eval.objective(x2)?;
        for _ in 0..80 {
            if f1 < f2 {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + phi * (hi - lo);
                f2 = eval.objective(x2)?;
            } else {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - phi * (hi - lo);
                f1 = eval.objective(x1)?;
            }
            if best_v < f1.max(f2) {
                best_v = f1.max(f2);
            }
        }
        let at_a = eval.objective(a[i])?;
        gains.push(best_v - at_a);
    }
    Ok(gains)
}

/// Nash solve with the default selection score (principal's payoff rate).
pub fn nash_solve<T: Scalar>(
    spec: &ProblemSpec<T>,
    inc: &IncentiveState<T>,
    cfg: &NashConfig,
) -> Result<EquilibriumResult<T>, EquilibriumError> {
    nash_solve_scored(spec, inc, cfg, |actions| {
        spec.principal_utility(actions, &inc.c)
            .map_err(EquilibriumError::Model)
    })
}

/// Nash solve with a caller-supplied selection score over action
/// profiles; the highest-scoring certified equilibrium is `selected`.
pub fn nash_solve_scored<T, S>(
    spec: &ProblemSpec<T>,
    inc: &IncentiveState<T>,
    cfg: &NashConfig,
    score: S,
) -> Result<EquilibriumResult<T>, EquilibriumError>
where
    T: Scalar,
    S: Fn(&[T]) -> Result<T, EquilibriumError>,
{
    let n = spec.n();
    if inc.y.len() != n {
        return Err(EquilibriumError::BadIncentiveLength {
            expected: n,
            got: inc.y.len(),
        });
    }
    if inc.c.len() != n {
        return Err(EquilibriumError::BadIncentiveLength {
            expected: n,
            got: inc.c.len(),
        });
    }

    let fp_tol = lit::<T>(cfg.fp_tol);
    let lambda = lit::<T>(cfg.damping);
    let lo = vec![T::zero(); n];
    let hi: Vec<T> = spec.agents().iter().map(|ag| ag.a_max).collect();

    // single agent: the fixed point is the best response itself
    if n == 1 {
        let a = vec![best_response(spec, 0, &[T::zero()], inc.c[0], inc.y[0])?];
        return certify(spec, inc, cfg, vec![(a, T::zero())], score);
    }

    let sampler = Halton::new(n, cfg.seed);
    let mut converged: Vec<(Vec<T>, T)> = Vec::new();
    let mut best_residual = T::infinity();
    let mut responses = vec![T::zero(); n];

    for s in 0..cfg.starts as u64 {
        let mut a = sampler.point_in_box(s, &lo, &hi);
        for _ in 0..cfg.max_iter {
            let mut residual = T::zero();
            for i in 0..n {
                responses[i] = best_response(spec, i, &a, inc.c[i], inc.y[i])?;
                residual = residual.max((responses[i] - a[i]).abs());
            }
            best_residual = best_residual.min(residual);
            if residual <= fp_tol {
                // undamped polish: exact for decoupled games, and never
                // accepted if it degrades the residual
                let polished = responses.clone();
                let mut polished_res = T::zero();
                for i in 0..n {
                    let b = best_response(spec, i, &polished, inc.c[i], inc.y[i])?;
                    polished_res = polished_res.max((b - polished[i]).abs());
                }
                if polished_res <= residual {
                    converged.push((polished, polished_res));
                } else {
                    converged.push((a.clone(), residual));
                }
                break;
            }
            for i in 0..n {
                a[i] = (T::one() - lambda) * a[i] + lambda * responses[i];
            }
        }
    }

    if converged.is_empty() {
        return Err(EquilibriumError::NoConvergence {
            max_iter: cfg.max_iter,
            best_residual: best_residual.to_f64().unwrap_or(f64::NAN),
        });
    }
    certify(spec, inc, cfg, converged, score)
}

fn certify<T, S>(
    spec: &ProblemSpec<T>,
    inc: &IncentiveState<T>,
    cfg: &NashConfig,
    candidates: Vec<(Vec<T>, T)>,
    score: S,
) -> Result<EquilibriumResult<T>, EquilibriumError>
where
    T: Scalar,
    S: Fn(&[T]) -> Result<T, EquilibriumError>,
{
    let dedup = lit::<T>(cfg.dedup_tol);
    let dev_tol = lit::<T>(cfg.dev_tol);
    let util_floor = lit::<T>(-1e-9);

    let mut distinct: Vec<(Vec<T>, T)> = Vec::new();
    for (a, res) in candidates {
        let dup = distinct.iter().any(|(b, _)| {
            a.iter()
                .zip(b)
                .fold(T::zero(), |m, (&x, &y)| m.max((x - y).abs()))
                < dedup
        });
        if !dup {
            distinct.push((a, res));
        }
    }

    let mut equilibria = Vec::new();
    let mut residuals = Vec::new();
    let mut gains_out = Vec::new();
    let mut best_gain = T::infinity();
    for (a, res) in distinct {
        let gains = verify_nash(spec, &a, inc, cfg.verify_grid_points)?;
        let max_gain = gains.iter().fold(T::zero(), |m, &g| m.max(g));
        best_gain = best_gain.min(max_gain);
        if max_gain > dev_tol || res > lit(cfg.fp_tol) {
            continue;
        }
        // equilibria give every agent nonnegative utility
        let mut utility_ok = true;
        for i in 0..spec.n() {
            if spec.agent_utility(i, &a, inc.c[i])? < util_floor {
                utility_ok = false;
                break;
            }
        }
        if !utility_ok {
            continue;
        }
        equilibria.push(a);
        residuals.push(res);
        gains_out.push(gains);
    }

    if equilibria.is_empty() {
        return Err(EquilibriumError::NoCertifiedEquilibrium {
            best_gain: best_gain.to_f64().unwrap_or(f64::NAN),
        });
    }

    let mut selected = 0;
    let mut best_score = score(&equilibria[0])?;
    for (k, a) in equilibria.iter().enumerate().skip(1) {
        let s = score(a)?;
        if s > best_score {
            best_score = s;
            selected = k;
        }
    }
    let multiplicity = equilibria.len() >= 2;
    Ok(EquilibriumResult {
        equilibria,
        residuals,
        deviation_gains: gains_out,
        selected,
        multiplicity,
    })
}
