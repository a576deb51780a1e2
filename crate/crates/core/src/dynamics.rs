//! Euler-Maruyama simulation of the coupled contract system.
//!
//! Per agent i the simulator advances
//!
//! ```text
//! dX_i = f_i(a) dt            + sigma_i . dB
//! dW_i = r (W_i - u_i(a,c_i)) dt + r y_i (sigma_i . dB)
//! dZ_i = r mu_Zi(a,c) dt      + r sigma_Zi . dB_Z
//! ```
//!
//! with `B` and `B_Z` independent. Controls `(y, c)` come from a
//! [`Policy`]; actions are the certified stage-game equilibrium for those
//! controls. Draws are counter-based, so any path regenerates in
//! isolation and batches are reproducible and order-independent.

use std::collections::HashMap;
use std::io::Write;

use thiserror::Error;

use crate::equilibrium::{nash_solve, EquilibriumError, IncentiveState, NashConfig};
use crate::model::{ModelError, ProblemSpec};
use crate::rng::CounterRng;
use crate::scalar::{cast_usize, Scalar};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("n_paths must be >= 1")]
    NoPaths,
    #[error("dt must satisfy 0 < dt <= T, got {got}")]
    BadStep { got: f64 },
    #[error("initial state has length {got}, expected {expected}")]
    BadInitialState { expected: usize, got: usize },
    #[error("state became nonfinite at t = {t} (path {path})")]
    NonFinite { t: f64, path: u64 },
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Instantaneous simulation state plus the Gaussian increments to apply
/// over the next step (variance `dt` per component).
#[derive(Clone, Debug)]
pub struct PathState<T> {
    pub t: T,
    pub x: Vec<T>,
    pub w: Vec<T>,
    pub z: Vec<T>,
    pub db: Vec<T>,
    pub db_z: Vec<T>,
}

impl<T: Scalar> PathState<T> {
    pub fn start(spec: &ProblemSpec<T>, w0: &[T], z0: &[T]) -> Self {
        PathState {
            t: T::zero(),
            x: vec![T::zero(); spec.n()],
            w: w0.to_vec(),
            z: z0.to_vec(),
            db: vec![T::zero(); spec.m()],
            db_z: vec![T::zero(); spec.z_spec().m_z],
        }
    }

    fn is_finite(&self) -> bool {
        self.x.iter().all(|v| v.is_finite())
            && self.w.iter().all(|v| v.is_finite())
            && self.z.iter().all(|v| v.is_finite())
    }
}

/// Source of controls along a path. Implementations must clamp state
/// lookups to their domain rather than fail; simulated `W` can leave the
/// grid hull near boundaries.
pub trait Policy<T: Scalar> {
    /// Controls at `(t, w, z)`.
    fn incentives(&self, t: T, w: &[T], z: &[T]) -> IncentiveState<T>;

    /// Certified actions for those controls, when the policy caches them
    /// (constant policies, grid nodes). `None` means the simulator solves
    /// the stage game itself.
    fn actions(&self, t: T, w: &[T], z: &[T]) -> Option<Vec<T>> {
        let _ = (t, w, z);
        None
    }
}

/// Fixed `(y, c)` for the whole horizon, with the equilibrium solved once.
#[derive(Clone, Debug)]
pub struct ConstantPolicy<T> {
    pub inc: IncentiveState<T>,
    pub actions: Vec<T>,
}

impl<T: Scalar> ConstantPolicy<T> {
    /// Resolve the stage game once and freeze its selected equilibrium.
    pub fn solve(
        spec: &ProblemSpec<T>,
        inc: IncentiveState<T>,
        cfg: &NashConfig,
    ) -> Result<Self, EquilibriumError> {
        let actions = nash_solve(spec, &inc, cfg)?.selected_actions().to_vec();
        Ok(ConstantPolicy { inc, actions })
    }

    /// Use the given actions without solving (test harness / fault
    /// injection).
    pub fn with_actions(inc: IncentiveState<T>, actions: Vec<T>) -> Self {
        ConstantPolicy { inc, actions }
    }
}

impl<T: Scalar> Policy<T> for ConstantPolicy<T> {
    fn incentives(&self, _t: T, _w: &[T], _z: &[T]) -> IncentiveState<T> {
        self.inc.clone()
    }

    fn actions(&self, _t: T, _w: &[T], _z: &[T]) -> Option<Vec<T>> {
        Some(self.actions.clone())
    }
}

/// One Euler-Maruyama update using the increments stored in `state`.
/// The returned state's increment slots are zeroed for the caller to fill.
pub fn step<T: Scalar>(
    spec: &ProblemSpec<T>,
    state: &PathState<T>,
    inc: &IncentiveState<T>,
    a: &[T],
    dt: T,
) -> Result<PathState<T>, SimError> {
    let n = spec.n();
    let r = spec.r();
    let mut next = PathState {
        t: state.t + dt,
        x: Vec::with_capacity(n),
        w: Vec::with_capacity(n),
        z: Vec::with_capacity(n),
        db: vec![T::zero(); spec.m()],
        db_z: vec![T::zero(); spec.z_spec().m_z],
    };
    for i in 0..n {
        let noise = spec.sigma()[i]
            .iter()
            .zip(&state.db)
            .fold(T::zero(), |acc, (&s, &b)| acc + s * b);
        let f = spec.agent(i).drift.value(a).map_err(ModelError::from)?;
        next.x.push(state.x[i] + f * dt + noise);

        let u = spec.agent_utility(i, a, inc.c[i])?;
        next.w
            .push(state.w[i] + r * (state.w[i] - u) * dt + r * inc.y[i] * noise);

        let mu_z = spec.z_drift(i, a, &inc.c)?;
        let z_noise = spec.z_spec().sigma[i]
            .iter()
            .zip(&state.db_z)
            .fold(T::zero(), |acc, (&s, &b)| acc + s * b);
        next.z.push(state.z[i] + r * mu_z * dt + r * z_noise);
    }
    if !next.is_finite() {
        return Err(SimError::NonFinite {
            t: next.t.to_f64().unwrap_or(f64::NAN),
            path: u64::MAX,
        });
    }
    Ok(next)
}

/// Full record of one simulated path: state at each step start, the
/// controls applied over the step, and the terminal state (with the last
/// controls repeated).
#[derive(Clone, Debug)]
pub struct PathRecord<T> {
    pub n: usize,
    pub t: Vec<T>,
    pub x: Vec<T>,
    pub w: Vec<T>,
    pub z: Vec<T>,
    pub a: Vec<T>,
    pub c: Vec<T>,
    pub y: Vec<T>,
}

impl<T: Scalar> PathRecord<T> {
    fn with_capacity(n: usize, steps: usize) -> Self {
        let cap = (steps + 1) * n;
        PathRecord {
            n,
            t: Vec::with_capacity(steps + 1),
            x: Vec::with_capacity(cap),
            w: Vec::with_capacity(cap),
            z: Vec::with_capacity(cap),
            a: Vec::with_capacity(cap),
            c: Vec::with_capacity(cap),
            y: Vec::with_capacity(cap),
        }
    }

    fn push(&mut self, state: &PathState<T>, a: &[T], inc: &IncentiveState<T>) {
        self.t.push(state.t);
        self.x.extend_from_slice(&state.x);
        self.w.extend_from_slice(&state.w);
        self.z.extend_from_slice(&state.z);
        self.a.extend_from_slice(a);
        self.c.extend_from_slice(&inc.c);
        self.y.extend_from_slice(&inc.y);
    }

    pub fn steps(&self) -> usize {
        self.t.len()
    }

    pub fn slice_at<'a>(&'a self, s: usize, of: &'a [T]) -> &'a [T] {
        &of[s * self.n..(s + 1) * self.n]
    }
}

/// Batch settings. `keep_paths` bounds how many full records are retained
/// (estimates always cover every path).
#[derive(Clone, Debug)]
pub struct SimConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub keep_paths: usize,
    pub nash: NashConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_paths: 1000,
            dt: 0.01,
            seed: 1,
            keep_paths: 16,
            nash: NashConfig::default(),
        }
    }
}

/// Mean and standard error across paths.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate<T> {
    pub mean: T,
    pub se: T,
}

pub fn estimate<T: Scalar>(values: &[T]) -> Estimate<T> {
    let n = cast_usize::<T>(values.len());
    let mean = values.iter().fold(T::zero(), |s, &v| s + v) / n;
    if values.len() < 2 {
        return Estimate {
            mean,
            se: T::zero(),
        };
    }
    let var = values
        .iter()
        .fold(T::zero(), |s, &v| s + (v - mean) * (v - mean))
        / (n - T::one());
    Estimate {
        mean,
        se: (var / n).sqrt(),
    }
}

/// Discounted payoff estimates per agent and for the principal.
#[derive(Clone, Debug)]
pub struct PayoffEstimates<T> {
    pub agents: Vec<Estimate<T>>,
    pub principal: Estimate<T>,
}

/// Monte Carlo batch: per-path discounted payoffs, terminal-consistency
/// gaps, and a bounded set of retained full paths.
#[derive(Clone, Debug)]
pub struct SimulationBatch<T> {
    pub dt: T,
    pub steps: usize,
    pub seed: u64,
    pub n_paths: usize,
    /// Discounted agent payoffs per path (`[path][agent]`).
    pub agent_payoffs: Vec<Vec<T>>,
    /// Discounted principal payoff per path.
    pub principal_payoffs: Vec<T>,
    /// `|W_i(T) - r Phi_i(Z_i(T))|` per path and agent. Diagnostic: the
    /// continuation-value representation pins the terminal value only
    /// when the contract is terminal-consistent.
    pub terminal_gaps: Vec<Vec<T>>,
    /// True when the z-aggregate carries noise; the continuation-value
    /// representation is exact only without it.
    pub experimental_z_noise: bool,
    pub paths: Vec<PathRecord<T>>,
}

/// Aggregate the per-path payoffs of a batch into means with standard
/// errors.
pub fn payoff_estimates<T: Scalar>(batch: &SimulationBatch<T>) -> PayoffEstimates<T> {
    let n = batch.agent_payoffs.first().map_or(0, |v| v.len());
    let agents = (0..n)
        .map(|i| {
            let vals: Vec<T> = batch.agent_payoffs.iter().map(|p| p[i]).collect();
            estimate(&vals)
        })
        .collect();
    PayoffEstimates {
        agents,
        principal: estimate(&batch.principal_payoffs),
    }
}

/// Simulate `n_paths` independent paths from `(0, w0, z0)` under the
/// policy. Reproducible given the seed; identical seeds give bitwise
/// identical batches.
pub fn simulate_batch<T: Scalar, P: Policy<T>>(
    spec: &ProblemSpec<T>,
    policy: &P,
    cfg: &SimConfig,
    w0: &[T],
    z0: &[T],
) -> Result<SimulationBatch<T>, SimError> {
    if cfg.n_paths == 0 {
        return Err(SimError::NoPaths);
    }
    let horizon = spec.horizon().to_f64().unwrap_or(f64::NAN);
    if !(cfg.dt > 0.0 && cfg.dt <= horizon) {
        return Err(SimError::BadStep { got: cfg.dt });
    }
    if w0.len() != spec.n() || z0.len() != spec.n() {
        return Err(SimError::BadInitialState {
            expected: spec.n(),
            got: w0.len().min(z0.len()),
        });
    }

    // land exactly on the horizon
    let steps = (horizon / cfg.dt - 1e-9).ceil().max(1.0) as usize;
    let dt = spec.horizon() / cast_usize(steps);

    let mut cache = ActionCache::new(cfg.nash.clone());
    let mut batch = SimulationBatch {
        dt,
        steps,
        seed: cfg.seed,
        n_paths: cfg.n_paths,
        agent_payoffs: Vec::with_capacity(cfg.n_paths),
        principal_payoffs: Vec::with_capacity(cfg.n_paths),
        terminal_gaps: Vec::with_capacity(cfg.n_paths),
        experimental_z_noise: !spec.z_spec().is_noiseless(),
        paths: Vec::new(),
    };
    for p in 0..cfg.n_paths as u64 {
        let keep = (p as usize) < cfg.keep_paths;
        let outcome = simulate_path(spec, policy, cfg.seed, p, steps, dt, w0, z0, keep, &mut cache)?;
        batch.agent_payoffs.push(outcome.agent_payoffs);
        batch.principal_payoffs.push(outcome.principal_payoff);
        batch.terminal_gaps.push(outcome.terminal_gaps);
        if let Some(rec) = outcome.record {
            batch.paths.push(rec);
        }
    }
    Ok(batch)
}

pub struct PathOutcome<T> {
    pub agent_payoffs: Vec<T>,
    pub principal_payoff: T,
    pub terminal_gaps: Vec<T>,
    pub record: Option<PathRecord<T>>,
}

/// Memo for stage-game solves keyed by the exact control bits. Constant
/// policies hit a single entry; interpolated policies mostly miss, so the
/// size is capped.
struct ActionCache<T> {
    nash: NashConfig,
    map: HashMap<Vec<u64>, Vec<T>>,
}

impl<T: Scalar> ActionCache<T> {
    fn new(nash: NashConfig) -> Self {
        ActionCache {
            nash,
            map: HashMap::new(),
        }
    }

    fn actions(
        &mut self,
        spec: &ProblemSpec<T>,
        inc: &IncentiveState<T>,
    ) -> Result<Vec<T>, EquilibriumError> {
        let key: Vec<u64> = inc
            .y
            .iter()
            .chain(&inc.c)
            .map(|v| v.to_f64().unwrap_or(f64::NAN).to_bits())
            .collect();
        if let Some(a) = self.map.get(&key) {
            return Ok(a.clone());
        }
        let a = nash_solve(spec, inc, &self.nash)?.selected_actions().to_vec();
        if self.map.len() < 1 << 16 {
            self.map.insert(key, a.clone());
        }
        Ok(a)
    }
}

#[allow(clippy::too_many_arguments)]
fn simulate_path<T: Scalar, P: Policy<T>>(
    spec: &ProblemSpec<T>,
    policy: &P,
    seed: u64,
    path_idx: u64,
    steps: usize,
    dt: T,
    w0: &[T],
    z0: &[T],
    keep_record: bool,
    cache: &mut ActionCache<T>,
) -> Result<PathOutcome<T>, SimError> {
    let n = spec.n();
    let r = spec.r();
    let rng = CounterRng::new(seed);
    let sqrt_dt = dt.sqrt();
    let m = spec.m();

    let mut state = PathState::start(spec, w0, z0);
    let mut record = keep_record.then(|| PathRecord::with_capacity(n, steps));
    let mut agent_payoffs = vec![T::zero(); n];
    let mut principal_payoff = T::zero();
    let mut last_inc = IncentiveState::new(vec![T::zero(); n], vec![T::zero(); n]);
    let mut last_a = vec![T::zero(); n];

    for s in 0..steps {
        let inc = policy.incentives(state.t, &state.w, &state.z);
        let a = match policy.actions(state.t, &state.w, &state.z) {
            Some(a) => a,
            None => cache.actions(spec, &inc)?,
        };

        let discount = (-r * state.t).exp();
        for i in 0..n {
            let u = spec.agent_utility(i, &a, inc.c[i])?;
            agent_payoffs[i] = agent_payoffs[i] + r * discount * u * dt;
        }
        let up = spec.principal_utility(&a, &inc.c)?;
        principal_payoff = principal_payoff + r * discount * up * dt;

        if let Some(rec) = record.as_mut() {
            rec.push(&state, &a, &inc);
        }

        rng.fill_normals(path_idx, s as u64, 0, &mut state.db);
        rng.fill_normals(path_idx, s as u64, m as u64, &mut state.db_z);
        for b in state.db.iter_mut() {
            *b = *b * sqrt_dt;
        }
        for b in state.db_z.iter_mut() {
            *b = *b * sqrt_dt;
        }
        state = step(spec, &state, &inc, &a, dt).map_err(|e| match e {
            SimError::NonFinite { t, .. } => SimError::NonFinite { t, path: path_idx },
            other => other,
        })?;
        last_inc = inc;
        last_a = a;
    }

    // terminal payoff and consistency gap
    let discount_t = (-r * state.t).exp();
    let mut terminal_gaps = Vec::with_capacity(n);
    for i in 0..n {
        let phi = spec.agent(i).terminal.value(&state.z[i..=i]).map_err(ModelError::from)?;
        agent_payoffs[i] = agent_payoffs[i] + r * discount_t * phi;
        principal_payoff = principal_payoff - r * discount_t * phi;
        terminal_gaps.push((state.w[i] - r * phi).abs());
    }
    if let Some(rec) = record.as_mut() {
        rec.push(&state, &last_a, &last_inc);
    }

    Ok(PathOutcome {
        agent_payoffs,
        principal_payoff,
        terminal_gaps,
        record,
    })
}

/// CSV export: one row per (path, step), headers carrying units.
pub fn write_batch_csv<T: Scalar, W: Write>(
    batch: &SimulationBatch<T>,
    out: &mut W,
) -> Result<(), SimError> {
    let n = batch.paths.first().map_or(0, |p| p.n);
    write!(out, "path,step,t[time]")?;
    for i in 1..=n {
        write!(out, ",X_{i}[output]")?;
    }
    for i in 1..=n {
        write!(out, ",W_{i}[payoff]")?;
    }
    for i in 1..=n {
        write!(out, ",Z_{i}[state]")?;
    }
    for i in 1..=n {
        write!(out, ",a_{i}[action]")?;
    }
    for i in 1..=n {
        write!(out, ",c_{i}[payoff/time]")?;
    }
    for i in 1..=n {
        write!(out, ",y_{i}[1]")?;
    }
    writeln!(out)?;
    for (p, rec) in batch.paths.iter().enumerate() {
        for s in 0..rec.steps() {
            write!(out, "{p},{s},{}", rec.t[s])?;
            for block in [&rec.x, &rec.w, &rec.z, &rec.a, &rec.c, &rec.y] {
                for v in rec.slice_at(s, block) {
                    write!(out, ",{v}")?;
                }
            }
            writeln!(out)?;
        }
    }
    Ok(())
}
