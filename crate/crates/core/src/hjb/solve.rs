//! Backward sweep and the equilibrium-constrained inner maximization.
//!
//! At every node the solver maximizes
//! `G(y, c) = r u_P(a(y,c), c) + H^y F` over the incentive box, where
//! `a(y, c)` is the selected certified equilibrium of the stage game.
//! The search is a coarse tensor scan followed by Nelder-Mead refinement
//! from the best coarse points; ties within 1e-9 resolve to the
//! lexicographically smallest `(y, c)`. The stage game depends only on
//! `(y, c)`, never on the node or the value slice, so the coarse-grid
//! equilibria are solved once per backward solve and shared.

use std::cell::RefCell;

use crate::dynamics::PathRecord;
use crate::equilibrium::{
    nash_solve, y_bounds_all, EquilibriumError, IncentiveState, NashConfig, YBounds,
};
use crate::model::ProblemSpec;
use crate::scalar::{lit, Scalar};

use super::operator::{cross_diff, first_diff_central, operator_value, second_diff, ControlTerms};
use super::search::nelder_mead_max;
use super::{Grid, HjbError, PolicyField, ValueField};

/// Tie tolerance for the lexicographic rule.
const TIE_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct SearchConfig {
    /// Coarse points per control dimension.
    pub coarse_points: usize,
    /// Nelder-Mead restarts (taken from the best coarse points).
    pub nm_starts: usize,
    pub nm_max_iter: usize,
    pub nm_tol: f64,
    pub nash: NashConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            coarse_points: 9,
            nm_starts: 3,
            nm_max_iter: 120,
            nm_tol: 1e-12,
            nash: NashConfig::default(),
        }
    }
}

/// Result of the static maximization at one node.
#[derive(Clone, Debug)]
pub struct InnerMax<T> {
    pub y: Vec<T>,
    pub c: Vec<T>,
    pub a: Vec<T>,
    pub value: T,
    pub multiplicity: bool,
}

/// Per-solve context: incentive box, coarse control table with solved
/// equilibria, and search settings. Controls whose stage game certifies
/// no equilibrium (the nonnegative-utility set excludes its fixed
/// points) are infeasible: the equilibrium set is empty there, so the
/// maximization skips them.
pub(super) struct SearchContext<'a, T> {
    cfg: &'a SearchConfig,
    lo: Vec<T>,
    hi: Vec<T>,
    coarse: Vec<(Vec<T>, Option<(ControlTerms<T>, bool)>)>,
    nm_steps: Vec<T>,
}

impl<'a, T: Scalar> SearchContext<'a, T> {
    pub fn new(
        spec: &ProblemSpec<T>,
        cfg: &'a SearchConfig,
        bounds: &YBounds<T>,
    ) -> Result<Self, EquilibriumError> {
        let n = spec.n();
        let mut lo = bounds.beta.clone();
        let mut hi = bounds.gamma.clone();
        lo.extend(vec![T::zero(); n]);
        hi.extend(spec.agents().iter().map(|ag| ag.c_max));

        let p = cfg.coarse_points.max(2);
        let dims = 2 * n;
        let mut coarse = Vec::with_capacity(p.pow(dims as u32));
        let mut combo = vec![0usize; dims];
        loop {
            let yc: Vec<T> = (0..dims)
                .map(|d| {
                    lo[d] + (hi[d] - lo[d]) * lit::<T>(combo[d] as f64)
                        / lit::<T>((p - 1) as f64)
                })
                .collect();
            let entry = eval_controls(spec, &yc, &cfg.nash)?;
            coarse.push((yc, entry));
            // odometer over the tensor grid, last axis fastest, so the
            // scan order is lexicographic in (y, c)
            let mut d = dims;
            loop {
                if d == 0 {
                    break;
                }
                d -= 1;
                combo[d] += 1;
                if combo[d] < p {
                    break;
                }
                combo[d] = 0;
            }
            if combo.iter().all(|&x| x == 0) {
                break;
            }
        }

        let nm_steps = (0..dims)
            .map(|d| (hi[d] - lo[d]) / lit::<T>(2.0 * (p - 1) as f64))
            .collect();
        Ok(SearchContext {
            cfg,
            lo,
            hi,
            coarse,
            nm_steps,
        })
    }
}

fn split_controls<T: Scalar>(n: usize, yc: &[T]) -> IncentiveState<T> {
    IncentiveState::new(yc[..n].to_vec(), yc[n..].to_vec())
}

/// Stage-game evaluation: `Ok(None)` marks infeasible controls (no
/// certified equilibrium); genuine solver failures propagate.
fn eval_controls<T: Scalar>(
    spec: &ProblemSpec<T>,
    yc: &[T],
    nash: &NashConfig,
) -> Result<Option<(ControlTerms<T>, bool)>, EquilibriumError> {
    let inc = split_controls(spec.n(), yc);
    match nash_solve(spec, &inc, nash) {
        Ok(eq) => {
            let terms = ControlTerms::new(spec, &inc, eq.selected_actions())?;
            Ok(Some((terms, eq.multiplicity)))
        }
        Err(EquilibriumError::NoCertifiedEquilibrium { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn lex_less<T: Scalar>(a: &[T], b: &[T]) -> bool {
    for (&x, &y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

/// `G(y, c)` for explicit controls: the stage objective the inner
/// maximization optimizes. Public for dominance audits.
pub fn stage_objective<T: Scalar>(
    spec: &ProblemSpec<T>,
    grid: &Grid<T>,
    f_slice: &[T],
    node: &[usize],
    inc: &IncentiveState<T>,
    nash: &NashConfig,
) -> Result<T, HjbError> {
    let eq = nash_solve(spec, inc, nash)?;
    let terms = ControlTerms::new(spec, inc, eq.selected_actions())?;
    let flat = grid.shape().ravel(node);
    Ok(spec.r() * terms.u_p + operator_value(spec, grid, f_slice, flat, node, &terms))
}

/// Maximize the stage objective at one node. Search: coarse tensor scan
/// plus Nelder-Mead from the best `nm_starts` coarse points.
pub fn inner_max<T: Scalar>(
    spec: &ProblemSpec<T>,
    grid: &Grid<T>,
    f_slice: &[T],
    node: &[usize],
    cfg: &SearchConfig,
) -> Result<InnerMax<T>, HjbError> {
    let bounds = y_bounds_all(spec)?;
    let ctx = SearchContext::new(spec, cfg, &bounds)?;
    let flat = grid.shape().ravel(node);
    inner_max_with(spec, grid, f_slice, flat, node, &ctx)
}

pub(super) fn inner_max_with<T: Scalar>(
    spec: &ProblemSpec<T>,
    grid: &Grid<T>,
    f_slice: &[T],
    flat: usize,
    coords: &[usize],
    ctx: &SearchContext<'_, T>,
) -> Result<InnerMax<T>, HjbError> {
    let r = spec.r();
    let tie = lit::<T>(TIE_TOL);

    // coarse scan, lexicographic order, infeasible combos skipped
    let mut best_yc: Option<&[T]> = None;
    let mut best_val = T::neg_infinity();
    let mut ranked: Vec<(T, usize)> = Vec::with_capacity(ctx.coarse.len());
    for (idx, (yc, entry)) in ctx.coarse.iter().enumerate() {
        let Some((terms, _)) = entry else { continue };
        let g = r * terms.u_p + operator_value(spec, grid, f_slice, flat, coords, terms);
        ranked.push((g, idx));
        if g > best_val + tie || best_yc.is_none() {
            best_val = g;
            best_yc = Some(yc);
        }
        // lexicographic ties keep the earlier (smaller) point
    }
    let Some(best) = best_yc else {
        return Err(HjbError::Equilibrium(
            EquilibriumError::NoCertifiedEquilibrium { best_gain: f64::NAN },
        ));
    };
    let mut best_yc = best.to_vec();

    // refinement from the best coarse points
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    let error_slot: RefCell<Option<EquilibriumError>> = RefCell::new(None);
    for &(_, idx) in ranked.iter().take(ctx.cfg.nm_starts) {
        let objective = |yc: &[T]| -> T {
            if error_slot.borrow().is_some() {
                return T::neg_infinity();
            }
            match eval_controls(spec, yc, &ctx.cfg.nash) {
                Ok(Some((terms, _))) => {
                    r * terms.u_p + operator_value(spec, grid, f_slice, flat, coords, &terms)
                }
                Ok(None) => T::neg_infinity(),
                Err(e) => {
                    *error_slot.borrow_mut() = Some(e);
                    T::neg_infinity()
                }
            }
        };
        let (cand, val) = nelder_mead_max(
            objective,
            &ctx.coarse[idx].0,
            &ctx.nm_steps,
            &ctx.lo,
            &ctx.hi,
            ctx.cfg.nm_max_iter,
            lit(ctx.cfg.nm_tol),
        );
        if let Some(e) = error_slot.borrow_mut().take() {
            return Err(e.into());
        }
        if val.is_finite()
            && (val > best_val + tie
                || ((val - best_val).abs() <= tie && lex_less(&cand, &best_yc)))
        {
            best_val = val;
            best_yc = cand;
        }
    }

    // certify the winner and recompute its value exactly
    let Some((terms, multiplicity)) = eval_controls(spec, &best_yc, &ctx.cfg.nash)? else {
        return Err(HjbError::Equilibrium(
            EquilibriumError::NoCertifiedEquilibrium { best_gain: f64::NAN },
        ));
    };
    let value = r * terms.u_p + operator_value(spec, grid, f_slice, flat, coords, &terms);
    let n = spec.n();
    Ok(InnerMax {
        y: best_yc[..n].to_vec(),
        c: best_yc[n..].to_vec(),
        a: terms.a,
        value,
        multiplicity,
    })
}

/// Explicit backward sweep. Sets the terminal slice, then for each step
/// updates `F(t_k) = F(t_{k+1}) + dt (H* - r F(t_{k+1}))` per node, where
/// `H*` is the inner maximum on slice `k+1`, and stores the argmax
/// controls as policy slice `k`.
pub fn backward_solve<T: Scalar>(
    spec: &ProblemSpec<T>,
    grid: &Grid<T>,
    cfg: &SearchConfig,
) -> Result<(ValueField<T>, PolicyField<T>), HjbError> {
    let bounds = y_bounds_all(spec)?;
    let dt_bound = grid.max_stable_dt(spec, &bounds)?;
    if grid.dt() > dt_bound * (T::one() + lit(1e-12)) {
        return Err(HjbError::Stability {
            dt: grid.dt().to_f64().unwrap_or(f64::NAN),
            bound: dt_bound.to_f64().unwrap_or(f64::NAN),
        });
    }

    let ctx = SearchContext::new(spec, cfg, &bounds)?;
    let n = spec.n();
    let nodes = grid.node_count();
    let steps = grid.t_steps();
    let r = spec.r();
    let dt = grid.dt();

    let mut value = ValueField {
        slices: vec![Vec::new(); steps + 1],
    };
    value.slices[steps] = super::terminal_condition(spec, grid)?;
    let mut policy = PolicyField {
        y: vec![Vec::new(); steps],
        c: vec![Vec::new(); steps],
        a: vec![Vec::new(); steps],
        multiplicity: vec![Vec::new(); steps],
    };

    let mut coords = Vec::new();
    for k in (0..steps).rev() {
        let prev = std::mem::take(&mut value.slices[k + 1]);
        let mut next = vec![T::zero(); nodes];
        let mut y_slice = vec![T::zero(); nodes * n];
        let mut c_slice = vec![T::zero(); nodes * n];
        let mut a_slice = vec![T::zero(); nodes * n];
        let mut m_slice = vec![0u8; nodes];
        for flat in 0..nodes {
            grid.shape().unravel(flat, &mut coords);
            let im = inner_max_with(spec, grid, &prev, flat, &coords, &ctx).map_err(|e| {
                match e {
                    HjbError::Equilibrium(source) => HjbError::NodeFailed {
                        t_index: k,
                        coords: coords.clone(),
                        source,
                    },
                    other => other,
                }
            })?;
            next[flat] = prev[flat] + dt * (im.value - r * prev[flat]);
            for i in 0..n {
                y_slice[flat * n + i] = im.y[i];
                c_slice[flat * n + i] = im.c[i];
                a_slice[flat * n + i] = im.a[i];
            }
            m_slice[flat] = im.multiplicity as u8;
        }
        value.slices[k + 1] = prev;
        value.slices[k] = next;
        policy.y[k] = y_slice;
        policy.c[k] = c_slice;
        policy.a[k] = a_slice;
        policy.multiplicity[k] = m_slice;
    }
    Ok((value, policy))
}

/// Discrete HJB residual at a node, recomputed from the stored policy:
/// `(F_{k+1} - F_k)/dt + G(y*, c*) - r F_{k+1}`. Zero up to roundoff by
/// construction of the sweep; the recomputation is independent of the
/// solver's bookkeeping.
pub fn residual_at<T: Scalar>(
    spec: &ProblemSpec<T>,
    grid: &Grid<T>,
    value: &ValueField<T>,
    policy: &PolicyField<T>,
    k: usize,
    node: &[usize],
) -> Result<T, HjbError> {
    let n = spec.n();
    let flat = grid.shape().ravel(node);
    let inc = IncentiveState::new(
        policy.y[k][flat * n..(flat + 1) * n].to_vec(),
        policy.c[k][flat * n..(flat + 1) * n].to_vec(),
    );
    let a = &policy.a[k][flat * n..(flat + 1) * n];
    let terms = ControlTerms::new(spec, &inc, a)?;
    let f_next = &value.slices[k + 1];
    let g = spec.r() * terms.u_p + operator_value(spec, grid, f_next, flat, node, &terms);
    let dt = grid.dt();
    Ok((f_next[flat] - value.slices[k][flat]) / dt + g - spec.r() * f_next[flat])
}

/// Drift of the discounted value process at a grid node under explicit
/// controls: `e^{-r t_k} [dF/dt + G(inc) - r F]`. On-policy this is the
/// residual (zero); off-policy it is nonpositive up to truncation,
/// because the stored policy maximizes `G`.
pub fn drift_at_node<T: Scalar>(
    spec: &ProblemSpec<T>,
    grid: &Grid<T>,
    value: &ValueField<T>,
    k: usize,
    node: &[usize],
    inc: &IncentiveState<T>,
    nash: &NashConfig,
) -> Result<T, HjbError> {
    let flat = grid.shape().ravel(node);
    let g = stage_objective(spec, grid, &value.slices[k + 1], node, inc, nash)?;
    let dt = grid.dt();
    let f_next = value.slices[k + 1][flat];
    let f_cur = value.slices[k][flat];
    let t_k = lit::<T>(k as f64) * dt;
    let discount = (-spec.r() * t_k).exp();
    Ok(discount * ((f_next - f_cur) / dt + g - spec.r() * f_next))
}

/// Node-wise derivative fields of one value slice, built once and
/// interpolated along simulated paths.
struct SliceDerivs<T> {
    /// Central first differences per combined axis.
    d1: Vec<Vec<T>>,
    /// Diagonal second differences per combined axis.
    d2: Vec<Vec<T>>,
    /// Cross differences for axis pairs with nonzero diffusion.
    cross: Vec<(usize, usize, Vec<T>)>,
}

fn build_derivs<T: Scalar>(
    spec: &ProblemSpec<T>,
    grid: &Grid<T>,
    slice: &[T],
) -> SliceDerivs<T> {
    let dims = grid.shape().dims().len();
    let n = spec.n();
    let nodes = grid.node_count();
    let mut coords = Vec::new();
    let mut d1 = vec![vec![T::zero(); nodes]; dims];
    let mut d2 = vec![vec![T::zero(); nodes]; dims];
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if !spec.sigma_outer(i, j).is_zero() {
                pairs.push((i, j));
            }
            if !spec.sigma_z_outer(i, j).is_zero() {
                pairs.push((n + i, n + j));
            }
        }
    }
    let mut cross: Vec<(usize, usize, Vec<T>)> = pairs
        .iter()
        .map(|&(a, b)| (a, b, vec![T::zero(); nodes]))
        .collect();
    for flat in 0..nodes {
        grid.shape().unravel(flat, &mut coords);
        for k in 0..dims {
            d1[k][flat] = first_diff_central(slice, grid, flat, coords[k], k);
            d2[k][flat] = second_diff(slice, grid, flat, coords[k], k);
        }
        for (a, b, field) in cross.iter_mut() {
            field[flat] = cross_diff(slice, grid, flat, &coords, *a, *b);
        }
    }
    SliceDerivs { d1, d2, cross }
}

/// Drift series of the discounted value process along a simulated path:
/// `e^{-rt} [dF/dt + r u_P + H^y F - r F]` with the path's controls and
/// the field's derivatives interpolated at the path state. Statistically
/// zero (up to first-order truncation bias) when the path follows the
/// stored policy.
pub fn principal_value_drift<T: Scalar>(
    spec: &ProblemSpec<T>,
    grid: &Grid<T>,
    value: &ValueField<T>,
    path: &PathRecord<T>,
) -> Result<Vec<T>, HjbError> {
    let n = spec.n();
    let r = spec.r();
    let dt = grid.dt();
    let half = lit::<T>(0.5);
    let steps = grid.t_steps();
    let mut deriv_cache: Vec<Option<SliceDerivs<T>>> = (0..=steps).map(|_| None).collect();
    let mut out = Vec::with_capacity(path.steps().saturating_sub(1));

    for s in 0..path.steps().saturating_sub(1) {
        let t = path.t[s];
        let k = (t / dt)
            .floor()
            .to_usize()
            .unwrap_or(0)
            .min(steps - 1);
        let w = path.slice_at(s, &path.w);
        let z = path.slice_at(s, &path.z);
        let a = path.slice_at(s, &path.a);
        let c = path.slice_at(s, &path.c);
        let y = path.slice_at(s, &path.y);
        let inc = IncentiveState::new(y.to_vec(), c.to_vec());
        let terms = ControlTerms::new(spec, &inc, a)?;

        if deriv_cache[k + 1].is_none() {
            deriv_cache[k + 1] = Some(build_derivs(spec, grid, &value.slices[k + 1]));
        }
        let derivs = deriv_cache[k + 1].as_ref().unwrap();
        let stencil = grid.interp_stencil(w, z);
        let dot = |field: &[T]| -> T {
            stencil
                .iter()
                .fold(T::zero(), |acc, &(i, wt)| acc + field[i] * wt)
        };

        let f_next = dot(&value.slices[k + 1]);
        let f_cur = dot(&value.slices[k]);
        let mut h = T::zero();
        for i in 0..n {
            if grid.axis(i).len() > 1 {
                let mu = w[i] - terms.u[i];
                h = h + r * mu * dot(&derivs.d1[i]);
            }
            if grid.axis(n + i).len() > 1 {
                h = h + r * terms.mu_z[i] * dot(&derivs.d1[n + i]);
            }
            let sii = spec.sigma_outer(i, i);
            if !sii.is_zero() {
                h = h + half * r * r * terms.y[i] * terms.y[i] * sii * dot(&derivs.d2[i]);
            }
            let zii = spec.sigma_z_outer(i, i);
            if !zii.is_zero() {
                h = h + half * r * r * zii * dot(&derivs.d2[n + i]);
            }
        }
        for (ka, kb, field) in &derivs.cross {
            let coef = if *ka < n {
                r * r * terms.y[*ka] * terms.y[*kb] * spec.sigma_outer(*ka, *kb)
            } else {
                r * r * spec.sigma_z_outer(*ka - n, *kb - n)
            };
            h = h + coef * dot(field);
        }

        let discount = (-r * t).exp();
        out.push(discount * ((f_next - f_cur) / dt + r * terms.u_p + h - r * f_next));
    }
    Ok(out)
}
