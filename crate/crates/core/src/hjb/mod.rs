//! Backward finite-difference solver for the principal's value PDE.
//!
//! The value `F(t, w, z)` lives on a tensor grid over the agents'
//! continuation values `w` and terminal-state aggregates `z`. Time steps
//! explicitly from the terminal slice `F(T, w, z) = -r sum_i Phi_i(z_i)`
//! backward, maximizing at every node over incentives `(y, c)` subject
//! to the actions being the certified stage-game equilibrium for those
//! incentives. First derivatives are upwinded on the drift sign, second
//! derivatives are central, and the time step is held under a CFL-type
//! bound so the explicit scheme stays monotone.

mod io;
mod operator;
mod search;
mod solve;

pub use io::{read_solution, write_solution, write_solution_csv};
pub use operator::apply_operator;
pub use solve::{
    backward_solve, drift_at_node, inner_max, principal_value_drift, residual_at,
    stage_objective, InnerMax, SearchConfig,
};

use thiserror::Error;

use crate::dynamics::Policy;
use crate::equilibrium::{EquilibriumError, IncentiveState, YBounds};
use crate::model::{ModelError, ProblemSpec};
use crate::sampling::{corners, Halton};
use crate::scalar::{cast_usize, Scalar};

#[derive(Debug, Error)]
pub enum HjbError {
    #[error("grid mode supports at most 2 agents (state dimension 2n <= 4), got n = {n}")]
    DeskScale { n: usize },
    #[error("expected {expected} {what} axes, got {got}")]
    AxisCount {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("axis needs at least one point")]
    EmptyAxis,
    #[error("explicit scheme unstable: dt = {dt} exceeds CFL bound {bound}")]
    Stability { dt: f64, bound: f64 },
    #[error("inner maximization failed at t-index {t_index}, node {coords:?}: {source}")]
    NodeFailed {
        t_index: usize,
        coords: Vec<usize>,
        source: EquilibriumError,
    },
    #[error("value/policy shape does not match the grid")]
    ShapeMismatch,
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad solution cache: {0}")]
    BadCache(String),
}

/// One uniform grid axis. A single-point axis is allowed: derivatives
/// along it vanish (used to collapse dimensions the problem ignores).
#[derive(Clone, Debug, PartialEq)]
pub struct Axis<T> {
    points: Vec<T>,
    spacing: T,
}

impl<T: Scalar> Axis<T> {
    pub fn linspace(min: T, max: T, count: usize) -> Result<Self, HjbError> {
        if count == 0 {
            return Err(HjbError::EmptyAxis);
        }
        if count == 1 {
            return Ok(Axis {
                points: vec![min],
                spacing: T::one(),
            });
        }
        let spacing = (max - min) / cast_usize::<T>(count - 1);
        let points = (0..count)
            .map(|k| min + spacing * cast_usize(k))
            .collect();
        Ok(Axis { points, spacing })
    }

    pub fn single(point: T) -> Self {
        Axis {
            points: vec![point],
            spacing: T::one(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn spacing(&self) -> T {
        self.spacing
    }

    pub fn points(&self) -> &[T] {
        &self.points
    }

    pub fn min(&self) -> T {
        self.points[0]
    }

    pub fn max(&self) -> T {
        *self.points.last().unwrap()
    }

    /// Fractional position of `x` on the axis, clamped to the hull.
    fn locate(&self, x: T) -> (usize, T) {
        if self.len() == 1 {
            return (0, T::zero());
        }
        let u = ((x - self.min()) / self.spacing)
            .max(T::zero())
            .min(cast_usize::<T>(self.len() - 1));
        let i0 = u
            .floor()
            .to_usize()
            .unwrap_or(0)
            .min(self.len() - 2);
        (i0, u - cast_usize(i0))
    }
}

/// Row-major shape over the combined `(w_1..w_n, z_1..z_n)` axes.
#[derive(Clone, Debug, PartialEq)]
pub struct Shape {
    dims: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
}

impl Shape {
    fn new(dims: Vec<usize>) -> Self {
        let mut strides = vec![1; dims.len()];
        for k in (0..dims.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * dims[k + 1];
        }
        let len = dims.iter().product();
        Shape { dims, strides, len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    pub fn unravel(&self, flat: usize, coords: &mut Vec<usize>) {
        coords.clear();
        let mut rem = flat;
        for k in 0..self.dims.len() {
            coords.push(rem / self.strides[k]);
            rem %= self.strides[k];
        }
    }

    pub fn ravel(&self, coords: &[usize]) -> usize {
        coords
            .iter()
            .zip(&self.strides)
            .map(|(c, s)| c * s)
            .sum()
    }
}

/// Tensor grid over time and the `(w, z)` state. Axis order in node
/// indices is `w_1..w_n, z_1..z_n`.
#[derive(Clone, Debug)]
pub struct Grid<T> {
    t_steps: usize,
    dt: T,
    w_axes: Vec<Axis<T>>,
    z_axes: Vec<Axis<T>>,
    shape: Shape,
}

impl<T: Scalar> Grid<T> {
    pub fn new(
        spec: &ProblemSpec<T>,
        t_steps: usize,
        w_axes: Vec<Axis<T>>,
        z_axes: Vec<Axis<T>>,
    ) -> Result<Self, HjbError> {
        let n = spec.n();
        if n > 2 {
            return Err(HjbError::DeskScale { n });
        }
        if w_axes.len() != n {
            return Err(HjbError::AxisCount {
                what: "w",
                expected: n,
                got: w_axes.len(),
            });
        }
        if z_axes.len() != n {
            return Err(HjbError::AxisCount {
                what: "z",
                expected: n,
                got: z_axes.len(),
            });
        }
        if t_steps == 0 {
            return Err(HjbError::EmptyAxis);
        }
        let dims: Vec<usize> = w_axes.iter().chain(&z_axes).map(Axis::len).collect();
        Ok(Grid {
            t_steps,
            dt: spec.horizon() / cast_usize(t_steps),
            w_axes,
            z_axes,
            shape: Shape::new(dims),
        })
    }

    /// Convenience: uniform axes from per-agent bounds.
    pub fn regular(
        spec: &ProblemSpec<T>,
        t_steps: usize,
        w_max: &[T],
        w_points: usize,
        z_range: &[(T, T)],
        z_points: usize,
    ) -> Result<Self, HjbError> {
        let w_axes = w_max
            .iter()
            .map(|&hi| Axis::linspace(T::zero(), hi, w_points))
            .collect::<Result<_, _>>()?;
        let z_axes = z_range
            .iter()
            .map(|&(lo, hi)| {
                if z_points == 1 {
                    Ok(Axis::single(lo))
                } else {
                    Axis::linspace(lo, hi, z_points)
                }
            })
            .collect::<Result<_, _>>()?;
        Grid::new(spec, t_steps, w_axes, z_axes)
    }

    pub fn n(&self) -> usize {
        self.w_axes.len()
    }

    pub fn t_steps(&self) -> usize {
        self.t_steps
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn w_axes(&self) -> &[Axis<T>] {
        &self.w_axes
    }

    pub fn z_axes(&self) -> &[Axis<T>] {
        &self.z_axes
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn node_count(&self) -> usize {
        self.shape.len()
    }

    /// Axis `k` of the combined state (w axes first, then z).
    pub fn axis(&self, k: usize) -> &Axis<T> {
        if k < self.w_axes.len() {
            &self.w_axes[k]
        } else {
            &self.z_axes[k - self.w_axes.len()]
        }
    }

    /// State coordinates of a node.
    pub fn state_at(&self, coords: &[usize]) -> (Vec<T>, Vec<T>) {
        let n = self.n();
        let w = (0..n).map(|i| self.w_axes[i].points[coords[i]]).collect();
        let z = (0..n)
            .map(|i| self.z_axes[i].points[coords[n + i]])
            .collect();
        (w, z)
    }

    /// Multilinear interpolation stencil at `(w, z)`, clamped to the
    /// hull: node flat indices with weights summing to one.
    pub fn interp_stencil(&self, w: &[T], z: &[T]) -> Vec<(usize, T)> {
        let d = self.shape.dims().len();
        let mut locs = Vec::with_capacity(d);
        for (i, axis) in self.w_axes.iter().enumerate() {
            locs.push(axis.locate(w[i]));
        }
        for (i, axis) in self.z_axes.iter().enumerate() {
            locs.push(axis.locate(z[i]));
        }
        let mut out = Vec::with_capacity(1 << d);
        for mask in 0..1u32 << d {
            let mut flat = 0;
            let mut weight = T::one();
            for (k, &(i0, frac)) in locs.iter().enumerate() {
                let (idx, wgt) = if mask >> k & 1 == 1 {
                    if self.shape.dims()[k] == 1 {
                        (i0, T::zero())
                    } else {
                        (i0 + 1, frac)
                    }
                } else {
                    (i0, T::one() - frac)
                };
                flat += idx * self.shape.stride(k);
                weight = weight * wgt;
            }
            if weight != T::zero() || mask == 0 {
                out.push((flat, weight));
            }
        }
        out
    }

    /// Interpolate a scalar node field at `(w, z)`.
    pub fn interpolate(&self, field: &[T], w: &[T], z: &[T]) -> T {
        self.interp_stencil(w, z)
            .iter()
            .fold(T::zero(), |acc, &(i, wt)| acc + field[i] * wt)
    }

    /// Largest stable time step for the explicit scheme:
    /// `1 / (sum_k [r |mu_k|_max / dx_k + r^2 (diff_kk)_max / dx_k^2] + r)`.
    /// Drift extremes are taken over the grid hull and sampled controls.
    pub fn max_stable_dt(&self, spec: &ProblemSpec<T>, bounds: &YBounds<T>) -> Result<T, HjbError> {
        let n = spec.n();
        let r = spec.r();

        // extremize u_i and mu_Zi over (a, c) samples plus corners
        let mut lo = vec![T::zero(); 2 * n];
        let mut hi: Vec<T> = spec.agents().iter().map(|ag| ag.a_max).collect();
        hi.extend(spec.agents().iter().map(|ag| ag.c_max));
        let sampler = Halton::new(2 * n, 0x43464C); // "CFL"
        let mut pts: Vec<Vec<T>> = (0..64u64)
            .map(|k| sampler.point_in_box(k, &lo, &hi))
            .collect();
        if 2 * n <= 12 {
            pts.extend(corners(&lo, &hi));
        }
        lo.clear();

        let mut u_min = vec![T::infinity(); n];
        let mut u_max = vec![T::neg_infinity(); n];
        let mut mu_z_abs = vec![T::zero(); n];
        for p in &pts {
            let (a, c) = p.split_at(n);
            for i in 0..n {
                let u = spec.agent_utility(i, a, c[i])?;
                u_min[i] = u_min[i].min(u);
                u_max[i] = u_max[i].max(u);
                mu_z_abs[i] = mu_z_abs[i].max(spec.z_drift(i, a, c)?.abs());
            }
        }

        let mut denom = r;
        for i in 0..n {
            let axis = &self.w_axes[i];
            if axis.len() > 1 {
                let mu_abs = (axis.max() - u_min[i]).abs().max(u_max[i].abs());
                let diff = bounds.gamma[i] * bounds.gamma[i] * spec.sigma_outer(i, i);
                denom = denom + r * mu_abs / axis.spacing
                    + r * r * diff / (axis.spacing * axis.spacing);
            }
            let axis = &self.z_axes[i];
            if axis.len() > 1 {
                let diff = spec.sigma_z_outer(i, i);
                denom = denom + r * mu_z_abs[i] / axis.spacing
                    + r * r * diff / (axis.spacing * axis.spacing);
            }
        }
        Ok(T::one() / denom)
    }
}

/// Value field: one node slice per time index `0..=t_steps`; slice
/// `t_steps` is the terminal condition.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueField<T> {
    pub slices: Vec<Vec<T>>,
}

impl<T: Scalar> ValueField<T> {
    pub fn initial(&self) -> &[T] {
        &self.slices[0]
    }

    /// Value at `(0, w0, z0)` by interpolation.
    pub fn at_start(&self, grid: &Grid<T>, w0: &[T], z0: &[T]) -> T {
        grid.interpolate(&self.slices[0], w0, z0)
    }
}

/// Argmax controls per node for every non-terminal time slice. Slice `k`
/// holds the controls applied on `[t_k, t_{k+1})`, extracted while
/// stepping the value from `t_{k+1}` to `t_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyField<T> {
    /// `y[k][node * n + i]`
    pub y: Vec<Vec<T>>,
    pub c: Vec<Vec<T>>,
    pub a: Vec<Vec<T>>,
    /// 1 where the stage game had multiple certified equilibria.
    pub multiplicity: Vec<Vec<u8>>,
}

/// Terminal slice `F(T, w, z) = -r sum_i Phi_i(z_i)`; exact, independent
/// of `w`.
pub fn terminal_condition<T: Scalar>(
    spec: &ProblemSpec<T>,
    grid: &Grid<T>,
) -> Result<Vec<T>, HjbError> {
    let mut slice = vec![T::zero(); grid.node_count()];
    let mut coords = Vec::new();
    for (flat, slot) in slice.iter_mut().enumerate() {
        grid.shape().unravel(flat, &mut coords);
        let (_, z) = grid.state_at(&coords);
        let mut total = T::zero();
        for i in 0..spec.n() {
            total = total + spec.agent(i).terminal.value(&z[i..=i]).map_err(ModelError::from)?;
        }
        *slot = -spec.r() * total;
    }
    Ok(slice)
}

/// Policy adapter for the simulator: controls are interpolated
/// multilinearly in `(w, z)` (clamped to the hull) from the slice active
/// at the query time; actions are re-solved by the simulator so they are
/// certified for the interpolated controls.
pub struct FieldPolicy<'a, T> {
    pub grid: &'a Grid<T>,
    pub policy: &'a PolicyField<T>,
}

impl<'a, T: Scalar> FieldPolicy<'a, T> {
    pub fn new(grid: &'a Grid<T>, policy: &'a PolicyField<T>) -> Self {
        FieldPolicy { grid, policy }
    }

    fn time_slice(&self, t: T) -> usize {
        let k = (t / self.grid.dt())
            .floor()
            .to_usize()
            .unwrap_or(0);
        k.min(self.grid.t_steps() - 1)
    }
}

impl<'a, T: Scalar> Policy<T> for FieldPolicy<'a, T> {
    fn incentives(&self, t: T, w: &[T], z: &[T]) -> IncentiveState<T> {
        let k = self.time_slice(t);
        let n = self.grid.n();
        let stencil = self.grid.interp_stencil(w, z);
        let mut y = vec![T::zero(); n];
        let mut c = vec![T::zero(); n];
        for &(node, wt) in &stencil {
            for i in 0..n {
                y[i] = y[i] + self.policy.y[k][node * n + i] * wt;
                c[i] = c[i] + self.policy.c[k][node * n + i] * wt;
            }
        }
        IncentiveState::new(y, c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builders::linquad_problem;
    use crate::model::CatalogEntry;
    use approx::assert_relative_eq;

    #[test]
    fn shape_round_trips_indices() {
        let shape = Shape::new(vec![3, 4, 5]);
        let mut coords = Vec::new();
        for flat in 0..shape.len() {
            shape.unravel(flat, &mut coords);
            assert_eq!(shape.ravel(&coords), flat);
        }
    }

    #[test]
    fn terminal_slice_is_exact() {
        // Phi_i(z) = z, n = 2, r = 0.1: F(T, ., (1, 2)) = -0.3
        let agents: Vec<_> = (0..2)
            .map(|i| {
                crate::model::builders::linquad_agent(
                    2,
                    i,
                    1.0,
                    0.0,
                    1.0,
                    1.0,
                    CatalogEntry::coordinate(1, 0),
                )
            })
            .collect();
        let spec = crate::model::ProblemSpec::new(
            0.1,
            1.0,
            agents,
            crate::model::builders::net_output_principal(2),
            crate::model::ZSpec::action_integral(2),
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
        )
        .unwrap();
        let grid = Grid::regular(
            &spec,
            4,
            &[1.0, 1.0],
            3,
            &[(0.0, 2.0), (0.0, 2.0)],
            3,
        )
        .unwrap();
        let slice = terminal_condition(&spec, &grid).unwrap();
        let mut coords = Vec::new();
        for flat in 0..grid.node_count() {
            grid.shape().unravel(flat, &mut coords);
            let (_, z) = grid.state_at(&coords);
            assert_relative_eq!(
                slice[flat],
                -0.1 * (z[0] + z[1]),
                epsilon = 1e-15
            );
        }
        // z = (1, 2) is on the grid
        let idx = grid.shape().ravel(&[0, 0, 1, 2]);
        assert_relative_eq!(slice[idx], -0.3, epsilon = 1e-15);
    }

    #[test]
    fn zero_terminal_payoff_gives_zero_slice() {
        let spec = linquad_problem(1, 1.0, 0.0, 0.1, 1.0, 0.0);
        let grid = Grid::regular(&spec, 4, &[0.5], 5, &[(0.0, 0.2)], 3).unwrap();
        let slice = terminal_condition(&spec, &grid).unwrap();
        assert!(slice.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn quadratic_terminal_payoff() {
        // Phi(z) = z^2, r = 1, n = 1: F(T, ., 0.5) = -0.25
        let mut agent = crate::model::builders::linquad_agent(
            1,
            0,
            1.0,
            0.0,
            1.0,
            1.0,
            CatalogEntry::new(crate::model::Family::Polynomial {
                arity: 1,
                terms: vec![(1.0, vec![2])],
            })
            .unwrap(),
        );
        agent.a_max = 1.0;
        let spec = crate::model::ProblemSpec::new(
            1.0,
            1.0,
            vec![agent],
            crate::model::builders::net_output_principal(1),
            crate::model::ZSpec::action_integral(1),
            vec![vec![0.0]],
        )
        .unwrap();
        let grid = Grid::regular(&spec, 2, &[1.0], 2, &[(0.0, 1.0)], 3).unwrap();
        let slice = terminal_condition(&spec, &grid).unwrap();
        let idx = grid.shape().ravel(&[0, 1]); // z = 0.5
        assert_relative_eq!(slice[idx], -0.25, epsilon = 1e-15);
    }

    #[test]
    fn desk_scale_cap_is_enforced() {
        let spec = linquad_problem(3, 1.0, 0.0, 0.1, 1.0, 0.0);
        let err = Grid::regular(
            &spec,
            4,
            &[1.0, 1.0, 1.0],
            3,
            &[(0.0, 1.0), (0.0, 1.0), (0.0, 1.0)],
            3,
        )
        .unwrap_err();
        assert!(matches!(err, HjbError::DeskScale { n: 3 }));
    }

    #[test]
    fn interpolation_is_exact_for_multilinear_fields() {
        let spec = linquad_problem(1, 1.0, 0.0, 0.1, 1.0, 0.0);
        let grid = Grid::regular(&spec, 4, &[1.0], 5, &[(0.0, 1.0)], 5).unwrap();
        // field = 2 w + 3 z + 1 is reproduced exactly, clamped outside
        let mut field = vec![0.0; grid.node_count()];
        let mut coords = Vec::new();
        for flat in 0..grid.node_count() {
            grid.shape().unravel(flat, &mut coords);
            let (w, z) = grid.state_at(&coords);
            field[flat] = 2.0 * w[0] + 3.0 * z[0] + 1.0;
        }
        assert_relative_eq!(
            grid.interpolate(&field, &[0.37], &[0.61]),
            2.0 * 0.37 + 3.0 * 0.61 + 1.0,
            epsilon = 1e-14
        );
        assert_relative_eq!(
            grid.interpolate(&field, &[1.5], &[0.0]),
            3.0, // clamped to w = 1
            epsilon = 1e-14
        );
    }
}
