//! Discretized drift-diffusion operator applied to a value slice.
//!
//! `H^y F = r D_w F . (w - u) + r D_z F . mu_Z
//!        + (1/2) r^2 trace((Y sigma)' D2_w F (Y sigma))
//!        + (1/2) r^2 trace(sigma_Z' D2_z F sigma_Z)`
//!
//! First derivatives are upwinded on the sign of each drift component
//! (one-sided at boundaries), diagonal second derivatives are central
//! (suppressed at boundaries via linear ghost extrapolation, the outflow
//! closure), and cross terms use divided differences of the central
//! first-derivative stencils. The z-diffusion carries the same `r^2/2`
//! Ito factor as the w-diffusion, consistent with the simulated
//! `dZ = r mu_Z dt + r sigma_Z dB_Z`.

use crate::equilibrium::IncentiveState;
use crate::model::{ModelError, ProblemSpec};
use crate::scalar::{lit, Scalar};

use super::{Grid, HjbError};

/// Control-dependent coefficients of the operator; independent of the
/// node, so one evaluation serves a whole slice.
#[derive(Clone, Debug)]
pub(super) struct ControlTerms<T> {
    pub y: Vec<T>,
    pub a: Vec<T>,
    /// `u_i(a, c_i)` per agent.
    pub u: Vec<T>,
    /// `mu_Zi(a, c)` per agent.
    pub mu_z: Vec<T>,
    /// Principal's payoff rate `u_P(a, c)`.
    pub u_p: T,
}

impl<T: Scalar> ControlTerms<T> {
    pub fn new(
        spec: &ProblemSpec<T>,
        inc: &IncentiveState<T>,
        a: &[T],
    ) -> Result<Self, ModelError> {
        let n = spec.n();
        let mut u = Vec::with_capacity(n);
        let mut mu_z = Vec::with_capacity(n);
        for i in 0..n {
            u.push(spec.agent_utility(i, a, inc.c[i])?);
            mu_z.push(spec.z_drift(i, a, &inc.c)?);
        }
        Ok(ControlTerms {
            y: inc.y.clone(),
            a: a.to_vec(),
            u,
            mu_z,
            u_p: spec.principal_utility(a, &inc.c)?,
        })
    }
}

/// Upwind first difference along combined axis `k`; `positive` selects
/// the forward stencil. One-sided at boundaries, zero on collapsed axes.
fn first_diff_upwind<T: Scalar>(
    field: &[T],
    grid: &Grid<T>,
    flat: usize,
    ci: usize,
    k: usize,
    positive: bool,
) -> T {
    let axis = grid.axis(k);
    let len = axis.len();
    if len < 2 {
        return T::zero();
    }
    let s = grid.shape().stride(k);
    let dx = axis.spacing();
    let forward = if positive { ci + 1 < len } else { ci == 0 };
    if forward {
        (field[flat + s] - field[flat]) / dx
    } else {
        (field[flat] - field[flat - s]) / dx
    }
}

/// Central first difference with one-sided fallback at boundaries.
pub(super) fn first_diff_central<T: Scalar>(
    field: &[T],
    grid: &Grid<T>,
    flat: usize,
    ci: usize,
    k: usize,
) -> T {
    let axis = grid.axis(k);
    let len = axis.len();
    if len < 2 {
        return T::zero();
    }
    let s = grid.shape().stride(k);
    let dx = axis.spacing();
    if ci > 0 && ci + 1 < len {
        (field[flat + s] - field[flat - s]) / (dx + dx)
    } else if ci == 0 {
        (field[flat + s] - field[flat]) / dx
    } else {
        (field[flat] - field[flat - s]) / dx
    }
}

/// Central second difference; zero at boundaries (linear ghost
/// extrapolation keeps the outflow treatment monotone).
pub(super) fn second_diff<T: Scalar>(
    field: &[T],
    grid: &Grid<T>,
    flat: usize,
    ci: usize,
    k: usize,
) -> T {
    let axis = grid.axis(k);
    let len = axis.len();
    if len < 3 || ci == 0 || ci + 1 >= len {
        return T::zero();
    }
    let s = grid.shape().stride(k);
    let dx = axis.spacing();
    (field[flat + s] - field[flat] - field[flat] + field[flat - s]) / (dx * dx)
}

/// Mixed second difference along axes `k1 < k2`: divided difference of
/// the `k1` central stencil across `k2`, shifted one-sided at edges.
pub(super) fn cross_diff<T: Scalar>(
    field: &[T],
    grid: &Grid<T>,
    flat: usize,
    coords: &[usize],
    k1: usize,
    k2: usize,
) -> T {
    let a2 = grid.axis(k2);
    if grid.axis(k1).len() < 2 || a2.len() < 2 {
        return T::zero();
    }
    let s2 = grid.shape().stride(k2);
    let d2 = a2.spacing();
    let ci2 = coords[k2];
    let d1_at = |flat_shifted: usize| -> T {
        first_diff_central(field, grid, flat_shifted, coords[k1], k1)
    };
    if ci2 > 0 && ci2 + 1 < a2.len() {
        (d1_at(flat + s2) - d1_at(flat - s2)) / (d2 + d2)
    } else if ci2 == 0 {
        (d1_at(flat + s2) - d1_at(flat)) / d2
    } else {
        (d1_at(flat) - d1_at(flat - s2)) / d2
    }
}

/// `H^y F` at a node from precomputed control terms.
pub(super) fn operator_value<T: Scalar>(
    spec: &ProblemSpec<T>,
    grid: &Grid<T>,
    field: &[T],
    flat: usize,
    coords: &[usize],
    terms: &ControlTerms<T>,
) -> T {
    let n = spec.n();
    let r = spec.r();
    let half = lit::<T>(0.5);
    let mut h = T::zero();

    for i in 0..n {
        // w advection: drift r (w_i - u_i)
        let kw = i;
        if grid.axis(kw).len() > 1 {
            let w_i = grid.axis(kw).points()[coords[kw]];
            let mu = w_i - terms.u[i];
            let d = first_diff_upwind(field, grid, flat, coords[kw], kw, mu >= T::zero());
            h = h + r * mu * d;
        }
        // z advection: drift r mu_Zi
        let kz = n + i;
        if grid.axis(kz).len() > 1 {
            let mu = terms.mu_z[i];
            let d = first_diff_upwind(field, grid, flat, coords[kz], kz, mu >= T::zero());
            h = h + r * mu * d;
        }
    }

    for i in 0..n {
        // w diffusion (1/2) r^2 y_i y_j (sigma sigma')_ij
        let sii = spec.sigma_outer(i, i);
        if !sii.is_zero() {
            let coef = half * r * r * terms.y[i] * terms.y[i] * sii;
            h = h + coef * second_diff(field, grid, flat, coords[i], i);
        }
        for j in i + 1..n {
            let sij = spec.sigma_outer(i, j);
            if !sij.is_zero() {
                let coef = r * r * terms.y[i] * terms.y[j] * sij;
                h = h + coef * cross_diff(field, grid, flat, coords, i, j);
            }
        }
        // z diffusion
        let zii = spec.sigma_z_outer(i, i);
        if !zii.is_zero() {
            let coef = half * r * r * zii;
            h = h + coef * second_diff(field, grid, flat, coords[n + i], n + i);
        }
        for j in i + 1..n {
            let zij = spec.sigma_z_outer(i, j);
            if !zij.is_zero() {
                let coef = r * r * zij;
                h = h + coef * cross_diff(field, grid, flat, coords, n + i, n + j);
            }
        }
    }
    h
}

/// `H^y F` at `node` for controls `(inc, a)`; the node may be interior
/// or boundary (one-sided stencils apply there).
pub fn apply_operator<T: Scalar>(
    spec: &ProblemSpec<T>,
    grid: &Grid<T>,
    f_slice: &[T],
    node: &[usize],
    inc: &IncentiveState<T>,
    a: &[T],
) -> Result<T, HjbError> {
    if f_slice.len() != grid.node_count() {
        return Err(HjbError::ShapeMismatch);
    }
    let terms = ControlTerms::new(spec, inc, a)?;
    let flat = grid.shape().ravel(node);
    Ok(operator_value(spec, grid, f_slice, flat, node, &terms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hjb::Grid;
    use crate::model::builders::linquad_problem;
    use approx::assert_relative_eq;

    fn fill<T: crate::scalar::Scalar>(
        grid: &Grid<T>,
        f: impl Fn(&[T], &[T]) -> T,
    ) -> Vec<T> {
        let mut field = vec![T::zero(); grid.node_count()];
        let mut coords = Vec::new();
        for (flat, slot) in field.iter_mut().enumerate() {
            grid.shape().unravel(flat, &mut coords);
            let (w, z) = grid.state_at(&coords);
            *slot = f(&w, &z);
        }
        field
    }

    #[test]
    fn constant_field_maps_to_zero() {
        let spec = linquad_problem(2, 1.0, 0.2, 0.1, 1.0, 0.3);
        let grid =
            Grid::regular(&spec, 4, &[1.0, 1.0], 4, &[(0.0, 0.5), (0.0, 0.5)], 3).unwrap();
        let field = fill(&grid, |_, _| 7.5);
        let inc = IncentiveState::new(vec![0.5, 0.6], vec![0.2, 0.1]);
        let a = [0.4, 0.3];
        let mut coords = Vec::new();
        for flat in 0..grid.node_count() {
            grid.shape().unravel(flat, &mut coords);
            let h = apply_operator(&spec, &grid, &field, &coords, &inc, &a).unwrap();
            assert_relative_eq!(h, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn linear_w_field_recovers_the_w_drift() {
        // F = sum w_i, zero diffusion: H = r sum_i (w_i - u_i)
        let spec = linquad_problem(2, 1.0, 0.2, 0.1, 1.0, 0.0);
        let grid =
            Grid::regular(&spec, 4, &[1.0, 1.0], 5, &[(0.0, 0.5), (0.0, 0.5)], 3).unwrap();
        let field = fill(&grid, |w, _| w[0] + w[1]);
        let inc = IncentiveState::new(vec![0.5, 0.6], vec![0.2, 0.1]);
        let a = [0.4, 0.3];
        let mut coords = Vec::new();
        for flat in 0..grid.node_count() {
            grid.shape().unravel(flat, &mut coords);
            let (w, _) = grid.state_at(&coords);
            let expect: f64 = (0..2)
                .map(|i| {
                    0.1 * (w[i] - spec.agent_utility(i, &a, inc.c[i]).unwrap())
                })
                .sum();
            let h = apply_operator(&spec, &grid, &field, &coords, &inc, &a).unwrap();
            assert_relative_eq!(h, expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn linear_z_field_recovers_the_z_drift() {
        // F = sum z_i with mu_Z = a: H = r sum_i a_i
        let spec = linquad_problem(2, 1.0, 0.0, 0.1, 1.0, 0.0);
        let grid =
            Grid::regular(&spec, 4, &[1.0, 1.0], 3, &[(0.0, 0.5), (0.0, 0.5)], 4).unwrap();
        let field = fill(&grid, |_, z| z[0] + z[1]);
        let inc = IncentiveState::new(vec![0.5, 0.6], vec![0.2, 0.1]);
        let a = [0.4, 0.3];
        let mut coords = Vec::new();
        for flat in 0..grid.node_count() {
            grid.shape().unravel(flat, &mut coords);
            let h = apply_operator(&spec, &grid, &field, &coords, &inc, &a).unwrap();
            assert_relative_eq!(h, 0.1 * (0.4 + 0.3), epsilon = 1e-12);
        }
    }

    #[test]
    fn quadratic_w_field_recovers_the_diffusion_interior() {
        // F = w^2 probed where the w-drift vanishes (w = u), so only the
        // diffusion term (1/2) r^2 y^2 sigma^2 * D2 = r^2 y^2 sigma^2
        // survives; the central stencil is exact on quadratics.
        let spec = linquad_problem(1, 1.0, 0.0, 0.1, 1.0, 0.5);
        let grid = Grid::regular(&spec, 4, &[1.0], 11, &[(0.0, 0.5)], 1).unwrap();
        let field = fill(&grid, |w, _| w[0] * w[0]);
        let a = [0.4];
        // u = c - a^2/2 = 0.5 exactly at c = 0.58, matching node w = 0.5
        let inc = IncentiveState::new(vec![0.8], vec![0.58]);
        let coords = [5usize, 0usize];
        let expect = 0.1 * 0.1 * 0.8 * 0.8 * 0.25;
        let h = apply_operator(&spec, &grid, &field, &coords, &inc, &a).unwrap();
        assert_relative_eq!(h, expect, epsilon = 1e-12);
    }
}
