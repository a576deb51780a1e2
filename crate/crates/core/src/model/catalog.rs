//! Parametric function catalog.
//!
//! Model functions (agent utilities, output drifts, terminal payoffs,
//! principal utility, aggregate drifts) come from a closed set of
//! families with closed-form gradients and Hessians. Root finding and the
//! PDE step both differentiate these, so analytic derivatives are part of
//! the contract: every family is checked against central differences in
//! the test suite.

use thiserror::Error;

use crate::scalar::{lit, Scalar};

/// Tolerance for the closed-domain membership test on `eval`.
const DOMAIN_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CatalogError {
    #[error("argument vector has length {got}, entry expects {expected}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("point lies outside the entry domain: coordinate {axis} = {value} not in [{lo}, {hi}]")]
    OutOfDomain {
        axis: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("power family needs a nonnegative base, got {base}")]
    NegativeBase { base: f64 },
    #[error("invalid parameters for {family}: {reason}")]
    BadParams {
        family: &'static str,
        reason: String,
    },
}

/// Functional form of one catalog entry.
#[derive(Clone, Debug, PartialEq)]
pub enum Family<T> {
    /// `w . x + b`
    Linear { w: Vec<T>, b: T },
    /// `b + w . x + (1/2) x' Q x` with `Q` symmetric.
    LinQuad { b: T, w: Vec<T>, q: Vec<Vec<T>> },
    /// CARA over an affine aggregate: `alpha (1 - exp(-rho (w.x + b))) / rho`.
    ExpCara { alpha: T, rho: T, w: Vec<T>, b: T },
    /// `k (w . x + b)^p`; domain requires `w . x + b >= 0`.
    Power {
        coeff: T,
        exponent: T,
        w: Vec<T>,
        b: T,
    },
    /// Sum of monomials `coeff * prod_j x_j^(e_j)` with integer exponents.
    Polynomial {
        arity: usize,
        terms: Vec<(T, Vec<u32>)>,
    },
}

/// A model function: a family plus an optional box domain.
#[derive(Clone, Debug, PartialEq)]
pub struct CatalogEntry<T> {
    family: Family<T>,
    arity: usize,
    domain: Option<Vec<(T, T)>>,
}

impl<T: Scalar> CatalogEntry<T> {
    pub fn new(family: Family<T>) -> Result<Self, CatalogError> {
        let arity = match &family {
            Family::Linear { w, .. } => w.len(),
            Family::LinQuad { w, q, .. } => {
                let n = w.len();
                if q.len() != n || q.iter().any(|row| row.len() != n) {
                    return Err(CatalogError::BadParams {
                        family: "linquad",
                        reason: format!("Q must be {n}x{n} to match w"),
                    });
                }
                for i in 0..n {
                    for j in 0..i {
                        if (q[i][j] - q[j][i]).abs() > lit(1e-12) {
                            return Err(CatalogError::BadParams {
                                family: "linquad",
                                reason: format!("Q not symmetric at ({i},{j})"),
                            });
                        }
                    }
                }
                n
            }
            Family::ExpCara { rho, w, .. } => {
                if rho.abs() < lit(1e-12) {
                    return Err(CatalogError::BadParams {
                        family: "exp_cara",
                        reason: "rho must be nonzero (use linear for the limit)".into(),
                    });
                }
                w.len()
            }
            Family::Power { w, .. } => w.len(),
            Family::Polynomial { arity, terms } => {
                if terms.iter().any(|(_, e)| e.len() != *arity) {
                    return Err(CatalogError::BadParams {
                        family: "polynomial",
                        reason: "every exponent vector must match the arity".into(),
                    });
                }
                *arity
            }
        };
        Ok(CatalogEntry {
            family,
            arity,
            domain: None,
        })
    }

    /// Attach a closed box domain; `eval` then rejects points outside it
    /// (tolerance 1e-12).
    pub fn with_domain(mut self, domain: Vec<(T, T)>) -> Result<Self, CatalogError> {
        if domain.len() != self.arity {
            return Err(CatalogError::ArityMismatch {
                expected: self.arity,
                got: domain.len(),
            });
        }
        self.domain = Some(domain);
        Ok(self)
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn family(&self) -> &Family<T> {
        &self.family
    }

    /// Constant zero function of the given arity.
    pub fn zero(arity: usize) -> Self {
        CatalogEntry {
            family: Family::Linear {
                w: vec![T::zero(); arity],
                b: T::zero(),
            },
            arity,
            domain: None,
        }
    }

    /// `x_i` as a function of `arity` arguments.
    pub fn coordinate(arity: usize, i: usize) -> Self {
        let mut w = vec![T::zero(); arity];
        w[i] = T::one();
        CatalogEntry {
            family: Family::Linear { w, b: T::zero() },
            arity,
            domain: None,
        }
    }

    fn check_point(&self, x: &[T]) -> Result<(), CatalogError> {
        if x.len() != self.arity {
            return Err(CatalogError::ArityMismatch {
                expected: self.arity,
                got: x.len(),
            });
        }
        if let Some(dom) = &self.domain {
            let tol = lit::<T>(DOMAIN_TOL);
            for (axis, (&xi, &(lo, hi))) in x.iter().zip(dom.iter()).enumerate() {
                if xi < lo - tol || xi > hi + tol {
                    return Err(CatalogError::OutOfDomain {
                        axis,
                        value: xi.to_f64().unwrap_or(f64::NAN),
                        lo: lo.to_f64().unwrap_or(f64::NAN),
                        hi: hi.to_f64().unwrap_or(f64::NAN),
                    });
                }
            }
        }
        Ok(())
    }

    fn affine(w: &[T], b: T, x: &[T]) -> T {
        w.iter()
            .zip(x)
            .fold(b, |acc, (&wi, &xi)| acc + wi * xi)
    }

    /// Function value at `x`.
    pub fn value(&self, x: &[T]) -> Result<T, CatalogError> {
        self.check_point(x)?;
        Ok(match &self.family {
            Family::Linear { w, b } => Self::affine(w, *b, x),
            Family::LinQuad { b, w, q } => {
                let mut v = Self::affine(w, *b, x);
                let half = lit::<T>(0.5);
                for (i, row) in q.iter().enumerate() {
                    for (j, &qij) in row.iter().enumerate() {
                        v = v + half * qij * x[i] * x[j];
                    }
                }
                v
            }
            Family::ExpCara { alpha, rho, w, b } => {
                let s = Self::affine(w, *b, x);
                *alpha * (T::one() - (-*rho * s).exp()) / *rho
            }
            Family::Power {
                coeff,
                exponent,
                w,
                b,
            } => {
                let s = Self::affine(w, *b, x);
                if s < -lit::<T>(DOMAIN_TOL) {
                    return Err(CatalogError::NegativeBase {
                        base: s.to_f64().unwrap_or(f64::NAN),
                    });
                }
                *coeff * s.max(T::zero()).powf(*exponent)
            }
            Family::Polynomial { terms, .. } => {
                let mut v = T::zero();
                for (c, exps) in terms {
                    let mut m = *c;
                    for (&xi, &e) in x.iter().zip(exps) {
                        m = m * xi.powi(e as i32);
                    }
                    v = v + m;
                }
                v
            }
        })
    }

    /// Gradient at `x`.
    pub fn grad(&self, x: &[T]) -> Result<Vec<T>, CatalogError> {
        self.check_point(x)?;
        Ok(match &self.family {
            Family::Linear { w, .. } => w.clone(),
            Family::LinQuad { w, q, .. } => w
                .iter()
                .enumerate()
                .map(|(i, &wi)| {
                    q[i].iter()
                        .zip(x)
                        .fold(wi, |acc, (&qij, &xj)| acc + qij * xj)
                })
                .collect(),
            Family::ExpCara { alpha, rho, w, b } => {
                let s = Self::affine(w, *b, x);
                let scale = *alpha * (-*rho * s).exp();
                w.iter().map(|&wi| scale * wi).collect()
            }
            Family::Power {
                coeff,
                exponent,
                w,
                b,
            } => {
                let s = Self::affine(w, *b, x);
                if s < -lit::<T>(DOMAIN_TOL) {
                    return Err(CatalogError::NegativeBase {
                        base: s.to_f64().unwrap_or(f64::NAN),
                    });
                }
                let scale = *coeff * *exponent * s.max(T::zero()).powf(*exponent - T::one());
                w.iter().map(|&wi| scale * wi).collect()
            }
            Family::Polynomial { terms, arity } => {
                let mut g = vec![T::zero(); *arity];
                for (c, exps) in terms {
                    for k in 0..*arity {
                        if exps[k] == 0 {
                            continue;
                        }
                        let mut m = *c * lit(exps[k] as f64);
                        for (j, (&xj, &e)) in x.iter().zip(exps).enumerate() {
                            let p = if j == k { e - 1 } else { e };
                            m = m * xj.powi(p as i32);
                        }
                        g[k] = g[k] + m;
                    }
                }
                g
            }
        })
    }

    /// Hessian at `x` (dense, symmetric).
    pub fn hessian(&self, x: &[T]) -> Result<Vec<Vec<T>>, CatalogError> {
        self.check_point(x)?;
        let n = self.arity;
        Ok(match &self.family {
            Family::Linear { .. } => vec![vec![T::zero(); n]; n],
            Family::LinQuad { q, .. } => q.clone(),
            Family::ExpCara { alpha, rho, w, b } => {
                let s = Self::affine(w, *b, x);
                let scale = -*alpha * *rho * (-*rho * s).exp();
                w.iter()
                    .map(|&wi| w.iter().map(|&wj| scale * wi * wj).collect())
                    .collect()
            }
            Family::Power {
                coeff,
                exponent,
                w,
                b,
            } => {
                let s = Self::affine(w, *b, x);
                if s < -lit::<T>(DOMAIN_TOL) {
                    return Err(CatalogError::NegativeBase {
                        base: s.to_f64().unwrap_or(f64::NAN),
                    });
                }
                let p = *exponent;
                let scale =
                    *coeff * p * (p - T::one()) * s.max(T::zero()).powf(p - lit(2.0));
                w.iter()
                    .map(|&wi| w.iter().map(|&wj| scale * wi * wj).collect())
                    .collect()
            }
            Family::Polynomial { terms, arity } => {
                let mut h = vec![vec![T::zero(); *arity]; *arity];
                for (c, exps) in terms {
                    for k in 0..*arity {
                        for l in 0..*arity {
                            let (ek, el) = (exps[k], exps[l]);
                            let factor = if k == l {
                                if ek < 2 {
                                    continue;
                                }
                                lit::<T>((ek * (ek - 1)) as f64)
                            } else {
                                if ek == 0 || el == 0 {
                                    continue;
                                }
                                lit::<T>((ek * el) as f64)
                            };
                            let mut m = *c * factor;
                            for (j, (&xj, &e)) in x.iter().zip(exps).enumerate() {
                                let p = if j == k && j == l {
                                    e - 2
                                } else if j == k || j == l {
                                    e - 1
                                } else {
                                    e
                                };
                                m = m * xj.powi(p as i32);
                            }
                            h[k][l] = h[k][l] + m;
                        }
                    }
                }
                h
            }
        })
    }

    /// Single partial derivative without allocating the full gradient.
    /// Root finding and the PDE inner loop call this in tight loops.
    pub fn partial(&self, x: &[T], k: usize) -> Result<T, CatalogError> {
        self.check_point(x)?;
        Ok(match &self.family {
            Family::Linear { w, .. } => w[k],
            Family::LinQuad { w, q, .. } => q[k]
                .iter()
                .zip(x)
                .fold(w[k], |acc, (&qkj, &xj)| acc + qkj * xj),
            Family::ExpCara { alpha, rho, w, b } => {
                let s = Self::affine(w, *b, x);
                *alpha * (-*rho * s).exp() * w[k]
            }
            Family::Power {
                coeff,
                exponent,
                w,
                b,
            } => {
                let s = Self::affine(w, *b, x);
                if s < -lit::<T>(DOMAIN_TOL) {
                    return Err(CatalogError::NegativeBase {
                        base: s.to_f64().unwrap_or(f64::NAN),
                    });
                }
                *coeff * *exponent * s.max(T::zero()).powf(*exponent - T::one()) * w[k]
            }
            Family::Polynomial { terms, .. } => {
                let mut v = T::zero();
                for (c, exps) in terms {
                    if exps[k] == 0 {
                        continue;
                    }
                    let mut m = *c * lit(exps[k] as f64);
                    for (j, (&xj, &e)) in x.iter().zip(exps).enumerate() {
                        let p = if j == k { e - 1 } else { e };
                        m = m * xj.powi(p as i32);
                    }
                    v = v + m;
                }
                v
            }
        })
    }

    /// Single second partial without allocating the Hessian.
    pub fn second_partial(&self, x: &[T], k: usize, l: usize) -> Result<T, CatalogError> {
        self.check_point(x)?;
        Ok(match &self.family {
            Family::Linear { .. } => T::zero(),
            Family::LinQuad { q, .. } => q[k][l],
            Family::ExpCara { alpha, rho, w, b } => {
                let s = Self::affine(w, *b, x);
                -*alpha * *rho * (-*rho * s).exp() * w[k] * w[l]
            }
            Family::Power {
                coeff,
                exponent,
                w,
                b,
            } => {
                let s = Self::affine(w, *b, x);
                if s < -lit::<T>(DOMAIN_TOL) {
                    return Err(CatalogError::NegativeBase {
                        base: s.to_f64().unwrap_or(f64::NAN),
                    });
                }
                let p = *exponent;
                *coeff * p * (p - T::one()) * s.max(T::zero()).powf(p - lit(2.0)) * w[k] * w[l]
            }
            Family::Polynomial { .. } => self.hessian(x)?[k][l],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn linquad_agent_utility(n: usize, i: usize, kappa: f64, gamma: f64) -> CatalogEntry<f64> {
        // u_i(a, c_i) = c_i - (kappa/2) a_i^2 - gamma a_i sum_{j != i} a_j
        let arity = n + 1;
        let mut w = vec![0.0; arity];
        w[n] = 1.0;
        let mut q = vec![vec![0.0; arity]; arity];
        q[i][i] = -kappa;
        for j in 0..n {
            if j != i {
                q[i][j] = -gamma;
                q[j][i] = -gamma;
            }
        }
        CatalogEntry::new(Family::LinQuad { b: 0.0, w, q }).unwrap()
    }

    #[test]
    fn linquad_value_matches_hand_evaluation() {
        // kappa = 1, gamma = 0, a = (0.5, 0.5), c = 1 -> 1 - 0.125
        let u = linquad_agent_utility(2, 0, 1.0, 0.0);
        let v = u.value(&[0.5, 0.5, 1.0]).unwrap();
        assert_relative_eq!(v, 0.875, max_relative = 1e-15);
    }

    #[test]
    fn coordinate_drift_has_unit_partial() {
        let f = CatalogEntry::<f64>::coordinate(2, 0);
        assert_eq!(f.partial(&[0.3, 0.9], 0).unwrap(), 1.0);
        assert_eq!(f.partial(&[0.3, 0.9], 1).unwrap(), 0.0);
    }

    #[test]
    fn identity_terminal_is_zero_at_zero() {
        let phi = CatalogEntry::<f64>::coordinate(1, 0);
        assert_eq!(phi.value(&[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn domain_is_enforced_with_tolerance() {
        let f = CatalogEntry::<f64>::coordinate(1, 0)
            .with_domain(vec![(0.0, 1.0)])
            .unwrap();
        assert!(f.value(&[1.0 + 1e-13]).is_ok());
        assert!(matches!(
            f.value(&[1.0 + 1e-9]),
            Err(CatalogError::OutOfDomain { .. })
        ));
    }

    #[test]
    fn power_rejects_negative_base() {
        let f = CatalogEntry::new(Family::Power {
            coeff: 1.0,
            exponent: 0.5,
            w: vec![1.0],
            b: 0.0,
        })
        .unwrap();
        assert!(f.value(&[-0.1]).is_err());
        assert_relative_eq!(f.value(&[0.25]).unwrap(), 0.5);
    }

    #[test]
    fn asymmetric_q_is_rejected() {
        let bad = CatalogEntry::new(Family::LinQuad {
            b: 0.0,
            w: vec![0.0, 0.0],
            q: vec![vec![0.0, 1.0], vec![0.0, 0.0]],
        });
        assert!(bad.is_err());
    }

    /// Central-difference derivative checks for every family, per the
    /// catalog contract (relative error <= 1e-6 at interior points).
    #[test]
    fn analytic_derivatives_match_central_differences() {
        let entries: Vec<CatalogEntry<f64>> = vec![
            CatalogEntry::new(Family::Linear {
                w: vec![2.0, -1.0, 0.5],
                b: 0.3,
            })
            .unwrap(),
            linquad_agent_utility(2, 1, 1.5, 0.4),
            CatalogEntry::new(Family::ExpCara {
                alpha: 1.2,
                rho: 2.0,
                w: vec![-0.8, 1.0],
                b: 0.1,
            })
            .unwrap(),
            CatalogEntry::new(Family::Power {
                coeff: 0.7,
                exponent: 0.6,
                w: vec![1.0, 0.5],
                b: 0.2,
            })
            .unwrap(),
            CatalogEntry::new(Family::Polynomial {
                arity: 2,
                terms: vec![(1.0, vec![2, 1]), (-0.5, vec![0, 3]), (2.0, vec![1, 0])],
            })
            .unwrap(),
        ];
        let sampler = crate::sampling::Halton::new(3, 77);
        let h = 1e-5;
        for entry in &entries {
            let d = entry.arity();
            for s in 0..100u64 {
                // interior of [0.05, 0.95]^d keeps power bases positive
                let x: Vec<f64> = sampler.point::<f64>(s)[..d]
                    .iter()
                    .map(|u| 0.05 + 0.9 * u)
                    .collect();
                let g = entry.grad(&x).unwrap();
                let hess = entry.hessian(&x).unwrap();
                for k in 0..d {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[k] += h;
                    xm[k] -= h;
                    let fd = (entry.value(&xp).unwrap() - entry.value(&xm).unwrap()) / (2.0 * h);
                    let scale = g[k].abs().max(1.0);
                    assert!(
                        (g[k] - fd).abs() / scale <= 1e-6,
                        "grad mismatch {:?} axis {k}: {} vs {}",
                        entry.family(),
                        g[k],
                        fd
                    );
                    let gd = (entry.grad(&xp).unwrap()[k] - entry.grad(&xm).unwrap()[k])
                        / (2.0 * h);
                    let hscale = hess[k][k].abs().max(1.0);
                    assert!(
                        (hess[k][k] - gd).abs() / hscale <= 1e-6,
                        "hessian mismatch {:?} axis {k}",
                        entry.family()
                    );
                    // alloc-free entry points agree with the dense ones
                    assert_eq!(entry.partial(&x, k).unwrap(), g[k]);
                    for l in 0..d {
                        assert_eq!(entry.second_partial(&x, k, l).unwrap(), hess[k][l]);
                    }
                }
            }
        }
    }
}
