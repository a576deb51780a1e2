//! Box-constrained Nelder-Mead used to refine the inner maximization
//! after the coarse control scan. Candidates are clamped to the box;
//! degenerate axes (zero step) simply never move.

use crate::scalar::{cast_usize, lit, Scalar};

fn clamp_into<T: Scalar>(x: &mut [T], lo: &[T], hi: &[T]) {
    for ((v, &l), &h) in x.iter_mut().zip(lo).zip(hi) {
        *v = (*v).max(l).min(h);
    }
}

/// Maximize `f` from `x0`, returning the best point and value seen.
pub(super) fn nelder_mead_max<T, F>(
    mut f: F,
    x0: &[T],
    steps: &[T],
    lo: &[T],
    hi: &[T],
    max_iter: usize,
    tol: T,
) -> (Vec<T>, T)
where
    T: Scalar,
    F: FnMut(&[T]) -> T,
{
    let d = x0.len();
    let mut simplex: Vec<(Vec<T>, T)> = Vec::with_capacity(d + 1);
    let mut x = x0.to_vec();
    clamp_into(&mut x, lo, hi);
    let v = f(&x);
    simplex.push((x, v));
    for k in 0..d {
        let mut x = x0.to_vec();
        // step outward, flipping direction at the box edge
        if x[k] + steps[k] <= hi[k] {
            x[k] = x[k] + steps[k];
        } else {
            x[k] = x[k] - steps[k];
        }
        clamp_into(&mut x, lo, hi);
        let v = f(&x);
        simplex.push((x, v));
    }

    let (alpha, gamma, rho, shrink) = (
        T::one(),
        lit::<T>(2.0),
        lit::<T>(0.5),
        lit::<T>(0.5),
    );

    for _ in 0..max_iter {
        // descending by value: best first
        simplex.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
        if simplex[0].1 - simplex[d].1 <= tol {
            break;
        }
        let centroid: Vec<T> = (0..d)
            .map(|k| {
                simplex[..d]
                    .iter()
                    .fold(T::zero(), |s, (p, _)| s + p[k])
                    / cast_usize(d)
            })
            .collect();
        let worst = simplex[d].clone();

        let mut reflected: Vec<T> = centroid
            .iter()
            .zip(&worst.0)
            .map(|(&c, &w)| c + alpha * (c - w))
            .collect();
        clamp_into(&mut reflected, lo, hi);
        let fr = f(&reflected);

        if fr > simplex[0].1 {
            // try expanding further
            let mut expanded: Vec<T> = centroid
                .iter()
                .zip(&reflected)
                .map(|(&c, &r)| c + gamma * (r - c))
                .collect();
            clamp_into(&mut expanded, lo, hi);
            let fe = f(&expanded);
            simplex[d] = if fe > fr {
                (expanded, fe)
            } else {
                (reflected, fr)
            };
        } else if fr > simplex[d - 1].1 {
            simplex[d] = (reflected, fr);
        } else {
            let mut contracted: Vec<T> = centroid
                .iter()
                .zip(&worst.0)
                .map(|(&c, &w)| c + rho * (w - c))
                .collect();
            clamp_into(&mut contracted, lo, hi);
            let fc = f(&contracted);
            if fc > worst.1 {
                simplex[d] = (contracted, fc);
            } else {
                // shrink toward the best vertex
                let best = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    for k in 0..d {
                        entry.0[k] = best[k] + shrink * (entry.0[k] - best[k]);
                    }
                    entry.1 = f(&entry.0);
                }
            }
        }
    }
    simplex
        .into_iter()
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
        .unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn finds_an_interior_quadratic_peak() {
        let f = |x: &[f64]| -(x[0] - 0.3).powi(2) - 2.0 * (x[1] - 0.7).powi(2);
        let (x, v) = nelder_mead_max(
            f,
            &[0.9, 0.1],
            &[0.2, 0.2],
            &[0.0, 0.0],
            &[1.0, 1.0],
            200,
            1e-14,
        );
        assert_relative_eq!(x[0], 0.3, epsilon = 1e-5);
        assert_relative_eq!(x[1], 0.7, epsilon = 1e-5);
        assert!(v > -1e-9);
    }

    #[test]
    fn respects_the_box_when_the_peak_is_outside() {
        let f = |x: &[f64]| x[0];
        let (x, _) = nelder_mead_max(f, &[0.5], &[0.25], &[0.0], &[1.0], 100, 1e-14);
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-9);
    }
}
