//! Low-discrepancy sampling for assumption checks, incentive-bound
//! extremization and multi-start iterations.
//!
//! Uses a Halton sequence with a seed-keyed Cranley-Patterson rotation:
//! deterministic given the seed, and well spread in few dimensions (the
//! use sites here are at most a handful of axes).

use crate::rng::CounterRng;
use crate::scalar::{lit, Scalar};

const PRIMES: [u32; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Radical inverse of `n` in base `b`, in [0, 1).
fn radical_inverse(mut n: u64, b: u64) -> f64 {
    let mut inv = 0.0;
    let mut denom = 1.0;
    while n > 0 {
        denom *= b as f64;
        inv += (n % b) as f64 / denom;
        n /= b;
    }
    inv
}

/// Deterministic low-discrepancy point set on the unit cube.
#[derive(Clone, Debug)]
pub struct Halton {
    dim: usize,
    shifts: Vec<f64>,
}

impl Halton {
    /// A `dim`-dimensional rotated Halton sequence. Dimensions beyond the
    /// prime table wrap; the rotation keeps wrapped axes decorrelated.
    pub fn new(dim: usize, seed: u64) -> Self {
        let rng = CounterRng::new(seed ^ 0x48_41_4C_54); // "HALT"
        let shifts = (0..dim)
            .map(|j| rng.uniform::<f64>(0, 0, j as u64))
            .collect();
        Halton { dim, shifts }
    }

    /// The `index`-th point, each coordinate in [0, 1).
    pub fn point<T: Scalar>(&self, index: u64) -> Vec<T> {
        (0..self.dim)
            .map(|j| {
                let base = PRIMES[j % PRIMES.len()] as u64;
                let v = radical_inverse(index + 1, base) + self.shifts[j];
                lit(v - v.floor())
            })
            .collect()
    }

    /// The `index`-th point scaled into the box `[lo_k, hi_k]`.
    pub fn point_in_box<T: Scalar>(&self, index: u64, lo: &[T], hi: &[T]) -> Vec<T> {
        self.point::<T>(index)
            .iter()
            .zip(lo.iter().zip(hi))
            .map(|(&u, (&l, &h))| l + u * (h - l))
            .collect()
    }
}

/// All corner points of the box `[lo_k, hi_k]` (2^d of them). Corners are
/// where affine expressions are extremal, so bound searches include them
/// alongside interior samples.
pub fn corners<T: Scalar>(lo: &[T], hi: &[T]) -> Vec<Vec<T>> {
    let d = lo.len();
    assert!(d <= 20, "corner enumeration capped at 20 dimensions");
    (0..1u32 << d)
        .map(|mask| {
            (0..d)
                .map(|k| if mask >> k & 1 == 1 { hi[k] } else { lo[k] })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_fill_unit_cube() {
        let h = Halton::new(3, 9);
        for i in 0..64 {
            for &x in h.point::<f64>(i).iter() {
                assert!((0.0..1.0).contains(&x));
            }
        }
    }

    #[test]
    fn seeded_rotation_is_deterministic() {
        let a = Halton::new(2, 5).point::<f64>(10);
        let b = Halton::new(2, 5).point::<f64>(10);
        let c = Halton::new(2, 6).point::<f64>(10);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn corners_enumerate_box() {
        let cs = corners(&[0.0, -1.0], &[1.0, 2.0]);
        assert_eq!(cs.len(), 4);
        assert!(cs.contains(&vec![1.0, 2.0]));
        assert!(cs.contains(&vec![0.0, -1.0]));
    }
}
