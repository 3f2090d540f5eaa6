//! Scalar abstraction shared by every numerical module.
//!
//! All model, filter, grid and solver code is written against [`Scalar`], which
//! is implemented for `f32` and `f64`. Tolerances that only make sense relative
//! to machine precision are exposed as associated functions so that the same
//! code path can run in single precision with looser checks.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
    /// Tolerance on `|sum(pi) - 1|` accepted for a belief without renormalizing.
    fn belief_tol() -> Self;
    /// Largest normalization drift that is silently repaired.
    fn renorm_tol() -> Self;
    /// Generic "this is roundoff" threshold used in structural checks.
    fn roundoff() -> Self;

    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn of_usize(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("usize representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    fn belief_tol() -> Self {
        1e-12
    }
    fn renorm_tol() -> Self {
        1e-9
    }
    fn roundoff() -> Self {
        1e-12
    }
}

impl Scalar for f32 {
    fn belief_tol() -> Self {
        1e-6
    }
    fn renorm_tol() -> Self {
        1e-4
    }
    fn roundoff() -> Self {
        1e-5
    }
}

/// Deterministic pairwise summation. Result depends only on the order of `xs`.
pub fn pairwise_sum<T: Scalar>(xs: &[T]) -> T {
    match xs.len() {
        0 => T::zero(),
        1 => xs[0],
        n if n <= 8 => xs.iter().copied().fold(T::zero(), |a, b| a + b),
        n => {
            let (l, r) = xs.split_at(n / 2);
            pairwise_sum(l) + pairwise_sum(r)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let xs: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 500500.0);
        assert_eq!(pairwise_sum::<f64>(&[]), 0.0);
    }

    #[test]
    fn literal_conversion() {
        assert_eq!(f32::of(0.5), 0.5f32);
        assert_eq!(f64::of_usize(7), 7.0);
    }
}
