use std::fmt;
use std::ops::Index;

use thiserror::Error;

use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BeliefError {
    #[error("belief is empty")]
    Empty,
    #[error("belief entry {index} is negative ({value})")]
    NegativeEntry { index: usize, value: f64 },
    #[error("belief entry {index} is not finite")]
    NonFinite { index: usize },
    #[error("belief sums to {sum}, outside the repairable range")]
    BadSum { sum: f64 },
}

/// A point of the probability simplex over the hidden states.
#[derive(Clone, PartialEq)]
pub struct Belief<T>(Vec<T>);

impl<T: Scalar> Belief<T> {
    /// Validates `pi`, clamping roundoff-sized negatives to zero and repairing
    /// small normalization drift.
    pub fn new(mut pi: Vec<T>) -> Result<Self, BeliefError> {
        if pi.is_empty() {
            return Err(BeliefError::Empty);
        }
        let neg_floor = -T::roundoff() * T::of(1e-3);
        for (index, v) in pi.iter_mut().enumerate() {
            if !v.is_finite() {
                return Err(BeliefError::NonFinite { index });
            }
            if *v < T::zero() {
                if *v < neg_floor {
                    return Err(BeliefError::NegativeEntry { index, value: v.as_f64() });
                }
                *v = T::zero();
            }
        }
        let sum: T = pi.iter().copied().sum();
        let dev = (sum - T::one()).abs();
        if dev > T::renorm_tol() {
            return Err(BeliefError::BadSum { sum: sum.as_f64() });
        }
        if dev > T::zero() {
            pi.iter_mut().for_each(|v| *v /= sum);
        }
        Ok(Self(pi))
    }

    /// Normalizes an arbitrary nonnegative vector with positive mass.
    pub fn from_unnormalized(mut v: Vec<T>) -> Result<Self, BeliefError> {
        if v.is_empty() {
            return Err(BeliefError::Empty);
        }
        for (index, x) in v.iter_mut().enumerate() {
            if !x.is_finite() {
                return Err(BeliefError::NonFinite { index });
            }
            if *x < T::zero() {
                *x = T::zero();
            }
        }
        let sum: T = v.iter().copied().sum();
        if !(sum > T::zero()) || !sum.is_finite() {
            return Err(BeliefError::BadSum { sum: sum.as_f64() });
        }
        v.iter_mut().for_each(|x| *x /= sum);
        Ok(Self(v))
    }

    pub fn vertex(dim: usize, i: usize) -> Self {
        assert!(i < dim);
        let mut v = vec![T::zero(); dim];
        v[i] = T::one();
        Self(v)
    }

    pub fn uniform(dim: usize) -> Self {
        assert!(dim > 0);
        Self(vec![T::one() / T::of_usize(dim); dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }

    /// Sup-norm distance.
    pub fn dist_inf(&self, other: &Self) -> T {
        self.0.iter().zip(&other.0).fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    /// Convex combination `w·self + (1-w)·other`.
    pub fn mix(&self, other: &Self, w: T) -> Self {
        let v = self.0.iter().zip(&other.0).map(|(&a, &b)| w * a + (T::one() - w) * b).collect();
        Self::new(v).expect("convex combination of beliefs")
    }
}

impl<T> Index<usize> for Belief<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}

impl<T: fmt::Debug> fmt::Debug for Belief<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("Belief").field(&self.0).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamps_roundoff_negatives() {
        let b = Belief::new(vec![1.0, -1e-17, 0.0]).unwrap();
        assert_eq!(b.as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_real_negatives() {
        assert!(matches!(Belief::new(vec![1.1, -0.1]), Err(BeliefError::NegativeEntry { index: 1, .. })));
    }

    #[test]
    fn repairs_small_drift_and_rejects_large() {
        let b = Belief::new(vec![0.5 + 1e-10, 0.5]).unwrap();
        assert!((b.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(matches!(Belief::new(vec![0.6, 0.5]), Err(BeliefError::BadSum { .. })));
    }

    #[test]
    fn unnormalized_needs_mass() {
        assert!(Belief::<f64>::from_unnormalized(vec![0.0, 0.0]).is_err());
        let b = Belief::from_unnormalized(vec![1.0, 3.0]).unwrap();
        assert_eq!(b.as_slice(), &[0.25, 0.75]);
    }
}
