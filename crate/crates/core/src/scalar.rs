//! Scalar abstractions.
//!
//! The aligner's cost model is generic over [`Cost`] so that the same decoder
//! runs on exact integer or rational costs as well as on floats; the metrics
//! are generic over [`Fraction`] so that rates can be computed exactly (as
//! [`Ratio`]) or approximately (as `f32`/`f64`).

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{FromPrimitive, Num};

/// An additive log-domain cost. Lower is better.
///
/// Any copyable numeric type with a total-enough order qualifies: `i32`,
/// `i64`, `f32`, `f64` and `Ratio<i64>` all do.
pub trait Cost: Num + Copy + PartialOrd + Debug + FromPrimitive + Send + Sync + 'static {}

impl<T> Cost for T where T: Num + Copy + PartialOrd + Debug + FromPrimitive + Send + Sync + 'static {}

/// A ratio-valued result such as an error rate or a precision.
pub trait Fraction: Num + Copy + PartialOrd + Debug {
    /// `num / den`. Callers guarantee `den > 0`.
    fn ratio(num: u64, den: u64) -> Self;

    fn to_f64(self) -> f64;
}

impl Fraction for f64 {
    fn ratio(num: u64, den: u64) -> Self {
        num as f64 / den as f64
    }

    fn to_f64(self) -> f64 {
        self
    }
}

impl Fraction for f32 {
    fn ratio(num: u64, den: u64) -> Self {
        (num as f64 / den as f64) as f32
    }

    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Fraction for Ratio<u64> {
    fn ratio(num: u64, den: u64) -> Self {
        Ratio::new(num, den)
    }

    fn to_f64(self) -> f64 {
        *self.numer() as f64 / *self.denom() as f64
    }
}

impl Fraction for Ratio<i64> {
    fn ratio(num: u64, den: u64) -> Self {
        Ratio::new(num as i64, den as i64)
    }

    fn to_f64(self) -> f64 {
        *self.numer() as f64 / *self.denom() as f64
    }
}

/// Harmonic mean of two fractions, zero when both are zero.
pub fn harmonic_mean<F: Fraction>(a: F, b: F) -> F {
    let sum = a + b;
    if sum == F::zero() {
        return F::zero();
    }
    let two = F::one() + F::one();
    two * a * b / sum
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_ratio_reduces() {
        let r = <Ratio<u64> as Fraction>::ratio(4, 6);
        assert_eq!(r, Ratio::new(2, 3));
    }

    #[test]
    fn harmonic_mean_of_equal_values_is_the_value() {
        let third = Ratio::new(2u64, 3);
        assert_eq!(harmonic_mean(third, third), third);
        assert_eq!(harmonic_mean(0.0f64, 0.0), 0.0);
    }
}
