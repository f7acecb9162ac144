//! Scalar abstractions.
//!
//! Two tiers are used throughout the crate:
//!
//! * [`Field`]: an ordered field with a notion of "numerically zero". The
//!   transportation LP and the dual-face machinery only need field
//!   operations, so they run unchanged over `f64`, `f32` and exact
//!   rationals ([`num_rational::BigRational`]).
//! * [`Real`]: a floating-point field (`f32`/`f64`) with transcendental
//!   functions. Integration, the semidiscrete solver and all inference
//!   code is written against this trait.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Float, FromPrimitive, Num, Signed, ToPrimitive, Zero};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Ordered field used by the exact/inexact linear programming code.
pub trait Field:
    Num + Signed + Clone + PartialOrd + Debug + Send + Sync + FromPrimitive + ToPrimitive + 'static
{
    /// Whether the value should be treated as zero by pivoting rules.
    /// Exact types compare against zero; floating types use a small
    /// absolute threshold.
    fn is_negligible(&self) -> bool;

    /// Whether arithmetic is exact (no rounding).
    fn is_exact() -> bool {
        false
    }

    /// Strictly positive beyond the negligibility threshold.
    fn is_pos(&self) -> bool {
        !self.is_negligible() && *self > Self::zero()
    }

    /// Strictly negative beyond the negligibility threshold.
    fn is_neg(&self) -> bool {
        !self.is_negligible() && *self < Self::zero()
    }

    /// Lossy conversion used for reporting.
    fn as_f64(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Conversion from a float literal. Exact for rationals (binary
    /// expansion of the float), identity up to rounding for floats.
    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }
}

impl Field for f64 {
    fn is_negligible(&self) -> bool {
        self.abs() <= 1e-11
    }
}

impl Field for f32 {
    fn is_negligible(&self) -> bool {
        self.abs() <= 1e-5
    }
}

impl Field for BigRational {
    fn is_negligible(&self) -> bool {
        self.is_zero()
    }

    fn is_exact() -> bool {
        true
    }
}

/// Floating-point scalar for the numerical core.
pub trait Real:
    Field + Float + Display + Default + Sum + Serialize + DeserializeOwned
{
    /// Converts an `f64` constant into `Self`.
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("representable constant")
    }

    /// Converts a count into `Self`.
    fn of_usize(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("representable count")
    }

    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f64 {}
impl Real for f32 {}

/// Exact rational from an integer numerator and denominator.
pub fn rational(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// Fixed-order pairwise summation.
///
/// The reduction tree depends only on the slice length, so results are
/// bit-identical regardless of how the summands were produced.
pub fn pairwise_sum<T: Real>(xs: &[T]) -> T {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        let mut acc = T::zero();
        for &x in xs {
            acc = acc + x;
        }
        return acc;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}
