//! Numeric abstractions shared by the timing, learning and pipeline code.
//!
//! Two tiers are used:
//!
//! * [`Scalar`] is anything with exact field arithmetic and an ordering. It is
//!   enough for class bucketing and for the cycle/energy accounting of the
//!   pipeline model, and is implemented by `f32`, `f64` and `Ratio<i64>`.
//! * [`Real`] adds the transcendental functions the learners need and is
//!   implemented by `f32` and `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_rational::Ratio;
use num_traits::{Float, FromPrimitive, Num, NumAssign, Signed, ToPrimitive};

/// Ordered field element used for exact or approximate accounting.
pub trait Scalar:
    'static + Copy + Send + Sync + Num + PartialOrd + FromPrimitive + ToPrimitive + Debug + Display
{
    fn from_u64_lossy(v: u64) -> Self {
        Self::from_u64(v).expect("u64 representable in scalar")
    }

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 representable in scalar")
    }

    /// Builds the exact quotient `num / den`.
    fn ratio(num: i64, den: i64) -> Self {
        Self::from_i64(num).expect("numerator") / Self::from_i64(den).expect("denominator")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
impl Scalar for Ratio<i64> {}

/// Floating point scalar used by the classifiers and the feature transform.
pub trait Real: Scalar + Float + NumAssign + Signed + Sum + Default {
    fn lit(v: f64) -> Self {
        <Self as Scalar>::from_f64_lossy(v)
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_is_exact() {
        let r: Ratio<i64> = Scalar::ratio(11, 20);
        assert_eq!(r * Ratio::from_integer(4000), Ratio::from_integer(2200));
        let f: f64 = Scalar::ratio(11, 20);
        assert_eq!(f, 0.55);
    }
}
