//! Scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point type the engine can run on: `f32` or `f64`.
///
/// Configuration values and seeds stay `f64`/`u64`; they enter the generic
/// code through [`Scalar::of`].
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Converts an `f64` constant into this scalar type.
    #[inline]
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("f64 is representable in every Scalar")
    }

    /// Widens (or rounds) to `f64`.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar always converts to f64")
    }

    #[inline]
    fn half() -> Self {
        Self::of(0.5)
    }

    #[inline]
    fn two() -> Self {
        Self::of(2.0)
    }

    /// Logistic function, evaluated without overflow for large `|x|`.
    #[inline]
    fn sigmoid(self) -> Self {
        if self >= Self::zero() {
            Self::one() / (Self::one() + (-self).exp())
        } else {
            let e = self.exp();
            e / (Self::one() + e)
        }
    }

    /// `ln(1 + e^x)` without overflow.
    #[inline]
    fn softplus(self) -> Self {
        if self > Self::zero() {
            self + (-self).exp().ln_1p()
        } else {
            self.exp().ln_1p()
        }
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(0.0f64.sigmoid(), 0.5);
        assert!(800.0f64.sigmoid() <= 1.0);
        assert!((-800.0f64).sigmoid() >= 0.0);
        assert!((-800.0f64).sigmoid().is_finite());
        assert!((1.0f32.sigmoid() - 0.731_058_6).abs() < 1e-6);
    }

    #[test]
    fn softplus_matches_naive_in_safe_range() {
        for x in [-5.0f64, -0.3, 0.0, 0.7, 4.0] {
            let naive = (1.0 + x.exp()).ln();
            assert!((x.softplus() - naive).abs() < 1e-14);
        }
        assert_eq!(1000.0f64.softplus(), 1000.0);
    }
}
