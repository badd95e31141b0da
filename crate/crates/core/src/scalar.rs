//! Scalar abstraction shared by every numeric path in the crate.
//!
//! All statistics are written against [`Real`], so the same code runs in
//! `f64` (the default everywhere) and `f32`.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar usable by the survival, matching and test code.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + FromStr
    + Default
    + Debug
    + Display
    + Sum
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Lossy conversion from `f64`; panics only for types that cannot hold a finite f64 at all.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("scalar conversion from f64")
    }

    #[inline]
    fn of_count(k: usize) -> Self {
        Self::from_usize(k).expect("scalar conversion from usize")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Real for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + FromStr
        + Default
        + Debug
        + Display
        + Sum
        + Send
        + Sync
        + Serialize
        + DeserializeOwned
        + 'static
{
}

/// Pseudo-inverse `x⁻ = 1{x≠0}/x`.
#[inline]
pub fn pinv<T: Real>(x: T) -> T {
    if x == T::zero() {
        T::zero()
    } else {
        x.recip()
    }
}

/// Compensated (Kahan–Babuška/Neumaier) running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum<T> {
    sum: T,
    carry: T,
}

impl<T: Real> KahanSum<T> {
    pub fn new() -> Self {
        Self {
            sum: T::zero(),
            carry: T::zero(),
        }
    }

    #[inline]
    pub fn add(&mut self, x: T) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry = self.carry + ((self.sum - t) + x);
        } else {
            self.carry = self.carry + ((x - t) + self.sum);
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> T {
        self.sum + self.carry
    }
}

impl<T: Real> FromIterator<T> for KahanSum<T> {
    fn from_iter<I: IntoIterator<Item = T>>(iter: I) -> Self {
        let mut acc = Self::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

/// Compensated sum of an iterator.
pub fn kahan_sum<T: Real, I: IntoIterator<Item = T>>(iter: I) -> T {
    iter.into_iter().collect::<KahanSum<T>>().value()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinv_of_zero_is_zero() {
        assert_eq!(pinv(0.0_f64), 0.0);
        assert_eq!(pinv(-0.0_f64), 0.0);
        assert_eq!(pinv(4.0_f64), 0.25);
        assert_eq!(pinv(2.0_f32), 0.5);
    }

    #[test]
    fn kahan_recovers_small_terms() {
        let mut xs = vec![1.0e16_f64];
        xs.extend(std::iter::repeat(1.0).take(1000));
        xs.push(-1.0e16);
        assert_eq!(kahan_sum(xs.iter().copied()), 1000.0);
        let naive: f64 = xs.iter().sum();
        assert_ne!(naive, 1000.0);
    }
}
