//! Scalar abstractions shared by the symbolic and numerical layers.
//!
//! [`Field`] covers everything the jet algebra and small dense linear algebra
//! need (exact rationals as well as floats). [`Real`] adds the transcendental
//! operations used by the grid and sampling code.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Exact rational numbers with arbitrary precision.
pub type Rational = BigRational;

/// A commutative field with the hooks the jet algebra relies on.
pub trait Field:
    Clone
    + Debug
    + PartialEq
    + Zero
    + One
    + Neg<Output = Self>
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Send
    + Sync
    + 'static
{
    /// `true` for exact arithmetic (no rounding anywhere).
    const EXACT: bool;

    fn from_i64(n: i64) -> Self;

    fn from_ratio(num: i64, den: i64) -> Self {
        Self::from_i64(num) / Self::from_i64(den)
    }

    /// Square root when it exists in the field; `None` for negative input or,
    /// in exact mode, for irrational roots.
    fn sqrt_exact(&self) -> Option<Self>;

    fn to_f64(&self) -> f64;

    /// Magnitude used to rank pivots during elimination.
    fn pivot_weight(&self) -> f64 {
        self.to_f64().abs()
    }

    fn is_positive(&self) -> bool {
        self.to_f64() > 0.0
    }

    /// Numerator/denominator strings for serialization.
    fn to_num_den(&self) -> (String, String);

    fn from_num_den(num: &str, den: &str) -> Option<Self>;
}

impl Field for f64 {
    const EXACT: bool = false;

    fn from_i64(n: i64) -> Self {
        n as f64
    }

    fn sqrt_exact(&self) -> Option<Self> {
        (*self >= 0.0).then(|| self.sqrt())
    }

    fn to_f64(&self) -> f64 {
        *self
    }

    fn to_num_den(&self) -> (String, String) {
        (format!("{:e}", self), "1".to_string())
    }

    fn from_num_den(num: &str, den: &str) -> Option<Self> {
        Some(num.parse::<f64>().ok()? / den.parse::<f64>().ok()?)
    }
}

impl Field for f32 {
    const EXACT: bool = false;

    fn from_i64(n: i64) -> Self {
        n as f32
    }

    fn sqrt_exact(&self) -> Option<Self> {
        (*self >= 0.0).then(|| self.sqrt())
    }

    fn to_f64(&self) -> f64 {
        *self as f64
    }

    fn to_num_den(&self) -> (String, String) {
        (format!("{:e}", self), "1".to_string())
    }

    fn from_num_den(num: &str, den: &str) -> Option<Self> {
        Some(num.parse::<f32>().ok()? / den.parse::<f32>().ok()?)
    }
}

impl Field for BigRational {
    const EXACT: bool = true;

    fn from_i64(n: i64) -> Self {
        BigRational::from_integer(BigInt::from(n))
    }

    fn from_ratio(num: i64, den: i64) -> Self {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }

    fn sqrt_exact(&self) -> Option<Self> {
        if self.is_negative() {
            return None;
        }
        let n = self.numer();
        let d = self.denom();
        let rn = n.sqrt();
        let rd = d.sqrt();
        (&rn * &rn == *n && &rd * &rd == *d).then(|| BigRational::new(rn, rd))
    }

    fn to_f64(&self) -> f64 {
        self.to_f64_lossy()
    }

    fn is_positive(&self) -> bool {
        Signed::is_positive(self)
    }

    fn to_num_den(&self) -> (String, String) {
        (self.numer().to_string(), self.denom().to_string())
    }

    fn from_num_den(num: &str, den: &str) -> Option<Self> {
        let n: BigInt = num.parse().ok()?;
        let d: BigInt = den.parse().ok()?;
        (!d.is_zero()).then(|| BigRational::new(n, d))
    }
}

trait LossyF64 {
    fn to_f64_lossy(&self) -> f64;
}

impl LossyF64 for BigRational {
    fn to_f64_lossy(&self) -> f64 {
        if let Some(v) = ToPrimitive::to_f64(self) {
            return v;
        }
        let n = ToPrimitive::to_f64(self.numer()).unwrap_or(f64::NAN);
        let d = ToPrimitive::to_f64(self.denom()).unwrap_or(f64::NAN);
        n / d
    }
}

/// Floating-point scalars (f32/f64) for the numerical modules.
pub trait Real: Field + num_traits::Float + num_traits::FromPrimitive + Default {
    fn c(x: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(x).expect("representable constant")
    }
}

impl Real for f64 {}
impl Real for f32 {}

/// Parse `"p/q"` or an integer `"p"` into an exact rational.
pub fn parse_rational(s: &str) -> Option<Rational> {
    let s = s.trim();
    let (p, q) = match s.split_once('/') {
        Some((p, q)) => (p.trim(), q.trim()),
        None => (s, "1"),
    };
    let p: BigInt = p.parse().ok()?;
    let q: BigInt = q.parse().ok()?;
    if q.is_zero() {
        return None;
    }
    Some(BigRational::new(p, q))
}

/// Exact rational from a numerator/denominator pair.
pub fn rat(num: i64, den: i64) -> Rational {
    Rational::from_ratio(num, den)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rational_sqrt_only_for_squares() {
        assert_eq!(rat(25, 16).sqrt_exact(), Some(rat(5, 4)));
        assert_eq!(rat(9, 4).sqrt_exact(), Some(rat(3, 2)));
        assert_eq!(rat(2, 1).sqrt_exact(), None);
        assert_eq!(rat(-1, 4).sqrt_exact(), None);
        assert_eq!(Rational::zero().sqrt_exact(), Some(Rational::zero()));
    }

    #[test]
    fn parse_rational_forms() {
        assert_eq!(parse_rational("3/4"), Some(rat(3, 4)));
        assert_eq!(parse_rational(" 1/100 "), Some(rat(1, 100)));
        assert_eq!(parse_rational("-2"), Some(rat(-2, 1)));
        assert_eq!(parse_rational("6/8"), Some(rat(3, 4)));
        assert!(parse_rational("1/0").is_none());
        assert!(parse_rational("0.75").is_none());
        assert!(parse_rational("abc").is_none());
    }

    #[test]
    fn float_sqrt_rejects_negative() {
        assert_eq!(4.0f64.sqrt_exact(), Some(2.0));
        assert!((-1.0f64).sqrt_exact().is_none());
    }
}
