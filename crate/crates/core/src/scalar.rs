//! Numeric traits the closed-form and oracle code is generic over.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Rem, Sub};

use num_traits::{FromPrimitive, Num, One, Zero};
use twofloat::TwoFloat;

/// A field with ordering: enough for birth-death weight recurrences.
///
/// Implemented for `f32`, `f64`, [`DoubleDouble`] and exact rationals such
/// as `num_rational::BigRational`.
pub trait Scalar: Num + Clone + PartialOrd + FromPrimitive + Debug {
    fn from_usize_exact(n: usize) -> Self {
        Self::from_usize(n).expect("integer representable in scalar type")
    }
}

impl<T> Scalar for T where T: Num + Clone + PartialOrd + FromPrimitive + Debug {}

/// Floating point scalar with a known working precision.
pub trait Real: Scalar + Copy + Neg<Output = Self> {
    /// Relative rounding error of one arithmetic operation.
    fn unit_roundoff() -> f64;

    /// Exact conversion from `f64`.
    fn lift(x: f64) -> Self;

    /// Nearest `f64`.
    fn lower(self) -> f64;

    fn magnitude(self) -> Self {
        if self < Self::zero() { -self } else { self }
    }

    /// `self^n` by binary powering (at most `2 log2 n` roundings).
    fn pow_n(self, mut n: u32) -> Self {
        let mut base = self;
        let mut acc = Self::one();
        while n > 0 {
            if n & 1 == 1 {
                acc = acc * base;
            }
            base = base * base;
            n >>= 1;
        }
        acc
    }

    fn is_finite_value(self) -> bool {
        self.lower().is_finite()
    }

    /// `e^x` by argument halving and a Taylor series carried out in `Self`,
    /// so the result keeps the full precision of the type.
    fn exp_series(x: Self) -> Self {
        let half = Self::lift(0.5);
        let tiny = Self::lift(Self::unit_roundoff());
        let mut reduced = x;
        let mut squarings = 0u32;
        while reduced.magnitude() > half {
            reduced = reduced * half;
            squarings += 1;
        }
        let mut sum = Self::one();
        let mut term = Self::one();
        let mut n = 1usize;
        loop {
            term = term * reduced / Self::from_usize_exact(n);
            sum = sum + term;
            if term.magnitude() <= sum.magnitude() * tiny {
                break;
            }
            n += 1;
        }
        for _ in 0..squarings {
            sum = sum * sum;
        }
        sum
    }
}

impl Real for f32 {
    fn unit_roundoff() -> f64 {
        f32::EPSILON as f64 / 2.0
    }

    fn lift(x: f64) -> Self {
        x as f32
    }

    fn lower(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn unit_roundoff() -> f64 {
        f64::EPSILON / 2.0
    }

    fn lift(x: f64) -> Self {
        x
    }

    fn lower(self) -> f64 {
        self
    }
}

/// Double-double number (about 106 significant bits).
///
/// Addition and multiplication are `twofloat`'s. Division is redone here:
/// `twofloat` 0.8 forms the reciprocal residual without a fused
/// multiply-add and loses the low word (`(1/3) * 3 - 1` comes out near
/// `-5.6e-17`). Its `FromPrimitive::from_f64` also truncates to an integer.
#[derive(Clone, Copy, PartialEq, PartialOrd)]
pub struct DoubleDouble(TwoFloat);

impl DoubleDouble {
    pub fn new(x: f64) -> Self {
        DoubleDouble(TwoFloat::from(x))
    }

    pub fn hi(self) -> f64 {
        self.0.hi()
    }

    pub fn lo(self) -> f64 {
        self.0.lo()
    }
}

impl Debug for DoubleDouble {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "DoubleDouble({:e} + {:e})", self.hi(), self.lo())
    }
}

impl From<f64> for DoubleDouble {
    fn from(x: f64) -> Self {
        DoubleDouble::new(x)
    }
}

impl Add for DoubleDouble {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        DoubleDouble(self.0 + rhs.0)
    }
}

impl Sub for DoubleDouble {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        DoubleDouble(self.0 - rhs.0)
    }
}

impl Mul for DoubleDouble {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        DoubleDouble(self.0 * rhs.0)
    }
}

impl Div for DoubleDouble {
    type Output = Self;
    /// Long division: three `f64` quotient digits, each remainder formed in
    /// double-double.
    fn div(self, rhs: Self) -> Self {
        let b = rhs.0;
        let q1 = self.0.hi() / b.hi();
        let r = self.0 - b * q1;
        let q2 = r.hi() / b.hi();
        let r = r - b * q2;
        let q3 = r.hi() / b.hi();
        DoubleDouble(TwoFloat::new_add(q1, q2) + q3)
    }
}

impl Rem for DoubleDouble {
    type Output = Self;
    fn rem(self, rhs: Self) -> Self {
        DoubleDouble(self.0 % rhs.0)
    }
}

impl Neg for DoubleDouble {
    type Output = Self;
    fn neg(self) -> Self {
        DoubleDouble(-self.0)
    }
}

impl Zero for DoubleDouble {
    fn zero() -> Self {
        DoubleDouble::new(0.0)
    }
    fn is_zero(&self) -> bool {
        self.hi() == 0.0 && self.lo() == 0.0
    }
}

impl One for DoubleDouble {
    fn one() -> Self {
        DoubleDouble::new(1.0)
    }
}

impl Num for DoubleDouble {
    type FromStrRadixErr = num_traits::ParseFloatError;
    fn from_str_radix(s: &str, radix: u32) -> Result<Self, Self::FromStrRadixErr> {
        f64::from_str_radix(s, radix).map(DoubleDouble::new)
    }
}

impl FromPrimitive for DoubleDouble {
    fn from_i64(n: i64) -> Option<Self> {
        Some(DoubleDouble(TwoFloat::from(n)))
    }
    fn from_u64(n: u64) -> Option<Self> {
        Some(DoubleDouble(TwoFloat::from(n)))
    }
    fn from_f64(x: f64) -> Option<Self> {
        Some(DoubleDouble::new(x))
    }
}

impl Real for DoubleDouble {
    fn unit_roundoff() -> f64 {
        // 2^-104, a bit of slack over the ideal 2^-106 for pair arithmetic.
        4.930380657631324e-32
    }

    fn lift(x: f64) -> Self {
        DoubleDouble::new(x)
    }

    fn lower(self) -> f64 {
        self.hi() + self.lo()
    }
}

pub(crate) fn min_usize<T: Scalar>(a: usize, b: usize) -> T {
    T::from_usize_exact(a.min(b))
}
