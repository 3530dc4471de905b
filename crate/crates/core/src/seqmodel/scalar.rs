//! Scalar types the tape runs on: `f32` for training and influence, `f64`
//! for gradient checking, and [`DoubleDouble`] for high-precision
//! finite-difference references.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Scalar:
    Copy
    + PartialOrd
    + Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn zero() -> Self;
    fn one() -> Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn neg_infinity() -> Self;

    fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }
}

macro_rules! native_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            fn zero() -> Self {
                0.0
            }
            fn one() -> Self {
                1.0
            }
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            fn ln(self) -> Self {
                <$t>::ln(self)
            }
            fn tanh(self) -> Self {
                <$t>::tanh(self)
            }
            fn neg_infinity() -> Self {
                <$t>::NEG_INFINITY
            }
        }
    };
}

native_scalar!(f32);
native_scalar!(f64);

/// Unevaluated sum `hi + lo` of two `f64`s (about 106 bits of mantissa).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DoubleDouble {
    hi: f64,
    lo: f64,
}

const LN2: DoubleDouble = DoubleDouble { hi: std::f64::consts::LN_2, lo: 2.319_046_813_846_299_6e-17 };

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl DoubleDouble {
    pub const fn new(v: f64) -> Self {
        DoubleDouble { hi: v, lo: 0.0 }
    }

    pub fn hi(self) -> f64 {
        self.hi
    }

    pub fn lo(self) -> f64 {
        self.lo
    }

    fn scale_pow2(self, k: i32) -> Self {
        let f = 2f64.powi(k);
        DoubleDouble { hi: self.hi * f, lo: self.lo * f }
    }

    fn abs(self) -> Self {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }

    /// `exp(x) - 1` for `|x| <= ln(2)/2`, kept accurate near zero.
    fn expm1_reduced(self) -> Self {
        const HALVINGS: i32 = 10;
        let s = self.scale_pow2(-HALVINGS);
        // Taylor series of expm1; |s| < 4e-4 so 14 terms is far past 1e-32
        let mut term = s;
        let mut sum = s;
        for n in 2..=14 {
            term = term * s / DoubleDouble::new(n as f64);
            sum = sum + term;
        }
        // expm1(2y) = 2 expm1(y) + expm1(y)^2
        for _ in 0..HALVINGS {
            sum = sum * DoubleDouble::new(2.0) + sum * sum;
        }
        sum
    }

    fn expm1(self) -> Self {
        if self.hi.abs() <= 0.34 {
            self.expm1_reduced()
        } else {
            self.exp() - DoubleDouble::one()
        }
    }
}

impl From<f64> for DoubleDouble {
    fn from(v: f64) -> Self {
        DoubleDouble::new(v)
    }
}

impl PartialOrd for DoubleDouble {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        match self.hi.partial_cmp(&other.hi) {
            Some(std::cmp::Ordering::Equal) => self.lo.partial_cmp(&other.lo),
            ord => ord,
        }
    }
}

impl Neg for DoubleDouble {
    type Output = Self;
    fn neg(self) -> Self {
        DoubleDouble { hi: -self.hi, lo: -self.lo }
    }
}

impl Add for DoubleDouble {
    type Output = Self;
    fn add(self, b: Self) -> Self {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        DoubleDouble { hi, lo }
    }
}

impl Sub for DoubleDouble {
    type Output = Self;
    fn sub(self, b: Self) -> Self {
        self + (-b)
    }
}

impl Mul for DoubleDouble {
    type Output = Self;
    fn mul(self, b: Self) -> Self {
        let (p, e) = two_prod(self.hi, b.hi);
        let e = e + (self.hi * b.lo + self.lo * b.hi);
        let (hi, lo) = quick_two_sum(p, e);
        DoubleDouble { hi, lo }
    }
}

impl Div for DoubleDouble {
    type Output = Self;
    fn div(self, b: Self) -> Self {
        let q1 = self.hi / b.hi;
        let r = self - b * DoubleDouble::new(q1);
        let q2 = r.hi / b.hi;
        let r = r - b * DoubleDouble::new(q2);
        let q3 = r.hi / b.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        DoubleDouble { hi, lo } + DoubleDouble::new(q3)
    }
}

impl Scalar for DoubleDouble {
    fn zero() -> Self {
        DoubleDouble::new(0.0)
    }

    fn one() -> Self {
        DoubleDouble::new(1.0)
    }

    fn from_f64(v: f64) -> Self {
        DoubleDouble::new(v)
    }

    fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn exp(self) -> Self {
        if self.hi < -745.0 {
            return DoubleDouble::zero();
        }
        if self.hi > 709.0 {
            return DoubleDouble::new(f64::INFINITY);
        }
        let k = (self.hi / std::f64::consts::LN_2).round();
        let r = self - LN2 * DoubleDouble::new(k);
        (r.expm1_reduced() + DoubleDouble::one()).scale_pow2(k as i32)
    }

    fn ln(self) -> Self {
        if self.hi <= 0.0 {
            return DoubleDouble::new(f64::NAN);
        }
        // Newton on exp(y) = x; each step doubles the correct digits
        let mut y = DoubleDouble::new(self.hi.ln());
        for _ in 0..2 {
            y = y + self * (-y).exp() - DoubleDouble::one();
        }
        y
    }

    fn tanh(self) -> Self {
        // tanh(x) = expm1(2x) / (expm1(2x) + 2), evaluated on |x|
        let a = self.abs();
        let t = (a * DoubleDouble::new(2.0)).expm1();
        let v = t / (t + DoubleDouble::new(2.0));
        if self.hi < 0.0 {
            -v
        } else {
            v
        }
    }

    fn neg_infinity() -> Self {
        DoubleDouble::new(f64::NEG_INFINITY)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(v: DoubleDouble, hi: f64, lo: f64) {
        let err = ((v.hi - hi) + (v.lo - lo)).abs();
        assert!(err <= 1e-30 * hi.abs().max(1e-3), "{v:?} vs ({hi:e}, {lo:e})");
    }

    // Reference values from 40-digit arithmetic.
    #[test]
    fn transcendental_functions_reach_double_double_accuracy() {
        let x = DoubleDouble::new(-1.7);
        close(x.exp(), 0.18268352405273466, -5.430659906894856e-18);
        close(DoubleDouble::new(0.3).exp(), 1.3498588075760032, -9.447314673432387e-17);
        close(DoubleDouble::new(2.7).ln(), 0.9932517730102834, 1.072769934004017e-17);
        close(DoubleDouble::new(0.3).tanh(), 0.2913126124515909, -6.4602656586469586e-18);
        close(DoubleDouble::new(-1.7).tanh(), -0.935409070603099, -6.160665782786146e-18);
        close(DoubleDouble::new(0.001).tanh(), 0.0009999996666668, 1.7800613799166557e-20);
    }

    #[test]
    fn division_inverts_multiplication() {
        let a = DoubleDouble::new(1.0) / DoubleDouble::new(3.0);
        let back = a * DoubleDouble::new(3.0) - DoubleDouble::one();
        assert!(back.to_f64().abs() < 1e-31);
    }
}
