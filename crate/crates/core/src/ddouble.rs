//! Double-double arithmetic built from error-free transformations.
//!
//! Only what the trace evaluator needs: add, sub, mul, div and conversion.
//! A value is the unevaluated sum `hi + lo` with `|lo| <= ulp(hi)/2`,
//! giving roughly 106 bits of significand.

use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct DDouble {
    hi: f64,
    lo: f64,
}

/// Knuth's TwoSum: `a + b = s + e` exactly.
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let e = (a - (s - bb)) + (b - bb);
    (s, e)
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

/// `a · b = p + e` exactly, via fused multiply-add.
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl DDouble {
    pub(crate) const fn from_f64(x: f64) -> Self {
        DDouble { hi: x, lo: 0.0 }
    }

    pub(crate) const fn from_parts(hi: f64, lo: f64) -> Self {
        DDouble { hi, lo }
    }

    pub(crate) fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub(crate) fn recip(self) -> Self {
        DDouble::from_f64(1.0) / self
    }
}

/// √2 to double-double precision.
pub(crate) const SQRT_2: DDouble = DDouble::from_parts(std::f64::consts::SQRT_2, -9.667293313452913e-17);

impl Add for DDouble {
    type Output = DDouble;
    fn add(self, rhs: DDouble) -> DDouble {
        let (s, e) = two_sum(self.hi, rhs.hi);
        let (t, f) = two_sum(self.lo, rhs.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        DDouble { hi, lo }
    }
}

impl Neg for DDouble {
    type Output = DDouble;
    fn neg(self) -> DDouble {
        DDouble { hi: -self.hi, lo: -self.lo }
    }
}

impl Sub for DDouble {
    type Output = DDouble;
    fn sub(self, rhs: DDouble) -> DDouble {
        self + (-rhs)
    }
}

impl Mul for DDouble {
    type Output = DDouble;
    fn mul(self, rhs: DDouble) -> DDouble {
        let (p, e) = two_prod(self.hi, rhs.hi);
        let e = e + (self.hi * rhs.lo + self.lo * rhs.hi);
        let (hi, lo) = quick_two_sum(p, e);
        DDouble { hi, lo }
    }
}

impl std::ops::Div for DDouble {
    type Output = DDouble;
    fn div(self, rhs: DDouble) -> DDouble {
        // long division: two quotient digits and a final correction
        let q1 = self.hi / rhs.hi;
        let r = self - rhs * DDouble::from_f64(q1);
        let q2 = r.hi / rhs.hi;
        let r = r - rhs * DDouble::from_f64(q2);
        let q3 = r.hi / rhs.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        DDouble { hi, lo } + DDouble::from_f64(q3)
    }
}

impl num_traits::Zero for DDouble {
    fn zero() -> Self {
        DDouble::from_f64(0.0)
    }

    fn is_zero(&self) -> bool {
        self.hi == 0.0 && self.lo == 0.0
    }
}

impl num_traits::One for DDouble {
    fn one() -> Self {
        DDouble::from_f64(1.0)
    }
}

impl From<f64> for DDouble {
    fn from(x: f64) -> Self {
        DDouble::from_f64(x)
    }
}

/// Horner evaluation with double-double accumulation, lowest degree first.
pub(crate) fn horner(coeffs: &[DDouble], x: DDouble) -> DDouble {
    coeffs.iter().rev().fold(DDouble::from_f64(0.0), |acc, &c| acc * x + c)
}
