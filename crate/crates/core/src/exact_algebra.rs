//! Exact arithmetic in Q(√2) and dense univariate polynomials over it.
//!
//! Every transfer matrix of the 45° cube orbit has entries of the form
//! `p + q√2` with rational `p`, `q`, and the free-flight length enters
//! polynomially. [`QuadExt`] and [`QuadPoly`] carry those values without any
//! rounding so coefficient lists can be compared for exact equality.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Float image of √2 used when a `QuadExt` is converted to `f64`.
pub const SQRT_2_F64: f64 = std::f64::consts::SQRT_2;

/// An exact number `rat + root·√2` with rational parts.
///
/// Both parts are `BigRational`, which keeps them in lowest terms with a
/// positive denominator, so structural equality is numeric equality.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct QuadExt {
    rat: BigRational,
    root: BigRational,
}

impl QuadExt {
    pub fn new(rat: BigRational, root: BigRational) -> Self {
        QuadExt { rat, root }
    }

    /// `a + b√2` from integers.
    pub fn from_ints(a: i64, b: i64) -> Self {
        QuadExt::new(BigRational::from_integer(a.into()), BigRational::from_integer(b.into()))
    }

    /// `(an/ad) + (bn/bd)√2`.
    ///
    /// Panics if a denominator is zero.
    pub fn from_fracs(an: i64, ad: i64, bn: i64, bd: i64) -> Self {
        QuadExt::new(BigRational::new(an.into(), ad.into()), BigRational::new(bn.into(), bd.into()))
    }

    pub fn rational(q: BigRational) -> Self {
        QuadExt::new(q, BigRational::zero())
    }

    pub fn sqrt2() -> Self {
        QuadExt::from_ints(0, 1)
    }

    pub fn rat_part(&self) -> &BigRational {
        &self.rat
    }

    pub fn root_part(&self) -> &BigRational {
        &self.root
    }

    pub fn is_rational(&self) -> bool {
        self.root.is_zero()
    }

    /// Galois conjugate `a − b√2`.
    pub fn conjugate(&self) -> Self {
        QuadExt::new(self.rat.clone(), -self.root.clone())
    }

    /// Field norm `a² − 2b²`, always rational.
    pub fn norm(&self) -> BigRational {
        let two = BigRational::from_integer(BigInt::from(2));
        &self.rat * &self.rat - two * &self.root * &self.root
    }

    /// Multiplicative inverse, `None` for zero.
    pub fn checked_inv(&self) -> Option<Self> {
        if self.is_zero() {
            return None;
        }
        // norm is nonzero for nonzero input because √2 is irrational
        let n = self.norm();
        Some(QuadExt::new(&self.rat / &n, -(&self.root / &n)))
    }

    /// Exact sign as a small integer.
    ///
    /// When the two parts disagree in sign the larger of `a²` and `2b²`
    /// decides, which avoids ever touching an irrational.
    pub fn signum(&self) -> i32 {
        let sa = sign_of(&self.rat);
        let sb = sign_of(&self.root);
        if sa == 0 {
            return sb;
        }
        if sb == 0 || sa == sb {
            return sa;
        }
        let two = BigRational::from_integer(BigInt::from(2));
        let a2 = &self.rat * &self.rat;
        let b2 = two * &self.root * &self.root;
        match a2.cmp(&b2) {
            Ordering::Greater => sa,
            Ordering::Less => sb,
            Ordering::Equal => unreachable!("a² = 2b² has no rational solution with b ≠ 0"),
        }
    }

    pub fn to_f64(&self) -> f64 {
        let a = self.rat.to_f64().unwrap_or(f64::NAN);
        let b = self.root.to_f64().unwrap_or(f64::NAN);
        a + b * SQRT_2_F64
    }

    /// Compare the float image against `x` with an absolute tolerance.
    pub fn approx_eq_f64(&self, x: f64, tol: f64) -> bool {
        (self.to_f64() - x).abs() <= tol
    }
}

fn sign_of(q: &BigRational) -> i32 {
    if q.is_zero() {
        0
    } else if q.is_positive() {
        1
    } else {
        -1
    }
}

impl PartialOrd for QuadExt {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for QuadExt {
    fn cmp(&self, other: &Self) -> Ordering {
        (self - other).signum().cmp(&0)
    }
}

/// Compact form: zero parts are dropped (`-24*sqrt(2)`, `1/2 - 3*sqrt(2)`).
impl fmt::Display for QuadExt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.rat.is_zero(), self.root.is_zero()) {
            (_, true) => write!(f, "{}", self.rat),
            (true, false) => write!(f, "{}*sqrt(2)", self.root),
            (false, false) if self.root.is_negative() => write!(f, "{} - {}*sqrt(2)", self.rat, -&self.root),
            (false, false) => write!(f, "{} + {}*sqrt(2)", self.rat, self.root),
        }
    }
}

/// Always both parts: `a + b*sqrt(2)`.
impl fmt::Debug for QuadExt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} + {}*sqrt(2)", self.rat, self.root)
    }
}

impl From<i64> for QuadExt {
    fn from(a: i64) -> Self {
        QuadExt::from_ints(a, 0)
    }
}

impl From<BigRational> for QuadExt {
    fn from(q: BigRational) -> Self {
        QuadExt::rational(q)
    }
}

impl Zero for QuadExt {
    fn zero() -> Self {
        QuadExt::new(BigRational::zero(), BigRational::zero())
    }

    fn is_zero(&self) -> bool {
        self.rat.is_zero() && self.root.is_zero()
    }
}

impl One for QuadExt {
    fn one() -> Self {
        QuadExt::new(BigRational::one(), BigRational::zero())
    }
}

impl<'a> Add<&'a QuadExt> for &'a QuadExt {
    type Output = QuadExt;
    fn add(self, rhs: &QuadExt) -> QuadExt {
        QuadExt::new(&self.rat + &rhs.rat, &self.root + &rhs.root)
    }
}

impl<'a> Sub<&'a QuadExt> for &'a QuadExt {
    type Output = QuadExt;
    fn sub(self, rhs: &QuadExt) -> QuadExt {
        QuadExt::new(&self.rat - &rhs.rat, &self.root - &rhs.root)
    }
}

impl<'a> Mul<&'a QuadExt> for &'a QuadExt {
    type Output = QuadExt;
    fn mul(self, rhs: &QuadExt) -> QuadExt {
        // (a + b√2)(c + d√2) = (ac + 2bd) + (ad + bc)√2
        let two = BigRational::from_integer(BigInt::from(2));
        let rat = &self.rat * &rhs.rat + two * &self.root * &rhs.root;
        let root = &self.rat * &rhs.root + &self.root * &rhs.rat;
        QuadExt::new(rat, root)
    }
}

impl Add for QuadExt {
    type Output = QuadExt;
    fn add(self, rhs: QuadExt) -> QuadExt {
        &self + &rhs
    }
}

impl Sub for QuadExt {
    type Output = QuadExt;
    fn sub(self, rhs: QuadExt) -> QuadExt {
        &self - &rhs
    }
}

impl Mul for QuadExt {
    type Output = QuadExt;
    fn mul(self, rhs: QuadExt) -> QuadExt {
        &self * &rhs
    }
}

impl Neg for QuadExt {
    type Output = QuadExt;
    fn neg(self) -> QuadExt {
        QuadExt::new(-self.rat, -self.root)
    }
}

impl AddAssign<&QuadExt> for QuadExt {
    fn add_assign(&mut self, rhs: &QuadExt) {
        self.rat += &rhs.rat;
        self.root += &rhs.root;
    }
}

/// Dense polynomial in one variable with `QuadExt` coefficients.
///
/// `coeffs[k]` is the coefficient of `l^k`. Trailing zeros above degree 0
/// are stripped on construction, so the zero polynomial is `[0]` and derived
/// equality compares canonical forms.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct QuadPoly {
    coeffs: Vec<QuadExt>,
}

impl QuadPoly {
    pub fn new(mut coeffs: Vec<QuadExt>) -> Self {
        while coeffs.len() > 1 && coeffs.last().is_some_and(Zero::is_zero) {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(QuadExt::zero());
        }
        QuadPoly { coeffs }
    }

    /// Build from `(rational, root)` integer pairs, lowest degree first.
    pub fn from_int_pairs(pairs: &[(i64, i64)]) -> Self {
        QuadPoly::new(pairs.iter().map(|&(a, b)| QuadExt::from_ints(a, b)).collect())
    }

    pub fn constant(c: QuadExt) -> Self {
        QuadPoly::new(vec![c])
    }

    /// The monomial `l`.
    pub fn variable() -> Self {
        QuadPoly::new(vec![QuadExt::zero(), QuadExt::one()])
    }

    pub fn coeffs(&self) -> &[QuadExt] {
        &self.coeffs
    }

    pub fn coeff(&self, k: usize) -> QuadExt {
        self.coeffs.get(k).cloned().unwrap_or_else(QuadExt::zero)
    }

    /// Degree, with the zero polynomial reported as degree 0.
    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn leading(&self) -> &QuadExt {
        self.coeffs.last().expect("canonical polynomial is never empty")
    }

    /// Exact Horner evaluation at a rational point.
    pub fn eval(&self, l: &BigRational) -> QuadExt {
        self.eval_quad(&QuadExt::rational(l.clone()))
    }

    /// Exact Horner evaluation at a point of Q(√2).
    pub fn eval_quad(&self, l: &QuadExt) -> QuadExt {
        let mut acc = QuadExt::zero();
        for c in self.coeffs.iter().rev() {
            acc = &(&acc * l) + c;
        }
        acc
    }

    pub fn derivative(&self) -> QuadPoly {
        let coeffs = self.coeffs.iter().enumerate().skip(1).map(|(k, c)| c * &QuadExt::from(k as i64)).collect();
        QuadPoly::new(coeffs)
    }

    /// Float images of the coefficients.
    pub fn to_f64_coeffs(&self) -> Vec<f64> {
        self.coeffs.iter().map(QuadExt::to_f64).collect()
    }
}

/// Floating Horner evaluation, lowest-degree coefficient first.
pub fn horner_f64(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

impl fmt::Display for QuadPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (k, c) in self.coeffs.iter().enumerate() {
            if c.is_zero() && self.coeffs.len() > 1 {
                continue;
            }
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            match k {
                0 => write!(f, "({c})")?,
                1 => write!(f, "({c})*l")?,
                _ => write!(f, "({c})*l^{k}")?,
            }
        }
        Ok(())
    }
}

impl fmt::Debug for QuadPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl Zero for QuadPoly {
    fn zero() -> Self {
        QuadPoly::new(Vec::new())
    }

    fn is_zero(&self) -> bool {
        self.coeffs.len() == 1 && self.coeffs[0].is_zero()
    }
}

impl One for QuadPoly {
    fn one() -> Self {
        QuadPoly::constant(QuadExt::one())
    }
}

impl<'a> Add<&'a QuadPoly> for &'a QuadPoly {
    type Output = QuadPoly;
    fn add(self, rhs: &QuadPoly) -> QuadPoly {
        let n = self.coeffs.len().max(rhs.coeffs.len());
        QuadPoly::new((0..n).map(|k| &self.coeff(k) + &rhs.coeff(k)).collect())
    }
}

impl<'a> Sub<&'a QuadPoly> for &'a QuadPoly {
    type Output = QuadPoly;
    fn sub(self, rhs: &QuadPoly) -> QuadPoly {
        let n = self.coeffs.len().max(rhs.coeffs.len());
        QuadPoly::new((0..n).map(|k| &self.coeff(k) - &rhs.coeff(k)).collect())
    }
}

impl<'a> Mul<&'a QuadPoly> for &'a QuadPoly {
    type Output = QuadPoly;
    fn mul(self, rhs: &QuadPoly) -> QuadPoly {
        let mut out = vec![QuadExt::zero(); self.coeffs.len() + rhs.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, b) in rhs.coeffs.iter().enumerate() {
                out[i + j] += &(a * b);
            }
        }
        QuadPoly::new(out)
    }
}

impl Add for QuadPoly {
    type Output = QuadPoly;
    fn add(self, rhs: QuadPoly) -> QuadPoly {
        &self + &rhs
    }
}

impl Sub for QuadPoly {
    type Output = QuadPoly;
    fn sub(self, rhs: QuadPoly) -> QuadPoly {
        &self - &rhs
    }
}

impl Mul for QuadPoly {
    type Output = QuadPoly;
    fn mul(self, rhs: QuadPoly) -> QuadPoly {
        &self * &rhs
    }
}

impl Neg for QuadPoly {
    type Output = QuadPoly;
    fn neg(self) -> QuadPoly {
        QuadPoly::new(self.coeffs.into_iter().map(Neg::neg).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(a: i64, b: i64) -> QuadExt {
        QuadExt::from_ints(a, b)
    }

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    fn eq3() -> QuadPoly {
        QuadPoly::from_int_pairs(&[(2, 0), (0, -54), (468, 0), (0, -720), (960, 0), (0, -288), (64, 0)])
    }

    #[test]
    fn addition_examples() {
        assert_eq!(q(1, 0) + q(0, 1), q(1, 1));
        assert_eq!(q(0, 0) + q(7, -3), q(7, -3));
        assert_eq!(q(2, -54) + q(0, 54), q(2, 0));
    }

    #[test]
    fn multiplication_examples() {
        assert_eq!(q(0, 1) * q(0, 1), q(2, 0));
        assert_eq!(q(1, 0) * q(5, -2), q(5, -2));
        assert_eq!(q(0, -2) * q(0, 3), q(-12, 0));
    }

    #[test]
    fn rationals_are_normalized() {
        let x = QuadExt::from_fracs(2, -4, 6, 9);
        assert_eq!(x.rat_part(), &rat(-1, 2));
        assert_eq!(x.root_part(), &rat(2, 3));
        assert_eq!(x, QuadExt::from_fracs(-1, 2, 2, 3));
    }

    #[test]
    fn zero_only_when_both_parts_vanish() {
        assert!(QuadExt::zero().is_zero());
        assert!(!q(0, 1).is_zero());
        assert!(!q(1, 0).is_zero());
        assert!(!(q(1, 0) - q(0, 1)).is_zero());
    }

    #[test]
    fn sign_analysis() {
        assert_eq!(q(3, -2).signum(), 1); // 9 > 8
        assert_eq!(q(1, -1).signum(), -1); // 1 < 2
        assert_eq!(q(-3, 2).signum(), -1);
        assert_eq!(q(-1, 1).signum(), 1);
        assert_eq!(q(0, 0).signum(), 0);
        assert!(q(1, 0) < q(0, 1));
        assert!(QuadExt::from_fracs(3, 2, 0, 1) > q(0, 1));
    }

    #[test]
    fn inverse() {
        let x = q(3, -2);
        assert_eq!(&x * &x.checked_inv().unwrap(), QuadExt::one());
        assert!(QuadExt::zero().checked_inv().is_none());
    }

    #[test]
    fn display_format() {
        assert_eq!(format!("{:?}", QuadExt::from_fracs(1, 2, -3, 1)), "1/2 + -3*sqrt(2)");
        assert_eq!(QuadExt::from_fracs(1, 2, -3, 1).to_string(), "1/2 - 3*sqrt(2)");
        assert_eq!(QuadExt::from_ints(0, -24).to_string(), "-24*sqrt(2)");
        assert_eq!(QuadExt::from_ints(7, 0).to_string(), "7");
    }

    #[test]
    fn polynomial_products() {
        let one_plus = QuadPoly::from_int_pairs(&[(1, 0), (1, 0)]);
        let one_minus = QuadPoly::from_int_pairs(&[(1, 0), (-1, 0)]);
        assert_eq!(&one_plus * &one_minus, QuadPoly::from_int_pairs(&[(1, 0), (0, 0), (-1, 0)]));
        assert_eq!(&eq3() * &QuadPoly::one(), eq3());

        // (1 − 2√2 l)² by hand: 1 − 4√2 l + 8 l²
        let p = QuadPoly::from_int_pairs(&[(1, 0), (0, -2)]);
        let sq = &p * &p;
        assert_eq!(sq, QuadPoly::from_int_pairs(&[(1, 0), (0, -4), (8, 0)]));
        let one = BigRational::one();
        let at_one = p.eval(&one);
        assert_eq!(sq.eval(&one), &at_one * &at_one);
    }

    #[test]
    fn canonical_form_strips_trailing_zeros() {
        let a = QuadPoly::from_int_pairs(&[(1, 0), (1, 0)]);
        let b = QuadPoly::from_int_pairs(&[(1, 0), (1, 0), (0, 0)]);
        assert_eq!(a, b);
        assert_eq!(b.degree(), 1);
        assert_eq!(QuadPoly::from_int_pairs(&[(0, 0), (0, 0)]).degree(), 0);
        assert!(QuadPoly::new(vec![]).is_zero());
    }

    #[test]
    fn evaluation() {
        assert_eq!(eq3().eval(&BigRational::zero()), q(2, 0));
        let l2 = QuadPoly::from_int_pairs(&[(0, 0), (0, 0), (1, 0)]);
        assert_eq!(l2.eval(&rat(3, 2)), QuadExt::from_fracs(9, 4, 0, 1));
    }

    #[test]
    fn eval_at_one_eighth_matches_cubic_identity() {
        // trace(M³) = t³ − 3t with t = 2 − 6√2 l + 4 l², evaluated exactly at l = 1/8
        let l = rat(1, 8);
        let t = &(&q(2, 0) - &QuadExt::new(BigRational::zero(), rat(6, 8))) + &QuadExt::rational(rat(4, 64));
        let cheb = &(&(&t * &t) * &t) - &(&q(3, 0) * &t);
        let v = eq3().eval(&l);
        assert_eq!(v, cheb);
        assert!((v.to_f64() - (-1.999_989_838_868_601)).abs() < 1e-14);
    }

    #[test]
    fn derivative_of_eq3() {
        let d = eq3().derivative();
        assert_eq!(d.degree(), 5);
        assert_eq!(d.coeff(0), q(0, -54));
        assert_eq!(d.coeff(5), q(384, 0));
    }

    fn arb_quad() -> impl Strategy<Value = QuadExt> {
        (-50i64..50, 1i64..20, -50i64..50, 1i64..20).prop_map(|(an, ad, bn, bd)| QuadExt::from_fracs(an, ad, bn, bd))
    }

    proptest! {
        #[test]
        fn ring_axioms(x in arb_quad(), y in arb_quad(), z in arb_quad()) {
            prop_assert_eq!(&(&x + &y) + &z, &x + &(&y + &z));
            prop_assert_eq!(&(&x * &y) * &z, &x * &(&y * &z));
            prop_assert_eq!(&x + &y, &y + &x);
            prop_assert_eq!(&x * &y, &y * &x);
            prop_assert_eq!(&x * &(&y + &z), &(&x * &y) + &(&x * &z));
        }

        #[test]
        fn sign_agrees_with_float_image(x in arb_quad()) {
            let f = x.to_f64();
            if f.abs() > 1e-9 {
                prop_assert_eq!(x.signum(), if f > 0.0 { 1 } else { -1 });
            }
        }

        #[test]
        fn poly_degree_is_additive(
            a in proptest::collection::vec(arb_quad(), 1..5),
            b in proptest::collection::vec(arb_quad(), 1..5),
        ) {
            let p = QuadPoly::new(a);
            let r = QuadPoly::new(b);
            prop_assume!(!p.is_zero() && !r.is_zero());
            prop_assert_eq!((&p * &r).degree(), p.degree() + r.degree());
        }

        #[test]
        fn poly_equality_is_an_equivalence(
            a in proptest::collection::vec(arb_quad(), 1..4),
            pad in 0usize..3,
        ) {
            let p = QuadPoly::new(a.clone());
            let mut padded = a;
            padded.extend(std::iter::repeat_n(QuadExt::zero(), pad));
            let r = QuadPoly::new(padded);
            let s = QuadPoly::new(r.coeffs().to_vec());
            prop_assert_eq!(&p, &p);
            prop_assert_eq!(p == r, r == p);
            prop_assert!(p == r && r == s && p == s);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn exact_and_float_horner_agree(num in 0i64..3000) {
            let l = rat(num, 1000);
            let exact = eq3().eval(&l).to_f64();
            let float = horner_f64(&eq3().to_f64_coeffs(), num as f64 / 1000.0);
            prop_assert!((exact - float).abs() <= 1e-9, "{} vs {}", exact, float);
        }
    }
}
