//! Normal-plane transfer matrices for Jacobi fields along billiard orbits.
//!
//! A Jacobi field component is the pair `(J, J')`. Free flight of length `l`
//! acts by `[[1, l], [0, 1]]`; a reflection off a sphere of radius `r` at
//! angle `phi` acts on the component lying in the plane of incidence by
//! `[[1, 0], [-2/(r cos phi), 1]]` and on the transversal component by
//! `[[1, 0], [-2 cos phi / r, 1]]`. Flat mirrors act by the identity.
//!
//! Matrices are generic over [`Scalar`] so the same composition runs on
//! `f64`, on exact [`QuadExt`] numbers, and on [`QuadPoly`] polynomials in
//! the flight length.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::ops::{Mul, Neg, Sub};

use num_traits::{One, Zero};
use thiserror::Error;

use crate::exact_algebra::{QuadExt, QuadPoly};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum JacobiError {
    #[error("free-flight length must be non-negative and finite, got {0}")]
    NegativeLength(f64),
    #[error("sphere radius must be positive and finite, got {0}")]
    BadRadius(f64),
    #[error("reflection angle must lie in [0, pi/2), got {0} rad")]
    BadAngle(f64),
}

/// Ring operations needed to compose transfer matrices.
pub trait Scalar: Clone + PartialEq + fmt::Debug + Zero + One + Sub<Output = Self> + Neg<Output = Self> {}

impl<T> Scalar for T where T: Clone + PartialEq + fmt::Debug + Zero + One + Sub<Output = T> + Neg<Output = T> {}

/// 2×2 matrix acting on `(J, J')`.
#[derive(Clone, PartialEq)]
pub struct Mat2<S> {
    pub m11: S,
    pub m12: S,
    pub m21: S,
    pub m22: S,
}

impl<S: Scalar> Mat2<S> {
    pub fn new(m11: S, m12: S, m21: S, m22: S) -> Self {
        Mat2 { m11, m12, m21, m22 }
    }

    pub fn identity() -> Self {
        Mat2::new(S::one(), S::zero(), S::zero(), S::one())
    }

    /// `[[1, l], [0, 1]]` for any scalar, including a polynomial variable.
    pub fn flight(l: S) -> Self {
        Mat2::new(S::one(), l, S::zero(), S::one())
    }

    /// `[[1, 0], [-k, 1]]`: a thin mirror of focusing power `k`.
    pub fn lens(k: S) -> Self {
        Mat2::new(S::one(), S::zero(), -k, S::one())
    }

    pub fn det(&self) -> S {
        self.m11.clone() * self.m22.clone() - self.m12.clone() * self.m21.clone()
    }

    pub fn trace(&self) -> S {
        self.m11.clone() + self.m22.clone()
    }

    /// Adjugate; equals the inverse whenever `det = 1`.
    pub fn adjugate(&self) -> Self {
        Mat2::new(self.m22.clone(), -self.m12.clone(), -self.m21.clone(), self.m11.clone())
    }

    pub fn pow(&self, n: u32) -> Self {
        let mut acc = Mat2::identity();
        for _ in 0..n {
            acc = &acc * self;
        }
        acc
    }

    pub fn entries(&self) -> [S; 4] {
        [self.m11.clone(), self.m12.clone(), self.m21.clone(), self.m22.clone()]
    }

    pub fn map<T: Scalar>(&self, f: impl Fn(&S) -> T) -> Mat2<T> {
        Mat2::new(f(&self.m11), f(&self.m12), f(&self.m21), f(&self.m22))
    }
}

impl Mat2<f64> {
    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [self.m11 * v[0] + self.m12 * v[1], self.m21 * v[0] + self.m22 * v[1]]
    }

    pub fn max_abs_diff(&self, other: &Mat2<f64>) -> f64 {
        self.entries().iter().zip(other.entries()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

impl<S: Scalar> Mul<&Mat2<S>> for &Mat2<S> {
    type Output = Mat2<S>;
    fn mul(self, rhs: &Mat2<S>) -> Mat2<S> {
        let dot = |a: &S, b: &S, c: &S, d: &S| a.clone() * b.clone() + c.clone() * d.clone();
        Mat2::new(
            dot(&self.m11, &rhs.m11, &self.m12, &rhs.m21),
            dot(&self.m11, &rhs.m12, &self.m12, &rhs.m22),
            dot(&self.m21, &rhs.m11, &self.m22, &rhs.m21),
            dot(&self.m21, &rhs.m12, &self.m22, &rhs.m22),
        )
    }
}

impl<S: Scalar> Mul for Mat2<S> {
    type Output = Mat2<S>;
    fn mul(self, rhs: Mat2<S>) -> Mat2<S> {
        &self * &rhs
    }
}

impl<S: Scalar> fmt::Debug for Mat2<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[[{:?}, {:?}], [{:?}, {:?}]]", self.m11, self.m12, self.m21, self.m22)
    }
}

/// 4×4 matrix on `(J_p, J_p', J_t, J_t')`, viewed as 2×2 blocks ordered
/// (planar, transversal).
#[derive(Clone, PartialEq)]
pub struct Mat4<S> {
    pub m: [[S; 4]; 4],
}

impl<S: Scalar> Mat4<S> {
    pub fn from_rows(m: [[S; 4]; 4]) -> Self {
        Mat4 { m }
    }

    pub fn zero() -> Self {
        Mat4 { m: std::array::from_fn(|_| std::array::from_fn(|_| S::zero())) }
    }

    pub fn identity() -> Self {
        let mut out = Mat4::zero();
        for i in 0..4 {
            out.m[i][i] = S::one();
        }
        out
    }

    pub fn block_diag(upper: &Mat2<S>, lower: &Mat2<S>) -> Self {
        let mut out = Mat4::zero();
        out.set_block(0, 0, upper);
        out.set_block(1, 1, lower);
        out
    }

    /// Block `(bi, bj)` with `bi, bj ∈ {0, 1}`.
    pub fn block(&self, bi: usize, bj: usize) -> Mat2<S> {
        let (r, c) = (2 * bi, 2 * bj);
        Mat2::new(
            self.m[r][c].clone(),
            self.m[r][c + 1].clone(),
            self.m[r + 1][c].clone(),
            self.m[r + 1][c + 1].clone(),
        )
    }

    pub fn set_block(&mut self, bi: usize, bj: usize, b: &Mat2<S>) {
        let (r, c) = (2 * bi, 2 * bj);
        self.m[r][c] = b.m11.clone();
        self.m[r][c + 1] = b.m12.clone();
        self.m[r + 1][c] = b.m21.clone();
        self.m[r + 1][c + 1] = b.m22.clone();
    }

    pub fn trace(&self) -> S {
        (0..4).fold(S::zero(), |acc, i| acc + self.m[i][i].clone())
    }

    /// Determinant by Laplace expansion along the first two rows.
    pub fn det(&self) -> S {
        let minor = |rows: (usize, usize), cols: (usize, usize)| {
            self.m[rows.0][cols.0].clone() * self.m[rows.1][cols.1].clone()
                - self.m[rows.0][cols.1].clone() * self.m[rows.1][cols.0].clone()
        };
        type Pair = (usize, usize);
        // complementary column pairs and the sign of each term
        const PAIRS: [(Pair, Pair, bool); 6] = [
            ((0, 1), (2, 3), true),
            ((0, 2), (1, 3), false),
            ((0, 3), (1, 2), true),
            ((1, 2), (0, 3), true),
            ((1, 3), (0, 2), false),
            ((2, 3), (0, 1), true),
        ];
        PAIRS.iter().fold(S::zero(), |acc, &(top, bottom, positive)| {
            let term = minor((0, 1), top) * minor((2, 3), bottom);
            if positive {
                acc + term
            } else {
                acc - term
            }
        })
    }
}

impl Mat4<f64> {
    pub fn apply(&self, v: [f64; 4]) -> [f64; 4] {
        std::array::from_fn(|i| (0..4).map(|j| self.m[i][j] * v[j]).sum())
    }

    /// Largest absolute entry in the two off-diagonal blocks.
    pub fn off_block_max(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                if (i < 2) != (j < 2) {
                    worst = worst.max(self.m[i][j].abs());
                }
            }
        }
        worst
    }
}

impl<S: Scalar> Mul<&Mat4<S>> for &Mat4<S> {
    type Output = Mat4<S>;
    fn mul(self, rhs: &Mat4<S>) -> Mat4<S> {
        Mat4 {
            m: std::array::from_fn(|i| {
                std::array::from_fn(|j| {
                    (0..4).fold(S::zero(), |acc, k| acc + self.m[i][k].clone() * rhs.m[k][j].clone())
                })
            }),
        }
    }
}

impl<S: Scalar> fmt::Debug for Mat4<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.m.iter()).finish()
    }
}

/// Sphere radius and angle of incidence measured from the normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectionParams {
    r: f64,
    phi: f64,
}

impl ReflectionParams {
    pub fn new(r: f64, phi: f64) -> Result<Self, JacobiError> {
        if !(r.is_finite() && r > 0.0) {
            return Err(JacobiError::BadRadius(r));
        }
        if !(phi.is_finite() && (0.0..FRAC_PI_2).contains(&phi)) {
            return Err(JacobiError::BadAngle(phi));
        }
        Ok(ReflectionParams { r, phi })
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }
}

pub fn free_flight(l: f64) -> Result<Mat2<f64>, JacobiError> {
    if !(l.is_finite() && l >= 0.0) {
        return Err(JacobiError::NegativeLength(l));
    }
    Ok(Mat2::flight(l))
}

pub fn sphere_planar(p: &ReflectionParams) -> Mat2<f64> {
    Mat2::lens(2.0 / (p.r * p.phi.cos()))
}

pub fn sphere_transversal(p: &ReflectionParams) -> Mat2<f64> {
    Mat2::lens(2.0 * p.phi.cos() / p.r)
}

/// A flat mirror has zero curvature and leaves `(J, J')` unchanged.
pub fn flat_reflection<S: Scalar>() -> Mat2<S> {
    Mat2::identity()
}

/// `(T·L·P·L)³` from its three ingredients, for any scalar type.
pub fn compose_period_block<S: Scalar>(flight: &Mat2<S>, planar: &Mat2<S>, transversal: &Mat2<S>) -> Mat2<S> {
    period_factor(flight, planar, transversal).pow(3)
}

/// The single factor `T·L·P·L`.
pub fn period_factor<S: Scalar>(flight: &Mat2<S>, planar: &Mat2<S>, transversal: &Mat2<S>) -> Mat2<S> {
    &(&(transversal * flight) * planar) * flight
}

/// Block-diagonal monodromy `diag(A, (T·L)·A·(T·L)⁻¹)`.
pub fn compose_full_monodromy<S: Scalar>(flight: &Mat2<S>, planar: &Mat2<S>, transversal: &Mat2<S>) -> Mat4<S> {
    let a = compose_period_block(flight, planar, transversal);
    let tl = transversal * flight;
    // det(T·L) = 1, so the adjugate is the inverse
    let lower = &(&tl * &a) * &tl.adjugate();
    Mat4::block_diag(&a, &lower)
}

fn validate_block_args(l: f64, phi: f64, r: f64) -> Result<(Mat2<f64>, ReflectionParams), JacobiError> {
    let flight = free_flight(l)?;
    let params = ReflectionParams::new(r, phi)?;
    Ok((flight, params))
}

/// Floating `(T·L·P·L)³` at flight length `l`, angle `phi`, radius `r`.
pub fn period_block(l: f64, phi: f64, r: f64) -> Result<Mat2<f64>, JacobiError> {
    let (flight, p) = validate_block_args(l, phi, r)?;
    Ok(compose_period_block(&flight, &sphere_planar(&p), &sphere_transversal(&p)))
}

pub fn full_monodromy(l: f64, phi: f64, r: f64) -> Result<Mat4<f64>, JacobiError> {
    let (flight, p) = validate_block_args(l, phi, r)?;
    Ok(compose_full_monodromy(&flight, &sphere_planar(&p), &sphere_transversal(&p)))
}

/// Exact matrices of the 45° orbit on the unit sphere.
///
/// At `phi = pi/4` we have `2/cos phi = 2√2` and `2 cos phi = √2`, so every
/// entry lives in Q(√2).
pub mod exact {
    use super::*;

    pub fn planar_quarter_pi() -> Mat2<QuadExt> {
        Mat2::lens(QuadExt::from_ints(0, 2))
    }

    pub fn transversal_quarter_pi() -> Mat2<QuadExt> {
        Mat2::lens(QuadExt::sqrt2())
    }

    fn lift(m: &Mat2<QuadExt>) -> Mat2<QuadPoly> {
        m.map(|x| QuadPoly::constant(x.clone()))
    }

    /// `T·L·P·L` with the flight length left symbolic.
    pub fn period_factor_poly() -> Mat2<QuadPoly> {
        period_factor(
            &Mat2::flight(QuadPoly::variable()),
            &lift(&planar_quarter_pi()),
            &lift(&transversal_quarter_pi()),
        )
    }

    /// `(T·L·P·L)³` as a matrix of polynomials in the flight length.
    pub fn period_block_poly() -> Mat2<QuadPoly> {
        compose_period_block(
            &Mat2::flight(QuadPoly::variable()),
            &lift(&planar_quarter_pi()),
            &lift(&transversal_quarter_pi()),
        )
    }

    pub fn full_monodromy_poly() -> Mat4<QuadPoly> {
        compose_full_monodromy(
            &Mat2::flight(QuadPoly::variable()),
            &lift(&planar_quarter_pi()),
            &lift(&transversal_quarter_pi()),
        )
    }

    /// `(T·L·P·L)³` at an exact flight length in Q(√2).
    pub fn period_block_at(l: &QuadExt) -> Mat2<QuadExt> {
        compose_period_block(&Mat2::flight(l.clone()), &planar_quarter_pi(), &transversal_quarter_pi())
    }

    pub fn full_monodromy_at(l: &QuadExt) -> Mat4<QuadExt> {
        compose_full_monodromy(&Mat2::flight(l.clone()), &planar_quarter_pi(), &transversal_quarter_pi())
    }
}
