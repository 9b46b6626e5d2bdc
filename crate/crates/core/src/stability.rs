//! Trace polynomials of the period block and everything derived from them:
//! classification, stability intervals with their tangency points, the
//! stable window just above `l = 1/cos(phi)`, and grid sweeps.
//!
//! For the twelve-reflection orbit at angle `phi` the period-block trace is
//!
//! ```text
//! 2 - 36 u1 l + (228 + 96 u2) l^2 - 64 u3 l^3 + (480 + 192 u2) l^4 - 192 u1 l^5 + 64 l^6
//! u1 = sec + cos,  u2 = sec^2 + cos^2,  u3 = sec^3 + cos^3 + 6 sec + 6 cos
//! ```
//!
//! which is `t^3 - 3t` for `t = 2 - 4 u1 l + 4 l^2`, the trace of one factor.
//! The expanded form cancels heavily once `sec phi` is large (terms reach
//! 1e8 near `phi = 85 deg`), so it is evaluated in double-double arithmetic.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::io::{self, Write};

use num_complex::Complex64;
use num_traits::ToPrimitive;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::ddouble::{self, DDouble};
use crate::exact_algebra::{QuadExt, QuadPoly};
use crate::jacobi::exact::period_block_poly;
use crate::numfmt::{fmt17, serialize_f64, serialize_opt_f64};

/// `|trace| - 2` within this band is classified parabolic.
pub const PARABOLIC_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StabilityError {
    #[error("reflection angle {0} rad is outside the allowed range {1}")]
    BadAngle(f64, &'static str),
    #[error("length must be non-negative and finite, got {0}")]
    BadLength(f64),
    #[error("root solver failed on bracket [{lo}, {hi}]: {reason}")]
    SolverFailure { lo: f64, hi: f64, reason: String },
    #[error("stable window above 1/cos(phi) at phi = {phi} is below solver resolution ({eps:e})")]
    DegenerateWindow { phi: f64, eps: f64 },
}

fn check_phi_open(phi: f64) -> Result<(), StabilityError> {
    if phi.is_finite() && phi > 0.0 && phi < FRAC_PI_2 {
        Ok(())
    } else {
        Err(StabilityError::BadAngle(phi, "(0, pi/2)"))
    }
}

fn check_length(l: f64) -> Result<(), StabilityError> {
    if l.is_finite() && l >= 0.0 {
        Ok(())
    } else {
        Err(StabilityError::BadLength(l))
    }
}

/// Period-block trace as a polynomial in the flight length at fixed angle.
#[derive(Debug, Clone)]
pub struct TracePoly {
    phi: f64,
    exact: Option<QuadPoly>,
    coeffs: Vec<DDouble>,
}

impl TracePoly {
    pub fn phi(&self) -> f64 {
        self.phi
    }

    /// The exact coefficients, present only for the 45° orbit.
    pub fn exact(&self) -> Option<&QuadPoly> {
        self.exact.as_ref()
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Coefficients rounded to `f64`, lowest degree first.
    pub fn coeffs_f64(&self) -> Vec<f64> {
        self.coeffs.iter().map(|c| c.to_f64()).collect()
    }

    pub fn eval(&self, l: f64) -> f64 {
        ddouble::horner(&self.coeffs, l.into()).to_f64()
    }

    /// Derivative in `l`.
    pub fn eval_derivative(&self, l: f64) -> f64 {
        let d: Vec<DDouble> =
            self.coeffs.iter().enumerate().skip(1).map(|(k, &c)| c * DDouble::from_f64(k as f64)).collect();
        ddouble::horner(&d, l.into()).to_f64()
    }
}

fn quad_to_dd(x: &QuadExt) -> DDouble {
    // coefficients here are integers, so each part converts exactly
    let a = x.rat_part().to_f64().unwrap_or(f64::NAN);
    let b = x.root_part().to_f64().unwrap_or(f64::NAN);
    DDouble::from_f64(a) + DDouble::from_f64(b) * ddouble::SQRT_2
}

/// Exact trace of `(T·L·P·L)³` at 45° on the unit sphere, expanded from the
/// matrix product in Q(√2).
pub fn trace_poly_exact() -> TracePoly {
    let poly = period_block_poly().trace();
    let coeffs = poly.coeffs().iter().map(quad_to_dd).collect();
    TracePoly { phi: FRAC_PI_4, exact: Some(poly), coeffs }
}

/// Closed-form trace coefficients at angle `phi` (unit sphere).
fn closed_form_coeffs(phi: f64) -> Vec<DDouble> {
    let c = DDouble::from_f64(phi.cos());
    let s = c.recip();
    let k = DDouble::from_f64;
    let u1 = s + c;
    let u2 = s * s + c * c;
    let u3 = s * s * s + c * c * c + k(6.0) * s + k(6.0) * c;
    vec![
        k(2.0),
        -(k(36.0) * u1),
        k(228.0) + k(96.0) * u2,
        -(k(64.0) * u3),
        k(480.0) + k(192.0) * u2,
        -(k(192.0) * u1),
        k(64.0),
    ]
}

/// Trace polynomial at angle `phi`; exact coefficients ride along at 45°.
pub fn trace_poly(phi: f64) -> Result<TracePoly, StabilityError> {
    check_phi_open(phi)?;
    if phi == FRAC_PI_4 {
        return Ok(trace_poly_exact());
    }
    Ok(TracePoly { phi, exact: None, coeffs: closed_form_coeffs(phi) })
}

/// Closed-form coefficients rounded to `f64`, lowest degree first.
pub fn trace_coefficients(phi: f64) -> Result<[f64; 7], StabilityError> {
    check_phi_open(phi)?;
    let c = closed_form_coeffs(phi);
    Ok(std::array::from_fn(|k| c[k].to_f64()))
}

/// Period-block trace at `(l, phi)` from the closed-form polynomial.
pub fn trace_value(l: f64, phi: f64) -> Result<f64, StabilityError> {
    check_phi_open(phi)?;
    check_length(l)?;
    Ok(ddouble::horner(&closed_form_coeffs(phi), l.into()).to_f64())
}

/// Trace of a single `T·L·P·L` factor: `2 - 4(sec + cos) l + 4 l²`.
pub fn single_factor_trace(l: f64, phi: f64) -> Result<f64, StabilityError> {
    check_phi_open(phi)?;
    check_length(l)?;
    let c = phi.cos();
    Ok(2.0 - 4.0 * (1.0 / c + c) * l + 4.0 * l * l)
}

/// Independent route to the trace: `t³ - 3t` with `t` the single-factor
/// trace, valid because every factor is unimodular.
pub fn chebyshev_trace(l: f64, phi: f64) -> Result<f64, StabilityError> {
    let t = single_factor_trace(l, phi)?;
    Ok(t * t * t - 3.0 * t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StabilityClass {
    EllipticStable,
    Parabolic,
    HyperbolicUnstable,
}

impl StabilityClass {
    pub fn label(self) -> &'static str {
        match self {
            StabilityClass::EllipticStable => "elliptic-stable",
            StabilityClass::Parabolic => "parabolic",
            StabilityClass::HyperbolicUnstable => "hyperbolic-unstable",
        }
    }

    pub fn is_stable(self) -> bool {
        self == StabilityClass::EllipticStable
    }
}

impl std::fmt::Display for StabilityClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    pub class: StabilityClass,
    pub trace: f64,
    pub eigenvalues: [Complex64; 2],
}

impl Classification {
    /// Classify a unimodular 2×2 block from its trace alone.
    pub fn from_trace(trace: f64) -> Self {
        Self::with_band(trace, PARABOLIC_TOL)
    }

    /// As [`Self::from_trace`] with `||trace| - 2| <= band` counted parabolic.
    pub fn with_band(trace: f64, band: f64) -> Self {
        let excess = trace.abs() - 2.0;
        let class = if excess.abs() <= band {
            StabilityClass::Parabolic
        } else if excess < 0.0 {
            StabilityClass::EllipticStable
        } else {
            StabilityClass::HyperbolicUnstable
        };
        let disc = trace * trace - 4.0;
        let eigenvalues = if class == StabilityClass::Parabolic {
            let lam = Complex64::new(trace.signum(), 0.0);
            [lam, lam]
        } else if disc < 0.0 {
            let im = (-disc).sqrt() / 2.0;
            [Complex64::new(trace / 2.0, im), Complex64::new(trace / 2.0, -im)]
        } else {
            // larger root first; the smaller one from det = 1 avoids cancellation
            let big = (trace + trace.signum() * disc.sqrt()) / 2.0;
            [Complex64::new(big, 0.0), Complex64::new(1.0 / big, 0.0)]
        };
        Classification { class, trace, eigenvalues }
    }

    /// Largest eigenvalue modulus.
    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

pub fn classify(l: f64, phi: f64) -> Result<Classification, StabilityError> {
    Ok(Classification::from_trace(trace_value(l, phi)?))
}

/// Tuning for the interval scan.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Pre-scan step as a fraction of `l_max`.
    pub scan_step_fraction: f64,
    /// Bisection stops once the bracket is this narrow.
    pub root_tol: f64,
    /// A polished local minimum of `|trace ∓ 2|` below this is a tangency.
    pub tangency_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { scan_step_fraction: 1e-3, root_tol: 1e-12, tangency_tol: 1e-9 }
    }
}

/// Open interval of flight lengths with `|trace| < 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    #[serde(serialize_with = "serialize_f64")]
    pub lo: f64,
    #[serde(serialize_with = "serialize_f64")]
    pub hi: f64,
    /// The upper end is the scan limit, not a root.
    pub truncated: bool,
}

impl Interval {
    pub fn contains(&self, l: f64) -> bool {
        l > self.lo && l < self.hi
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// A root of `trace - level` with `level = ±2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticalPoint {
    #[serde(serialize_with = "serialize_f64")]
    pub l: f64,
    #[serde(serialize_with = "serialize_f64")]
    pub trace: f64,
    /// `+2` or `-2`.
    #[serde(serialize_with = "serialize_f64")]
    pub level: f64,
    /// No sign change: `trace` touches the level and turns back.
    pub tangency: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    #[serde(serialize_with = "serialize_f64")]
    pub phi: f64,
    #[serde(serialize_with = "serialize_f64")]
    pub l_max: f64,
    pub intervals: Vec<Interval>,
    /// Tangencies strictly inside a stable interval.
    pub exception_points: Vec<CriticalPoint>,
    /// Every root found, crossings and tangencies, sorted by `l`.
    pub critical_points: Vec<CriticalPoint>,
    /// Width of the stable window above `1/cos(phi)`, for `phi >= pi/4`.
    #[serde(serialize_with = "serialize_opt_f64")]
    pub window: Option<f64>,
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64, StabilityError> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo.is_nan() || fhi.is_nan() || flo * fhi > 0.0 {
        return Err(StabilityError::SolverFailure {
            lo,
            hi,
            reason: format!("no sign change (f(lo) = {flo}, f(hi) = {fhi})"),
        });
    }
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm.is_nan() {
            return Err(StabilityError::SolverFailure { lo, hi, reason: "NaN in bracket".into() });
        }
        if fm == 0.0 {
            return Ok(mid);
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy)]
struct Root {
    l: f64,
    tangency: bool,
}

/// All roots of `trace(l) - level` on `[0, l_max]`.
fn roots_of_level(poly: &TracePoly, level: f64, l_max: f64, opts: &SolverOptions) -> Result<Vec<Root>, StabilityError> {
    let f = |l: f64| poly.eval(l) - level;
    let df = |l: f64| poly.eval_derivative(l);
    let n = (1.0 / opts.scan_step_fraction).ceil().max(4.0) as usize;
    let xs: Vec<f64> = (0..=n).map(|i| l_max * i as f64 / n as f64).collect();
    let vs: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let sign = |v: f64| {
        if v > 0.0 {
            1
        } else if v < 0.0 {
            -1
        } else {
            0
        }
    };

    let mut roots = Vec::new();
    for i in 0..=n {
        if vs[i] == 0.0 {
            let left = if i > 0 { sign(vs[i - 1]) } else { 0 };
            let right = if i < n { sign(vs[i + 1]) } else { 0 };
            let tangency = left != 0 && left == right;
            roots.push(Root { l: xs[i], tangency });
        }
        if i < n && sign(vs[i]) * sign(vs[i + 1]) < 0 {
            roots.push(Root { l: bisect(f, xs[i], xs[i + 1], opts.root_tol)?, tangency: false });
        }
    }

    // near-tangencies hide between grid points without a sign change
    for i in 1..n {
        let (a, b, c) = (vs[i - 1], vs[i], vs[i + 1]);
        let s = sign(b);
        if s == 0 || sign(a) != s || sign(c) != s || b.abs() > a.abs() || b.abs() > c.abs() {
            continue;
        }
        let (lo, hi) = (xs[i - 1], xs[i + 1]);
        let m = if df(lo) * df(hi) < 0.0 { bisect(df, lo, hi, opts.root_tol)? } else { xs[i] };
        let fm = f(m);
        if fm.abs() <= opts.tangency_tol {
            roots.push(Root { l: m, tangency: true });
        } else if sign(fm) != s {
            roots.push(Root { l: bisect(f, lo, m, opts.root_tol)?, tangency: false });
            roots.push(Root { l: bisect(f, m, hi, opts.root_tol)?, tangency: false });
        }
    }

    roots.sort_by(|a, b| a.l.total_cmp(&b.l));
    roots.dedup_by(|a, b| (a.l - b.l).abs() <= 10.0 * opts.root_tol);
    Ok(roots)
}

pub fn stability_intervals(phi: f64, l_max: f64) -> Result<StabilityReport, StabilityError> {
    stability_intervals_with(phi, l_max, &SolverOptions::default())
}

/// Scan `[0, l_max]` for the stable intervals and tangency points.
pub fn stability_intervals_with(phi: f64, l_max: f64, opts: &SolverOptions) -> Result<StabilityReport, StabilityError> {
    if !(l_max.is_finite() && l_max > 0.0) {
        return Err(StabilityError::BadLength(l_max));
    }
    let poly = trace_poly(phi)?;

    let mut critical_points = Vec::new();
    for level in [2.0, -2.0] {
        for root in roots_of_level(&poly, level, l_max, opts)? {
            critical_points.push(CriticalPoint { l: root.l, trace: poly.eval(root.l), level, tangency: root.tangency });
        }
    }
    critical_points.sort_by(|a, b| a.l.total_cmp(&b.l));

    let mut breaks: Vec<f64> = vec![0.0, l_max];
    breaks.extend(critical_points.iter().filter(|c| !c.tangency).map(|c| c.l));
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() <= 10.0 * opts.root_tol);

    let mut intervals = Vec::new();
    for w in breaks.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi <= lo {
            continue;
        }
        if poly.eval(0.5 * (lo + hi)).abs() < 2.0 {
            let truncated = hi == l_max && !critical_points.iter().any(|c| !c.tangency && c.l == hi);
            intervals.push(Interval { lo, hi, truncated });
        }
    }

    let exception_points =
        critical_points.iter().filter(|c| c.tangency && intervals.iter().any(|iv| iv.contains(c.l))).copied().collect();

    let window = if phi >= FRAC_PI_4 { epsilon_window(phi).ok() } else { None };

    Ok(StabilityReport { phi, l_max, intervals, exception_points, critical_points, window })
}

/// Width of the stable window `(1/cos phi, 1/cos phi + eps)`.
///
/// Walks outward from `1/cos phi` with geometrically growing steps until
/// `|trace| - 2` changes sign from negative to positive, ignoring isolated
/// tangencies, then bisects the crossing.
pub fn epsilon_window(phi: f64) -> Result<f64, StabilityError> {
    // pi/4 itself is admitted: its window is the second interval of the 45° orbit
    if !(FRAC_PI_4 - 1e-12..FRAC_PI_2).contains(&phi) {
        return Err(StabilityError::BadAngle(phi, "[pi/4, pi/2)"));
    }
    let poly = trace_poly(phi)?;
    let start = 1.0 / phi.cos();
    let g = |l: f64| poly.eval(l).abs() - 2.0;

    const RESOLUTION: f64 = 1e-12;
    const GROWTH: f64 = 1.01;
    let scale = start.max(1.0);
    let mut delta = RESOLUTION * scale;
    if g(start + delta) >= 0.0 {
        return Err(StabilityError::DegenerateWindow { phi, eps: delta });
    }
    let limit = 10.0 * scale;
    let mut prev = start + delta;
    while delta < limit {
        delta *= GROWTH;
        let l = start + delta;
        let v = g(l);
        if v > 0.0 {
            // a tangency can poke through zero by rounding; a true exit keeps climbing
            let ahead = g(start + delta * GROWTH);
            if v > 1e-9 || ahead > v {
                let root = bisect(g, prev, l, RESOLUTION * scale)?;
                let eps = root - start;
                if eps <= RESOLUTION * scale {
                    return Err(StabilityError::DegenerateWindow { phi, eps });
                }
                return Ok(eps);
            }
        }
        prev = l;
    }
    Err(StabilityError::SolverFailure {
        lo: start,
        hi: start + limit,
        reason: "trace never left the stable band".into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    #[serde(serialize_with = "serialize_f64")]
    pub phi: f64,
    #[serde(serialize_with = "serialize_f64")]
    pub l: f64,
    #[serde(serialize_with = "serialize_f64")]
    pub trace: f64,
    pub class: StabilityClass,
}

/// Evaluate every `(phi, l)` pair, `phi` outermost.
///
/// Rows are computed in parallel and gathered by index, so the output order
/// never depends on scheduling. An empty grid yields an empty table.
pub fn sweep(phi_grid: &[f64], l_grid: &[f64]) -> Result<Vec<SweepRow>, StabilityError> {
    for &phi in phi_grid {
        check_phi_open(phi)?;
    }
    for &l in l_grid {
        check_length(l)?;
    }
    let n = l_grid.len();
    (0..phi_grid.len() * n)
        .into_par_iter()
        .map(|k| {
            let (phi, l) = (phi_grid[k / n], l_grid[k % n]);
            let c = classify(l, phi)?;
            Ok(SweepRow { phi, l, trace: c.trace, class: c.class })
        })
        .collect()
}

pub const SWEEP_CSV_HEADER: &str = "phi,l,trace,class";

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> io::Result<()> {
    writeln!(out, "{SWEEP_CSV_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", fmt17(r.phi), fmt17(r.l), fmt17(r.trace), r.class)?;
    }
    Ok(())
}
