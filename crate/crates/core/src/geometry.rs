//! Full 3D realization of the cube orbits.
//!
//! Two tables are built: six unit-sphere caps at cube vertices hit at 45°
//! ([`build_section3`]), and six caps hit at a steeper angle `phi`, each
//! followed by a flat mirror that restores the cube-edge direction
//! ([`build_section4`]). Rays are traced with specular reflection against
//! every patch (nearest hit wins) and the once-around return map is
//! differentiated numerically to cross-check the analytic monodromy.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jacobi::{self, Mat2, Mat4};
use crate::numfmt::{serialize_f64, Fixed17};

/// Intersections closer than this along the ray are ignored (self-hit guard).
pub const T_MIN: f64 = 1e-9;
/// `|d·n|` below this is a grazing hit and is refused.
pub const GRAZING_TOL: f64 = 1e-12;
/// Default angular radius of a spherical cap, radians.
pub const CAP_ANGULAR_RADIUS: f64 = 0.2;
/// Default radius of a flat mirror disk.
pub const FLAT_DISK_RADIUS: f64 = 0.15;
/// Sphere radius used by both constructions.
pub const SPHERE_RADIUS: f64 = 1.0;
/// Default tolerance for closure and path-length checks.
pub const CLOSURE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error("construction infeasible: {0}")]
    Infeasible(String),
    #[error("patches {0} and {1} overlap")]
    PatchOverlap(usize, usize),
    #[error("ray misses the patch")]
    Miss,
    #[error("grazing hit (|d·n| = {0:e})")]
    Grazing(f64),
    #[error("ray escaped after {0} hits")]
    Escape(usize),
    #[error("hit {hit}: expected patch {expected}, ray met patch {found}")]
    Obstructed { hit: usize, expected: usize, found: usize },
    #[error("return map failed while perturbing coordinate {coordinate}: {reason}")]
    Differencing { coordinate: usize, reason: String },
    #[error("finite-difference estimates at h and h/2 differ by {0:e}")]
    Richardson(f64),
    #[error("table is not closed: residual {0:e}")]
    NotClosed(f64),
    #[error("table JSON: {0}")]
    Json(String),
}

#[derive(Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(self.y * o.z - self.z * o.y, self.z * o.x - self.x * o.z, self.x * o.y - self.y * o.x)
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        self * (1.0 / self.norm())
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }
}

impl fmt::Debug for Vec3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Serialize for Vec3 {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [Fixed17(self.x), Fixed17(self.y), Fixed17(self.z)].serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vec3 {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [x, y, z] = <[f64; 3]>::deserialize(d)?;
        Ok(Vec3::new(x, y, z))
    }
}

/// Origin plus unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

impl Ray {
    /// The direction is normalized on construction.
    pub fn new(origin: Vec3, dir: Vec3) -> Self {
        Ray { origin, dir: dir.normalized() }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }
}

/// Piece of a sphere: points whose direction from `center` lies within
/// `angular_radius` of `axis`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphereCap {
    pub center: Vec3,
    #[serde(serialize_with = "serialize_f64")]
    pub radius: f64,
    pub axis: Vec3,
    #[serde(serialize_with = "serialize_f64")]
    pub angular_radius: f64,
}

/// Planar mirror disk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatPatch {
    pub point: Vec3,
    pub normal: Vec3,
    #[serde(serialize_with = "serialize_f64")]
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum SurfacePatch {
    Sphere(SphereCap),
    Flat(FlatPatch),
}

impl SurfacePatch {
    pub fn is_sphere(&self) -> bool {
        matches!(self, SurfacePatch::Sphere(_))
    }

    /// Nearest `t > T_MIN` at which the ray meets the patch inside its bounds.
    pub fn intersect(&self, ray: &Ray) -> Option<f64> {
        match self {
            SurfacePatch::Sphere(cap) => {
                let oc = ray.origin - cap.center;
                let b = ray.dir.dot(oc);
                let c = oc.dot(oc) - cap.radius * cap.radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                // stable pair of roots: q and c/q
                let q = -b - b.signum() * disc.sqrt();
                let mut roots = if q != 0.0 { [q, c / q] } else { [0.0, 0.0] };
                roots.sort_by(f64::total_cmp);
                let cos_bound = cap.angular_radius.cos();
                roots
                    .into_iter()
                    .find(|&t| t > T_MIN && (ray.at(t) - cap.center).normalized().dot(cap.axis) >= cos_bound)
            }
            SurfacePatch::Flat(flat) => {
                let dn = ray.dir.dot(flat.normal);
                if dn.abs() < GRAZING_TOL {
                    return None;
                }
                let t = (flat.point - ray.origin).dot(flat.normal) / dn;
                (t > T_MIN && ray.at(t).distance(flat.point) <= flat.radius).then_some(t)
            }
        }
    }

    /// Unit normal at a point of the surface (sign is irrelevant to reflection).
    pub fn normal_at(&self, p: Vec3) -> Vec3 {
        match self {
            SurfacePatch::Sphere(cap) => (p - cap.center).normalized(),
            SurfacePatch::Flat(flat) => flat.normal,
        }
    }

    /// A ball containing the patch.
    pub fn bounding_ball(&self) -> (Vec3, f64) {
        match self {
            SurfacePatch::Sphere(cap) => {
                let apex = cap.center + cap.axis * cap.radius;
                (apex, 2.0 * cap.radius * (cap.angular_radius / 2.0).sin())
            }
            SurfacePatch::Flat(flat) => (flat.point, flat.radius),
        }
    }
}

fn specular(dir: Vec3, n: Vec3) -> Vec3 {
    (dir - n * (2.0 * dir.dot(n))).normalized()
}

/// Reflect `ray` off `patch` at their nearest intersection.
pub fn reflect(ray: &Ray, patch: &SurfacePatch) -> Result<Ray, GeometryError> {
    let t = patch.intersect(ray).ok_or(GeometryError::Miss)?;
    let p = ray.at(t);
    let n = patch.normal_at(p);
    let dn = ray.dir.dot(n);
    if dn.abs() < GRAZING_TOL {
        return Err(GeometryError::Grazing(dn.abs()));
    }
    Ok(Ray { origin: p, dir: specular(ray.dir, n) })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HitRecord {
    pub patch: usize,
    pub point: Vec3,
    pub incoming: Vec3,
    pub outgoing: Vec3,
    /// `|incoming · n|`, the cosine of the angle of incidence.
    pub cos_incidence: f64,
}

impl HitRecord {
    pub fn incidence_angle(&self) -> f64 {
        self.cos_incidence.clamp(-1.0, 1.0).acos()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceResult {
    pub hits: Vec<HitRecord>,
    /// The ray left the table before `n_hits` reflections.
    pub escaped: bool,
}

/// Trace up to `n_hits` reflections from `start`.
pub fn trace_orbit(table: &BilliardTable, start: &Ray, n_hits: usize) -> Result<TraceResult, GeometryError> {
    trace_patches(&table.patches, start, n_hits)
}

fn trace_patches(patches: &[SurfacePatch], start: &Ray, n_hits: usize) -> Result<TraceResult, GeometryError> {
    let mut ray = Ray::new(start.origin, start.dir);
    let mut hits = Vec::with_capacity(n_hits);
    for _ in 0..n_hits {
        let nearest = patches
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.intersect(&ray).map(|t| (i, t)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let Some((idx, t)) = nearest else {
            return Ok(TraceResult { hits, escaped: true });
        };
        let point = ray.at(t);
        let n = patches[idx].normal_at(point);
        let dn = ray.dir.dot(n);
        if dn.abs() < GRAZING_TOL {
            return Err(GeometryError::Grazing(dn.abs()));
        }
        let outgoing = specular(ray.dir, n);
        hits.push(HitRecord { patch: idx, point, incoming: ray.dir, outgoing, cos_incidence: dn.abs() });
        ray = Ray { origin: point, dir: outgoing };
    }
    Ok(TraceResult { hits, escaped: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableParams {
    #[serde(serialize_with = "serialize_f64")]
    pub l: f64,
    #[serde(serialize_with = "serialize_f64")]
    pub phi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitPoint {
    pub point: Vec3,
    pub patch: usize,
}

/// Patches plus a closed reference orbit.
///
/// `reference_orbit` lists one period of hits and repeats the first hit at
/// the end, so its length is `hits_per_period + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BilliardTable {
    pub params: TableParams,
    pub patches: Vec<SurfacePatch>,
    pub reference_orbit: Vec<OrbitPoint>,
}

impl BilliardTable {
    pub fn hits_per_period(&self) -> usize {
        self.reference_orbit.len().saturating_sub(1)
    }

    pub fn closure_residual(&self) -> f64 {
        match (self.reference_orbit.first(), self.reference_orbit.last()) {
            (Some(a), Some(b)) => a.point.distance(b.point),
            _ => f64::INFINITY,
        }
    }

    /// Ray leaving the first reference hit toward the second.
    pub fn start_ray(&self) -> Ray {
        let p0 = self.reference_orbit[0].point;
        Ray::new(p0, self.reference_orbit[1].point - p0)
    }

    /// Re-trace one period from [`Self::start_ray`].
    pub fn trace_reference(&self) -> Result<Vec<HitRecord>, GeometryError> {
        let n = self.hits_per_period();
        let traced = trace_orbit(self, &self.start_ray(), n)?;
        if traced.escaped {
            return Err(GeometryError::Escape(traced.hits.len()));
        }
        Ok(traced.hits)
    }

    pub fn to_json(&self) -> Result<String, GeometryError> {
        serde_json::to_string_pretty(self).map_err(|e| GeometryError::Json(e.to_string()))
    }

    /// Parse and check the structural invariants.
    pub fn from_json(text: &str) -> Result<Self, GeometryError> {
        let table: BilliardTable = serde_json::from_str(text).map_err(|e| GeometryError::Json(e.to_string()))?;
        if table.reference_orbit.len() < 2 {
            return Err(GeometryError::Json("reference_orbit needs at least two points".into()));
        }
        if let Some(bad) = table.reference_orbit.iter().find(|p| p.patch >= table.patches.len()) {
            return Err(GeometryError::Json(format!("patch index {} out of range", bad.patch)));
        }
        let residual = table.closure_residual();
        if residual > CLOSURE_TOL {
            return Err(GeometryError::NotClosed(residual));
        }
        Ok(table)
    }
}

fn check_disjoint(patches: &[SurfacePatch]) -> Result<(), GeometryError> {
    for i in 0..patches.len() {
        for j in i + 1..patches.len() {
            let (ci, ri) = patches[i].bounding_ball();
            let (cj, rj) = patches[j].bounding_ball();
            if ci.distance(cj) <= ri + rj {
                return Err(GeometryError::PatchOverlap(i, j));
            }
        }
    }
    Ok(())
}

/// The hexagonal edge path on a cube of side `side`, in visiting order.
fn cube_hexagon(side: f64) -> [Vec3; 6] {
    [
        Vec3::new(0.0, 0.0, 0.0),
        Vec3::new(side, 0.0, 0.0),
        Vec3::new(side, side, 0.0),
        Vec3::new(side, side, side),
        Vec3::new(0.0, side, side),
        Vec3::new(0.0, 0.0, side),
    ]
}

/// Incoming and outgoing edge directions at each hexagon vertex.
fn edge_directions(v: &[Vec3; 6]) -> [(Vec3, Vec3); 6] {
    std::array::from_fn(|i| {
        let prev = v[(i + 5) % 6];
        let next = v[(i + 1) % 6];
        ((v[i] - prev).normalized(), (next - v[i]).normalized())
    })
}

/// Spherical cap whose mirror sends `d_in` to `d_out` at `hit`, concave
/// toward the orbit (center on the inside of the turn).
fn focusing_cap(hit: Vec3, d_in: Vec3, d_out: Vec3, angular_radius: f64) -> SphereCap {
    let n = (d_out - d_in).normalized();
    SphereCap { center: hit + n * SPHERE_RADIUS, radius: SPHERE_RADIUS, axis: -n, angular_radius }
}

/// Trace the intended period and record it, failing if any segment meets a
/// patch other than the intended one.
fn record_orbit(patches: &[SurfacePatch], start: Ray, expected: &[usize]) -> Result<Vec<OrbitPoint>, GeometryError> {
    let traced = trace_patches(patches, &start, expected.len())?;
    for (k, &want) in expected.iter().enumerate() {
        match traced.hits.get(k) {
            Some(h) if h.patch == want => {}
            Some(h) => return Err(GeometryError::Obstructed { hit: k, expected: want, found: h.patch }),
            None => return Err(GeometryError::Escape(k)),
        }
    }
    let mut orbit = vec![OrbitPoint { point: start.origin, patch: *expected.last().unwrap() }];
    orbit.extend(traced.hits.iter().map(|h| OrbitPoint { point: h.point, patch: h.patch }));
    Ok(orbit)
}

/// Six 45° reflections off unit-sphere caps placed at the cube vertices
/// `(0,0,0), (l,0,0), (l,l,0), (l,l,l), (0,l,l), (0,0,l)`.
pub fn build_section3(l: f64) -> Result<BilliardTable, GeometryError> {
    if !(l.is_finite() && l > 0.0) {
        return Err(GeometryError::BadParameter(format!("cube side must be positive, got {l}")));
    }
    let v = cube_hexagon(l);
    let dirs = edge_directions(&v);
    let patches: Vec<SurfacePatch> =
        (0..6).map(|i| SurfacePatch::Sphere(focusing_cap(v[i], dirs[i].0, dirs[i].1, CAP_ANGULAR_RADIUS))).collect();
    check_disjoint(&patches)?;
    let expected = [1, 2, 3, 4, 5, 0];
    let reference_orbit = record_orbit(&patches, Ray::new(v[0], dirs[0].1), &expected)?;
    Ok(BilliardTable { params: TableParams { l, phi: FRAC_PI_4 }, patches, reference_orbit })
}

/// Geometry of one corner of the twelve-reflection table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetourLayout {
    /// Sphere-to-flat path length.
    pub detour: f64,
    /// Distance from the sphere hit back to the cube vertex along the incoming edge.
    pub setback: f64,
    /// Side of the cube carrying the straight parts of the orbit.
    pub cube_side: f64,
    /// Direction change at the sphere, `pi - 2 phi`.
    pub sphere_turn: f64,
    /// Angle of incidence at the flat, `3pi/4 - phi`.
    pub flat_angle: f64,
}

impl DetourLayout {
    /// Layout with the flat reached halfway along the sphere-to-sphere path.
    pub fn new(l: f64, phi: f64) -> Self {
        let sphere_turn = PI - 2.0 * phi;
        let detour = 0.5 * l;
        let setback = detour * sphere_turn.cos();
        let cube_side = l + detour * (sphere_turn.cos() + sphere_turn.sin() - 1.0);
        DetourLayout { detour, setback, cube_side, sphere_turn, flat_angle: 0.75 * PI - phi }
    }
}

/// Six caps hit at angle `phi` alternating with six flat mirrors, in the
/// order S1, F1, ..., S6, F6; the sphere-to-sphere path length is `l`.
///
/// At each cube corner the orbit arrives along the incoming edge, reflects
/// off the cap (turning by `pi - 2 phi`), crosses to a flat mirror on the
/// outgoing edge, and reflects there (turning by `2 phi - pi/2`) back onto
/// the outgoing edge.
pub fn build_section4(l: f64, phi: f64) -> Result<BilliardTable, GeometryError> {
    if !(phi.is_finite() && phi > FRAC_PI_4 && phi < FRAC_PI_2) {
        return Err(GeometryError::BadParameter(format!("phi must lie in (pi/4, pi/2), got {phi}")));
    }
    if !(l.is_finite() && l > 0.0) {
        return Err(GeometryError::BadParameter(format!("l must be positive, got {l}")));
    }
    let layout = DetourLayout::new(l, phi);
    // the ray's entry into the cap's sphere sits (pi - 2 phi) away from the
    // hit, so the cap must be narrower than that
    let cap_radius = CAP_ANGULAR_RADIUS.min(0.45 * layout.sphere_turn);
    let gap = l - layout.detour;
    let needed = 2.0 * SPHERE_RADIUS * (cap_radius / 2.0).sin() + FLAT_DISK_RADIUS;
    if gap <= needed || layout.detour <= needed {
        return Err(GeometryError::Infeasible(format!(
            "sphere-to-flat spacing {:.6} and flat-to-sphere spacing {gap:.6} must exceed patch extent {needed:.6}",
            layout.detour
        )));
    }

    let v = cube_hexagon(layout.cube_side);
    let dirs = edge_directions(&v);
    let (cos_t, sin_t) = (layout.sphere_turn.cos(), layout.sphere_turn.sin());
    let mut patches = Vec::with_capacity(12);
    let mut start = None;
    for i in 0..6 {
        let (e_in, e_out) = dirs[i];
        let sphere_hit = v[i] - e_in * layout.setback;
        let mid_dir = e_in * cos_t + e_out * sin_t;
        let flat_hit = sphere_hit + mid_dir * layout.detour;
        patches.push(SurfacePatch::Sphere(focusing_cap(sphere_hit, e_in, mid_dir, cap_radius)));
        patches.push(SurfacePatch::Flat(FlatPatch {
            point: flat_hit,
            normal: (e_out - mid_dir).normalized(),
            radius: FLAT_DISK_RADIUS,
        }));
        if i == 0 {
            start = Some(Ray::new(sphere_hit, mid_dir));
        }
    }
    check_disjoint(&patches)?;
    let expected: Vec<usize> = (1..12).chain(std::iter::once(0)).collect();
    let reference_orbit = record_orbit(&patches, start.expect("six corners"), &expected)?;
    Ok(BilliardTable { params: TableParams { l, phi }, patches, reference_orbit })
}

/// Poincaré section transverse to the reference orbit, midway along the
/// segment leaving the first hit, with coordinates
/// `(y_p, w_p, y_t, w_t)`: offsets and slopes along the planar and
/// transversal directions of the first hit.
#[derive(Debug, Clone)]
pub struct Section {
    origin: Vec3,
    dir: Vec3,
    planar: Vec3,
    transversal: Vec3,
    /// Distance from the first hit to the section plane.
    offset: f64,
    sequence: Vec<usize>,
}

impl Section {
    pub fn new(table: &BilliardTable) -> Result<Self, GeometryError> {
        let n = table.hits_per_period();
        if n < 2 {
            return Err(GeometryError::BadParameter("reference orbit too short".into()));
        }
        let pts: Vec<Vec3> = table.reference_orbit.iter().map(|p| p.point).collect();
        let d_in = (pts[n] - pts[n - 1]).normalized();
        let seg = pts[1] - pts[0];
        let dir = seg.normalized();
        let transversal = d_in.cross(dir).normalized();
        let planar = transversal.cross(dir);
        let offset = 0.5 * seg.norm();
        Ok(Section {
            origin: pts[0] + dir * offset,
            dir,
            planar,
            transversal,
            offset,
            sequence: table.reference_orbit[1..].iter().map(|p| p.patch).collect(),
        })
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    fn ray_from(&self, z: [f64; 4]) -> Ray {
        let origin = self.origin + self.planar * z[0] + self.transversal * z[2];
        let dir = self.dir + self.planar * z[1] + self.transversal * z[3];
        Ray::new(origin, dir)
    }

    /// One trip around the table, from section coordinates to section
    /// coordinates.
    pub fn return_map(&self, table: &BilliardTable, z: [f64; 4]) -> Result<[f64; 4], GeometryError> {
        let traced = trace_orbit(table, &self.ray_from(z), self.sequence.len())?;
        for (k, &want) in self.sequence.iter().enumerate() {
            match traced.hits.get(k) {
                Some(h) if h.patch == want => {}
                Some(h) => return Err(GeometryError::Obstructed { hit: k, expected: want, found: h.patch }),
                None => return Err(GeometryError::Escape(k)),
            }
        }
        let last = traced.hits.last().expect("sequence is non-empty");
        let along = last.outgoing.dot(self.dir);
        if along <= 0.0 {
            return Err(GeometryError::Escape(self.sequence.len()));
        }
        // straight-line transport of the outgoing ray onto the section plane
        let s = (self.origin - last.point).dot(self.dir) / along;
        let x = last.point + last.outgoing * s - self.origin;
        Ok([
            x.dot(self.planar),
            last.outgoing.dot(self.planar) / along,
            x.dot(self.transversal),
            last.outgoing.dot(self.transversal) / along,
        ])
    }
}

/// Finite-difference derivative of the return map.
#[derive(Debug, Clone)]
pub struct MonodromyEstimate {
    /// Derivative in the planar/transversal coordinates just after the first
    /// hit, blocks ordered (planar, transversal).
    pub matrix: Mat4<f64>,
    pub step: f64,
    /// `|F(0)|`: how far the unperturbed orbit misses its own start.
    pub fixed_point_residual: f64,
    /// Largest entry difference between the estimates at `h` and `h/2`.
    pub richardson_delta: f64,
}

/// Comparison of a [`MonodromyEstimate`] with an analytic monodromy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonodromyComparison {
    /// Per-block `|trace_numeric - sign * trace_analytic|` with the better sign.
    pub block_trace_errors: [f64; 2],
    /// The sign (`±1`) chosen for each block.
    pub block_signs: [f64; 2],
    pub det_error: f64,
    pub off_block_leakage: f64,
    /// Largest absolute entry of the numerical matrix, for scaling tolerances.
    pub scale: f64,
}

impl MonodromyEstimate {
    pub fn block_traces(&self) -> [f64; 2] {
        [self.matrix.block(0, 0).trace(), self.matrix.block(1, 1).trace()]
    }

    pub fn det(&self) -> f64 {
        self.matrix.det()
    }

    pub fn off_block_leakage(&self) -> f64 {
        self.matrix.off_block_max()
    }

    /// Compare block traces up to an overall sign per block, since the
    /// matrix model fixes the orientation of the normal-plane basis by
    /// convention.
    pub fn compare(&self, analytic: &Mat4<f64>) -> MonodromyComparison {
        let num = self.block_traces();
        let ana = [analytic.block(0, 0).trace(), analytic.block(1, 1).trace()];
        let mut errors = [0.0; 2];
        let mut signs = [1.0; 2];
        for b in 0..2 {
            let plus = (num[b] - ana[b]).abs();
            let minus = (num[b] + ana[b]).abs();
            (errors[b], signs[b]) = if plus <= minus { (plus, 1.0) } else { (minus, -1.0) };
        }
        MonodromyComparison {
            block_trace_errors: errors,
            block_signs: signs,
            det_error: (self.det() - 1.0).abs(),
            off_block_leakage: self.off_block_leakage(),
            scale: max_entry(&self.matrix).max(1.0),
        }
    }
}

fn central_difference(table: &BilliardTable, section: &Section, h: f64) -> Result<Mat4<f64>, GeometryError> {
    let mut m = Mat4::zero();
    for j in 0..4 {
        let eval = |sign: f64| {
            let mut z = [0.0; 4];
            z[j] = sign * h;
            section
                .return_map(table, z)
                .map_err(|e| GeometryError::Differencing { coordinate: j, reason: e.to_string() })
        };
        let (plus, minus) = (eval(1.0)?, eval(-1.0)?);
        for i in 0..4 {
            m.m[i][j] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    Ok(m)
}

/// Estimate the monodromy by central differences of the return map with
/// step `h`, checked against a second estimate at `h/2`.
pub fn numerical_monodromy(table: &BilliardTable, h: f64) -> Result<MonodromyEstimate, GeometryError> {
    if !(1e-9..=1e-4).contains(&h) {
        return Err(GeometryError::BadParameter(format!("step must lie in [1e-9, 1e-4], got {h}")));
    }
    let section = Section::new(table)?;
    let fixed = section.return_map(table, [0.0; 4])?;
    let fixed_point_residual = fixed.iter().map(|x| x * x).sum::<f64>().sqrt();

    let coarse = central_difference(table, &section, h)?;
    let fine = central_difference(table, &section, h / 2.0)?;
    let mut richardson_delta: f64 = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            richardson_delta = richardson_delta.max((coarse.m[i][j] - fine.m[i][j]).abs());
        }
    }
    // relative to the entry scale, so strongly hyperbolic orbits are judged fairly
    if richardson_delta > 1e-4 * max_entry(&fine).max(1.0) {
        return Err(GeometryError::Richardson(richardson_delta));
    }

    // move the section from mid-segment back to just after the first hit
    let back = Mat2::flight(-section.offset());
    let fwd = Mat2::flight(section.offset());
    let shift_back = Mat4::block_diag(&back, &back);
    let shift_fwd = Mat4::block_diag(&fwd, &fwd);
    let matrix = &(&shift_back * &fine) * &shift_fwd;

    Ok(MonodromyEstimate { matrix, step: h, fixed_point_residual, richardson_delta })
}

fn max_entry(m: &Mat4<f64>) -> f64 {
    m.m.iter().flatten().fold(0.0, |a, x| a.max(x.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GrowthMode {
    Linearized,
    Nonlinear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthRecord {
    pub mode: GrowthMode,
    pub eps: f64,
    /// Deviation norm after each completed period.
    pub deviations: Vec<f64>,
    /// Largest `deviation / eps` seen.
    pub max_amplification: f64,
    /// `ln(final deviation / eps) / periods completed`.
    pub mean_log_growth: f64,
    /// Period during which the perturbed orbit left the table.
    pub escaped_at: Option<usize>,
}

/// Unit perturbation direction drawn from `seed`.
pub fn perturbation_direction(seed: u64) -> [f64; 4] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let v: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 && n <= 1.0 {
            return v.map(|x| x / n);
        }
    }
}

fn norm4(v: &[f64; 4]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Follow a perturbation of size `eps` for `periods` trips around the table.
///
/// Linearized mode iterates the analytic block monodromy with per-period
/// renormalization; nonlinear mode re-traces the true orbit from a perturbed
/// start and stops at the first escape.
pub fn perturbation_growth(
    table: &BilliardTable,
    eps: f64,
    periods: usize,
    mode: GrowthMode,
    seed: u64,
) -> Result<GrowthRecord, GeometryError> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(GeometryError::BadParameter(format!("eps must be positive, got {eps}")));
    }
    if periods == 0 {
        return Err(GeometryError::BadParameter("periods must be at least 1".into()));
    }
    let dir = perturbation_direction(seed);
    let mut deviations = Vec::with_capacity(periods);
    let mut escaped_at = None;
    let mut log_sum = 0.0;
    match mode {
        GrowthMode::Linearized => {
            let m = jacobi::full_monodromy(table.params.l, table.params.phi, SPHERE_RADIUS)
                .map_err(|e| GeometryError::BadParameter(e.to_string()))?;
            let mut v = dir;
            for _ in 0..periods {
                let w = m.apply(v);
                let g = norm4(&w);
                log_sum += g.ln();
                v = w.map(|x| x / g);
                deviations.push(eps * log_sum.exp());
            }
        }
        GrowthMode::Nonlinear => {
            let section = Section::new(table)?;
            let mut z = dir.map(|x| x * eps);
            for k in 0..periods {
                match section.return_map(table, z) {
                    Ok(next) => {
                        z = next;
                        deviations.push(norm4(&z));
                    }
                    Err(_) => {
                        escaped_at = Some(k);
                        break;
                    }
                }
            }
            if let Some(&last) = deviations.last() {
                log_sum = (last / eps).ln();
            }
        }
    }
    let max_amplification = deviations.iter().fold(0.0f64, |a, &d| a.max(d / eps));
    let mean_log_growth = if deviations.is_empty() { 0.0 } else { log_sum / deviations.len() as f64 };
    Ok(GrowthRecord { mode, eps, deviations, max_amplification, mean_log_growth, escaped_at })
}

/// One named verification check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    #[serde(serialize_with = "serialize_f64")]
    pub residual: f64,
    #[serde(serialize_with = "serialize_f64")]
    pub tolerance: f64,
}

impl Check {
    fn new(name: impl Into<String>, residual: f64, tolerance: f64) -> Self {
        Check { name: name.into(), passed: residual.is_finite() && residual < tolerance, residual, tolerance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub checks: Vec<Check>,
}

impl VerificationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Closure, angles, specularity, path lengths, patch order and the
/// monodromy cross-check for a table.
pub fn verify_table(table: &BilliardTable) -> Result<VerificationReport, GeometryError> {
    verify_table_with(table, CLOSURE_TOL)
}

/// [`verify_table`] with `tol` used for the closure and path-length checks.
pub fn verify_table_with(table: &BilliardTable, tol: f64) -> Result<VerificationReport, GeometryError> {
    let hits = table.trace_reference()?;
    let n = hits.len();
    let mut checks = Vec::new();

    let closure = hits[n - 1].point.distance(table.reference_orbit[0].point);
    checks.push(Check::new("closure", closure, tol));
    let stored = hits
        .iter()
        .zip(&table.reference_orbit[1..])
        .map(|(h, r)| h.point.distance(r.point) + if h.patch == r.patch { 0.0 } else { f64::INFINITY })
        .fold(0.0, f64::max);
    checks.push(Check::new("reference-orbit-reproduced", stored, tol));

    let flat_angle = 0.75 * PI - table.params.phi;
    for (k, h) in hits.iter().enumerate() {
        let patch = &table.patches[h.patch];
        let n_hat = patch.normal_at(h.point);
        let mismatch = (h.incoming.dot(n_hat).abs() - h.outgoing.dot(n_hat).abs()).abs();
        checks.push(Check::new(format!("specular[{k}]"), mismatch, 1e-12));
        let (label, want) =
            if patch.is_sphere() { ("sphere-angle", table.params.phi) } else { ("flat-angle", flat_angle) };
        checks.push(Check::new(format!("{label}[{k}]"), (h.incidence_angle() - want).abs(), tol));
    }

    // path length between consecutive sphere hits
    let sphere_hits: Vec<usize> = (0..n).filter(|&k| table.patches[hits[k].patch].is_sphere()).collect();
    let mut worst_len: f64 = 0.0;
    for w in 0..sphere_hits.len() {
        let (a, b) = (sphere_hits[w], sphere_hits[(w + 1) % sphere_hits.len()]);
        let mut len = 0.0;
        let mut k = a;
        while k != b {
            let next = (k + 1) % n;
            len += hits[k].point.distance(hits[next].point);
            k = next;
        }
        worst_len = worst_len.max((len - table.params.l).abs());
    }
    checks.push(Check::new("sphere-to-sphere-length", worst_len, tol));

    if n == 12 {
        let bad = hits.iter().enumerate().filter(|(k, h)| table.patches[h.patch].is_sphere() != (k % 2 == 1)).count();
        checks.push(Check::new("sphere-flat-alternation", bad as f64, 0.5));
    }

    let estimate = numerical_monodromy(table, 1e-6)?;
    let analytic = jacobi::full_monodromy(table.params.l, table.params.phi, SPHERE_RADIUS)
        .map_err(|e| GeometryError::BadParameter(e.to_string()))?;
    let cmp = estimate.compare(&analytic);
    let scale = cmp.scale;
    checks.push(Check::new("monodromy-planar-trace", cmp.block_trace_errors[0], 1e-3 * scale));
    checks.push(Check::new("monodromy-transversal-trace", cmp.block_trace_errors[1], 1e-3 * scale));
    checks.push(Check::new("monodromy-det", cmp.det_error, 1e-6 * scale * scale));
    checks.push(Check::new("monodromy-off-block", cmp.off_block_leakage, 1e-6 * scale));

    Ok(VerificationReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::SQRT_2;

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    fn close(a: Vec3, b: Vec3, tol: f64) -> bool {
        a.distance(b) <= tol
    }

    #[test]
    fn flat_normal_incidence_reverses() {
        let flat = SurfacePatch::Flat(FlatPatch { point: v(1.0, 0.0, 0.0), normal: v(-1.0, 0.0, 0.0), radius: 0.5 });
        let out = reflect(&Ray::new(v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0)), &flat).unwrap();
        assert!(close(out.origin, v(1.0, 0.0, 0.0), 1e-15));
        assert!(close(out.dir, v(-1.0, 0.0, 0.0), 1e-15));
    }

    #[test]
    fn flat_45_degrees_swaps_axes() {
        let n = v(-1.0, 1.0, 0.0).normalized();
        let flat = SurfacePatch::Flat(FlatPatch { point: v(1.0, 0.0, 0.0), normal: n, radius: 0.5 });
        let out = reflect(&Ray::new(v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0)), &flat).unwrap();
        assert!(close(out.dir, v(0.0, 1.0, 0.0), 1e-15));
    }

    #[test]
    fn miss_and_grazing_are_errors() {
        let flat = SurfacePatch::Flat(FlatPatch { point: v(1.0, 5.0, 0.0), normal: v(-1.0, 0.0, 0.0), radius: 0.5 });
        assert_eq!(reflect(&Ray::new(v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0)), &flat), Err(GeometryError::Miss));
        let parallel = SurfacePatch::Flat(FlatPatch { point: v(0.0, 0.0, 0.0), normal: v(0.0, 1.0, 0.0), radius: 5.0 });
        assert!(reflect(&Ray::new(v(-1.0, 0.0, 0.0), v(1.0, 0.0, 0.0)), &parallel).is_err());
    }

    #[test]
    fn six_sphere_cap_turns_x_into_y() {
        let table = build_section3(1.0).unwrap();
        // vertex (1,0,0) carries patch 1
        let out = reflect(&Ray::new(v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0)), &table.patches[1]).unwrap();
        assert!(close(out.origin, v(1.0, 0.0, 0.0), 1e-12));
        assert!(close(out.dir, v(0.0, 1.0, 0.0), 1e-12));
    }

    #[test]
    fn six_sphere_geometry() {
        let table = build_section3(1.0).unwrap();
        assert_eq!(table.hits_per_period(), 6);
        assert!(table.closure_residual() < 1e-12);
        let hits = table.trace_reference().unwrap();
        let mut total = 0.0;
        let mut prev = table.reference_orbit[0].point;
        for h in &hits {
            total += h.point.distance(prev);
            prev = h.point;
            assert!((h.cos_incidence - 1.0 / SQRT_2).abs() < 1e-12);
        }
        assert!((total - 6.0).abs() < 1e-12);
    }

    #[test]
    fn chord_of_a_full_sphere_at_45_degrees() {
        // inside a unit sphere a 45° ray travels sqrt(2) between reflections
        let table = build_section3(1.0).unwrap();
        let SurfacePatch::Sphere(cap) = table.patches[0] else { panic!() };
        let full = SurfacePatch::Sphere(SphereCap { angular_radius: PI, ..cap });
        let start = table.start_ray();
        let t = full.intersect(&start).unwrap();
        assert!((t - SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn six_sphere_rejects_bad_side() {
        assert!(matches!(build_section3(-1.0), Err(GeometryError::BadParameter(_))));
        assert!(matches!(build_section3(0.0), Err(GeometryError::BadParameter(_))));
        // caps of neighbouring vertices collide on a tiny cube
        assert!(matches!(build_section3(0.2), Err(GeometryError::PatchOverlap(_, _))));
    }

    #[test]
    fn sphere_flat_geometry() {
        let phi = FRAC_PI_4 + 0.2;
        let l = 1.0 / phi.cos() + 0.01;
        let table = build_section4(l, phi).unwrap();
        assert!(table.closure_residual() < 1e-10);
        let hits = table.trace_reference().unwrap();
        assert_eq!(hits.len(), 12);
        for (k, h) in hits.iter().enumerate() {
            let sphere = table.patches[h.patch].is_sphere();
            assert_eq!(sphere, k % 2 == 1, "hit {k}");
            let want = if sphere { phi } else { 0.75 * PI - phi };
            assert!((h.incidence_angle() - want).abs() < 1e-10, "hit {k}");
        }
        let psi = 0.75 * PI - phi;
        assert!(psi > FRAC_PI_4 && psi < FRAC_PI_2);
    }

    #[test]
    fn sphere_flat_table_tends_to_six_spheres_at_45() {
        let l = 1.5;
        let s3 = build_section3(l).unwrap();
        let s4 = build_section4(l, FRAC_PI_4 + 1e-7).unwrap();
        let layout = DetourLayout::new(l, FRAC_PI_4 + 1e-7);
        assert!(layout.setback.abs() < 1e-6);
        assert!((layout.cube_side - l).abs() < 1e-6);
        for k in 0..6 {
            let a = s3.reference_orbit[k].point;
            let b = s4.reference_orbit[2 * k].point;
            assert!(close(a, b, 1e-6), "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn sphere_flat_rejects_infeasible() {
        assert!(matches!(build_section4(2.0, 0.5), Err(GeometryError::BadParameter(_))));
        assert!(matches!(build_section4(0.3, 1.0), Err(GeometryError::Infeasible(_))));
    }

    #[test]
    fn perturbed_start_stays_near_reference() {
        let table = build_section3(1.0).unwrap();
        let start = table.start_ray();
        let nudged = Ray::new(start.origin + v(0.0, 0.0, 1e-9), start.dir);
        let hits = trace_orbit(&table, &nudged, 6).unwrap();
        assert!(!hits.escaped);
        for (h, r) in hits.hits.iter().zip(&table.reference_orbit[1..]) {
            assert_eq!(h.patch, r.patch);
            assert!(close(h.point, r.point, 1e-6));
        }
    }

    #[test]
    fn escape_is_flagged() {
        let table = build_section3(1.0).unwrap();
        let out = trace_orbit(&table, &Ray::new(v(0.5, 0.5, 0.5), v(1.0, 2.0, 3.0)), 6).unwrap();
        assert!(out.escaped);
    }

    #[test]
    fn reversibility() {
        let table = build_section3(1.5).unwrap();
        let start = table.start_ray();
        let nudged = Ray::new(start.origin + v(0.0, 1e-7, -2e-7), start.dir + v(3e-7, 0.0, 1e-7));
        let fwd = trace_orbit(&table, &nudged, 6).unwrap().hits;
        let last = fwd.last().unwrap();
        let back = trace_orbit(&table, &Ray::new(last.point, -last.incoming), 5).unwrap().hits;
        for (b, f) in back.iter().zip(fwd.iter().rev().skip(1)) {
            assert!(close(b.point, f.point, 1e-9));
        }
    }

    #[test]
    fn speed_stays_unit_over_many_reflections() {
        let table = build_section3(1.5).unwrap();
        let mut ray = table.start_ray();
        let mut worst: f64 = 0.0;
        for _ in 0..20_000 {
            let out = trace_orbit(&table, &ray, 6).unwrap();
            let h = out.hits.last().unwrap();
            worst = worst.max((h.outgoing.norm() - 1.0).abs());
            ray = Ray { origin: h.point, dir: h.outgoing };
        }
        assert!(worst < 1e-14);
    }

    #[test]
    fn json_round_trip_is_bit_identical() {
        let table = build_section4(2.2, 62f64.to_radians()).unwrap();
        let text = table.to_json().unwrap();
        let back = BilliardTable::from_json(&text).unwrap();
        assert_eq!(back, table);
        assert_eq!(back.to_json().unwrap(), text);
        let raw: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(raw["patches"][0]["type"], "sphere");
        assert_eq!(raw["patches"][1]["type"], "flat");
        assert!(raw["params"]["l"].is_number());
    }

    #[test]
    fn json_rejects_open_orbit() {
        let mut table = build_section3(1.0).unwrap();
        table.reference_orbit.last_mut().unwrap().point.x += 1e-3;
        let text = table.to_json().unwrap();
        assert!(matches!(BilliardTable::from_json(&text), Err(GeometryError::NotClosed(_))));
    }

    #[test]
    fn monodromy_step_is_validated() {
        let table = build_section3(1.0).unwrap();
        assert!(numerical_monodromy(&table, 1e-2).is_err());
        assert!(numerical_monodromy(&table, 1e-12).is_err());
    }

    #[test]
    fn perturbation_direction_is_reproducible() {
        assert_eq!(perturbation_direction(7), perturbation_direction(7));
        assert_ne!(perturbation_direction(7), perturbation_direction(8));
        assert!((norm4(&perturbation_direction(3)) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn numeric_monodromy_matches_analytic_blocks() {
        for l in [0.5, 1.0, 1.5, 2.0] {
            let table = build_section3(l).unwrap();
            let est = numerical_monodromy(&table, 1e-6).unwrap();
            let analytic = jacobi::full_monodromy(l, FRAC_PI_4, 1.0).unwrap();
            let cmp = est.compare(&analytic);
            assert!(cmp.block_trace_errors[0] < 1e-3 && cmp.block_trace_errors[1] < 1e-3, "l={l}");
            assert!(cmp.det_error < 1e-6, "l={l}");
            assert!(cmp.off_block_leakage < 1e-6, "l={l}");
        }
    }

    #[test]
    fn sphere_flat_monodromy_matches_analytic_blocks() {
        let phi = 62f64.to_radians();
        for l in [1.0 / phi.cos() + 0.05, 1.5, 3.0] {
            let table = build_section4(l, phi).unwrap();
            let est = numerical_monodromy(&table, 1e-6).unwrap();
            let analytic = jacobi::full_monodromy(l, phi, 1.0).unwrap();
            let cmp = est.compare(&analytic);
            let tol = 1e-3 * cmp.scale;
            assert!(cmp.block_trace_errors[0] < tol && cmp.block_trace_errors[1] < tol, "l={l}");
            assert!(cmp.off_block_leakage < 1e-6 * cmp.scale, "l={l}");
        }
    }
}
