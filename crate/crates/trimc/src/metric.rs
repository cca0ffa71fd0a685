//! Geometry of the three-body relative coordinates.
//!
//! Removing the centre of mass of a triple (x, y, z) via r1 = (x+y+z)/3,
//! r2 = x-y, r3 = x-z turns the kinetic operator into div(M^2 grad) on R^6,
//! where M is a fixed symmetric 6x6 matrix built from 3x3 identity blocks.
//! The scattering solution is radial in the variable |M^-1 (r2, r3)|, the
//! hyperradius, and the hard core occupies hyperradius <= sqrt(2) * a.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Neg, Sub};

pub const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Position or displacement in R^3, length units.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm2(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm2().sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
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

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Point of R^6 stored as the two 3-vector halves (r2, r3).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec6 {
    pub u: Vec3,
    pub v: Vec3,
}

impl Vec6 {
    pub const ZERO: Vec6 = Vec6 { u: Vec3::ZERO, v: Vec3::ZERO };

    pub fn new(u: Vec3, v: Vec3) -> Self {
        Vec6 { u, v }
    }

    pub fn norm2(self) -> f64 {
        self.u.norm2() + self.v.norm2()
    }

    pub fn norm(self) -> f64 {
        self.norm2().sqrt()
    }

    pub fn dot(self, o: Vec6) -> f64 {
        self.u.dot(o.u) + self.v.dot(o.v)
    }

    pub fn scale(self, s: f64) -> Vec6 {
        Vec6::new(self.u * s, self.v * s)
    }

    pub fn to_array(self) -> [f64; 6] {
        [self.u.x, self.u.y, self.u.z, self.v.x, self.v.y, self.v.z]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Vec6::new(Vec3::new(a[0], a[1], a[2]), Vec3::new(a[3], a[4], a[5]))
    }
}

/// The fixed metric of the relative-coordinate kinetic operator.
///
/// M is the square root of the 2x2 block symbol (1/2)[[2,1],[1,2]] tensored
/// with the 3x3 identity. Its entries are stored in closed form,
/// (sqrt(3) +- 1) / (2 sqrt(2)), so repeated runs are bit-identical; no
/// matrix square root is taken at runtime.
#[derive(Clone, Copy, Debug)]
pub struct ModifiedMetric {
    coef_plus: f64,
    coef_minus: f64,
    inv_plus: f64,
    inv_minus: f64,
    /// Determinant of the 2x2 block symbol, sqrt(3)/2.
    pub block_det: f64,
    /// Determinant of the full 6x6 matrix, (sqrt(3)/2)^3. This is the
    /// Jacobian of the change of variables y = M^-1 x on R^6.
    pub det: f64,
    /// Eigenvalues of M: sqrt(3/2) and sqrt(1/2), each with multiplicity 3.
    pub eigs: [f64; 2],
    /// Eigenvalues of M^-1: sqrt(2/3) and sqrt(2), each with multiplicity 3.
    pub eigs_inv: [f64; 2],
}

impl Default for ModifiedMetric {
    fn default() -> Self {
        Self::new()
    }
}

impl ModifiedMetric {
    pub fn new() -> Self {
        let s3 = 3f64.sqrt();
        let s2 = SQRT_2;
        let block_det = s3 / 2.0;
        ModifiedMetric {
            coef_plus: (s3 + 1.0) / (2.0 * s2),
            coef_minus: (s3 - 1.0) / (2.0 * s2),
            inv_plus: (1.0 + s3) / 6f64.sqrt(),
            inv_minus: (1.0 - s3) / 6f64.sqrt(),
            block_det,
            det: block_det * block_det * block_det,
            eigs: [(1.5f64).sqrt(), (0.5f64).sqrt()],
            eigs_inv: [(2.0f64 / 3.0).sqrt(), s2],
        }
    }

    /// M applied to a 6-vector.
    pub fn apply(&self, w: Vec6) -> Vec6 {
        Vec6::new(
            w.u * self.coef_plus + w.v * self.coef_minus,
            w.u * self.coef_minus + w.v * self.coef_plus,
        )
    }

    /// M^-1 applied to a 6-vector.
    pub fn apply_inverse(&self, w: Vec6) -> Vec6 {
        Vec6::new(
            w.u * self.inv_plus + w.v * self.inv_minus,
            w.u * self.inv_minus + w.v * self.inv_plus,
        )
    }

    /// Dense 6x6 form of M, row major.
    pub fn matrix(&self) -> [[f64; 6]; 6] {
        block_matrix(self.coef_plus, self.coef_minus)
    }

    /// Dense 6x6 form of M^-1, row major.
    pub fn inverse_matrix(&self) -> [[f64; 6]; 6] {
        block_matrix(self.inv_plus, self.inv_minus)
    }
}

fn block_matrix(diag: f64, off: f64) -> [[f64; 6]; 6] {
    let mut m = [[0.0; 6]; 6];
    for d in 0..3 {
        m[d][d] = diag;
        m[d + 3][d + 3] = diag;
        m[d][d + 3] = off;
        m[d + 3][d] = off;
    }
    m
}

/// Which factor to apply in [`metric_apply`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricFactor {
    M,
    MInverse,
}

pub fn metric_apply(w: Vec6, which: MetricFactor) -> Vec6 {
    let m = ModifiedMetric::new();
    match which {
        MetricFactor::M => m.apply(w),
        MetricFactor::MInverse => m.apply_inverse(w),
    }
}

/// |M^-1 (r2, r3)|, evaluated through the closed form
/// |M^-1 (r2, r3)|^2 = (2/3) (|r2|^2 + |r3|^2 + |r2 - r3|^2).
///
/// The three squared norms are summed in sorted order, so the result is
/// bit-identical under every relabeling of the underlying triple.
pub fn hyperradius(r2: Vec3, r3: Vec3) -> f64 {
    hyperradius_from_sq(r2.norm2(), r3.norm2(), (r2 - r3).norm2())
}

/// Hyperradius from the three squared pair distances of a triple.
pub fn hyperradius_from_sq(a: f64, b: f64, c: f64) -> f64 {
    let (lo, mid, hi) = sort3(a, b, c);
    ((2.0 / 3.0) * (lo + mid + hi)).sqrt()
}

/// Hyperradius of a particle triple from the three direct pair differences.
/// Symmetric under all six permutations of (x, y, z), bit for bit.
pub fn hyperradius_triple(x: Vec3, y: Vec3, z: Vec3, geom: &BoxGeometry) -> f64 {
    let dxy = geom.pair_diff(x, y);
    let dxz = geom.pair_diff(x, z);
    let dyz = geom.pair_diff(y, z);
    hyperradius_from_sq(dxy.norm2(), dxz.norm2(), dyz.norm2())
}

fn sort3(a: f64, b: f64, c: f64) -> (f64, f64, f64) {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    let (a, c) = if a <= c { (a, c) } else { (c, a) };
    let (b, c) = if b <= c { (b, c) } else { (c, b) };
    (a, b, c)
}

/// True iff the triple (x, y, z) sits on or inside the three-body hard core
/// of radius `a`, i.e. hyperradius <= sqrt(2) * a (inclusive boundary).
pub fn hard_core_violated(x: Vec3, y: Vec3, z: Vec3, a: f64, geom: &BoxGeometry) -> bool {
    hyperradius_triple(x, y, z, geom) <= SQRT_2 * a
}

/// Centre-of-mass reduction: (x, y, z) -> (r1, (r2, r3)) with
/// r1 = (x + y + z)/3, r2 = x - y, r3 = x - z.
pub fn centered_coordinates(x: Vec3, y: Vec3, z: Vec3) -> (Vec3, Vec6) {
    let r1 = (x + y + z) * (1.0 / 3.0);
    (r1, Vec6::new(x - y, x - z))
}

/// Inverse of [`centered_coordinates`].
pub fn reconstruct_triple(r1: Vec3, rel: Vec6) -> (Vec3, Vec3, Vec3) {
    let x = r1 + (rel.u + rel.v) * (1.0 / 3.0);
    (x, x - rel.u, x - rel.v)
}

/// Boundary handling for pair differences.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Open,
    Periodic,
}

/// The simulation box [0, L)^3.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxGeometry {
    pub l: f64,
    pub boundary: Boundary,
}

impl BoxGeometry {
    pub fn open(l: f64) -> Self {
        BoxGeometry { l, boundary: Boundary::Open }
    }

    pub fn periodic(l: f64) -> Self {
        BoxGeometry { l, boundary: Boundary::Periodic }
    }

    /// Difference a - b, reduced to the minimum image in [-L/2, L/2)^3 in
    /// periodic mode, raw in open mode.
    pub fn pair_diff(&self, a: Vec3, b: Vec3) -> Vec3 {
        let d = a - b;
        match self.boundary {
            Boundary::Open => d,
            Boundary::Periodic => Vec3::new(
                min_image(d.x, self.l),
                min_image(d.y, self.l),
                min_image(d.z, self.l),
            ),
        }
    }

    /// Maps a point into [0, L)^3 in periodic mode; identity in open mode.
    pub fn wrap(&self, p: Vec3) -> Vec3 {
        match self.boundary {
            Boundary::Open => p,
            Boundary::Periodic => Vec3::new(
                wrap_coord(p.x, self.l),
                wrap_coord(p.y, self.l),
                wrap_coord(p.z, self.l),
            ),
        }
    }

    pub fn contains(&self, p: Vec3) -> bool {
        let inside = |c: f64| (0.0..self.l).contains(&c);
        inside(p.x) && inside(p.y) && inside(p.z)
    }

    pub fn volume(&self) -> f64 {
        self.l * self.l * self.l
    }
}

fn min_image(d: f64, l: f64) -> f64 {
    d - l * (d / l + 0.5).floor()
}

fn wrap_coord(c: f64, l: f64) -> f64 {
    let w = c - l * (c / l).floor();
    // c = -tiny wraps to exactly l under floor arithmetic; fold it back.
    if w >= l {
        w - l
    } else {
        w
    }
}
