//! Geometry of the closed upper hemisphere of the unit 4-sphere in R^5.
//!
//! Points are stored as ambient unit 5-vectors; the last coordinate is the
//! height above the equator. A stereographic chart from the equatorial point
//! `q = -e1` maps the hemisphere onto the closed half-space `{y4 >= 0}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec5 = [f64; 5];
pub type Vec4 = [f64; 4];

/// Heights in `[-BOUNDARY_SNAP, BOUNDARY_SNAP]` are classified as boundary.
pub const BOUNDARY_SNAP: f64 = 1e-12;
const POLE_TOL: f64 = 1e-12;

pub fn dot(x: &Vec5, y: &Vec5) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn norm(x: &Vec5) -> f64 {
    dot(x, x).sqrt()
}

pub fn scale(x: &Vec5, s: f64) -> Vec5 {
    x.map(|v| v * s)
}

pub fn add(x: &Vec5, y: &Vec5) -> Vec5 {
    std::array::from_fn(|i| x[i] + y[i])
}

pub fn sub(x: &Vec5, y: &Vec5) -> Vec5 {
    std::array::from_fn(|i| x[i] - y[i])
}

pub fn axpy(a: f64, x: &Vec5, y: &Vec5) -> Vec5 {
    std::array::from_fn(|i| a * x[i] + y[i])
}

pub fn normalize(x: &Vec5) -> Vec5 {
    scale(x, 1.0 / norm(x))
}

pub fn unit(i: usize) -> Vec5 {
    let mut e = [0.0; 5];
    e[i] = 1.0;
    e
}

/// Component of `v` orthogonal to the unit vector `a`.
pub fn project_tangent(a: &Vec5, v: &Vec5) -> Vec5 {
    axpy(-dot(a, v), a, v)
}

/// Equatorial reflection of an ambient vector (negates the height).
pub fn reflect5(x: &Vec5) -> Vec5 {
    [x[0], x[1], x[2], x[3], -x[4]]
}

/// `1 - <x, y>` for unit vectors, computed chordally as `|x - y|^2 / 2`.
pub fn chordal_one_minus_cos(x: &Vec5, y: &Vec5) -> f64 {
    let d = sub(x, y);
    0.5 * dot(&d, &d)
}

/// A point of the closed upper hemisphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec5", into = "Vec5")]
pub struct HemispherePoint {
    coords: Vec5,
}

impl HemispherePoint {
    /// Validates a unit vector with non-negative height, snapping tiny
    /// negative heights onto the equator.
    pub fn new(coords: Vec5) -> Result<Self> {
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidPoint("non-finite coordinate".into()));
        }
        let n = norm(&coords);
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidPoint(format!("norm {n} is not 1")));
        }
        if coords[4] < -BOUNDARY_SNAP {
            return Err(Error::InvalidPoint(format!(
                "height {} below the equator",
                coords[4]
            )));
        }
        Ok(Self::from_unchecked(coords))
    }

    /// Normalizes and snaps; the caller guarantees the height is not
    /// meaningfully negative.
    pub(crate) fn from_unchecked(coords: Vec5) -> Self {
        let mut c = normalize(&coords);
        if c[4] <= BOUNDARY_SNAP {
            c[4] = 0.0;
            c = normalize(&c);
        }
        Self { coords: c }
    }

    /// Normalizes an arbitrary nonzero vector, clamping negative heights to
    /// the equator.
    pub fn from_direction(v: Vec5) -> Result<Self> {
        let n = norm(&v);
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::InvalidPoint("zero or non-finite direction".into()));
        }
        let mut c = scale(&v, 1.0 / n);
        if c[4] < 0.0 {
            c[4] = 0.0;
        }
        Ok(Self::from_unchecked(c))
    }

    pub fn north_pole() -> Self {
        Self { coords: unit(4) }
    }

    pub fn coords(&self) -> &Vec5 {
        &self.coords
    }

    pub fn height(&self) -> f64 {
        self.coords[4]
    }

    pub fn is_boundary(&self) -> bool {
        self.coords[4] == 0.0
    }

    /// Point at geodesic distance `d` above the equator along the meridian
    /// through the horizontal unit direction `dir` (first four coordinates).
    pub fn at_height(dir: Vec4, d: f64) -> Result<Self> {
        let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n == 0.0 {
            return Err(Error::InvalidPoint("zero horizontal direction".into()));
        }
        let (s, c) = d.sin_cos();
        Self::new([
            c * dir[0] / n,
            c * dir[1] / n,
            c * dir[2] / n,
            c * dir[3] / n,
            s,
        ])
    }
}

impl TryFrom<Vec5> for HemispherePoint {
    type Error = Error;
    fn try_from(v: Vec5) -> Result<Self> {
        Self::new(v)
    }
}

impl From<HemispherePoint> for Vec5 {
    fn from(p: HemispherePoint) -> Vec5 {
        p.coords
    }
}

/// A point of the closed flat half-space `{y4 >= 0}` in R^4.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec4", into = "Vec4")]
pub struct FlatPoint {
    coords: Vec4,
}

impl FlatPoint {
    pub fn new(coords: Vec4) -> Result<Self> {
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidPoint("non-finite coordinate".into()));
        }
        if coords[3] < -BOUNDARY_SNAP {
            return Err(Error::InvalidPoint(format!(
                "flat height {} is negative",
                coords[3]
            )));
        }
        let mut c = coords;
        if c[3] <= BOUNDARY_SNAP {
            c[3] = 0.0;
        }
        Ok(Self { coords: c })
    }

    pub fn coords(&self) -> &Vec4 {
        &self.coords
    }

    pub fn height(&self) -> f64 {
        self.coords[3]
    }
}

impl TryFrom<Vec4> for FlatPoint {
    type Error = Error;
    fn try_from(v: Vec4) -> Result<Self> {
        Self::new(v)
    }
}

impl From<FlatPoint> for Vec4 {
    fn from(p: FlatPoint) -> Vec4 {
        p.coords
    }
}

/// Geodesic distance `arccos <x, y>`, evaluated through the chord length so
/// that small distances keep full relative accuracy.
pub fn geodesic_distance(x: &HemispherePoint, y: &HemispherePoint) -> f64 {
    angle(&x.coords, &y.coords)
}

/// Angle between two unit vectors of R^5.
pub fn angle(x: &Vec5, y: &Vec5) -> f64 {
    let chord = norm(&sub(x, y));
    2.0 * (0.5 * chord).min(1.0).asin()
}

/// `1 - cos d(x, y)`.
pub fn one_minus_cos(x: &HemispherePoint, y: &HemispherePoint) -> f64 {
    chordal_one_minus_cos(&x.coords, &y.coords)
}

/// Geodesic distance to the equator, `arcsin(x5)`.
pub fn boundary_distance(a: &HemispherePoint) -> f64 {
    a.coords[4].clamp(0.0, 1.0).asin()
}

/// Equatorial reflection. The image lies in the lower hemisphere, so it is
/// returned as a raw ambient vector.
pub fn reflect(a: &HemispherePoint) -> Vec5 {
    reflect5(&a.coords)
}

pub fn reflect_flat(y: &Vec4) -> Vec4 {
    [y[0], y[1], y[2], -y[3]]
}

/// Stereographic projection from `q = -e1` applied to any ambient unit vector.
pub fn stereo(x: &Vec5) -> Result<Vec4> {
    let den = 1.0 + x[0];
    if den <= POLE_TOL {
        return Err(Error::PoleSingularity);
    }
    Ok([x[1] / den, x[2] / den, x[3] / den, x[4] / den])
}

/// Inverse stereographic projection onto the unit sphere.
pub fn inverse_stereo(y: &Vec4) -> Vec5 {
    let r2: f64 = y.iter().map(|v| v * v).sum();
    let den = 1.0 + r2;
    [
        (1.0 - r2) / den,
        2.0 * y[0] / den,
        2.0 * y[1] / den,
        2.0 * y[2] / den,
        2.0 * y[3] / den,
    ]
}

pub fn to_flat(x: &HemispherePoint) -> Result<FlatPoint> {
    let y = stereo(&x.coords)?;
    FlatPoint::new(y)
}

pub fn from_flat(y: &FlatPoint) -> HemispherePoint {
    HemispherePoint::from_unchecked(inverse_stereo(&y.coords))
}

/// Jacobian of the stereographic chart, `J[k][m] = d y_k / d x_m`.
pub fn stereo_jacobian(x: &Vec5) -> [[f64; 5]; 4] {
    let den = 1.0 + x[0];
    let mut jac = [[0.0; 5]; 4];
    for k in 0..4 {
        jac[k][0] = -x[k + 1] / (den * den);
        jac[k][k + 1] = 1.0 / den;
    }
    jac
}

/// Orthonormal basis of the tangent space at `a`.
///
/// At boundary points the first three vectors span the tangent space of the
/// equator and the fourth is the inward normal `e5`, so the outward normal is
/// minus the fourth vector.
pub fn tangent_frame(a: &HemispherePoint) -> [Vec5; 4] {
    if a.is_boundary() {
        let mut frame = [[0.0; 5]; 4];
        let basis = orthonormal_complement(&[a.coords, unit(4)], 3);
        frame[..3].copy_from_slice(&basis);
        frame[3] = unit(4);
        frame
    } else {
        let basis = orthonormal_complement(&[a.coords], 4);
        [basis[0], basis[1], basis[2], basis[3]]
    }
}

/// Frame at an arbitrary ambient unit vector (no hemisphere constraint).
pub fn tangent_frame_raw(a: &Vec5) -> [Vec5; 4] {
    let basis = orthonormal_complement(&[*a], 4);
    [basis[0], basis[1], basis[2], basis[3]]
}

/// Gram-Schmidt completion of orthonormal `fixed` vectors, returning `count`
/// further orthonormal vectors built from the standard basis in order of
/// decreasing residual.
fn orthonormal_complement(fixed: &[Vec5], count: usize) -> Vec<Vec5> {
    let mut out: Vec<Vec5> = Vec::with_capacity(count);
    let mut candidates: Vec<Vec5> = (0..5).map(unit).collect();
    while out.len() < count {
        let mut best: Option<(f64, Vec5)> = None;
        for c in &candidates {
            let mut v = *c;
            // two passes of modified Gram-Schmidt
            for _ in 0..2 {
                for f in fixed.iter().chain(out.iter()) {
                    v = axpy(-dot(f, &v), f, &v);
                }
            }
            let n = norm(&v);
            if best.as_ref().is_none_or(|(bn, _)| n > *bn + 1e-12) {
                best = Some((n, v));
            }
        }
        let (n, v) = best.expect("five candidates");
        let v = scale(&v, 1.0 / n);
        candidates.retain(|c| norm(&sub(c, &v)) > 0.0);
        out.push(v);
    }
    out
}

/// Geodesic `cos(t) a + sin(t) v` for a unit tangent `v` at `a`.
pub fn geodesic(a: &Vec5, v: &Vec5, t: f64) -> Vec5 {
    let (s, c) = t.sin_cos();
    normalize(&std::array::from_fn(|i| c * a[i] + s * v[i]))
}

/// Exponential map at `a` applied to a tangent vector of any length.
pub fn exp_map(a: &Vec5, v: &Vec5) -> Vec5 {
    let t = norm(v);
    if t < 1e-300 {
        return *a;
    }
    geodesic(a, &scale(v, 1.0 / t), t)
}

/// Four-dimensional coordinates of a tangent vector in a frame.
pub fn frame_coords(frame: &[Vec5], v: &Vec5) -> Vec<f64> {
    frame.iter().map(|e| dot(e, v)).collect()
}

/// Fourth-order central second difference of a function of one variable.
pub fn second_difference(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    (-f(2.0 * h) + 16.0 * f(h) - 30.0 * f(0.0) + 16.0 * f(-h) - f(-2.0 * h)) / (12.0 * h * h)
}

/// Fourth-order central first difference.
pub fn first_difference(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    (-f(2.0 * h) + 8.0 * f(h) - 8.0 * f(-h) + f(-2.0 * h)) / (12.0 * h)
}

/// Intrinsic Laplacian on the unit 4-sphere by finite differences along four
/// orthogonal geodesics through `x`.
pub fn fd_laplacian(f: impl Fn(&Vec5) -> f64, x: &Vec5, h: f64) -> f64 {
    tangent_frame_raw(x)
        .iter()
        .map(|e| second_difference(|t| f(&geodesic(x, e, t)), h))
        .sum()
}

/// Euclidean Laplacian in R^4 by finite differences.
pub fn fd_laplacian_flat(f: impl Fn(&Vec4) -> f64, y: &Vec4, h: f64) -> f64 {
    (0..4)
        .map(|i| {
            second_difference(
                |t| {
                    let mut z = *y;
                    z[i] += t;
                    f(&z)
                },
                h,
            )
        })
        .sum()
}

/// Low-discrepancy additive recurrence in `[0,1)^dim`, shifted by `shift`.
fn kronecker(n: usize, dim: usize, shift: &[f64]) -> Vec<Vec<f64>> {
    // generalized golden ratio: the positive root of x^(dim+1) = x + 1
    let mut phi: f64 = 2.0;
    for _ in 0..64 {
        phi = (1.0 + phi).powf(1.0 / (dim as f64 + 1.0));
    }
    let alpha: Vec<f64> = (1..=dim).map(|j| phi.powi(-(j as i32)).fract()).collect();
    (0..n)
        .map(|k| {
            (0..dim)
                .map(|j| (0.5 + shift.get(j).copied().unwrap_or(0.0) + alpha[j] * (k as f64 + 1.0)).fract())
                .collect()
        })
        .collect()
}

/// Equal-area map of `[0,1)^3` onto the unit 3-sphere (Hopf coordinates).
fn hopf(u: &[f64]) -> [f64; 4] {
    let eta = u[0].sqrt().asin();
    let (s, c) = eta.sin_cos();
    let (s1, c1) = (2.0 * std::f64::consts::PI * u[1]).sin_cos();
    let (s2, c2) = (2.0 * std::f64::consts::PI * u[2]).sin_cos();
    [c * c1, c * s1, s * c2, s * s2]
}

/// Quasi-uniform points on the closed upper hemisphere.
pub fn quasi_uniform_hemisphere(n: usize, shift: &[f64]) -> Vec<Vec5> {
    kronecker(n, 4, shift)
        .into_iter()
        .map(|u| {
            // height has density proportional to 1 - t^2 on [0, 1]
            let target = u[0];
            let mut t = target;
            for _ in 0..50 {
                let f = 0.5 * (3.0 * t - t * t * t) - target;
                let df = 1.5 * (1.0 - t * t);
                if df < 1e-12 {
                    break;
                }
                t = (t - f / df).clamp(0.0, 1.0);
            }
            let w = hopf(&u[1..]);
            let r = (1.0 - t * t).max(0.0).sqrt();
            [r * w[0], r * w[1], r * w[2], r * w[3], t]
        })
        .collect()
}

/// Quasi-uniform points on the equator.
pub fn quasi_uniform_equator(n: usize, shift: &[f64]) -> Vec<Vec5> {
    kronecker(n, 3, shift)
        .into_iter()
        .map(|u| {
            let w = hopf(&u);
            [w[0], w[1], w[2], w[3], 0.0]
        })
        .collect()
}
