//! Neumann Green's function of the conformal operator `-Δ + 2` on the upper
//! hemisphere and its regular part.
//!
//! Two normalizations are exposed:
//!
//! * `spherical_image`: `G(x, y) = (1 - cos d(x, y))^-1 + (1 - cos d(x, ȳ))^-1`
//!   with `ȳ` the equatorial reflection. The image term solves the same
//!   homogeneous equation and enforces the Neumann condition exactly.
//! * `flat_model`: the half-space kernel `|x - y|^-2 + |x̄ - y|^-2` evaluated in
//!   the stereographic chart, whose regular part on the diagonal is
//!   `1 / (4 h^2)` with `h` the chart height.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    self, chordal_one_minus_cos, fd_laplacian, fd_laplacian_flat, first_difference,
    reflect5, reflect_flat, stereo, stereo_jacobian, unit, FlatPoint, HemispherePoint, Vec4,
    Vec5,
};

const COINCIDENT_TOL: f64 = 1e-9;
const BOUNDARY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GreenConvention {
    SphericalImage,
    #[default]
    FlatModel,
}

impl std::fmt::Display for GreenConvention {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GreenConvention::SphericalImage => "spherical_image",
            GreenConvention::FlatModel => "flat_model",
        })
    }
}

fn flat_dist2(x: &Vec4, y: &Vec4) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Half-space Neumann kernel on flat points.
pub fn green_flat(x: &FlatPoint, y: &FlatPoint) -> Result<f64> {
    let r2 = flat_dist2(x.coords(), y.coords());
    if r2.sqrt() < COINCIDENT_TOL {
        return Err(Error::CoincidentPoints(r2.sqrt()));
    }
    Ok(green_flat_raw(x.coords(), y.coords()))
}

pub(crate) fn green_flat_raw(x: &Vec4, y: &Vec4) -> f64 {
    1.0 / flat_dist2(x, y) + 1.0 / flat_dist2(&reflect_flat(x), y)
}

/// Green's function between two hemisphere points.
pub fn green(x: &HemispherePoint, y: &HemispherePoint, conv: GreenConvention) -> Result<f64> {
    let d = geometry::geodesic_distance(x, y);
    if d < COINCIDENT_TOL {
        return Err(Error::CoincidentPoints(d));
    }
    green_raw(x.coords(), y.coords(), conv)
}

/// Green's function on raw ambient unit vectors (no hemisphere check).
pub fn green_raw(x: &Vec5, y: &Vec5, conv: GreenConvention) -> Result<f64> {
    match conv {
        GreenConvention::SphericalImage => Ok(1.0 / chordal_one_minus_cos(x, y)
            + 1.0 / chordal_one_minus_cos(x, &reflect5(y))),
        GreenConvention::FlatModel => Ok(green_flat_raw(&stereo(x)?, &stereo(y)?)),
    }
}

/// Regular part `H(a, x)` for an interior pole `a`.
pub fn regular_part(a: &HemispherePoint, x: &HemispherePoint, conv: GreenConvention) -> Result<f64> {
    check_interior(a, conv)?;
    Ok(regular_raw(a.coords(), x.coords(), conv)?.value)
}

/// Self-interaction `H(a, a)`.
pub fn self_interaction(a: &HemispherePoint, conv: GreenConvention) -> Result<f64> {
    check_interior(a, conv)?;
    Ok(self_raw(a.coords(), conv)?.value)
}

/// Distance to the boundary in the model matching the convention: geodesic
/// for `spherical_image`, chart height for `flat_model`.
pub fn model_boundary_distance(a: &HemispherePoint, conv: GreenConvention) -> Result<f64> {
    match conv {
        GreenConvention::SphericalImage => Ok(geometry::boundary_distance(a)),
        GreenConvention::FlatModel => Ok(stereo(a.coords())?[3]),
    }
}

fn check_interior(a: &HemispherePoint, conv: GreenConvention) -> Result<()> {
    let d = model_boundary_distance(a, conv)?;
    if d < BOUNDARY_TOL {
        return Err(Error::BoundaryPoint(d));
    }
    Ok(())
}

/// A value together with ambient gradients with respect to each argument.
/// The gradients belong to a smooth extension off the sphere; project them
/// onto the tangent space before use.
#[derive(Debug, Clone, Copy)]
pub struct KernelValue {
    pub value: f64,
    pub grad_a: Vec5,
    pub grad_x: Vec5,
}

/// `H(a, x)` with gradients in both arguments.
pub fn regular_raw(a: &Vec5, x: &Vec5, conv: GreenConvention) -> Result<KernelValue> {
    match conv {
        GreenConvention::SphericalImage => {
            let abar = reflect5(a);
            let xbar = reflect5(x);
            let u = chordal_one_minus_cos(&abar, x);
            let u2 = u * u;
            Ok(KernelValue {
                value: 1.0 / u,
                grad_a: std::array::from_fn(|m| (xbar[m] - a[m]) / u2),
                grad_x: std::array::from_fn(|m| (abar[m] - x[m]) / u2),
            })
        }
        GreenConvention::FlatModel => {
            let ya = stereo(a)?;
            let yx = stereo(x)?;
            let yabar = reflect_flat(&ya);
            let r2 = flat_dist2(&yabar, &yx);
            let w = 2.0 / (r2 * r2);
            // dH/dyx = 2 (yabar - yx) / r^4 ; dH/dya = R * (-2 (yabar - yx) / r^4)
            let dyx: Vec4 = std::array::from_fn(|k| w * (yabar[k] - yx[k]));
            let mut dya: Vec4 = dyx.map(|v| -v);
            dya[3] = -dya[3];
            Ok(KernelValue {
                value: 1.0 / r2,
                grad_a: pull_back(a, &dya),
                grad_x: pull_back(x, &dyx),
            })
        }
    }
}

/// `H(a, a)` with its gradient (stored in `grad_a`).
pub fn self_raw(a: &Vec5, conv: GreenConvention) -> Result<KernelValue> {
    match conv {
        GreenConvention::SphericalImage => {
            let h = a[4];
            let mut g = [0.0; 5];
            g[4] = -1.0 / (h * h * h);
            Ok(KernelValue {
                value: 0.5 / (h * h),
                grad_a: g,
                grad_x: [0.0; 5],
            })
        }
        GreenConvention::FlatModel => {
            let y = stereo(a)?;
            let h = y[3];
            let mut dy = [0.0; 4];
            dy[3] = -0.5 / (h * h * h);
            Ok(KernelValue {
                value: 0.25 / (h * h),
                grad_a: pull_back(a, &dy),
                grad_x: [0.0; 5],
            })
        }
    }
}

fn pull_back(x: &Vec5, dy: &Vec4) -> Vec5 {
    let jac = stereo_jacobian(x);
    std::array::from_fn(|m| (0..4).map(|k| jac[k][m] * dy[k]).sum())
}

/// Residual of the radial equation `f'' + 3 cot(d) f' - 2 f` for
/// `f(d) = (1 - cos d)^-1`, using closed-form derivatives.
pub fn radial_residual(d: f64) -> f64 {
    let (s, c) = d.sin_cos();
    let u = 2.0 * (0.5 * d).sin().powi(2);
    let f = 1.0 / u;
    let f1 = -s / (u * u);
    let f2 = -c / (u * u) + 2.0 * s * s / (u * u * u);
    f2 + 3.0 * (c / s) * f1 - 2.0 * f
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelReport {
    pub convention: GreenConvention,
    /// `(d, residual)` for the radial identity of the singular kernel.
    pub radial: Vec<(f64, f64)>,
    /// Max of the finite-difference operator residual over the sample grid,
    /// relative to the kernel value at each sample.
    pub operator_residual_max: f64,
    pub operator_samples: usize,
    /// Max of `|dG/dν|` over equator samples.
    pub neumann_max: f64,
    pub neumann_samples: usize,
    pub excluded_radius: f64,
}

/// Checks the kernel identities for one convention.
///
/// For `spherical_image` the operator is `-Δ + 2` on the sphere; for
/// `flat_model` it is the Euclidean Laplacian in the chart.
pub fn verify_kernel(conv: GreenConvention) -> Result<KernelReport> {
    let source = HemispherePoint::new(geometry::normalize(&[0.3, -0.2, 0.1, 0.4, 0.6]))?;
    let y = *source.coords();
    let ybar = reflect5(&y);
    let excluded = 0.2;
    let step = 4e-4;

    let samples = geometry::quasi_uniform_hemisphere(400, &[0.13, 0.29, 0.41, 0.57]);
    let mut residual_max: f64 = 0.0;
    let mut count = 0;
    for x in &samples {
        if geometry::angle(x, &y) < excluded || geometry::angle(x, &ybar) < excluded || x[0] < -0.9 {
            continue;
        }
        let r = match conv {
            GreenConvention::SphericalImage => {
                let g = |p: &Vec5| green_raw(p, &y, conv).unwrap_or(f64::NAN);
                let lap = fd_laplacian(g, x, step);
                (-lap + 2.0 * g(x)).abs() / g(x)
            }
            GreenConvention::FlatModel => {
                let yf = stereo(&y)?;
                let xf = stereo(x)?;
                let g = |p: &Vec4| green_flat_raw(p, &yf);
                fd_laplacian_flat(g, &xf, step * (1.0 + flat_dist2(&xf, &[0.0; 4])))
                    .abs()
                    / g(&xf)
            }
        };
        residual_max = residual_max.max(r);
        count += 1;
    }

    let eq = geometry::quasi_uniform_equator(130, &[0.21, 0.37, 0.73]);
    let mut neumann_max: f64 = 0.0;
    let mut neumann_count = 0;
    for x in eq.iter().filter(|x| x[0] >= -0.9).take(100) {
        let dn = match conv {
            GreenConvention::SphericalImage => {
                let e5 = unit(4);
                // the outward normal is -e5; central differences across the equator
                -first_difference(
                    |t| green_raw(&geometry::geodesic(x, &e5, t), &y, conv).unwrap_or(f64::NAN),
                    1e-4,
                )
            }
            GreenConvention::FlatModel => {
                let yf = stereo(&y)?;
                let xf = stereo(x)?;
                -first_difference(
                    |t| {
                        let mut z = xf;
                        z[3] += t;
                        green_flat_raw(&z, &yf)
                    },
                    1e-4,
                )
            }
        };
        neumann_max = neumann_max.max(dn.abs());
        neumann_count += 1;
    }

    Ok(KernelReport {
        convention: conv,
        radial: [0.5, 1.0, 1.5].iter().map(|&d| (d, radial_residual(d))).collect(),
        operator_residual_max: residual_max,
        operator_samples: count,
        neumann_max,
        neumann_samples: neumann_count,
        excluded_radius: excluded,
    })
}
