//! Direct quadrature of `J(u)` for `u = Σ α_i φ_i`.
//!
//! Each bubble owns a patch in geodesic polar coordinates `x = cos r a +
//! sin r ω` around its center, weighted by the partition of unity
//! `δ_i^8 / Σ_k δ_k^8`. Directions are parametrized by the angle `θ` to the
//! inward normal and a point of the complementary 2-sphere, so the domain
//! boundary only enters through `r_max(θ)`. Radial integrals use adaptive
//! Gauss-Legendre on geometrically graded panels; angular rules are doubled
//! until successive levels agree.

use gauss_quad::GaussLegendre;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{delta_raw, phi_with_gradient, Bubble};
use crate::error::{Error, Result};
use crate::geometry::{self, axpy, dot, norm, scale, unit, Vec5};
use crate::greenfn::GreenConvention;
use crate::kfield::KExpression;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureConfig {
    /// Relative tolerance between successive angular levels.
    pub tol: f64,
    /// Budget on the number of radial cells of one level.
    pub max_cells: usize,
    pub n_theta: usize,
    pub n_polar: usize,
    pub n_azimuth: usize,
    pub radial_order: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_cells: 2_000_000,
            n_theta: 16,
            n_polar: 6,
            n_azimuth: 12,
            radial_order: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct JReport {
    pub j: f64,
    /// `‖u‖² = ∫ |∇u|² + 2u²`.
    pub n: f64,
    /// `∫ K u⁴`.
    pub d2: f64,
    /// Relative change between the last two angular levels.
    pub error_estimate: f64,
    pub cells: usize,
    pub levels: usize,
}

struct Rules {
    theta: Vec<(f64, f64)>,
    polar: Vec<(f64, f64)>,
    n_azimuth: usize,
}

fn gl(n: usize) -> Vec<(f64, f64)> {
    GaussLegendre::new(n.max(2))
        .expect("degree at least 2")
        .as_node_weight_pairs()
        .to_vec()
}

struct Integrand<'a> {
    k: &'a KExpression,
    bubbles: &'a [Bubble],
    conv: GreenConvention,
    patch: usize,
}

impl Integrand<'_> {
    /// `[|∇u|² + 2u², K u⁴]` times the patch weight.
    fn eval(&self, x: &Vec5) -> Result<[f64; 2]> {
        let mut u = 0.0;
        let mut g = [0.0; 5];
        for b in self.bubbles {
            let (v, gv) = phi_with_gradient(b, x, self.conv)?;
            u += b.alpha * v;
            g = axpy(b.alpha, &gv, &g);
        }
        let w = if self.bubbles.len() == 1 {
            1.0
        } else {
            let own = self.bubbles[self.patch];
            let d0 = delta_raw(own.a.coords(), own.lambda, x);
            let s: f64 = self
                .bubbles
                .iter()
                .map(|b| (delta_raw(b.a.coords(), b.lambda, x) / d0).powi(8))
                .sum();
            1.0 / s
        };
        let u2 = u * u;
        Ok([w * (dot(&g, &g) + 2.0 * u2), w * self.k.value_at(x) * u2 * u2])
    }
}

struct Radial<'a> {
    nodes: &'a [(f64, f64)],
}

impl Radial<'_> {
    fn panel(&self, f: &dyn Fn(f64) -> Result<[f64; 2]>, a: f64, b: f64) -> Result<[f64; 2]> {
        let (h, m) = (0.5 * (b - a), 0.5 * (b + a));
        let mut s = [0.0; 2];
        for (x, w) in self.nodes {
            let v = f(m + h * x)?;
            s[0] += w * v[0];
            s[1] += w * v[1];
        }
        Ok([s[0] * h, s[1] * h])
    }

    /// Adaptive bisection; returns the integral and the number of cells.
    fn adaptive(&self, f: &dyn Fn(f64) -> Result<[f64; 2]>, a: f64, b: f64, whole: [f64; 2], depth: u32) -> Result<([f64; 2], usize)> {
        let m = 0.5 * (a + b);
        let l = self.panel(f, a, m)?;
        let r = self.panel(f, m, b)?;
        let split = [l[0] + r[0], l[1] + r[1]];
        let ok = (0..2).all(|c| (split[c] - whole[c]).abs() <= 1e-11 * split[c].abs() + 1e-16);
        if ok || depth >= 12 {
            return Ok((split, 2));
        }
        let (li, lc) = self.adaptive(f, a, m, l, depth + 1)?;
        let (ri, rc) = self.adaptive(f, m, b, r, depth + 1)?;
        Ok(([li[0] + ri[0], li[1] + ri[1]], lc + rc + 2))
    }
}

/// Orthonormal frame at `a`: the inward normal direction followed by three
/// vectors spanning its complement.
fn patch_frame(a: &Vec5) -> (Vec5, [Vec5; 3]) {
    let e5 = unit(4);
    let p = geometry::project_tangent(a, &e5);
    let n = if norm(&p) > 1e-12 {
        scale(&p, 1.0 / norm(&p))
    } else {
        geometry::tangent_frame_raw(a)[0]
    };
    let mut rest = Vec::with_capacity(3);
    for mut v in geometry::tangent_frame_raw(a) {
        for _ in 0..2 {
            v = axpy(-dot(&n, &v), &n, &v);
            for r in &rest {
                v = axpy(-dot(r, &v), r, &v);
            }
        }
        if norm(&v) > 1e-6 {
            rest.push(scale(&v, 1.0 / norm(&v)));
        }
        if rest.len() == 3 {
            break;
        }
    }
    (n, [rest[0], rest[1], rest[2]])
}

fn level(
    k: &KExpression,
    bubbles: &[Bubble],
    conv: GreenConvention,
    rules: &Rules,
    radial: &[(f64, f64)],
) -> Result<([f64; 2], usize)> {
    let mut total = [0.0; 2];
    let mut cells = 0;
    for (patch, b) in bubbles.iter().enumerate() {
        let a = *b.a.coords();
        let (n, rest) = patch_frame(&a);
        let cos_d = dot(&n, &unit(4));
        let theta_max = if b.is_interior() { std::f64::consts::PI } else { std::f64::consts::FRAC_PI_2 };
        let integrand = Integrand { k, bubbles, conv, patch };
        let rad = Radial { nodes: radial };
        let mut dirs = Vec::new();
        for &(tx, tw) in &rules.theta {
            let theta = 0.5 * theta_max * (tx + 1.0);
            let wt = 0.5 * theta_max * tw * theta.sin().powi(2);
            for &(px, pw) in &rules.polar {
                let sb = (1.0 - px * px).max(0.0).sqrt();
                for m in 0..rules.n_azimuth {
                    let phi = 2.0 * std::f64::consts::PI * (m as f64 + 0.5) / rules.n_azimuth as f64;
                    let sigma = axpy(
                        px,
                        &rest[2],
                        &axpy(sb * phi.cos(), &rest[0], &scale(&rest[1], sb * phi.sin())),
                    );
                    let omega = axpy(theta.cos(), &n, &scale(&sigma, theta.sin()));
                    let w = wt * pw * 2.0 * std::f64::consts::PI / rules.n_azimuth as f64;
                    dirs.push((theta, omega, w));
                }
            }
        }
        let results: Vec<Result<([f64; 2], usize)>> = dirs
            .par_iter()
            .map(|(theta, omega, w)| {
                let omega5 = theta.cos() * cos_d;
                let r_max = a[4].atan2(-omega5);
                let f = |r: f64| -> Result<[f64; 2]> {
                    let (s, c) = r.sin_cos();
                    let x = geometry::normalize(&axpy(c, &a, &scale(omega, s)));
                    let v = integrand.eval(&x)?;
                    let j = s * s * s;
                    Ok([v[0] * j, v[1] * j])
                };
                let mut edges = vec![0.0];
                let mut e = 0.125 / b.lambda;
                while e < r_max * 0.75 {
                    edges.push(e);
                    e *= 2.0;
                }
                edges.push(r_max);
                let mut s = [0.0; 2];
                let mut c = 0;
                for win in edges.windows(2) {
                    let whole = rad.panel(&f, win[0], win[1])?;
                    let (v, n) = rad.adaptive(&f, win[0], win[1], whole, 0)?;
                    s[0] += v[0];
                    s[1] += v[1];
                    c += n + 1;
                }
                Ok(([s[0] * w, s[1] * w], c))
            })
            .collect();
        for r in results {
            let (v, c) = r?;
            total[0] += v[0];
            total[1] += v[1];
            cells += c;
        }
    }
    Ok((total, cells))
}

/// Numerically integrates `J(Σ α_i φ_i)` over the hemisphere.
pub fn functional_j(
    k: &KExpression,
    bubbles: &[Bubble],
    quad: &QuadratureConfig,
    conv: GreenConvention,
) -> Result<JReport> {
    if bubbles.is_empty() {
        return Err(Error::Invalid("empty bubble configuration".into()));
    }
    for b in bubbles {
        if !(b.lambda > 0.0 && b.alpha > 0.0) {
            return Err(Error::Invalid("bubble parameters must be positive".into()));
        }
    }
    let radial = gl(quad.radial_order);
    let mut prev: Option<[f64; 2]> = None;
    let mut mult = 1;
    let mut levels = 0;
    loop {
        let rules = Rules {
            theta: gl(quad.n_theta * mult),
            polar: gl(quad.n_polar * mult),
            n_azimuth: quad.n_azimuth * mult,
        };
        let (v, cells) = level(k, bubbles, conv, &rules, &radial)?;
        levels += 1;
        if let Some(p) = prev {
            let err = (0..2)
                .map(|c| (v[c] - p[c]).abs() / v[c].abs().max(1e-300))
                .fold(0.0, f64::max);
            if err <= quad.tol {
                return Ok(JReport {
                    j: v[0] / v[1].sqrt(),
                    n: v[0],
                    d2: v[1],
                    error_estimate: err,
                    cells,
                    levels,
                });
            }
            if cells * 8 > quad.max_cells {
                return Err(Error::QuadratureBudgetExceeded { estimate: err, cells });
            }
        }
        prev = Some(v);
        mult *= 2;
    }
}
