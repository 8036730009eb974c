//! The candidate curvature function `K`: parsing, exact derivatives on the
//! hemisphere, critical point enumeration and condition (C).

mod critical;
pub mod expr;
pub mod jet;

#[cfg(test)]
use nalgebra::Matrix4;
use serde::{Serialize, Serializer};

pub use critical::{
    check_condition_c, classify_point, find_critical_points, refine_from, ConditionCReport,
    ConditionViolation, CriticalKind, CriticalPoint, CriticalSearch, SearchConfig, SearchWarning,
};

use crate::error::{Error, Result};
use crate::geometry::{self, dot, project_tangent, tangent_frame, HemispherePoint, Vec5};
use expr::Expr;
use jet::{Hess, Third};

/// Number of quasi-uniform samples used for the positivity check.
pub const POSITIVITY_SAMPLES: usize = 10_000;

/// A parsed closed-form expression for `K` in the ambient coordinates.
#[derive(Debug, Clone)]
pub struct KExpression {
    pub name: String,
    pub source: String,
    expr: Expr,
}

impl Serialize for KExpression {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.source)
    }
}

/// Ambient derivatives of `K` at a point, up to the requested order.
#[derive(Debug, Clone)]
pub struct AmbientDerivatives {
    pub value: f64,
    pub grad: Vec5,
    pub hess: Hess,
    pub third: Option<Box<Third>>,
}

pub fn parse_k(source: &str) -> Result<KExpression> {
    let k = KExpression::parse_unchecked(source)?;
    k.check_positive()?;
    Ok(k)
}

impl KExpression {
    /// Parses without the positivity scan.
    pub fn parse_unchecked(source: &str) -> Result<Self> {
        let expr = expr::parse(source)?;
        Ok(Self {
            name: source.trim().to_string(),
            source: source.to_string(),
            expr,
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    fn check_positive(&self) -> Result<()> {
        let pts = geometry::quasi_uniform_hemisphere(POSITIVITY_SAMPLES, &[]);
        let eq = geometry::quasi_uniform_equator(POSITIVITY_SAMPLES / 10, &[]);
        for p in pts.iter().chain(eq.iter()) {
            let v = self.expr.eval(p);
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Positivity { value: v, point: *p });
            }
        }
        Ok(())
    }

    pub fn value_at(&self, x: &Vec5) -> f64 {
        self.expr.eval(x)
    }

    pub fn value(&self, a: &HemispherePoint) -> f64 {
        self.expr.eval(a.coords())
    }

    /// Ambient value, gradient and Hessian (and third derivatives when
    /// `order == 3`).
    pub fn ambient(&self, x: &Vec5, order: u8) -> AmbientDerivatives {
        let j = self.expr.jet(x, order.clamp(1, 3));
        AmbientDerivatives {
            value: j.v,
            grad: j.g,
            hess: j.h,
            third: (order >= 3).then(|| Box::new(j.t)),
        }
    }

    /// Riemannian gradient on the sphere as an ambient tangent vector.
    pub fn intrinsic_gradient_ambient(&self, x: &Vec5) -> Vec5 {
        project_tangent(x, &self.ambient(x, 1).grad)
    }

    /// Riemannian gradient in the coordinates of [`geometry::tangent_frame`].
    pub fn intrinsic_gradient(&self, a: &HemispherePoint) -> [f64; 4] {
        let g = self.ambient(a.coords(), 1).grad;
        let f = tangent_frame(a);
        std::array::from_fn(|i| dot(&f[i], &g))
    }

    /// Gradient of `K` restricted to the equator, in the first three frame
    /// coordinates at a boundary point.
    pub fn tangential_gradient(&self, a: &HemispherePoint) -> Result<[f64; 3]> {
        if !a.is_boundary() {
            return Err(Error::InvalidPoint("tangential gradient needs a boundary point".into()));
        }
        let g = self.intrinsic_gradient(a);
        Ok([g[0], g[1], g[2]])
    }

    /// Outward normal derivative `∂K/∂ν = -∂K/∂x5` at a boundary point.
    pub fn normal_derivative(&self, a: &HemispherePoint) -> f64 {
        -self.ambient(a.coords(), 1).grad[4]
    }

    /// Riemannian Hessian `Hess(v, w) = vᵀ ∇²K w - <∇K, x> <v, w>` in a
    /// given set of orthonormal tangent vectors.
    pub fn intrinsic_hessian_in(&self, x: &Vec5, frame: &[Vec5]) -> Vec<Vec<f64>> {
        let d = self.ambient(x, 2);
        hessian_in_frame(&d, x, frame)
    }

    /// Intrinsic Laplacian, the trace of the Riemannian Hessian.
    pub fn intrinsic_laplacian(&self, a: &HemispherePoint) -> f64 {
        self.laplacian_at(a.coords())
    }

    pub fn laplacian_at(&self, x: &Vec5) -> f64 {
        let d = self.ambient(x, 2);
        laplacian_from(&d, x)
    }

    /// Laplacian in an arbitrary orthonormal tangent frame.
    pub fn laplacian_in_frame(&self, x: &Vec5, frame: &[Vec5; 4]) -> f64 {
        let h = self.intrinsic_hessian_in(x, frame);
        (0..4).map(|i| h[i][i]).sum()
    }

    /// Value, Riemannian gradient, Laplacian and the ambient gradient of the
    /// Laplacian's extension `tr ∇²K - xᵀ∇²K x - 4 <∇K, x>`, all at `x`.
    pub fn local_data(&self, x: &Vec5) -> LocalData {
        let d = self.ambient(x, 3);
        let t = d.third.as_ref().expect("order 3");
        let hx: Vec5 = std::array::from_fn(|m| (0..5).map(|j| d.hess[m][j] * x[j]).sum());
        let grad_lap: Vec5 = std::array::from_fn(|m| {
            let tr: f64 = (0..5).map(|j| t[j][j][m]).sum();
            let quad: f64 = (0..5)
                .map(|i| (0..5).map(|j| x[i] * x[j] * t[i][j][m]).sum::<f64>())
                .sum();
            tr - quad - 6.0 * hx[m] - 4.0 * d.grad[m]
        });
        LocalData {
            value: d.value,
            grad: d.grad,
            laplacian: laplacian_from(&d, x),
            grad_laplacian: grad_lap,
            hess_e5: std::array::from_fn(|m| d.hess[m][4]),
        }
    }
}

/// Quantities of `K` needed by the bubble expansions at one point. Gradients
/// are ambient; project them onto the relevant tangent space.
#[derive(Debug, Clone)]
pub struct LocalData {
    pub value: f64,
    pub grad: Vec5,
    pub laplacian: f64,
    pub grad_laplacian: Vec5,
    /// Column `∇²K e5`, the ambient gradient of `∂K/∂x5`.
    pub hess_e5: Vec5,
}

fn laplacian_from(d: &AmbientDerivatives, x: &Vec5) -> f64 {
    let tr: f64 = (0..5).map(|i| d.hess[i][i]).sum();
    let quad: f64 = (0..5)
        .map(|i| (0..5).map(|j| x[i] * d.hess[i][j] * x[j]).sum::<f64>())
        .sum();
    tr - quad - 4.0 * dot(&d.grad, x)
}

fn hessian_in_frame(d: &AmbientDerivatives, x: &Vec5, frame: &[Vec5]) -> Vec<Vec<f64>> {
    let radial = dot(&d.grad, x);
    frame
        .iter()
        .map(|v| {
            frame
                .iter()
                .map(|w| {
                    let mut s = 0.0;
                    for i in 0..5 {
                        for j in 0..5 {
                            s += v[i] * d.hess[i][j] * w[j];
                        }
                    }
                    s - radial * dot(v, w)
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
pub(crate) fn matrix4(h: &[Vec<f64>]) -> Matrix4<f64> {
    Matrix4::from_fn(|i, j| 0.5 * (h[i][j] + h[j][i]))
}
