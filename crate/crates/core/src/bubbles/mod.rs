//! Bubble profiles, their interaction kernel, quadrature of the energy
//! functional and its asymptotic expansion.

mod expansion;
pub mod neumann;
mod quadrature;

use serde::{Deserialize, Serialize};

pub use expansion::{
    expansion_j, fd_gradient, gradient_expansions, random_state, reduced, relative_error, Expansion, GradientConstants, GradientRecord,
    Reduced, ReducedGradient,
};
pub use quadrature::{functional_j, JReport, QuadratureConfig};

use crate::error::{Error, Result};
use crate::geometry::{
    self, chordal_one_minus_cos, project_tangent, scale, FlatPoint, HemispherePoint, Vec5,
};
use crate::greenfn::{self, GreenConvention};

/// `∫_{R^4} (1 + |x|^2)^-4 dx`.
pub const S: f64 = std::f64::consts::PI * std::f64::consts::PI / 6.0;
/// Volume of the unit 3-sphere.
pub const OMEGA3: f64 = 2.0 * std::f64::consts::PI * std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BubbleKind {
    Interior,
    Boundary,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bubble {
    pub kind: BubbleKind,
    pub a: HemispherePoint,
    pub lambda: f64,
    #[serde(default = "one")]
    pub alpha: f64,
}

/// Validity window of the asymptotic evaluators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpansionConfig {
    pub convention: GreenConvention,
    pub lambda_min: f64,
    pub regime_threshold: f64,
    /// Constant of the truncation budget `c / (λ^3 d^4)`.
    pub truncation_c: f64,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        Self {
            convention: GreenConvention::SphericalImage,
            lambda_min: 10.0,
            regime_threshold: 10.0,
            truncation_c: 2.0,
        }
    }
}

/// Relative slack applied to the regime thresholds so that configurations
/// sitting exactly on a threshold are accepted.
const THRESHOLD_SLACK: f64 = 1e-9;

impl Bubble {
    pub fn interior(a: HemispherePoint, lambda: f64, alpha: f64) -> Self {
        Self { kind: BubbleKind::Interior, a, lambda, alpha }
    }

    /// Boundary bubble; `a` is projected onto the equator.
    pub fn boundary(a: HemispherePoint, lambda: f64, alpha: f64) -> Self {
        let c = a.coords();
        let a = HemispherePoint::from_unchecked([c[0], c[1], c[2], c[3], 0.0]);
        Self { kind: BubbleKind::Boundary, a, lambda, alpha }
    }

    pub fn is_interior(&self) -> bool {
        self.kind == BubbleKind::Interior
    }

    /// Boundary distance in the model of the convention.
    pub fn d(&self, conv: GreenConvention) -> Result<f64> {
        greenfn::model_boundary_distance(&self.a, conv)
    }

    /// Checks positivity, the kind/location match and, for interior bubbles,
    /// that `λ d` exceeds the regime threshold.
    pub fn check_regime(&self, threshold: f64, conv: GreenConvention) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Regime(format!("lambda = {} must be positive", self.lambda)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Regime(format!("alpha = {} must be positive", self.alpha)));
        }
        let d = geometry::boundary_distance(&self.a);
        match self.kind {
            BubbleKind::Boundary if d >= 1e-9 => Err(Error::Regime(format!(
                "boundary bubble at distance {d:e} from the equator"
            ))),
            BubbleKind::Boundary => Ok(()),
            BubbleKind::Interior => {
                let dm = self.d(conv)?;
                if self.lambda * dm <= threshold * (1.0 - THRESHOLD_SLACK) {
                    Err(Error::Regime(format!(
                        "lambda * d = {} is not above {threshold}",
                        self.lambda * dm
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Regime check plus `λ >= lambda_min`, as required by the expansions.
    pub fn check_expansion(&self, cfg: &ExpansionConfig) -> Result<()> {
        self.check_regime(cfg.regime_threshold, cfg.convention)?;
        if self.lambda < cfg.lambda_min * (1.0 - THRESHOLD_SLACK) {
            return Err(Error::Regime(format!(
                "lambda = {} is below lambda_min = {}",
                self.lambda, cfg.lambda_min
            )));
        }
        Ok(())
    }

    /// Snaps boundary bubbles onto the equator.
    pub fn normalized(self) -> Self {
        match self.kind {
            BubbleKind::Boundary if geometry::boundary_distance(&self.a) < 1e-9 => {
                Self::boundary(self.a, self.lambda, self.alpha)
            }
            _ => self,
        }
    }
}

/// `δ_{a,λ}(x) = λ / (λ^2 + 1 + (1 - λ^2) cos d(a, x))`.
pub fn delta(a: &HemispherePoint, lambda: f64, x: &HemispherePoint) -> f64 {
    delta_raw(a.coords(), lambda, x.coords())
}

pub fn delta_raw(a: &Vec5, lambda: f64, x: &Vec5) -> f64 {
    let u = chordal_one_minus_cos(a, x);
    lambda / (2.0 + (lambda * lambda - 1.0) * u)
}

/// `δ` and its Riemannian gradient in `x`.
pub fn delta_with_gradient(a: &Vec5, lambda: f64, x: &Vec5) -> (f64, Vec5) {
    let u = chordal_one_minus_cos(a, x);
    let l2 = lambda * lambda - 1.0;
    let den = 2.0 + l2 * u;
    let g = scale(a, lambda * l2 / (den * den));
    (lambda / den, project_tangent(x, &g))
}

/// The Neumann-corrected bubble `δ + H(a, ·)/λ` for interior bubbles and `δ`
/// for boundary bubbles.
pub fn phi(b: &Bubble, x: &HemispherePoint, cfg: &ExpansionConfig) -> Result<f64> {
    b.check_regime(cfg.regime_threshold, cfg.convention)?;
    let d = delta(&b.a, b.lambda, x);
    match b.kind {
        BubbleKind::Boundary => Ok(d),
        BubbleKind::Interior => Ok(d + greenfn::regular_part(&b.a, x, cfg.convention)? / b.lambda),
    }
}

/// `φ` and its Riemannian gradient on raw points; no regime check.
pub(crate) fn phi_with_gradient(b: &Bubble, x: &Vec5, conv: GreenConvention) -> Result<(f64, Vec5)> {
    let (d, g) = delta_with_gradient(b.a.coords(), b.lambda, x);
    if !b.is_interior() {
        return Ok((d, g));
    }
    let h = greenfn::regular_raw(b.a.coords(), x, conv)?;
    let gh = project_tangent(x, &h.grad_x);
    Ok((
        d + h.value / b.lambda,
        std::array::from_fn(|i| g[i] + gh[i] / b.lambda),
    ))
}

/// Half-space bubble `λ / (1 + λ^2 |a - x|^2)` plus the flat regular part
/// `|ā - x|^-2 / λ`.
pub fn phi_flat(a: &FlatPoint, lambda: f64, x: &FlatPoint) -> Result<f64> {
    if a.height() <= 0.0 {
        return Err(Error::BoundaryPoint(a.height()));
    }
    let (ac, xc) = (a.coords(), x.coords());
    let r2: f64 = (0..4).map(|i| (ac[i] - xc[i]).powi(2)).sum();
    let delta = lambda / (1.0 + lambda * lambda * r2);
    let abar = geometry::reflect_flat(ac);
    let rb2: f64 = (0..4).map(|i| (abar[i] - xc[i]).powi(2)).sum();
    Ok(delta + 1.0 / (lambda * rb2))
}

/// Bound `c / (λ^3 d^4)` on the neglected part of `φ`.
pub fn truncation_budget(lambda: f64, d: f64, c: f64) -> f64 {
    c / (lambda.powi(3) * d.powi(4))
}

/// `ε_ij` with the scale derivatives `λ_k ∂ε/∂λ_k` and the Riemannian
/// gradients in each center.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Epsilon {
    pub value: f64,
    pub lambda_i_d_lambda_i: f64,
    pub lambda_j_d_lambda_j: f64,
    pub grad_a_i: Vec5,
    pub grad_a_j: Vec5,
}

pub fn epsilon(bi: &Bubble, bj: &Bubble) -> Epsilon {
    epsilon_raw(bi.a.coords(), bi.lambda, bj.a.coords(), bj.lambda)
}

pub fn epsilon_raw(ai: &Vec5, li: f64, aj: &Vec5, lj: f64) -> Epsilon {
    let u = chordal_one_minus_cos(ai, aj);
    let inv = li / lj + lj / li + 0.5 * li * lj * u;
    let e = 1.0 / inv;
    let e2 = e * e;
    let half = 0.5 * li * lj * u;
    let c = e2 * 0.5 * li * lj;
    Epsilon {
        value: e,
        lambda_i_d_lambda_i: -e2 * (li / lj - lj / li + half),
        lambda_j_d_lambda_j: -e2 * (lj / li - li / lj + half),
        grad_a_i: project_tangent(ai, &scale(aj, c)),
        grad_a_j: project_tangent(aj, &scale(ai, c)),
    }
}

impl Epsilon {
    /// `(1/λ_i) ∂ε/∂a_i` as a tangent vector at `a_i`.
    pub fn scaled_grad_a_i(&self, lambda_i: f64) -> Vec5 {
        scale(&self.grad_a_i, 1.0 / lambda_i)
    }
}

pub(crate) fn tangent_at(b: &Bubble, v: &Vec5) -> Vec5 {
    let mut t = project_tangent(b.a.coords(), v);
    if !b.is_interior() {
        t[4] = 0.0;
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{dot, fd_laplacian, geodesic, normalize, tangent_frame_raw};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_point(rng: &mut ChaCha8Rng, min_height: f64) -> HemispherePoint {
        loop {
            let v: Vec5 = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            let n = geometry::norm(&v);
            if n > 0.1 && n < 1.0 {
                let mut v = normalize(&v);
                v[4] = v[4].abs();
                if v[4] >= min_height {
                    return HemispherePoint::new(v).unwrap();
                }
            }
        }
    }

    #[test]
    fn delta_examples() {
        let a = HemispherePoint::north_pole();
        let x = HemispherePoint::new(normalize(&[0.3, 0.1, -0.2, 0.5, 0.4])).unwrap();
        assert_eq!(delta(&a, 1.0, &x), 0.5);
        assert_eq!(delta(&a, 7.0, &a), 3.5);
        assert!(delta(&a, 7.0, &x) < 3.5);
        // PDE at λ = 1: -0 + 2(1/2) - 8 (1/2)^3 = 0
        assert_eq!(2.0 * 0.5 - 8.0 * 0.5f64.powi(3), 0.0);
    }

    #[test]
    fn delta_solves_the_pde() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let a = random_point(&mut rng, 0.0);
            let lambda = rng.gen_range(1.0..100.0);
            let x = random_point(&mut rng, 0.0);
            let dist = geometry::geodesic_distance(&a, &x);
            let scale = (1.0 / lambda + dist).min(1.0);
            let f = |p: &Vec5| delta_raw(a.coords(), lambda, p);
            let d = f(x.coords());
            let lap = fd_laplacian(f, x.coords(), 1e-3 * scale);
            let r = (-lap + 2.0 * d - 8.0 * d * d * d).abs() / (2.0 * d + 8.0 * d * d * d);
            worst = worst.max(r);
        }
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn delta_gradient_matches_fd() {
        let a = normalize(&[0.2, 0.1, -0.3, 0.4, 0.8]);
        let x = normalize(&[0.25, 0.05, -0.28, 0.45, 0.75]);
        let (_, g) = delta_with_gradient(&a, 30.0, &x);
        for e in tangent_frame_raw(&x) {
            let fd = geometry::first_difference(|t| delta_raw(&a, 30.0, &geodesic(&x, &e, t)), 1e-5);
            assert!((fd - dot(&g, &e)).abs() < 1e-6 * geometry::norm(&g));
        }
    }

    #[test]
    fn phi_examples() {
        let a = FlatPoint::new([0.0, 0.0, 0.0, 1.0]).unwrap();
        let x = FlatPoint::new([0.0, 0.0, 0.0, 2.0]).unwrap();
        let v = phi_flat(&a, 100.0, &x).unwrap();
        assert!((v - (100.0 / 10001.0 + 1.0 / 900.0)).abs() < 1e-15);
        assert!((v - 0.0111101).abs() < 1e-7);
        let cfg = ExpansionConfig::default();
        let b = Bubble::boundary(HemispherePoint::new([0.6, 0.8, 0.0, 0.0, 0.0]).unwrap(), 20.0, 1.0);
        let y = HemispherePoint::new(normalize(&[0.5, 0.7, 0.1, 0.0, 0.3])).unwrap();
        assert_eq!(phi(&b, &y, &cfg).unwrap(), delta(&b.a, 20.0, &y));
        assert!(truncation_budget(100.0, 1.0, 2.0) / 50.0 <= 1e-6);
    }

    #[test]
    fn regime_is_enforced() {
        let cfg = ExpansionConfig::default();
        let a = HemispherePoint::at_height([1.0, 0.0, 0.0, 0.0], 0.5).unwrap();
        let x = HemispherePoint::north_pole();
        assert!(matches!(phi(&Bubble::interior(a, 10.0, 1.0), &x, &cfg), Err(Error::Regime(_))));
        assert!(phi(&Bubble::interior(a, 20.0, 1.0), &x, &cfg).is_ok());
        let b = Bubble { kind: BubbleKind::Boundary, a, lambda: 20.0, alpha: 1.0 };
        assert!(b.check_regime(10.0, cfg.convention).is_err());
    }

    #[test]
    fn epsilon_examples() {
        let a = normalize(&[0.1, 0.2, 0.3, 0.4, 0.5]);
        assert!((epsilon_raw(&a, 7.0, &a, 7.0).value - 0.5).abs() < 1e-15);
        let b = [-a[0], -a[1], -a[2], -a[3], -a[4]];
        assert!((1.0 / epsilon_raw(&a, 7.0, &b, 7.0).value - (2.0 + 49.0)).abs() < 1e-11);
    }

    #[test]
    fn epsilon_partials_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let ai = *random_point(&mut rng, 0.0).coords();
            let aj = *random_point(&mut rng, 0.0).coords();
            let li = rng.gen_range(5.0..80.0);
            let lj = rng.gen_range(5.0..80.0);
            let e = epsilon_raw(&ai, li, &aj, lj);
            let h = 1e-4;
            let fd_li = geometry::first_difference(|t| epsilon_raw(&ai, li * t.exp(), &aj, lj).value, h);
            let fd_lj = geometry::first_difference(|t| epsilon_raw(&ai, li, &aj, lj * t.exp()).value, h);
            assert!((fd_li - e.lambda_i_d_lambda_i).abs() <= 1e-7 * e.lambda_i_d_lambda_i.abs().max(1e-12));
            assert!((fd_lj - e.lambda_j_d_lambda_j).abs() <= 1e-7 * e.lambda_j_d_lambda_j.abs().max(1e-12));
            let gnorm = geometry::norm(&e.grad_a_i);
            for v in tangent_frame_raw(&ai) {
                let fd = geometry::first_difference(|t| epsilon_raw(&geodesic(&ai, &v, t), li, &aj, lj).value, h);
                assert!((fd - dot(&e.grad_a_i, &v)).abs() <= 1e-7 * gnorm.max(1e-12));
            }
            for v in tangent_frame_raw(&aj) {
                let fd = geometry::first_difference(|t| epsilon_raw(&ai, li, &geodesic(&aj, &v, t), lj).value, h);
                assert!((fd - dot(&e.grad_a_j, &v)).abs() <= 1e-7 * geometry::norm(&e.grad_a_j).max(1e-12));
            }
        }
    }

    #[test]
    fn epsilon_scale_identity() {
        // for λ_i >= λ_j: -2 λ_i ε_i' - λ_j ε_j' = 2ε(1 - 2(λ_j/λ_i)ε) + ε(1 - 2(λ_i/λ_j)ε)
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..200 {
            let ai = *random_point(&mut rng, 0.0).coords();
            let aj = *random_point(&mut rng, 0.0).coords();
            let lj = rng.gen_range(1.0..100.0);
            let li = lj * rng.gen_range(1.0..10.0);
            let e = epsilon_raw(&ai, li, &aj, lj);
            let v = e.value;
            let lhs = -2.0 * e.lambda_i_d_lambda_i - e.lambda_j_d_lambda_j;
            let rhs = 2.0 * v * (1.0 - 2.0 * (lj / li) * v) + v * (1.0 - 2.0 * (li / lj) * v);
            assert!((lhs - rhs).abs() < 1e-10 * v.max(1e-300), "{lhs} {rhs}");
        }
    }

    #[test]
    fn epsilon_decreases_with_distance() {
        let a = HemispherePoint::north_pole();
        let mut last = f64::INFINITY;
        for k in 1..10 {
            let b = HemispherePoint::at_height([1.0, 0.0, 0.0, 0.0], std::f64::consts::FRAC_PI_2 - 0.1 * k as f64).unwrap();
            let e = epsilon_raw(a.coords(), 20.0, b.coords(), 30.0).value;
            assert!(e > 0.0 && e < last);
            last = e;
        }
    }
}
