//! Asymptotic expansion of the energy of a sum of bubbles and its exact
//! derivative with respect to the bubble parameters.
//!
//! With masses `m_i = 1` for interior and `1/2` for boundary bubbles, the
//! evaluated quantity is
//!
//! ```text
//! ψ = 8 √S Σ m α² / (Σ m α⁴ K)^{1/2} · (1 + C)
//! C = Q⁻¹ [ ω₃/(8S) T + Σ_bdy ∂νK / (4 K² λ) ],     Q = Σ m / K
//! T = Σ_i ( -m ΔK / (3 K² λ²) - [int] 4 H(a,a) / (K λ²) )
//!     - Σ_{i≠j} 2 m_ij (K_i K_j)^{-1/2} ( ε_ij + [int,int] 2 H(a_i,a_j) / (λ_i λ_j) )
//! ```
//!
//! where `m_ij = 1/2` when both bubbles sit on the boundary and `1` otherwise.

use serde::{Deserialize, Serialize};

use super::{epsilon_raw, tangent_at, Bubble, BubbleKind, Epsilon, ExpansionConfig, OMEGA3, S};
use crate::error::{Error, Result};
use crate::geometry::{axpy, exp_map, first_difference, scale, HemispherePoint, Vec5};
use rand::Rng;
use crate::greenfn::{self, KernelValue};
use crate::kfield::KExpression;

struct Site {
    m: f64,
    interior: bool,
    alpha: f64,
    lambda: f64,
    k: f64,
    lap: f64,
    dnu: f64,
    h_self: f64,
    grad_k: Vec5,
    grad_lap: Vec5,
    grad_dnu: Vec5,
    grad_h_self: Vec5,
}

struct Pair {
    i: usize,
    j: usize,
    m: f64,
    eps: Epsilon,
    h: Option<KernelValue>,
}

fn sites(k: &KExpression, bubbles: &[Bubble], cfg: &ExpansionConfig) -> Result<(Vec<Site>, Vec<Pair>)> {
    if bubbles.is_empty() {
        return Err(Error::Invalid("empty bubble configuration".into()));
    }
    let mut out = Vec::with_capacity(bubbles.len());
    for b in bubbles {
        b.check_expansion(cfg)?;
        let a = b.a.coords();
        let ld = k.local_data(a);
        if !(ld.value > 0.0) {
            return Err(Error::Positivity { value: ld.value, point: *a });
        }
        let interior = b.is_interior();
        let (h_self, grad_h_self) = if interior {
            let h = greenfn::self_raw(a, cfg.convention)?;
            (h.value, h.grad_a)
        } else {
            (0.0, [0.0; 5])
        };
        out.push(Site {
            m: if interior { 1.0 } else { 0.5 },
            interior,
            alpha: b.alpha,
            lambda: b.lambda,
            k: ld.value,
            lap: ld.laplacian,
            dnu: if interior { 0.0 } else { -ld.grad[4] },
            h_self,
            grad_k: ld.grad,
            grad_lap: ld.grad_laplacian,
            grad_dnu: ld.hess_e5.map(|v| -v),
            grad_h_self,
        });
    }
    let mut pairs = Vec::new();
    for i in 0..bubbles.len() {
        for j in i + 1..bubbles.len() {
            let (bi, bj) = (&bubbles[i], &bubbles[j]);
            let eps = epsilon_raw(bi.a.coords(), bi.lambda, bj.a.coords(), bj.lambda);
            let h = if bi.is_interior() && bj.is_interior() {
                Some(greenfn::regular_raw(bi.a.coords(), bj.a.coords(), cfg.convention)?)
            } else {
                None
            };
            let m = if !bi.is_interior() && !bj.is_interior() { 0.5 } else { 1.0 };
            pairs.push(Pair { i, j, m, eps, h });
        }
    }
    Ok((out, pairs))
}

/// Expansion value with its pieces.
#[derive(Debug, Clone, Serialize)]
pub struct Expansion {
    pub value: f64,
    /// `8 √S Σ m α² / (Σ m α⁴ K)^{1/2}`.
    pub leading: f64,
    /// The relative correction `C`.
    pub correction: f64,
    /// Contribution of the single-bubble `ΔK` and `H(a,a)` terms to `C`.
    pub self_part: f64,
    /// Contribution of the pair terms to `C`.
    pub interaction_part: f64,
    /// Contribution of the normal-derivative terms of boundary bubbles to `C`.
    pub normal_part: f64,
    /// Largest `c / (λ³ d⁴)` over interior bubbles.
    pub truncation_budget: f64,
}

/// Derivatives of the expansion in `(log α_i, a_i, log λ_i)`. The `a`
/// components are tangent vectors at `a_i` (tangent to the equator for
/// boundary bubbles).
#[derive(Debug, Clone, Serialize)]
pub struct ReducedGradient {
    pub log_alpha: Vec<f64>,
    pub a: Vec<Vec5>,
    pub log_lambda: Vec<f64>,
}

impl ReducedGradient {
    pub fn norm(&self) -> f64 {
        let s: f64 = self.log_alpha.iter().map(|v| v * v).sum::<f64>()
            + self.a.iter().flatten().map(|v| v * v).sum::<f64>()
            + self.log_lambda.iter().map(|v| v * v).sum::<f64>();
        s.sqrt()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Reduced {
    pub expansion: Expansion,
    pub gradient: ReducedGradient,
}

fn weight() -> f64 {
    OMEGA3 / (8.0 * S)
}

struct Parts {
    a_lead: f64,
    p: f64,
    r: f64,
    q: f64,
    b: f64,
    c: f64,
    self_t: f64,
    pair_t: f64,
    normal: f64,
    e: Vec<f64>,
}

fn evaluate(sites: &[Site], pairs: &[Pair]) -> Parts {
    let w = weight();
    let p: f64 = sites.iter().map(|s| s.m * s.alpha * s.alpha).sum();
    let r: f64 = sites.iter().map(|s| s.m * s.alpha.powi(4) * s.k).sum();
    let a_lead = 8.0 * S.sqrt() * p / r.sqrt();
    let q: f64 = sites.iter().map(|s| s.m / s.k).sum();
    let self_t: f64 = sites.iter().map(self_term).sum();
    let e: Vec<f64> = pairs.iter().map(|pr| pair_e(sites, pr)).collect();
    let pair_t: f64 = pairs
        .iter()
        .zip(&e)
        .map(|(pr, e)| -4.0 * pr.m * e / (sites[pr.i].k * sites[pr.j].k).sqrt())
        .sum();
    let normal: f64 = sites
        .iter()
        .filter(|s| !s.interior)
        .map(|s| s.dnu / (4.0 * s.k * s.k * s.lambda))
        .sum();
    let b = w * (self_t + pair_t) + normal;
    Parts { a_lead, p, r, q, b, c: b / q, self_t, pair_t, normal, e }
}

fn self_term(s: &Site) -> f64 {
    let l2 = s.lambda * s.lambda;
    let mut t = -s.m * s.lap / (3.0 * s.k * s.k * l2);
    if s.interior {
        t -= 4.0 * s.h_self / (s.k * l2);
    }
    t
}

fn pair_e(sites: &[Site], pr: &Pair) -> f64 {
    let mut e = pr.eps.value;
    if let Some(h) = &pr.h {
        e += 2.0 * h.value / (sites[pr.i].lambda * sites[pr.j].lambda);
    }
    e
}

fn expansion_from(parts: &Parts, sites: &[Site], bubbles: &[Bubble], cfg: &ExpansionConfig) -> Result<Expansion> {
    let w = weight();
    let mut budget: f64 = 0.0;
    for (b, s) in bubbles.iter().zip(sites) {
        if s.interior {
            budget = budget.max(super::truncation_budget(b.lambda, b.d(cfg.convention)?, cfg.truncation_c));
        }
    }
    Ok(Expansion {
        value: parts.a_lead * (1.0 + parts.c),
        leading: parts.a_lead,
        correction: parts.c,
        self_part: w * parts.self_t / parts.q,
        interaction_part: w * parts.pair_t / parts.q,
        normal_part: parts.normal / parts.q,
        truncation_budget: budget,
    })
}

/// Evaluates the expansion of `J` at a bubble configuration.
pub fn expansion_j(k: &KExpression, bubbles: &[Bubble], cfg: &ExpansionConfig) -> Result<Expansion> {
    let (sites, pairs) = sites(k, bubbles, cfg)?;
    let parts = evaluate(&sites, &pairs);
    expansion_from(&parts, &sites, bubbles, cfg)
}

/// The expansion together with its exact gradient.
pub fn reduced(k: &KExpression, bubbles: &[Bubble], cfg: &ExpansionConfig) -> Result<Reduced> {
    let (sites, pairs) = sites(k, bubbles, cfg)?;
    let pt = evaluate(&sites, &pairs);
    let expansion = expansion_from(&pt, &sites, bubbles, cfg)?;
    let w = weight();
    let n = sites.len();
    let one_c = 1.0 + pt.c;
    let aq = pt.a_lead / pt.q;

    // d psi / d K_i, accumulated below with the pair contributions
    let mut d_k: Vec<f64> = sites
        .iter()
        .map(|s| {
            let l2 = s.lambda * s.lambda;
            let d_lead = -0.5 * pt.a_lead / pt.r * s.m * s.alpha.powi(4);
            let mut dt = 2.0 * s.m * s.lap / (3.0 * s.k.powi(3) * l2);
            if s.interior {
                dt += 4.0 * s.h_self / (s.k * s.k * l2);
            }
            let d_normal = if s.interior { 0.0 } else { -s.dnu / (2.0 * s.k.powi(3) * s.lambda) };
            let d_q = -s.m / (s.k * s.k);
            one_c * d_lead + aq * (w * dt + d_normal) - pt.a_lead * pt.b / (pt.q * pt.q) * d_q
        })
        .collect();

    let mut log_lambda: Vec<f64> = sites
        .iter()
        .map(|s| {
            let mut g = aq * w * (-2.0 * self_term(s));
            if !s.interior {
                g -= aq * s.dnu / (4.0 * s.k * s.k * s.lambda);
            }
            g
        })
        .collect();

    let mut grad_a: Vec<Vec5> = sites
        .iter()
        .map(|s| {
            let l2 = s.lambda * s.lambda;
            let d_lap = aq * w * (-s.m / (3.0 * s.k * s.k * l2));
            let mut v = axpy(d_lap, &s.grad_lap, &[0.0; 5]);
            if s.interior {
                let d_h = aq * w * (-4.0 / (s.k * l2));
                v = axpy(d_h, &s.grad_h_self, &v);
            } else {
                let d_nu = aq / (4.0 * s.k * s.k * s.lambda);
                v = axpy(d_nu, &s.grad_dnu, &v);
            }
            v
        })
        .collect();

    for (pr, e) in pairs.iter().zip(&pt.e) {
        let (si, sj) = (&sites[pr.i], &sites[pr.j]);
        let sq = (si.k * sj.k).sqrt();
        let d_e = aq * w * (-4.0 * pr.m / sq);
        let c = aq * w * 2.0 * pr.m * e / sq;
        d_k[pr.i] += c / si.k;
        d_k[pr.j] += c / sj.k;
        log_lambda[pr.i] += d_e * pr.eps.lambda_i_d_lambda_i;
        log_lambda[pr.j] += d_e * pr.eps.lambda_j_d_lambda_j;
        grad_a[pr.i] = axpy(d_e, &pr.eps.grad_a_i, &grad_a[pr.i]);
        grad_a[pr.j] = axpy(d_e, &pr.eps.grad_a_j, &grad_a[pr.j]);
        if let Some(h) = &pr.h {
            let ll = si.lambda * sj.lambda;
            let d_h = d_e * 2.0 / ll;
            log_lambda[pr.i] -= d_h * h.value;
            log_lambda[pr.j] -= d_h * h.value;
            grad_a[pr.i] = axpy(d_h, &h.grad_a, &grad_a[pr.i]);
            grad_a[pr.j] = axpy(d_h, &h.grad_x, &grad_a[pr.j]);
        }
    }

    let log_alpha: Vec<f64> = sites
        .iter()
        .map(|s| {
            let d_a = 8.0 * S.sqrt()
                * (2.0 * s.m * s.alpha / pt.r.sqrt()
                    - 2.0 * pt.p * pt.r.powf(-1.5) * s.m * s.alpha.powi(3) * s.k);
            one_c * s.alpha * d_a
        })
        .collect();

    let a: Vec<Vec5> = (0..n)
        .map(|i| {
            let v = axpy(d_k[i], &sites[i].grad_k, &grad_a[i]);
            tangent_at(&bubbles[i], &v)
        })
        .collect();

    Ok(Reduced {
        expansion,
        gradient: ReducedGradient { log_alpha, a, log_lambda },
    })
}

/// Positive constants of the leading-order gradient estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradientConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub c6: f64,
    pub c7: f64,
}

impl Default for GradientConstants {
    fn default() -> Self {
        Self { c1: 1.0, c2: 1.0, c3: 1.0, c4: 1.0, c5: 1.0, c6: 1.0, c7: 1.0 }
    }
}

/// Leading-order pairing of `∇J` with the scale, position and amplitude
/// directions of one bubble.
#[derive(Debug, Clone, Serialize)]
pub struct GradientRecord {
    pub index: usize,
    pub kind: BubbleKind,
    pub lambda_derivative: f64,
    pub a_drift: Vec5,
    pub alpha_derivative: f64,
}

pub fn gradient_expansions(
    k: &KExpression,
    bubbles: &[Bubble],
    cfg: &ExpansionConfig,
    c: &GradientConstants,
) -> Result<Vec<GradientRecord>> {
    let (sites, _) = sites(k, bubbles, cfg)?;
    let j = expansion_j(k, bubbles, cfg)?.value;
    let n = bubbles.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (b, s) = (&bubbles[i], &sites[i]);
        let mut eps_lambda = 0.0;
        let mut eps_a = [0.0; 5];
        let mut h_cross = 0.0;
        for (kk, o) in bubbles.iter().enumerate() {
            if kk == i {
                continue;
            }
            let e = epsilon_raw(b.a.coords(), b.lambda, o.a.coords(), o.lambda);
            eps_lambda += o.alpha * e.lambda_i_d_lambda_i;
            eps_a = axpy(o.alpha / b.lambda, &e.grad_a_i, &eps_a);
            if b.is_interior() && o.is_interior() {
                let h = greenfn::regular_raw(b.a.coords(), o.a.coords(), cfg.convention)?.value;
                h_cross += o.alpha * h / (b.lambda * o.lambda);
            }
        }
        let alpha_derivative = c.c7 * j * b.alpha * (1.0 - j * j * b.alpha * b.alpha * s.k);
        let rec = match b.kind {
            BubbleKind::Boundary => {
                let lambda_derivative =
                    c.c1 * j * eps_lambda + c.c2 * j.powi(3) * b.alpha.powi(3) * s.dnu / b.lambda;
                let drift = axpy(
                    -4.0 * c.c6 * j.powi(3) * b.alpha.powi(3) / b.lambda,
                    &s.grad_k,
                    &crate::geometry::scale(&eps_a, -c.c5 * j * b.alpha),
                );
                GradientRecord {
                    index: i,
                    kind: b.kind,
                    lambda_derivative,
                    a_drift: tangent_at(b, &drift),
                    alpha_derivative,
                }
            }
            BubbleKind::Interior => {
                let l2 = b.lambda * b.lambda;
                let lambda_derivative = 2.0
                    * OMEGA3
                    * j
                    * (-2.0 * eps_lambda
                        + 4.0 * h_cross
                        + b.alpha * s.lap / (3.0 * l2 * s.k)
                        + 4.0 * b.alpha * s.h_self / l2);
                let drift = crate::geometry::scale(&s.grad_k, -4.0 * c.c6 * j.powi(3) * b.alpha.powi(3) / b.lambda);
                GradientRecord {
                    index: i,
                    kind: b.kind,
                    lambda_derivative,
                    a_drift: tangent_at(b, &drift),
                    alpha_derivative,
                }
            }
        };
        out.push(rec);
    }
    Ok(out)
}

/// Random one to three bubble state in the expansion regime of typical test fields.
pub fn random_state(rng: &mut impl Rng) -> Vec<Bubble> {
    let n = rng.gen_range(1..=3);
    (0..n)
        .map(|_| {
            let dir: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            let alpha = rng.gen_range(0.5..1.5);
            if rng.gen_bool(0.3) {
                let d = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                let a = HemispherePoint::new([dir[0] / d, dir[1] / d, dir[2] / d, dir[3] / d, 0.0]).unwrap();
                Bubble::boundary(a, rng.gen_range(15.0..60.0), alpha)
            } else {
                let a = HemispherePoint::at_height(dir, rng.gen_range(0.4..1.5)).unwrap();
                Bubble::interior(a, rng.gen_range(30.0..80.0), alpha)
            }
        })
        .collect()
}

/// Finite-difference gradient of the expansion in the reduced variables.
pub fn fd_gradient(k: &KExpression, bubbles: &[Bubble], cfg: &ExpansionConfig) -> ReducedGradient {
    let f = |bs: &[Bubble]| expansion_j(k, bs, cfg).unwrap().value;
    let h = 1e-4;
    let n = bubbles.len();
    let mut g = ReducedGradient { log_alpha: vec![0.0; n], a: vec![[0.0; 5]; n], log_lambda: vec![0.0; n] };
    for i in 0..n {
        let with = |t: f64, which: u8, dir: &Vec5| {
            let mut bs = bubbles.to_vec();
            match which {
                0 => bs[i].alpha *= t.exp(),
                1 => bs[i].lambda *= t.exp(),
                _ => {
                    let x = exp_map(bs[i].a.coords(), &scale(dir, t));
                    bs[i].a = HemispherePoint::from_unchecked(x);
                }
            }
            f(&bs)
        };
        g.log_alpha[i] = first_difference(|t| with(t, 0, &[0.0; 5]), h);
        g.log_lambda[i] = first_difference(|t| with(t, 1, &[0.0; 5]), h);
        let frame = crate::geometry::tangent_frame(&bubbles[i].a);
        let dims = if bubbles[i].is_interior() { 4 } else { 3 };
        for e in frame.iter().take(dims) {
            let d = first_difference(|t| with(t, 2, e), h);
            g.a[i] = axpy(d, e, &g.a[i]);
        }
    }
    g
}

/// `|a - b| / |a|` in the reduced variables.
pub fn relative_error(a: &ReducedGradient, b: &ReducedGradient) -> f64 {
    let diff = ReducedGradient {
        log_alpha: a.log_alpha.iter().zip(&b.log_alpha).map(|(x, y)| x - y).collect(),
        a: a.a.iter().zip(&b.a).map(|(x, y)| std::array::from_fn(|c| x[c] - y[c])).collect(),
        log_lambda: a.log_lambda.iter().zip(&b.log_lambda).map(|(x, y)| x - y).collect(),
    };
    diff.norm() / a.norm().max(1e-300)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{normalize, HemispherePoint};
    use crate::greenfn::GreenConvention;
    use crate::kfield::parse_k;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> ExpansionConfig {
        ExpansionConfig::default()
    }

    #[test]
    fn single_bubble_leading_values() {
        let k = parse_k("2").unwrap();
        let a = HemispherePoint::at_height([1.0, 0.0, 0.0, 0.0], 0.5).unwrap();
        let e = expansion_j(&k, &[Bubble::interior(a, 1e6, 0.3)], &cfg()).unwrap();
        assert!((e.leading - 8.0 * (std::f64::consts::PI.powi(2) / 12.0).sqrt()).abs() < 1e-12);
        assert!((e.leading - 7.2552).abs() < 1e-4);
        // boundary bubble, constant K: no correction at all
        let b = Bubble::boundary(HemispherePoint::new([1.0, 0.0, 0.0, 0.0, 0.0]).unwrap(), 50.0, 1.0);
        let e = expansion_j(&k, &[b], &cfg()).unwrap();
        assert_eq!(e.correction, 0.0);
        assert!((e.value - 8.0 * (S / 2.0).sqrt() / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn distinct_points_leading_value() {
        let k = parse_k("3 + x1 + 0.5*x2").unwrap();
        let pts = [
            HemispherePoint::at_height([1.0, 0.0, 0.0, 0.0], 0.8).unwrap(),
            HemispherePoint::at_height([-1.0, 0.2, 0.0, 0.0], 0.7).unwrap(),
            HemispherePoint::at_height([0.0, 0.0, 1.0, 0.0], 1.0).unwrap(),
        ];
        let bubbles: Vec<Bubble> = pts
            .iter()
            .map(|p| Bubble::interior(*p, 1e5, 2.0 / k.value(p).sqrt()))
            .collect();
        let e = expansion_j(&k, &bubbles, &cfg()).unwrap();
        let target = 8.0 * S.sqrt() * pts.iter().map(|p| 1.0 / k.value(p)).sum::<f64>().sqrt();
        assert!((e.leading - target).abs() < 1e-12 * target);
    }

    #[test]
    fn invariances() {
        let k = parse_k("3 + x1*x5 + 0.4*x2^2").unwrap();
        let b1 = Bubble::interior(HemispherePoint::at_height([1.0, 0.2, 0.0, 0.0], 0.6).unwrap(), 40.0, 0.7);
        let b2 = Bubble::interior(HemispherePoint::at_height([0.0, 1.0, 0.3, 0.0], 0.9).unwrap(), 25.0, 0.8);
        let b3 = Bubble::boundary(HemispherePoint::new([0.0, 0.0, 0.6, 0.8, 0.0]).unwrap(), 30.0, 0.9);
        let v = expansion_j(&k, &[b1, b2, b3], &cfg()).unwrap().value;
        let p = expansion_j(&k, &[b3, b1, b2], &cfg()).unwrap().value;
        assert!((v - p).abs() < 1e-13 * v);
        let scaled: Vec<Bubble> = [b1, b2, b3].iter().map(|b| Bubble { alpha: 3.7 * b.alpha, ..*b }).collect();
        let s = expansion_j(&k, &scaled, &cfg()).unwrap().value;
        assert!((v - s).abs() < 1e-13 * v);
    }

    #[test]
    fn regime_errors() {
        let k = parse_k("2").unwrap();
        let a = HemispherePoint::at_height([1.0, 0.0, 0.0, 0.0], 0.1).unwrap();
        assert!(matches!(expansion_j(&k, &[Bubble::interior(a, 50.0, 1.0)], &cfg()), Err(Error::Regime(_))));
        let a = HemispherePoint::north_pole();
        assert!(matches!(expansion_j(&k, &[Bubble::interior(a, 5.0, 1.0)], &cfg()), Err(Error::Regime(_))));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let k = parse_k("3 + x1*x5 + 0.4*x2^2 - 0.3*sin(x3 + x5)").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for conv in [GreenConvention::SphericalImage, GreenConvention::FlatModel] {
            let c = ExpansionConfig { convention: conv, ..cfg() };
            let mut tested = 0;
            while tested < 20 {
                let bs = random_state(&mut rng);
                let Ok(r) = reduced(&k, &bs, &c) else { continue };
                let fd = fd_gradient(&k, &bs, &c);
                let err = relative_error(&r.gradient, &fd);
                assert!(err < 1e-6, "{conv}: {err} for {bs:?}");
                // the λ components separately, since they are much smaller
                for (x, y) in r.gradient.log_lambda.iter().zip(&fd.log_lambda) {
                    assert!((x - y).abs() < 1e-6 * x.abs().max(1e-8), "{x} {y}");
                }
                tested += 1;
            }
        }
    }

    #[test]
    fn alpha_is_critical_at_balanced_amplitudes() {
        let k = parse_k("3 + x1 + 0.5*x5").unwrap();
        let pts = [
            HemispherePoint::at_height([1.0, 0.0, 0.0, 0.0], 0.8).unwrap(),
            HemispherePoint::at_height([-1.0, 0.0, 0.0, 0.0], 0.8).unwrap(),
        ];
        let bs: Vec<Bubble> = pts.iter().map(|p| Bubble::interior(*p, 1e3, 1.0 / k.value(p).sqrt())).collect();
        let r = reduced(&k, &bs, &cfg()).unwrap();
        for g in &r.gradient.log_alpha {
            assert!(g.abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_expansion_signs() {
        // single interior bubble at the maximum of K: sign of the λ-derivative
        // is opposite to the diagonal quantity
        let k = parse_k("1 + 5*x5^4").unwrap();
        let pole = HemispherePoint::north_pole();
        let c = GradientConstants::default();
        let r = gradient_expansions(&k, &[Bubble::interior(pole, 50.0, 0.5)], &cfg(), &c).unwrap();
        let lap = k.intrinsic_laplacian(&pole);
        let h = greenfn::self_interaction(&pole, GreenConvention::SphericalImage).unwrap();
        let diag = -lap / (3.0 * k.value(&pole)) - 4.0 * h;
        assert!(diag > 0.0);
        assert!(r[0].lambda_derivative < 0.0);
        // constant K: only the H term survives, positive
        let k1 = parse_k("2").unwrap();
        let r = gradient_expansions(&k1, &[Bubble::interior(pole, 50.0, 1.0)], &cfg(), &c).unwrap();
        assert!(r[0].lambda_derivative > 0.0);
        let expected = 2.0 * OMEGA3 * expansion_j(&k1, &[Bubble::interior(pole, 50.0, 1.0)], &cfg()).unwrap().value * 4.0 * h / 2500.0;
        assert!((r[0].lambda_derivative - expected).abs() < 1e-12 * expected);
        // boundary bubble where K decreases inward
        let b = Bubble::boundary(HemispherePoint::new(normalize(&[1.0, 0.0, 0.0, 0.0, 0.0])).unwrap(), 40.0, 1.0);
        let kb = parse_k("3 + x5").unwrap();
        let r = gradient_expansions(&kb, &[b], &cfg(), &c).unwrap();
        assert!(kb.normal_derivative(&b.a) < 0.0);
        assert!(r[0].lambda_derivative < 0.0);
    }
}
