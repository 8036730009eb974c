use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::KExpression;
use crate::error::{Error, Result};
use crate::geometry::{
    self, angle, dot, exp_map, norm, quasi_uniform_equator, quasi_uniform_hemisphere, scale,
    tangent_frame, tangent_frame_raw, HemispherePoint, Vec5,
};
use crate::greenfn::{self, GreenConvention};

/// Largest Newton step, in radians.
const MAX_STEP: f64 = 0.5;
/// Interior iterates below this height have left the domain.
const LEAVE_HEIGHT: f64 = -0.05;
/// Interior critical points must sit strictly above the equator.
const INTERIOR_HEIGHT: f64 = 1e-9;
/// Fraction of diverged starts tolerated before the search is declared
/// incomplete.
const MAX_DIVERGED_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub interior_starts: usize,
    pub boundary_starts: usize,
    pub grad_tol: f64,
    pub hess_tol: f64,
    pub cond_tol: f64,
    pub dedup_tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub convention: GreenConvention,
    /// Additional starting points, tried in both families.
    pub extra_starts: Vec<Vec5>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            interior_starts: 2000,
            boundary_starts: 500,
            grad_tol: 1e-10,
            hess_tol: 1e-8,
            cond_tol: 1e-8,
            dedup_tol: 1e-6,
            max_iter: 100,
            seed: 0,
            convention: GreenConvention::FlatModel,
            extra_starts: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalKind {
    Interior,
    Boundary,
}

#[derive(Debug, Clone, Serialize)]
pub struct CriticalPoint {
    pub location: HemispherePoint,
    pub kind: CriticalKind,
    pub k_value: f64,
    pub morse_index: usize,
    pub non_morse: bool,
    /// Hessian eigenvalues in ascending order.
    pub hessian_eigenvalues: Vec<f64>,
    pub gradient_norm: f64,
    pub laplacian_k: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dnu_k: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_self: Option<f64>,
    pub d_boundary: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diag_quantity: Option<f64>,
    pub condition_c_ok: bool,
    pub flagged: bool,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "warning", rename_all = "snake_case")]
pub enum SearchWarning {
    NonMorse { index: usize, min_abs_eigenvalue: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct CriticalSearch {
    pub points: Vec<CriticalPoint>,
    pub warnings: Vec<SearchWarning>,
    pub starts: usize,
    pub converged: usize,
    pub diverged: usize,
    pub left_domain: usize,
}

impl CriticalSearch {
    pub fn interior(&self) -> impl Iterator<Item = &CriticalPoint> {
        self.points.iter().filter(|p| p.kind == CriticalKind::Interior)
    }

    pub fn boundary(&self) -> impl Iterator<Item = &CriticalPoint> {
        self.points.iter().filter(|p| p.kind == CriticalKind::Boundary)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionViolation {
    pub index: usize,
    pub kind: CriticalKind,
    pub quantity: f64,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionCReport {
    pub satisfied: bool,
    pub cond_tol: f64,
    pub interior_checked: usize,
    pub boundary_checked: usize,
    pub violations: Vec<ConditionViolation>,
}

enum Outcome {
    Converged(Vec5),
    Diverged,
    LeftDomain,
}

/// Gradient and Hessian of `K` (restricted to the equator for the boundary
/// family) in an orthonormal frame at `x`.
fn local_system(k: &KExpression, x: &Vec5, kind: CriticalKind) -> (Vec<Vec5>, DVector<f64>, DMatrix<f64>) {
    let frame: Vec<Vec5> = match kind {
        CriticalKind::Interior => tangent_frame_raw(x).to_vec(),
        CriticalKind::Boundary => {
            let p = HemispherePoint::from_unchecked([x[0], x[1], x[2], x[3], 0.0]);
            tangent_frame(&p)[..3].to_vec()
        }
    };
    let d = k.ambient(x, 2);
    let n = frame.len();
    let g = DVector::from_fn(n, |i, _| dot(&frame[i], &d.grad));
    let h = super::hessian_in_frame(&d, x, &frame);
    let h = DMatrix::from_fn(n, n, |i, j| 0.5 * (h[i][j] + h[j][i]));
    (frame, g, h)
}

fn grad_norm(k: &KExpression, x: &Vec5, kind: CriticalKind) -> f64 {
    let g = k.ambient(x, 1).grad;
    let mut t = geometry::project_tangent(x, &g);
    if kind == CriticalKind::Boundary {
        t[4] = 0.0;
    }
    norm(&t)
}

fn newton(k: &KExpression, start: &Vec5, kind: CriticalKind, cfg: &SearchConfig) -> Outcome {
    let mut x = *start;
    if kind == CriticalKind::Boundary {
        x[4] = 0.0;
        if norm(&x) < 1e-12 {
            return Outcome::Diverged;
        }
    }
    x = geometry::normalize(&x);
    let mut gn = grad_norm(k, &x, kind);
    for _ in 0..cfg.max_iter {
        if !gn.is_finite() {
            return Outcome::Diverged;
        }
        if gn < cfg.grad_tol {
            return Outcome::Converged(x);
        }
        let (frame, g, h) = local_system(k, &x, kind);
        let newton_dir = h
            .clone()
            .svd(true, true)
            .solve(&(-&g), 1e-14 * h.norm().max(1e-300))
            .ok();
        // gradient of |g|^2 / 2 as fallback direction
        let descent = -(&h * &g);
        let mut accepted = false;
        for dir in newton_dir.into_iter().chain(std::iter::once(descent)) {
            let mut v: Vec5 = [0.0; 5];
            for (i, e) in frame.iter().enumerate() {
                v = geometry::axpy(dir[i], e, &v);
            }
            let len = norm(&v);
            if !(len > 0.0 && len.is_finite()) {
                continue;
            }
            if len > MAX_STEP {
                v = scale(&v, MAX_STEP / len);
            }
            let mut t = 1.0;
            for _ in 0..40 {
                let y = exp_map(&x, &scale(&v, t));
                let gy = grad_norm(k, &y, kind);
                if gy < gn {
                    x = y;
                    gn = gy;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if accepted {
                break;
            }
        }
        if !accepted {
            return if gn < cfg.grad_tol * 10.0 { Outcome::Converged(x) } else { Outcome::Diverged };
        }
        if kind == CriticalKind::Interior && x[4] < LEAVE_HEIGHT {
            return Outcome::LeftDomain;
        }
    }
    if gn < cfg.grad_tol {
        Outcome::Converged(x)
    } else {
        Outcome::Diverged
    }
}

/// Refines the given starts in one family and returns the converged,
/// deduplicated locations together with (diverged, left_domain) counts.
pub fn refine_from(
    k: &KExpression,
    starts: &[Vec5],
    kind: CriticalKind,
    cfg: &SearchConfig,
) -> (Vec<Vec5>, usize, usize) {
    let outcomes: Vec<Outcome> = starts.par_iter().map(|s| newton(k, s, kind, cfg)).collect();
    let mut found = Vec::new();
    let (mut diverged, mut left) = (0, 0);
    for o in outcomes {
        match o {
            Outcome::Converged(x) => match kind {
                CriticalKind::Interior if x[4] > INTERIOR_HEIGHT.max(cfg.dedup_tol) => found.push(x),
                CriticalKind::Interior => left += 1,
                CriticalKind::Boundary => found.push(x),
            },
            Outcome::Diverged => diverged += 1,
            Outcome::LeftDomain => left += 1,
        }
    }
    (dedup(found, cfg.dedup_tol), diverged, left)
}

fn dedup(mut pts: Vec<Vec5>, tol: f64) -> Vec<Vec5> {
    pts.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut reps: Vec<Vec5> = Vec::new();
    for p in pts {
        if !reps.iter().any(|r| angle(r, &p) < tol) {
            reps.push(p);
        }
    }
    reps
}

/// Builds the full record for a critical point, including the condition (C)
/// quantities for the configured Green's convention.
pub fn classify_point(
    k: &KExpression,
    x: &Vec5,
    kind: CriticalKind,
    cfg: &SearchConfig,
) -> Result<CriticalPoint> {
    let mut c = *x;
    if kind == CriticalKind::Boundary {
        c[4] = 0.0;
    }
    let location = HemispherePoint::from_unchecked(c);
    if kind == CriticalKind::Interior && location.is_boundary() {
        return Err(Error::InvalidPoint("interior critical point on the equator".into()));
    }
    let c = *location.coords();
    let (_, _, h) = local_system(k, &c, kind);
    let eig = SymmetricEigen::new(h).eigenvalues;
    let mut eigs: Vec<f64> = eig.iter().copied().collect();
    eigs.sort_by(f64::total_cmp);
    let min_abs = eigs.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let non_morse = min_abs <= cfg.hess_tol;
    let morse_index = eigs.iter().filter(|v| **v < 0.0).count();
    let k_value = k.value(&location);
    let laplacian_k = k.intrinsic_laplacian(&location);
    let d_boundary = geometry::boundary_distance(&location);
    let mut cp = CriticalPoint {
        location,
        kind,
        k_value,
        morse_index,
        non_morse,
        hessian_eigenvalues: eigs,
        gradient_norm: grad_norm(k, &c, kind),
        laplacian_k,
        dnu_k: None,
        h_self: None,
        d_boundary,
        diag_quantity: None,
        condition_c_ok: false,
        flagged: false,
    };
    match kind {
        CriticalKind::Interior => {
            let h_self = greenfn::self_interaction(&location, cfg.convention)?;
            let diag = -laplacian_k / (3.0 * k_value) - 4.0 * h_self;
            cp.h_self = Some(h_self);
            cp.diag_quantity = Some(diag);
            cp.condition_c_ok = diag.abs() > cfg.cond_tol;
            cp.flagged = diag > cfg.cond_tol;
        }
        CriticalKind::Boundary => {
            let dnu = k.normal_derivative(&location);
            cp.dnu_k = Some(dnu);
            cp.condition_c_ok = dnu < -cfg.cond_tol;
        }
    }
    Ok(cp)
}

fn seed_shift(seed: u64, salt: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    (0..4).map(|_| rng.gen::<f64>()).collect()
}

/// Multistart Newton search for interior critical points of `K` and critical
/// points of its restriction to the equator.
pub fn find_critical_points(k: &KExpression, cfg: &SearchConfig) -> Result<CriticalSearch> {
    let mut interior_starts = quasi_uniform_hemisphere(cfg.interior_starts, &seed_shift(cfg.seed, 1));
    interior_starts.extend(cfg.extra_starts.iter().copied());
    let mut boundary_starts = quasi_uniform_equator(cfg.boundary_starts, &seed_shift(cfg.seed, 2));
    boundary_starts.extend(cfg.extra_starts.iter().copied());
    let starts = interior_starts.len() + boundary_starts.len();

    let (int_pts, div_i, left) = refine_from(k, &interior_starts, CriticalKind::Interior, cfg);
    let (bdy_pts, div_b, _) = refine_from(k, &boundary_starts, CriticalKind::Boundary, cfg);
    let diverged = div_i + div_b;
    if diverged as f64 > MAX_DIVERGED_FRACTION * starts as f64 {
        return Err(Error::SearchIncomplete { diverged, starts });
    }

    let mut points = Vec::with_capacity(int_pts.len() + bdy_pts.len());
    for x in &int_pts {
        points.push(classify_point(k, x, CriticalKind::Interior, cfg)?);
    }
    for x in &bdy_pts {
        points.push(classify_point(k, x, CriticalKind::Boundary, cfg)?);
    }
    let warnings = points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.non_morse)
        .map(|(index, p)| SearchWarning::NonMorse {
            index,
            min_abs_eigenvalue: p.hessian_eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(v.abs())),
        })
        .collect();
    Ok(CriticalSearch {
        converged: starts - diverged - left,
        points,
        warnings,
        starts,
        diverged,
        left_domain: left,
    })
}

pub fn check_condition_c(points: &[CriticalPoint], cond_tol: f64) -> ConditionCReport {
    let mut violations = Vec::new();
    let (mut ni, mut nb) = (0, 0);
    for (index, p) in points.iter().enumerate() {
        match p.kind {
            CriticalKind::Interior => {
                ni += 1;
                let q = p.diag_quantity.unwrap_or(f64::NAN);
                if !(q.abs() > cond_tol) {
                    violations.push(ConditionViolation {
                        index,
                        kind: p.kind,
                        quantity: q,
                        reason: format!("|diag_quantity| = {:e} is within cond_tol", q.abs()),
                    });
                }
            }
            CriticalKind::Boundary => {
                nb += 1;
                let q = p.dnu_k.unwrap_or(f64::NAN);
                if !(q < -cond_tol) {
                    violations.push(ConditionViolation {
                        index,
                        kind: p.kind,
                        quantity: q,
                        reason: format!("dnu_K = {q:e} is not below -cond_tol"),
                    });
                }
            }
        }
    }
    ConditionCReport {
        satisfied: violations.is_empty(),
        cond_tol,
        interior_checked: ni,
        boundary_checked: nb,
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kfield::parse_k;

    fn small() -> SearchConfig {
        SearchConfig {
            interior_starts: 300,
            boundary_starts: 100,
            ..Default::default()
        }
    }

    #[test]
    fn linear_x1_has_two_boundary_points() {
        let k = parse_k("2 + x1").unwrap();
        let s = find_critical_points(&k, &small()).unwrap();
        assert_eq!(s.interior().count(), 0);
        let b: Vec<_> = s.boundary().collect();
        assert_eq!(b.len(), 2);
        // brute-force scan of K on the equator: minimum near -e1, maximum near +e1
        let grid = quasi_uniform_equator(20_000, &[]);
        let vals: Vec<f64> = grid.iter().map(|x| k.value_at(x)).collect();
        let imin = (0..grid.len()).min_by(|&i, &j| vals[i].total_cmp(&vals[j])).unwrap();
        let imax = (0..grid.len()).max_by(|&i, &j| vals[i].total_cmp(&vals[j])).unwrap();
        for p in b {
            let c = p.location.coords();
            let (oracle, index) = if c[0] > 0.0 { (grid[imax], 3) } else { (grid[imin], 0) };
            assert!(angle(c, &oracle) < 0.2, "{c:?} vs {oracle:?}");
            assert_eq!(p.morse_index, index);
            assert!(!p.non_morse);
            assert!(p.gradient_norm < 1e-10);
        }
    }

    #[test]
    fn linear_x5_pole_and_degenerate_equator() {
        let k = parse_k("2 + x5").unwrap();
        let s = find_critical_points(&k, &small()).unwrap();
        let int: Vec<_> = s.interior().collect();
        assert_eq!(int.len(), 1);
        assert!(angle(int[0].location.coords(), &[0.0, 0.0, 0.0, 0.0, 1.0]) < 1e-9);
        assert_eq!(int[0].morse_index, 4);
        assert!(s.boundary().all(|p| p.non_morse));
        assert!(!s.warnings.is_empty());
    }

    #[test]
    fn constant_is_degenerate() {
        let k = parse_k("3").unwrap();
        let s = find_critical_points(&k, &small()).unwrap();
        assert!(!s.points.is_empty());
        assert!(s.points.iter().all(|p| p.non_morse));
        assert_eq!(s.warnings.len(), s.points.len());
    }

    #[test]
    fn linear_form_points_lie_on_arc() {
        // K = c + <v, x>: interior critical points are +-v normalized when v5 > 0
        let k = parse_k("3 + 0.3*x1 - 0.2*x2 + 0.5*x5").unwrap();
        let s = find_critical_points(&k, &small()).unwrap();
        let v = geometry::normalize(&[0.3, -0.2, 0.0, 0.0, 0.5]);
        let int: Vec<_> = s.interior().collect();
        assert_eq!(int.len(), 1);
        assert!(angle(int[0].location.coords(), &v) < 1e-9);
        assert_eq!(int[0].morse_index, 4);
    }

    #[test]
    fn refinement_is_idempotent_and_frame_invariant() {
        let k = parse_k("3 + x1*x2 + 0.5*x5^2 - 0.3*x3*x5 + 0.2*x4^2").unwrap();
        let cfg = small();
        let s = find_critical_points(&k, &cfg).unwrap();
        assert!(!s.points.is_empty());
        for p in &s.points {
            assert!(p.gradient_norm < cfg.grad_tol);
            let (again, _, _) = refine_from(&k, &[*p.location.coords()], p.kind, &cfg);
            assert_eq!(again.len(), 1);
            assert!(angle(&again[0], p.location.coords()) < 1e-12);
            if p.kind == CriticalKind::Interior && !p.non_morse {
                // index from a rotated frame
                let f = tangent_frame_raw(p.location.coords());
                let rot: Vec<Vec5> = (0..4)
                    .map(|i| geometry::normalize(&geometry::add(&f[i], &scale(&f[(i + 1) % 4], 0.7))))
                    .collect();
                let q = DMatrix::from_fn(4, 4, |i, j| dot(&rot[i], &f[j]));
                let qr = q.qr().q();
                let frame: Vec<Vec5> = (0..4)
                    .map(|i| {
                        let mut v = [0.0; 5];
                        for j in 0..4 {
                            v = geometry::axpy(qr[(j, i)], &f[j], &v);
                        }
                        v
                    })
                    .collect();
                let h = k.intrinsic_hessian_in(p.location.coords(), &frame);
                let e = SymmetricEigen::new(super::super::matrix4(&h)).eigenvalues;
                assert_eq!(e.iter().filter(|v| **v < 0.0).count(), p.morse_index);
            }
        }
    }

    #[test]
    fn deterministic_and_seeded() {
        let k = parse_k("3 + x1*x2 + 0.5*x5^2").unwrap();
        let a = find_critical_points(&k, &small()).unwrap();
        let b = find_critical_points(&k, &small()).unwrap();
        assert_eq!(
            serde_json::to_string(&a.points).unwrap(),
            serde_json::to_string(&b.points).unwrap()
        );
    }

    fn fake(kind: CriticalKind, diag: Option<f64>, dnu: Option<f64>) -> CriticalPoint {
        CriticalPoint {
            location: HemispherePoint::north_pole(),
            kind,
            k_value: 1.0,
            morse_index: 0,
            non_morse: false,
            hessian_eigenvalues: vec![],
            gradient_norm: 0.0,
            laplacian_k: 0.0,
            dnu_k: dnu,
            h_self: None,
            d_boundary: 1.0,
            diag_quantity: diag,
            condition_c_ok: true,
            flagged: false,
        }
    }

    #[test]
    fn condition_c_thresholds() {
        let pts = vec![
            fake(CriticalKind::Boundary, None, Some(-1.0)),
            fake(CriticalKind::Interior, Some(0.0), None),
            fake(CriticalKind::Interior, Some(0.5), None),
            fake(CriticalKind::Boundary, None, Some(0.2)),
        ];
        let r = check_condition_c(&pts, 1e-8);
        assert!(!r.satisfied);
        let idx: Vec<usize> = r.violations.iter().map(|v| v.index).collect();
        assert_eq!(idx, vec![1, 3]);
        let r = check_condition_c(&pts[..1], 1e-8);
        assert!(r.satisfied);
    }

    #[test]
    fn flagged_point_example() {
        // interior point with positive diagonal quantity is flagged
        let k = parse_k("3 + x5^2").unwrap();
        let cfg = SearchConfig::default();
        let p = classify_point(&k, &[0.0, 0.0, 0.0, 0.0, 1.0], CriticalKind::Interior, &cfg).unwrap();
        let diag = p.diag_quantity.unwrap();
        assert!((diag - (-p.laplacian_k / (3.0 * p.k_value) - 4.0 * p.h_self.unwrap())).abs() < 1e-15);
        assert_eq!(p.flagged, diag > cfg.cond_tol);
    }
}
