//! Interaction matrices over flagged critical points, the alternating sum over
//! subsets with positive least eigenvalue, and the boundary-distance test.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::HemispherePoint;
use crate::greenfn::{self, GreenConvention};
use crate::kfield::{check_condition_c, ConditionCReport, CriticalKind, CriticalPoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriterionConfig {
    pub convention: GreenConvention,
    /// Degeneracy threshold relative to the matrix norm.
    pub eig_tol: f64,
    pub l_max: usize,
    /// Also report the sum over ordered tuples and use it for the verdict.
    pub ordered: bool,
    pub cond_tol: f64,
}

impl Default for CriterionConfig {
    fn default() -> Self {
        Self {
            convention: GreenConvention::FlatModel,
            eig_tol: 1e-9,
            l_max: 20,
            ordered: false,
            cond_tol: 1e-8,
        }
    }
}

/// Numeric input of the subset sum: the full interaction matrix over all
/// flagged points and their Morse indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionData {
    pub matrix: Vec<Vec<f64>>,
    pub morse_indices: Vec<usize>,
}

impl InteractionData {
    pub fn len(&self) -> usize {
        self.morse_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.morse_indices.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let l = self.len();
        if self.matrix.len() != l || self.matrix.iter().any(|r| r.len() != l) {
            return Err(Error::Invalid("interaction matrix must be l x l".into()));
        }
        for p in 0..l {
            for q in 0..l {
                let (a, b) = (self.matrix[p][q], self.matrix[q][p]);
                if !a.is_finite() || (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::Invalid(format!("matrix entry ({p}, {q}) is not symmetric and finite")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InteractionMatrix {
    pub subset: Vec<usize>,
    pub entries: Vec<Vec<f64>>,
    pub rho: f64,
    pub nondegenerate: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct IndexAtInfinity {
    pub subset: Vec<usize>,
    pub index: i64,
}

/// Result of the alternating sum over subsets.
#[derive(Debug, Clone, Serialize)]
pub struct SubsetSum {
    pub records: Vec<InteractionMatrix>,
    pub sum_a: i64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sum_a_ordered: Option<i64>,
    pub degenerate: Vec<Vec<usize>>,
    pub indices_at_infinity: Vec<IndexAtInfinity>,
}

/// Builds the principal submatrix on `subset` and its least eigenvalue.
pub fn build_matrix(data: &InteractionData, subset: &[usize], eig_tol: f64) -> InteractionMatrix {
    let s = subset.len();
    let m = DMatrix::from_fn(s, s, |p, q| data.matrix[subset[p]][subset[q]]);
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let rho = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let closest = eig.iter().fold(f64::INFINITY, |c, v| c.min(v.abs()));
    let scale = m.norm().max(f64::MIN_POSITIVE);
    InteractionMatrix {
        subset: subset.to_vec(),
        entries: (0..s).map(|p| (0..s).map(|q| m[(p, q)]).collect()).collect(),
        rho,
        nondegenerate: closest > eig_tol * scale,
    }
}

fn sign(e: i64) -> i64 {
    if e.rem_euclid(2) == 0 {
        1
    } else {
        -1
    }
}

fn factorial(n: usize) -> i64 {
    (1..=n as i64).product()
}

fn bits(mask: u32) -> Vec<usize> {
    (0..32).filter(|i| mask & (1 << i) != 0).collect()
}

fn finish(data: &InteractionData, records: Vec<InteractionMatrix>, ordered: bool) -> SubsetSum {
    let mut sum_a = 0;
    let mut sum_o = 0;
    let mut idx = Vec::new();
    for r in records.iter().filter(|r| r.rho > 0.0) {
        let s = r.subset.len() as i64;
        let k: i64 = r.subset.iter().map(|&i| data.morse_indices[i] as i64).sum();
        let t = sign(s - 1 - k);
        sum_a += t;
        sum_o += t * factorial(r.subset.len());
        idx.push(IndexAtInfinity { subset: r.subset.clone(), index: 5 * s - 1 - k });
    }
    let degenerate = records.iter().filter(|r| !r.nondegenerate).map(|r| r.subset.clone()).collect();
    SubsetSum {
        records,
        sum_a,
        sum_a_ordered: ordered.then_some(sum_o),
        degenerate,
        indices_at_infinity: idx,
    }
}

fn check_size(data: &InteractionData, cfg: &CriterionConfig) -> Result<()> {
    data.validate()?;
    let l = data.len();
    if l > cfg.l_max || l > 31 {
        return Err(Error::TooManyFlagged { l, l_max: cfg.l_max.min(31) });
    }
    Ok(())
}

/// Evaluates every non-empty subset, ordered by size then lexicographically.
pub fn subset_sum_exhaustive(data: &InteractionData, cfg: &CriterionConfig) -> Result<SubsetSum> {
    check_size(data, cfg)?;
    let l = data.len();
    let mut subsets: Vec<Vec<usize>> = (1u32..(1u32 << l)).map(bits).collect();
    subsets.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    let records: Vec<InteractionMatrix> =
        subsets.par_iter().map(|s| build_matrix(data, s, cfg.eig_tol)).collect();
    Ok(finish(data, records, cfg.ordered))
}

/// Uses that subsets with positive least eigenvalue form a downward-closed
/// family: a subset is built only when all its maximal proper subsets are
/// positive. Records contain the positive subsets and the minimal
/// non-positive ones.
pub fn subset_sum(data: &InteractionData, cfg: &CriterionConfig) -> Result<SubsetSum> {
    check_size(data, cfg)?;
    let l = data.len();
    let mut records = Vec::new();
    let mut positive: Vec<Vec<usize>> = vec![vec![]];
    let mut positive_set: HashSet<Vec<usize>> = HashSet::new();
    for _ in 1..=l {
        let mut candidates = Vec::new();
        for p in &positive {
            let start = p.last().map_or(0, |v| v + 1);
            for j in start..l {
                let mut c = p.clone();
                c.push(j);
                let closed = c.len() == 1
                    || (0..c.len()).all(|drop| {
                        let sub: Vec<usize> =
                            c.iter().enumerate().filter(|(i, _)| *i != drop).map(|(_, v)| *v).collect();
                        positive_set.contains(&sub)
                    });
                if closed {
                    candidates.push(c);
                }
            }
        }
        if candidates.is_empty() {
            break;
        }
        let built: Vec<InteractionMatrix> =
            candidates.par_iter().map(|s| build_matrix(data, s, cfg.eig_tol)).collect();
        positive = built.iter().filter(|r| r.rho > 0.0).map(|r| r.subset.clone()).collect();
        positive_set.extend(positive.iter().cloned());
        records.extend(built);
    }
    Ok(finish(data, records, cfg.ordered))
}

#[derive(Debug, Clone, Serialize)]
pub struct FlaggedPoint {
    /// Position in the critical point list.
    pub critical_index: usize,
    pub location: HemispherePoint,
    pub k_value: f64,
    pub laplacian_k: f64,
    pub h_self: f64,
    pub diag_quantity: f64,
    pub morse_index: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Thm12Margin {
    pub critical_index: usize,
    pub d: f64,
    /// `1/d² + ΔK/(3K)`; the inequality holds when non-negative.
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CriterionReport {
    pub convention: GreenConvention,
    pub l: usize,
    pub flagged: Vec<FlaggedPoint>,
    pub records: Vec<InteractionMatrix>,
    pub sum_a: i64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sum_a_ordered: Option<i64>,
    pub thm11_applies: bool,
    pub thm11_concludes: bool,
    pub thm12_concludes: bool,
    pub thm12_margins: Vec<Thm12Margin>,
    pub indices_at_infinity: Vec<IndexAtInfinity>,
    pub degenerate: Vec<Vec<usize>>,
    pub condition_c: ConditionCReport,
    pub caveats: Vec<String>,
}

impl CriterionReport {
    /// True when neither test certifies existence.
    pub fn inconclusive(&self) -> bool {
        !self.thm11_concludes && !self.thm12_concludes
    }
}

/// Interior critical points with positive diagonal quantity in the
/// criterion convention, in discovery order.
pub fn flagged_points(points: &[CriticalPoint], cfg: &CriterionConfig) -> Result<Vec<FlaggedPoint>> {
    let mut out = Vec::new();
    for (i, p) in points.iter().enumerate() {
        if p.kind != CriticalKind::Interior {
            continue;
        }
        let h = greenfn::self_interaction(&p.location, cfg.convention)?;
        let diag = -p.laplacian_k / (3.0 * p.k_value) - 4.0 * h;
        if diag > cfg.cond_tol {
            if p.non_morse {
                return Err(Error::NonMorseFlagged { index: i });
            }
            out.push(FlaggedPoint {
                critical_index: i,
                location: p.location,
                k_value: p.k_value,
                laplacian_k: p.laplacian_k,
                h_self: h,
                diag_quantity: diag,
                morse_index: p.morse_index,
            });
        }
    }
    Ok(out)
}

/// `M_pp = diag_p / K_p`, `M_pq = -4 G(y_p, y_q) / sqrt(K_p K_q)`.
pub fn interaction_data(flagged: &[FlaggedPoint], conv: GreenConvention) -> Result<InteractionData> {
    let l = flagged.len();
    let mut m = vec![vec![0.0; l]; l];
    for p in 0..l {
        m[p][p] = flagged[p].diag_quantity / flagged[p].k_value;
        for q in p + 1..l {
            let g = greenfn::green(&flagged[p].location, &flagged[q].location, conv)?;
            let v = -4.0 * g / (flagged[p].k_value * flagged[q].k_value).sqrt();
            m[p][q] = v;
            m[q][p] = v;
        }
    }
    Ok(InteractionData { matrix: m, morse_indices: flagged.iter().map(|f| f.morse_index).collect() })
}

/// Margins `1/d² + ΔK/(3K)` at every interior critical point.
pub fn thm12_margins(points: &[CriticalPoint], conv: GreenConvention) -> Result<Vec<Thm12Margin>> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.kind == CriticalKind::Interior)
        .map(|(i, p)| {
            let d = greenfn::model_boundary_distance(&p.location, conv)?;
            Ok(Thm12Margin { critical_index: i, d, margin: 1.0 / (d * d) + p.laplacian_k / (3.0 * p.k_value) })
        })
        .collect()
}

/// Full criterion evaluation on a list of critical points.
pub fn evaluate(points: &[CriticalPoint], cfg: &CriterionConfig) -> Result<CriterionReport> {
    let condition_c = check_condition_c(points, cfg.cond_tol);
    let flagged = flagged_points(points, cfg)?;
    let data = interaction_data(&flagged, cfg.convention)?;
    let sum = subset_sum(&data, cfg)?;
    let margins = thm12_margins(points, cfg.convention)?;
    let mut caveats = Vec::new();
    if !condition_c.satisfied {
        caveats.push("condition (C) fails; neither test applies".to_string());
    }
    if flagged.is_empty() {
        caveats.push("no flagged points; the sum is vacuously 0".to_string());
    }
    if !sum.degenerate.is_empty() {
        caveats.push(format!("{} degenerate interaction matrices", sum.degenerate.len()));
    }
    let thm11_applies = condition_c.satisfied && sum.degenerate.is_empty();
    let verdict_sum = sum.sum_a_ordered.unwrap_or(sum.sum_a);
    let thm12_concludes = condition_c.satisfied && margins.iter().all(|m| m.margin >= 0.0);
    Ok(CriterionReport {
        convention: cfg.convention,
        l: flagged.len(),
        flagged,
        records: sum.records,
        sum_a: sum.sum_a,
        sum_a_ordered: sum.sum_a_ordered,
        thm11_applies,
        thm11_concludes: thm11_applies && verdict_sum != 1,
        thm12_concludes,
        thm12_margins: margins,
        indices_at_infinity: sum.indices_at_infinity,
        degenerate: sum.degenerate,
        condition_c,
        caveats,
    })
}

/// Plain-text table of the subset records and verdicts.
pub fn summary_table(r: &CriterionReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "flagged points: {} ({})", r.l, r.convention);
    let _ = writeln!(s, "{:<24} {:>14} {:>6} {:>8}", "subset", "rho", "sign", "index");
    for rec in &r.records {
        let k: i64 = rec.subset.iter().map(|&i| r.flagged[i].morse_index as i64).sum();
        let n = rec.subset.len() as i64;
        let (sg, idx) = if rec.rho > 0.0 {
            (format!("{:+}", sign(n - 1 - k)), format!("{}", 5 * n - 1 - k))
        } else {
            ("-".into(), "-".into())
        };
        let _ = writeln!(s, "{:<24} {:>14.6e} {:>6} {:>8}", format!("{:?}", rec.subset), rec.rho, sg, idx);
    }
    let _ = writeln!(s, "sum_A = {}", r.sum_a);
    if let Some(o) = r.sum_a_ordered {
        let _ = writeln!(s, "sum_A (ordered) = {o}");
    }
    let _ = writeln!(s, "thm11: applies = {}, concludes = {}", r.thm11_applies, r.thm11_concludes);
    let _ = writeln!(s, "thm12: concludes = {}", r.thm12_concludes);
    for c in &r.caveats {
        let _ = writeln!(s, "caveat: {c}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kfield::{find_critical_points, parse_k, SearchConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(diag: &[f64], off: f64, k: &[usize]) -> InteractionData {
        let l = diag.len();
        let matrix = (0..l).map(|p| (0..l).map(|q| if p == q { diag[p] } else { off }).collect()).collect();
        InteractionData { matrix, morse_indices: k.to_vec() }
    }

    #[test]
    fn hand_checkable_sums() {
        let cfg = CriterionConfig::default();
        assert_eq!(subset_sum(&data(&[1.0], 0.0, &[4]), &cfg).unwrap().sum_a, 1);
        let r = subset_sum(&data(&[1.0], 0.0, &[3]), &cfg).unwrap();
        assert_eq!(r.sum_a, -1);
        assert_eq!(r.indices_at_infinity[0].index, 1);
        assert_eq!(subset_sum(&data(&[1.0, 1.0], -0.5, &[4, 4]), &cfg).unwrap().sum_a, 1);
        assert_eq!(subset_sum(&data(&[1.0, 1.0], -2.0, &[4, 4]), &cfg).unwrap().sum_a, 2);
    }

    #[test]
    fn two_by_two_rho_formula() {
        let d = InteractionData { matrix: vec![vec![1.5, -0.7], vec![-0.7, 0.4]], morse_indices: vec![4, 3] };
        let m = build_matrix(&d, &[0, 1], 1e-9);
        let expected = 0.95 - (0.55f64 * 0.55 + 0.49).sqrt();
        assert!((m.rho - expected).abs() < 1e-14);
        let swapped = InteractionData { matrix: vec![vec![0.4, -0.7], vec![-0.7, 1.5]], morse_indices: vec![3, 4] };
        assert!((build_matrix(&swapped, &[0, 1], 1e-9).rho - m.rho).abs() < 1e-14);
    }

    fn random_data(rng: &mut ChaCha8Rng, l: usize) -> InteractionData {
        let mut m = vec![vec![0.0; l]; l];
        for p in 0..l {
            m[p][p] = rng.gen_range(0.5..3.0);
            for q in p + 1..l {
                let v = -rng.gen_range(0.0..1.0f64).powi(3);
                m[p][q] = v;
                m[q][p] = v;
            }
        }
        InteractionData { matrix: m, morse_indices: (0..l).map(|_| rng.gen_range(0..=4)).collect() }
    }

    #[test]
    fn pruned_matches_exhaustive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = CriterionConfig { ordered: true, ..Default::default() };
        for l in 0..=8 {
            for _ in 0..5 {
                let d = random_data(&mut rng, l);
                let a = subset_sum(&d, &cfg).unwrap();
                let b = subset_sum_exhaustive(&d, &cfg).unwrap();
                assert_eq!(a.sum_a, b.sum_a);
                assert_eq!(a.sum_a_ordered, b.sum_a_ordered);
                let pa: Vec<_> = a.indices_at_infinity.iter().map(|x| x.subset.clone()).collect();
                let pb: Vec<_> = b.indices_at_infinity.iter().map(|x| x.subset.clone()).collect();
                assert_eq!(pa, pb);
            }
        }
    }

    #[test]
    fn interlacing_on_nested_subsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = random_data(&mut rng, 6);
        let all = subset_sum_exhaustive(&d, &CriterionConfig::default()).unwrap();
        let mask = |s: &[usize]| s.iter().fold(0u32, |m, i| m | (1 << i));
        for t in &all.records {
            for s in &all.records {
                let (ms, mt) = (mask(&s.subset), mask(&t.subset));
                if ms != mt && ms & mt == ms {
                    assert!(s.rho >= t.rho - 1e-12);
                }
            }
        }
    }

    #[test]
    fn enumeration_order_and_limits() {
        let d = data(&[1.0, 1.0, 1.0], -0.1, &[4, 4, 4]);
        let r = subset_sum_exhaustive(&d, &CriterionConfig::default()).unwrap();
        let order: Vec<Vec<usize>> = r.records.iter().map(|x| x.subset.clone()).collect();
        assert_eq!(order, vec![vec![0], vec![1], vec![2], vec![0, 1], vec![0, 2], vec![1, 2], vec![0, 1, 2]]);
        let cfg = CriterionConfig { l_max: 2, ..Default::default() };
        assert!(matches!(subset_sum(&d, &cfg), Err(Error::TooManyFlagged { l: 3, .. })));
    }

    #[test]
    fn degenerate_matrix_is_reported() {
        let d = data(&[1.0, 1.0], -1.0, &[4, 4]);
        let r = subset_sum(&d, &CriterionConfig::default()).unwrap();
        assert_eq!(r.degenerate, vec![vec![0, 1]]);
    }

    #[test]
    fn flagged_pole_and_scaling() {
        let cfg = CriterionConfig::default();
        let mut sums = Vec::new();
        for c in [1.0, 0.5, 2.0, 10.0] {
            let k = parse_k(&format!("{c} * (1 + 5*x5^4 + 0.1*x1)")).unwrap();
            let pts = find_critical_points(&k, &SearchConfig { interior_starts: 300, boundary_starts: 100, ..Default::default() }).unwrap();
            let r = evaluate(&pts.points, &cfg).unwrap();
            assert_eq!(r.l, 1);
            assert_eq!(r.flagged[0].morse_index, 4);
            assert!(r.records[0].rho > 0.0);
            sums.push(r.sum_a);
        }
        assert!(sums.iter().all(|s| *s == 1));
    }

    #[test]
    fn thm12_margins_plug_in() {
        let k = parse_k("2 + x5^2").unwrap();
        let pts = find_critical_points(&k, &SearchConfig { interior_starts: 300, boundary_starts: 100, ..Default::default() }).unwrap();
        let m = thm12_margins(&pts.points, GreenConvention::FlatModel).unwrap();
        assert_eq!(m.len(), 1);
        // pole: chart height 1, ΔK = -8, K = 3
        assert!((m[0].d - 1.0).abs() < 1e-9);
        assert!((m[0].margin - (1.0 - 8.0 / 9.0)).abs() < 1e-6);
    }
}
