//! Invariant suite behind the `validate` subcommand and the acceptance tests.
//!
//! Each check returns a list of metrics with their limits; a check passes
//! when every metric does.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bubbles::neumann::{neumann_check, NeumannConfig};
use crate::bubbles::{
    delta_raw, expansion_j, fd_gradient, functional_j, random_state, reduced, relative_error, Bubble,
    ExpansionConfig, QuadratureConfig, OMEGA3, S,
};
use crate::criterion::{build_matrix, evaluate, subset_sum, subset_sum_exhaustive, CriterionConfig, InteractionData};
use crate::error::Result;
use crate::flow::{batch, integrate, random_initial, Classification, FlowContext, FlowOptions, InitSampler};
use crate::geometry::{fd_laplacian, geodesic_distance, normalize, HemispherePoint, Vec5};
use crate::greenfn::{self, verify_kernel, GreenConvention};
use crate::kfield::{find_critical_points, parse_k, KExpression, SearchConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    Below,
    AtMost,
    Above,
    AtLeast,
    Equal,
}

#[derive(Debug, Clone, Serialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    pub bound: Bound,
    pub limit: f64,
    pub pass: bool,
}

impl Metric {
    pub fn new(name: impl Into<String>, value: f64, bound: Bound, limit: f64) -> Self {
        let pass = match bound {
            Bound::Below => value < limit,
            Bound::AtMost => value <= limit,
            Bound::Above => value > limit,
            Bound::AtLeast => value >= limit,
            Bound::Equal => value == limit,
        };
        Self { name: name.into(), value, bound, limit, pass }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub id: usize,
    pub name: String,
    pub metrics: Vec<Metric>,
    pub pass: bool,
    pub seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

const NAMES: [&str; 9] = [
    "bubble equation residual",
    "kernel identities",
    "corrected bubble against Neumann solve",
    "expansion convergence",
    "pruned and exhaustive subset sums",
    "hand-checkable verdicts",
    "flow dichotomy",
    "gradient fidelity",
    "determinism",
];

/// Runtime limits in seconds.
const BUDGETS: [f64; 9] = [10.0, 5.0, 300.0, 600.0, 30.0, 1.0, 600.0, 120.0, 60.0];

/// Number of checks in the suite.
pub const COUNT: usize = 9;

fn timed(id: usize, f: impl FnOnce() -> Result<Vec<Metric>>) -> Check {
    let start = Instant::now();
    let out = f();
    let seconds = start.elapsed().as_secs_f64();
    let name = NAMES[id - 1].to_string();
    match out {
        Ok(mut metrics) => {
            metrics.push(Metric::new("seconds", seconds, Bound::Below, BUDGETS[id - 1]));
            let pass = metrics.iter().all(|m| m.pass);
            Check { id, name, metrics, pass, seconds, error: None }
        }
        Err(e) => Check { id, name, metrics: Vec::new(), pass: false, seconds, error: Some(e.to_string()) },
    }
}

/// Runs check `id` (1 to 9).
pub fn run(id: usize) -> Check {
    match id {
        1 => timed(1, bubble_equation),
        2 => timed(2, kernel_identities),
        3 => timed(3, neumann_agreement),
        4 => timed(4, expansion_convergence),
        5 => timed(5, subset_sums),
        6 => timed(6, verdicts),
        7 => timed(7, flow_dichotomy),
        8 => timed(8, gradient_fidelity),
        9 => timed(9, determinism),
        _ => Check {
            id,
            name: "unknown".into(),
            metrics: Vec::new(),
            pass: false,
            seconds: 0.0,
            error: Some(format!("no check with id {id}")),
        },
    }
}

pub fn run_all() -> Vec<Check> {
    (1..=COUNT).map(run).collect()
}

/// One line per check followed by its metrics.
pub fn table(checks: &[Check]) -> String {
    let mut s = String::new();
    for c in checks {
        let verdict = if c.pass { "PASS" } else { "FAIL" };
        s.push_str(&format!("[{verdict}] {}. {} ({:.2} s)\n", c.id, c.name, c.seconds));
        if let Some(e) = &c.error {
            s.push_str(&format!("       error: {e}\n"));
        }
        for m in &c.metrics {
            let op = match m.bound {
                Bound::Below => "<",
                Bound::AtMost => "<=",
                Bound::Above => ">",
                Bound::AtLeast => ">=",
                Bound::Equal => "==",
            };
            let mark = if m.pass { "ok" } else { "x" };
            s.push_str(&format!("       {mark:>2} {} = {:.6e} {op} {:e}\n", m.name, m.value, m.limit));
        }
    }
    s
}

fn random_point(rng: &mut ChaCha8Rng) -> HemispherePoint {
    loop {
        let v: Vec5 = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let n = v.iter().map(|c| c * c).sum::<f64>();
        if n > 1e-2 && n <= 1.0 {
            let mut x = normalize(&v);
            x[4] = x[4].abs();
            return HemispherePoint::new(x).expect("unit vector in the closed hemisphere");
        }
    }
}

fn bubble_equation() -> Result<Vec<Metric>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let a = random_point(&mut rng);
        let lambda = rng.gen_range(1.0..100.0);
        let x = random_point(&mut rng);
        let scale = (1.0 / lambda + geodesic_distance(&a, &x)).min(1.0);
        let f = |p: &Vec5| delta_raw(a.coords(), lambda, p);
        let d = f(x.coords());
        let lap = fd_laplacian(f, x.coords(), 1e-3 * scale);
        worst = worst.max((-lap + 2.0 * d - 8.0 * d.powi(3)).abs() / (2.0 * d + 8.0 * d.powi(3)));
    }
    let mut exact: f64 = 0.0;
    for _ in 0..20 {
        let (a, x) = (random_point(&mut rng), random_point(&mut rng));
        let d = delta_raw(a.coords(), 1.0, x.coords());
        exact = exact.max((2.0 * d - 8.0 * d.powi(3)).abs());
    }
    Ok(vec![
        Metric::new("max relative residual (200 samples)", worst, Bound::Below, 1e-6),
        Metric::new("residual at lambda = 1", exact, Bound::Equal, 0.0),
    ])
}

fn kernel_identities() -> Result<Vec<Metric>> {
    let mut out = Vec::new();
    for conv in [GreenConvention::SphericalImage, GreenConvention::FlatModel] {
        let r = verify_kernel(conv)?;
        let radial = r.radial.iter().fold(0.0f64, |m, (_, v)| m.max(v.abs()));
        out.push(Metric::new(format!("{conv}: radial residual"), radial, Bound::Below, 1e-7));
        out.push(Metric::new(format!("{conv}: max |dG/dnu|"), r.neumann_max, Bound::Below, 1e-9));
        out.push(Metric::new(format!("{conv}: equator samples"), r.neumann_samples as f64, Bound::Equal, 100.0));
    }
    Ok(out)
}

fn neumann_agreement() -> Result<Vec<Metric>> {
    let cfg = NeumannConfig::default();
    let mut out = Vec::new();
    for lambda in [50.0, 100.0] {
        let r = neumann_check(lambda, 1.0, &cfg)?;
        out.push(Metric::new(format!("lambda = {lambda}: max defect + grid error"), r.max_defect + r.grid_error, Bound::AtMost, r.budget));
        out.push(Metric::new(format!("lambda = {lambda}: margin"), r.margin, Bound::Above, 0.0));
    }
    Ok(out)
}

fn expansion_convergence() -> Result<Vec<Metric>> {
    let conv = GreenConvention::SphericalImage;
    let d = 0.5;
    let a = HemispherePoint::at_height([1.0, 0.0, 0.0, 0.0], d)?;
    let h = greenfn::self_interaction(&a, conv)?;
    let one = parse_k("1")?;
    let k = parse_k("2 + x5^2")?;
    let quad = QuadratureConfig::default();
    let ecfg = ExpansionConfig { convention: conv, ..Default::default() };
    let mut norm_err = Vec::new();
    let mut j_err = Vec::new();
    for lambda in [20.0, 40.0] {
        let b = Bubble::interior(a, lambda, 1.0);
        let r = functional_j(&one, &[b], &quad, conv)?;
        let n_exp = 8.0 * S + 4.0 * OMEGA3 * h / (lambda * lambda);
        norm_err.push((r.n - n_exp).abs() / (8.0 * S / (lambda * d).powi(2)));
        let q = functional_j(&k, &[b], &quad, conv)?;
        j_err.push((q.j - expansion_j(&k, &[b], &ecfg)?.value).abs());
    }
    Ok(vec![
        Metric::new("K = 1: scaled norm error ratio, lambda 40 over 20", norm_err[1] / norm_err[0], Bound::AtMost, 0.5),
        Metric::new("K = 2 + x5^2: |J_quad - J_exp| ratio, lambda 40 over 20", j_err[1] / j_err[0], Bound::AtMost, 0.5),
    ])
}

/// Random interaction data with positive diagonal and small negative
/// off-diagonal entries.
pub fn random_interaction(rng: &mut impl Rng, l: usize) -> InteractionData {
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

fn subset_sums() -> Result<Vec<Metric>> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = CriterionConfig { ordered: true, ..Default::default() };
    let mut mismatches = 0;
    let mut datasets = 0;
    for l in 0..=8 {
        for _ in 0..10 {
            let d = random_interaction(&mut rng, l);
            let a = subset_sum(&d, &cfg)?;
            let b = subset_sum_exhaustive(&d, &cfg)?;
            if a.sum_a != b.sum_a || a.sum_a_ordered != b.sum_a_ordered {
                mismatches += 1;
            }
            datasets += 1;
        }
    }
    let mut pairs = 0usize;
    let mut violations = 0usize;
    for _ in 0..3 {
        let d = random_interaction(&mut rng, 8);
        let all = subset_sum_exhaustive(&d, &cfg)?;
        let masks: Vec<u32> = all.records.iter().map(|r| r.subset.iter().fold(0u32, |m, i| m | (1 << i))).collect();
        for (t, mt) in all.records.iter().zip(&masks) {
            for (s, ms) in all.records.iter().zip(&masks) {
                if ms != mt && ms & mt == *ms {
                    pairs += 1;
                    if s.rho < t.rho {
                        violations += 1;
                    }
                }
            }
        }
    }
    Ok(vec![
        Metric::new(format!("pruned vs exhaustive mismatches ({datasets} datasets, l <= 8)"), mismatches as f64, Bound::Equal, 0.0),
        Metric::new("nested pairs at l = 8 per dataset", (pairs / 3) as f64, Bound::AtLeast, 3025.0),
        Metric::new("interlacing violations", violations as f64, Bound::Equal, 0.0),
    ])
}

fn verdicts() -> Result<Vec<Metric>> {
    let cfg = CriterionConfig::default();
    let data = |diag: &[f64], off: f64, k: &[usize]| {
        let l = diag.len();
        let matrix = (0..l).map(|p| (0..l).map(|q| if p == q { diag[p] } else { off }).collect()).collect();
        InteractionData { matrix, morse_indices: k.to_vec() }
    };
    let single4 = subset_sum(&data(&[1.0], 0.0, &[4]), &cfg)?;
    let single3 = subset_sum(&data(&[1.0], 0.0, &[3]), &cfg)?;
    let pos = data(&[1.0, 1.0], -0.5, &[4, 4]);
    let neg = data(&[1.0, 1.0], -2.0, &[4, 4]);
    let index3 = single3.indices_at_infinity.first().map_or(-1.0, |x| x.index as f64);
    Ok(vec![
        Metric::new("l = 1, k = 4: A", single4.sum_a as f64, Bound::Equal, 1.0),
        Metric::new("l = 1, k = 3: A", single3.sum_a as f64, Bound::Equal, -1.0),
        Metric::new("l = 1, k = 3: index at infinity", index3, Bound::Equal, 1.0),
        Metric::new("l = 2, pair rho", build_matrix(&pos, &[0, 1], cfg.eig_tol).rho, Bound::Above, 0.0),
        Metric::new("l = 2, pair rho > 0: A", subset_sum(&pos, &cfg)?.sum_a as f64, Bound::Equal, 1.0),
        Metric::new("l = 2, pair rho", build_matrix(&neg, &[0, 1], cfg.eig_tol).rho, Bound::Below, 0.0),
        Metric::new("l = 2, pair rho < 0: A", subset_sum(&neg, &cfg)?.sum_a as f64, Bound::Equal, 2.0),
    ])
}

/// Positive field with two interior maxima near `(±s, 0, 0, 0, c5)` and the
/// search configuration that finds them.
pub fn two_bump_field(s: f64, c5: f64) -> Result<(KExpression, SearchConfig)> {
    let src = format!("1 + 0.05*x2 + 4*exp(20*({s}*x1 + {c5}*x5 - 1)) + 4*exp(20*(-{s}*x1 + {c5}*x5 - 1))");
    let search = SearchConfig {
        interior_starts: 400,
        boundary_starts: 100,
        extra_starts: vec![[s, 0.0, 0.0, 0.0, c5], [-s, 0.0, 0.0, 0.0, c5]],
        ..Default::default()
    };
    Ok((parse_k(&src)?, search))
}

/// Setup of one flow batch around the two maxima of a two-bump field.
pub fn dichotomy_batch(s: f64, c5: f64, count: usize, seed: u64) -> Result<(KExpression, FlowContext, Vec<Vec<Bubble>>)> {
    let (k, search) = two_bump_field(s, c5)?;
    let cfg = ExpansionConfig::default();
    let ctx = FlowContext::new(&k, &search, cfg.convention)?;
    let sampler = InitSampler {
        count,
        seed,
        spread: 0.3,
        anchors: ctx.flagged.iter().map(|f| *f.location.coords()).collect(),
        ..Default::default()
    };
    let init = random_initial(&sampler, &cfg)?;
    Ok((k, ctx, init))
}

fn flow_dichotomy() -> Result<Vec<Metric>> {
    let cfg = ExpansionConfig::default();
    let opts = FlowOptions::default();
    let mut out = Vec::new();
    let mut blowups = 0;
    let mut violations = 0;
    let mut errors = 0;
    let mut energy_dev: f64 = 0.0;
    for (label, s, c5) in [("far pair", 0.6, 0.8), ("close pair", 0.3, 0.954)] {
        let (k, ctx, init) = dichotomy_batch(s, c5, 50, 1)?;
        out.push(Metric::new(format!("{label}: flagged points"), ctx.flagged.len() as f64, Bound::Equal, 2.0));
        if ctx.flagged.len() == 2 {
            let rho = build_matrix(&ctx.interaction, &[0, 1], ctx.eig_tol).rho;
            let bound = if label == "far pair" { Bound::Above } else { Bound::Below };
            out.push(Metric::new(format!("{label}: rho"), rho, bound, 0.0));
        }
        for r in batch(&k, &ctx, &init, &cfg, &opts) {
            let Ok(o) = r else {
                errors += 1;
                continue;
            };
            if o.classification != Classification::Blowup {
                continue;
            }
            blowups += 1;
            if !o.predicate_holds {
                violations += 1;
            }
            match o.blowup_level {
                Some(level) => energy_dev = energy_dev.max((o.final_state.energy - level).abs() / level),
                None => violations += 1,
            }
        }
    }
    out.push(Metric::new("blowups", blowups as f64, Bound::AtLeast, 1.0));
    out.push(Metric::new("blowups violating the predicate", violations as f64, Bound::Equal, 0.0));
    out.push(Metric::new("max relative deviation from the level", energy_dev, Bound::AtMost, 0.02));
    out.push(Metric::new("integration errors", errors as f64, Bound::Equal, 0.0));
    Ok(out)
}

fn gradient_fidelity() -> Result<Vec<Metric>> {
    let k = parse_k("3 + x1*x5 + 0.4*x2^2 - 0.3*sin(x3 + x5)")?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut out = Vec::new();
    for conv in [GreenConvention::SphericalImage, GreenConvention::FlatModel] {
        let cfg = ExpansionConfig { convention: conv, ..Default::default() };
        let mut worst: f64 = 0.0;
        let mut tested = 0;
        while tested < 100 {
            let bs = random_state(&mut rng);
            let Ok(r) = reduced(&k, &bs, &cfg) else { continue };
            worst = worst.max(relative_error(&r.gradient, &fd_gradient(&k, &bs, &cfg)));
            tested += 1;
        }
        out.push(Metric::new(format!("{conv}: max relative gradient error (100 states)"), worst, Bound::Below, 1e-6));
    }
    let (k, ctx, init) = dichotomy_batch(0.6, 0.8, 10, 3)?;
    let cfg = ExpansionConfig::default();
    let opts = FlowOptions::default();
    let mut worst_step: f64 = 0.0;
    let mut worst_sample: f64 = 0.0;
    for b in &init {
        let (o, samples) = integrate(&k, &ctx, b, &cfg, &opts)?;
        worst_step = worst_step.max(o.max_energy_increase);
        for w in samples.windows(2) {
            worst_sample = worst_sample.max(w[1].energy - w[0].energy);
        }
    }
    out.push(Metric::new("max energy increase per step (10 trajectories)", worst_step, Bound::AtMost, opts.monotonicity_slack));
    out.push(Metric::new("max energy increase between samples", worst_sample, Bound::AtMost, opts.monotonicity_slack));
    Ok(out)
}

fn determinism() -> Result<Vec<Metric>> {
    let criterion_json = || -> Result<String> {
        let k = parse_k("2 + x5^2")?;
        let pts = find_critical_points(&k, &SearchConfig { interior_starts: 300, boundary_starts: 100, ..Default::default() })?;
        let r = evaluate(&pts.points, &CriterionConfig::default())?;
        Ok(serde_json::to_string(&r)?)
    };
    let flow_json = || -> Result<String> {
        let (k, ctx, init) = dichotomy_batch(0.6, 0.8, 8, 5)?;
        let outcomes: Vec<_> = batch(&k, &ctx, &init, &ExpansionConfig::default(), &FlowOptions::default())
            .into_iter()
            .collect::<Result<_>>()?;
        Ok(serde_json::to_string(&outcomes)?)
    };
    let differ = |a: String, b: String| if a == b { 0.0 } else { 1.0 };
    Ok(vec![
        Metric::new("criterion reports differing", differ(criterion_json()?, criterion_json()?), Bound::Equal, 0.0),
        Metric::new("flow reports differing", differ(flow_json()?, flow_json()?), Bound::Equal, 0.0),
    ])
}
