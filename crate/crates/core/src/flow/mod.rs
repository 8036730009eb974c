//! Descent dynamics of the expanded energy in the bubble parameters.
//!
//! The velocity is minus the reduced gradient with the `log λ` component
//! multiplied by `(λ/λ_ref)²`, which keeps the growth of `log λ` at a rate
//! independent of `λ` while remaining a descent direction. By default the
//! amplitudes are held at `α_i = K(a_i)^{-1/2}`, where the leading energy is
//! maximal in the amplitude ratios, and the descent acts on `(a, log λ)`.

mod integrator;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bubbles::{epsilon, reduced, Bubble, BubbleKind, ExpansionConfig, Reduced, S};
use crate::criterion::{build_matrix, flagged_points, interaction_data, CriterionConfig, FlaggedPoint, InteractionData};
use crate::error::{Error, Result};
use crate::geometry::{angle, axpy, exp_map, norm, normalize, scale, tangent_frame, HemispherePoint};
use crate::greenfn::GreenConvention;
use crate::kfield::{find_critical_points, CriticalKind, CriticalPoint, KExpression, SearchConfig};

use integrator::{balanced, step, velocity, Velocity};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowOptions {
    pub lambda_blowup: f64,
    pub a_capture: f64,
    pub stall_tol: f64,
    pub eps_cap: f64,
    pub dt_out: f64,
    pub rtol: f64,
    pub atol: f64,
    pub initial_step: f64,
    pub min_step: f64,
    pub max_steps: usize,
    pub max_time: f64,
    pub lambda_ref: f64,
    pub monotonicity_slack: f64,
    /// Hold the amplitudes at their balanced values.
    pub balance_alpha: bool,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            lambda_blowup: 1e4,
            a_capture: 1e-3,
            stall_tol: 1e-8,
            eps_cap: 0.1,
            dt_out: 0.1,
            rtol: 1e-7,
            atol: 1e-9,
            initial_step: 1e-3,
            min_step: 1e-12,
            max_steps: 20_000,
            max_time: 1e6,
            lambda_ref: 10.0,
            monotonicity_slack: 1e-8,
            balance_alpha: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Blowup,
    Bounded,
    InteractionExit,
    RegimeExit,
}

impl std::fmt::Display for Classification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Classification::Blowup => "blowup",
            Classification::Bounded => "bounded",
            Classification::InteractionExit => "interaction_exit",
            Classification::RegimeExit => "regime_exit",
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowEvent {
    pub time: f64,
    pub tag: String,
    pub payload: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowState {
    pub bubbles: Vec<Bubble>,
    pub time: f64,
    pub energy: f64,
    pub events: Vec<FlowEvent>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Sample {
    pub time: f64,
    pub bubbles: Vec<Bubble>,
    /// Frobenius norm of the off-diagonal interaction matrix `ε_ij`.
    pub eps_norm: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LimitPoint {
    pub bubble: usize,
    pub critical_index: Option<usize>,
    pub kind: Option<CriticalKind>,
    pub distance: Option<f64>,
    pub flagged_index: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowOutcome {
    pub classification: Classification,
    pub limit_points: Vec<LimitPoint>,
    /// `5p - 1 - Σk` when the predicate holds.
    pub final_index: Option<i64>,
    /// Distinct flagged limit points whose subset has positive `ρ`.
    pub predicate_holds: bool,
    /// `8 √S (Σ 1/K)^{1/2}` over the captured flagged points.
    pub blowup_level: Option<f64>,
    pub initial_energy: f64,
    pub final_state: FlowState,
    pub steps: usize,
    pub rejected: usize,
    /// Largest energy increase over an accepted step.
    pub max_energy_increase: f64,
}

/// Critical points and flagged structure of `K` used to classify limits.
#[derive(Debug, Clone, Serialize)]
pub struct FlowContext {
    pub convention: GreenConvention,
    pub critical: Vec<CriticalPoint>,
    pub flagged: Vec<FlaggedPoint>,
    pub interaction: InteractionData,
    pub eig_tol: f64,
}

impl FlowContext {
    pub fn new(k: &KExpression, search: &SearchConfig, conv: GreenConvention) -> Result<Self> {
        let s = find_critical_points(k, search)?;
        Self::from_points(s.points, conv)
    }

    pub fn from_points(critical: Vec<CriticalPoint>, conv: GreenConvention) -> Result<Self> {
        let ccfg = CriterionConfig { convention: conv, ..Default::default() };
        let flagged = flagged_points(&critical, &ccfg)?;
        let interaction = interaction_data(&flagged, conv)?;
        Ok(Self { convention: conv, critical, flagged, interaction, eig_tol: ccfg.eig_tol })
    }
}

/// The expansion and its gradient, refusing interaction-dominated
/// configurations.
pub fn reduced_gradient(k: &KExpression, bubbles: &[Bubble], cfg: &ExpansionConfig, eps_cap: f64) -> Result<Reduced> {
    for i in 0..bubbles.len() {
        for j in i + 1..bubbles.len() {
            let e = epsilon(&bubbles[i], &bubbles[j]).value;
            if e >= eps_cap {
                return Err(Error::InteractionDominated { i, j, eps: e, cap: eps_cap });
            }
        }
    }
    reduced(k, bubbles, cfg)
}

pub fn eps_norm(bubbles: &[Bubble]) -> f64 {
    let mut s = 0.0;
    for i in 0..bubbles.len() {
        for j in 0..bubbles.len() {
            if i != j {
                s += epsilon(&bubbles[i], &bubbles[j]).value.powi(2);
            }
        }
    }
    s.sqrt()
}

fn exit_kind(e: &Error) -> Option<Classification> {
    match e {
        Error::Regime(_) => Some(Classification::RegimeExit),
        Error::InteractionDominated { .. } => Some(Classification::InteractionExit),
        _ => None,
    }
}

fn limits(ctx: &FlowContext, bubbles: &[Bubble], capture: f64) -> (Vec<LimitPoint>, bool, Option<i64>, Option<f64>) {
    let mut out = Vec::new();
    for (i, b) in bubbles.iter().enumerate() {
        let nearest = ctx
            .critical
            .iter()
            .enumerate()
            .map(|(c, p)| (c, p.kind, angle(b.a.coords(), p.location.coords())))
            .min_by(|x, y| x.2.total_cmp(&y.2));
        let flagged = ctx
            .flagged
            .iter()
            .enumerate()
            .map(|(f, p)| (f, angle(b.a.coords(), p.location.coords())))
            .filter(|(_, d)| *d <= capture)
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .map(|(f, _)| f);
        out.push(LimitPoint {
            bubble: i,
            critical_index: nearest.map(|n| n.0),
            kind: nearest.map(|n| n.1),
            distance: nearest.map(|n| n.2),
            flagged_index: if b.is_interior() { flagged } else { None },
        });
    }
    let mut subset: Vec<usize> = out.iter().filter_map(|l| l.flagged_index).collect();
    subset.sort_unstable();
    subset.dedup();
    let holds = subset.len() == bubbles.len()
        && !subset.is_empty()
        && build_matrix(&ctx.interaction, &subset, ctx.eig_tol).rho > 0.0;
    if !holds {
        return (out, false, None, None);
    }
    let ksum: i64 = subset.iter().map(|&f| ctx.flagged[f].morse_index as i64).sum();
    let p = subset.len() as i64;
    let inv: f64 = subset.iter().map(|&f| 1.0 / ctx.flagged[f].k_value).sum();
    (out, true, Some(5 * p - 1 - ksum), Some(8.0 * S.sqrt() * inv.sqrt()))
}

/// Integrates the descent flow from `initial` until it blows up, stalls,
/// leaves the regime or becomes interaction dominated.
pub fn integrate(
    k: &KExpression,
    ctx: &FlowContext,
    initial: &[Bubble],
    cfg: &ExpansionConfig,
    opts: &FlowOptions,
) -> Result<(FlowOutcome, Vec<Sample>)> {
    if initial.is_empty() {
        return Err(Error::Invalid("flow needs at least one bubble".into()));
    }
    let mut bubbles: Vec<Bubble> = initial.iter().map(|b| b.normalized()).collect();
    if opts.balance_alpha {
        bubbles = balanced(k, &bubbles);
    }
    let mut events = vec![FlowEvent { time: 0.0, tag: "start".into(), payload: format!("p = {}", bubbles.len()) }];
    let mut samples = Vec::new();
    let finish = |classification: Classification,
                  bubbles: Vec<Bubble>,
                  time: f64,
                  energy: f64,
                  initial_energy: f64,
                  mut events: Vec<FlowEvent>,
                  steps: usize,
                  rejected: usize,
                  max_inc: f64| {
        let (limit_points, holds, final_index, level) = limits(ctx, &bubbles, opts.a_capture);
        events.push(FlowEvent { time, tag: classification.to_string(), payload: String::new() });
        FlowOutcome {
            classification,
            limit_points,
            final_index,
            predicate_holds: holds,
            blowup_level: level,
            initial_energy,
            final_state: FlowState { bubbles, time, energy, events },
            steps,
            rejected,
            max_energy_increase: max_inc,
        }
    };
    let mut v: Velocity = velocity(k, &bubbles, cfg, opts)?;
    let initial_energy = v.energy;
    let mut t = 0.0;
    let mut h = opts.initial_step;
    let (mut steps, mut rejected) = (0, 0);
    let mut max_inc: f64 = 0.0;
    let mut next_out = 0.0;
    loop {
        if t >= next_out {
            samples.push(Sample { time: t, bubbles: bubbles.clone(), eps_norm: eps_norm(&bubbles), energy: v.energy });
            next_out = t + opts.dt_out;
        }
        let min_lambda = bubbles.iter().map(|b| b.lambda).fold(f64::INFINITY, f64::min);
        if min_lambda > opts.lambda_blowup {
            let (_, holds, _, _) = limits(ctx, &bubbles, opts.a_capture);
            let c = if holds { Classification::Blowup } else { Classification::RegimeExit };
            return Ok((finish(c, bubbles, t, v.energy, initial_energy, events, steps, rejected, max_inc), samples));
        }
        if v.grad_norm < opts.stall_tol {
            events.push(FlowEvent { time: t, tag: "stall".into(), payload: format!("{:e}", v.grad_norm) });
            return Ok((finish(Classification::Bounded, bubbles, t, v.energy, initial_energy, events, steps, rejected, max_inc), samples));
        }
        if steps >= opts.max_steps || t >= opts.max_time {
            events.push(FlowEvent { time: t, tag: "budget".into(), payload: format!("steps = {steps}") });
            return Ok((finish(Classification::Bounded, bubbles, t, v.energy, initial_energy, events, steps, rejected, max_inc), samples));
        }
        let attempt = match step(k, &bubbles, &v, h, cfg, opts) {
            Ok(a) => a,
            Err(e) => match exit_kind(&e) {
                Some(c) => {
                    rejected += 1;
                    h *= 0.25;
                    if h < opts.min_step.max(1e-10 * (1.0 + t)) {
                        events.push(FlowEvent { time: t, tag: "exit".into(), payload: e.to_string() });
                        return Ok((finish(c, bubbles, t, v.energy, initial_energy, events, steps, rejected, max_inc), samples));
                    }
                    continue;
                }
                None => return Err(e),
            },
        };
        let increase = attempt.last.energy - v.energy;
        if attempt.err <= 1.0 && increase <= opts.monotonicity_slack {
            t += h;
            steps += 1;
            max_inc = max_inc.max(increase);
            bubbles = attempt.bubbles;
            v = attempt.last;
            let grow = if attempt.err > 0.0 { 0.9 * attempt.err.powf(-0.2) } else { 5.0 };
            h *= grow.clamp(0.2, 5.0);
        } else {
            rejected += 1;
            h *= if attempt.err > 1.0 { (0.9 * attempt.err.powf(-0.2)).clamp(0.1, 0.9) } else { 0.5 };
        }
        if h < opts.min_step {
            return Err(Error::StepFailure { time: t, step: h });
        }
    }
}

/// Integrates several initial configurations in parallel; results keep the
/// input order.
pub fn batch(
    k: &KExpression,
    ctx: &FlowContext,
    initial: &[Vec<Bubble>],
    cfg: &ExpansionConfig,
    opts: &FlowOptions,
) -> Vec<Result<FlowOutcome>> {
    initial.par_iter().map(|b| integrate(k, ctx, b, cfg, opts).map(|(o, _)| o)).collect()
}

/// Sampler of random initial configurations of interior bubbles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitSampler {
    pub count: usize,
    pub seed: u64,
    pub max_bubbles: usize,
    pub lambda_range: [f64; 2],
    /// Centers are drawn within `spread` radians of these points.
    pub anchors: Vec<[f64; 5]>,
    pub spread: f64,
    /// Configurations with some `ε_ij` at or above this value are redrawn.
    pub eps_max: f64,
}

impl Default for InitSampler {
    fn default() -> Self {
        Self {
            count: 50,
            seed: 0,
            max_bubbles: 2,
            lambda_range: [30.0, 80.0],
            anchors: Vec::new(),
            spread: 0.2,
            eps_max: 0.05,
        }
    }
}

/// Draws `count` configurations with one to `max_bubbles` interior bubbles
/// and amplitudes in `[0.5, 1.5]`. Draws outside the expansion regime or
/// above `eps_max` are repeated.
pub fn random_initial(s: &InitSampler, cfg: &ExpansionConfig) -> Result<Vec<Vec<Bubble>>> {
    if s.anchors.is_empty() {
        return Err(Error::Invalid("sampler needs at least one anchor".into()));
    }
    let anchors: Vec<HemispherePoint> = s.anchors.iter().map(|a| HemispherePoint::new(*a)).collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut out = Vec::with_capacity(s.count);
    while out.len() < s.count {
        let mut accepted = None;
        for _ in 0..1000 {
            let config = draw(&mut rng, s, &anchors)?;
            let valid = config.iter().all(|b| b.check_expansion(cfg).is_ok())
                && (0..config.len()).all(|i| (i + 1..config.len()).all(|j| epsilon(&config[i], &config[j]).value < s.eps_max));
            if valid {
                accepted = Some(config);
                break;
            }
        }
        out.push(accepted.ok_or_else(|| Error::Invalid("sampler could not draw a valid configuration".into()))?);
    }
    Ok(out)
}

fn draw(rng: &mut ChaCha8Rng, s: &InitSampler, anchors: &[HemispherePoint]) -> Result<Vec<Bubble>> {
    let p = rng.gen_range(1..=s.max_bubbles.max(1));
    let mut config = Vec::with_capacity(p);
    for _ in 0..p {
        let anchor = anchors[rng.gen_range(0..anchors.len())];
        let mut v = [0.0; 5];
        for e in &tangent_frame(&anchor) {
            v = axpy(rng.gen_range(-1.0..1.0), e, &v);
        }
        let n = norm(&v).max(1e-12);
        let r = s.spread * rng.gen::<f64>();
        let mut x = exp_map(anchor.coords(), &scale(&v, r / n));
        x[4] = x[4].abs().max(1e-3);
        let a = HemispherePoint::new(normalize(&x))?;
        let lambda = rng.gen_range(s.lambda_range[0]..s.lambda_range[1]);
        let alpha = rng.gen_range(0.5..1.5);
        config.push(Bubble { kind: BubbleKind::Interior, a, lambda, alpha });
    }
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kfield::parse_k;

    fn bump_k(s: f64, c5: f64) -> (KExpression, SearchConfig) {
        let src = format!("1 + 0.05*x2 + 4*exp(20*({s}*x1 + {c5}*x5 - 1)) + 4*exp(20*(-{s}*x1 + {c5}*x5 - 1))");
        let search = SearchConfig {
            interior_starts: 400,
            boundary_starts: 100,
            extra_starts: vec![[s, 0.0, 0.0, 0.0, c5], [-s, 0.0, 0.0, 0.0, c5]],
            ..Default::default()
        };
        (parse_k(&src).unwrap(), search)
    }

    #[test]
    fn single_bubble_blows_up_at_flagged_max() {
        let k = parse_k("1 + 5*x5^4 + 0.1*x1").unwrap();
        let cfg = ExpansionConfig::default();
        let ctx = FlowContext::new(&k, &SearchConfig { interior_starts: 300, boundary_starts: 100, ..Default::default() }, cfg.convention).unwrap();
        assert_eq!(ctx.flagged.len(), 1);
        let a = HemispherePoint::new(crate::geometry::normalize(&[0.1, 0.05, 0.0, 0.0, 1.0])).unwrap();
        let (out, samples) = integrate(&k, &ctx, &[Bubble::interior(a, 50.0, 1.0)], &cfg, &FlowOptions::default()).unwrap();
        assert_eq!(out.classification, Classification::Blowup, "{:?}", out.final_state.events);
        assert_eq!(out.final_index, Some(0));
        let level = out.blowup_level.unwrap();
        assert!((out.final_state.energy - level).abs() < 0.02 * level);
        for w in samples.windows(2) {
            assert!(w[1].energy <= w[0].energy + 1e-8 * out.steps as f64);
        }
    }

    #[test]
    fn boundary_bubble_with_inward_decrease_does_not_blow_up() {
        let k = parse_k("3 + x5 - 0.2*x1^2").unwrap();
        let cfg = ExpansionConfig::default();
        let ctx = FlowContext::new(&k, &SearchConfig { interior_starts: 200, boundary_starts: 100, ..Default::default() }, cfg.convention).unwrap();
        let a = HemispherePoint::new([0.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
        let (out, _) = integrate(&k, &ctx, &[Bubble::boundary(a, 40.0, 1.0)], &cfg, &FlowOptions::default()).unwrap();
        assert!(matches!(out.classification, Classification::Bounded | Classification::RegimeExit));
        let l = out.final_state.bubbles[0].lambda;
        assert!(l < 40.0, "{l}");
    }

    #[test]
    fn close_flagged_pair_does_not_blow_up() {
        let (k, search) = bump_k(0.3, 0.954);
        let cfg = ExpansionConfig::default();
        let ctx = FlowContext::new(&k, &search, cfg.convention).unwrap();
        assert_eq!(ctx.flagged.len(), 2);
        assert!(build_matrix(&ctx.interaction, &[0, 1], 1e-9).rho < 0.0);
        let init: Vec<Bubble> = ctx.flagged.iter().map(|f| Bubble::interior(f.location, 60.0, 1.0 / f.k_value.sqrt())).collect();
        let (out, _) = integrate(&k, &ctx, &init, &cfg, &FlowOptions::default()).unwrap();
        assert_ne!(out.classification, Classification::Blowup);
        assert!(out.final_state.energy < out.initial_energy);
    }

    #[test]
    fn far_flagged_pair_blows_up_symmetrically() {
        let (k, search) = bump_k(0.6, 0.8);
        let cfg = ExpansionConfig::default();
        let ctx = FlowContext::new(&k, &search, cfg.convention).unwrap();
        assert!(build_matrix(&ctx.interaction, &[0, 1], 1e-9).rho > 0.0);
        let p = [0.55, 0.0, 0.0, 0.0, 0.83];
        let q = [-0.55, 0.0, 0.0, 0.0, 0.83];
        let init = vec![
            Bubble::interior(HemispherePoint::new(crate::geometry::normalize(&p)).unwrap(), 50.0, 0.5),
            Bubble::interior(HemispherePoint::new(crate::geometry::normalize(&q)).unwrap(), 50.0, 0.5),
        ];
        let (out, _) = integrate(&k, &ctx, &init, &cfg, &FlowOptions::default()).unwrap();
        assert_eq!(out.classification, Classification::Blowup, "{:?}", out.final_state.events);
        assert_eq!(out.final_index, Some(1));
        let b = &out.final_state.bubbles;
        assert!((b[0].a.coords()[0] + b[1].a.coords()[0]).abs() < 1e-8, "{b:?} {:?}", out.final_state.events);
        assert!((b[0].lambda / b[1].lambda - 1.0).abs() < 1e-8);
    }

    #[test]
    fn interaction_cap_is_enforced() {
        let k = parse_k("2").unwrap();
        let a = HemispherePoint::north_pole();
        let b = [Bubble::interior(a, 50.0, 1.0), Bubble::interior(a, 60.0, 1.0)];
        assert!(matches!(
            reduced_gradient(&k, &b, &ExpansionConfig::default(), 0.1),
            Err(Error::InteractionDominated { .. })
        ));
    }

    #[test]
    fn batches_are_deterministic() {
        let (k, search) = bump_k(0.6, 0.8);
        let cfg = ExpansionConfig::default();
        let ctx = FlowContext::new(&k, &search, cfg.convention).unwrap();
        let sampler = InitSampler {
            count: 4,
            seed: 11,
            anchors: ctx.flagged.iter().map(|f| *f.location.coords()).collect(),
            ..Default::default()
        };
        let init = random_initial(&sampler, &cfg).unwrap();
        let a = batch(&k, &ctx, &init, &cfg, &FlowOptions::default());
        let b = batch(&k, &ctx, &init, &cfg, &FlowOptions::default());
        let ja = serde_json::to_string(&a.into_iter().map(|r| r.unwrap()).collect::<Vec<_>>()).unwrap();
        let jb = serde_json::to_string(&b.into_iter().map(|r| r.unwrap()).collect::<Vec<_>>()).unwrap();
        assert_eq!(ja, jb);
    }
}
