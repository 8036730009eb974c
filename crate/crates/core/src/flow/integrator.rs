//! Dormand-Prince 5(4) steps on `(log α, a, log λ)`. Centers move by the
//! exponential map of increments collected in the tangent space at the
//! start of the step.

use super::{reduced_gradient, FlowOptions};
use crate::bubbles::{tangent_at, Bubble, ExpansionConfig};
use crate::error::Result;
use crate::geometry::{axpy, exp_map, HemispherePoint, Vec5};
use crate::kfield::KExpression;

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Velocity of the preconditioned descent at one configuration.
#[derive(Debug, Clone)]
pub(super) struct Velocity {
    pub la: Vec<f64>,
    pub a: Vec<Vec5>,
    pub ll: Vec<f64>,
    pub energy: f64,
    pub grad_norm: f64,
}

/// Sets `α_i = K(a_i)^{-1/2}`, the maximizer of the leading energy in the
/// amplitudes.
pub(super) fn balanced(k: &KExpression, bubbles: &[Bubble]) -> Vec<Bubble> {
    bubbles
        .iter()
        .map(|b| Bubble { alpha: 1.0 / k.value_at(b.a.coords()).sqrt(), ..*b })
        .collect()
}

pub(super) fn velocity(
    k: &KExpression,
    bubbles: &[Bubble],
    cfg: &ExpansionConfig,
    opts: &FlowOptions,
) -> Result<Velocity> {
    let r = reduced_gradient(k, bubbles, cfg, opts.eps_cap)?;
    let g = &r.gradient;
    let (la, a) = if opts.balance_alpha {
        // chain rule through log α_i = -log K(a_i) / 2
        let a = g
            .a
            .iter()
            .zip(&g.log_alpha)
            .zip(bubbles)
            .map(|((ga, gl), b)| {
                let x = b.a.coords();
                let dk = k.intrinsic_gradient_ambient(x);
                let kv = k.value_at(x);
                let total = axpy(-0.5 * gl / kv, &dk, ga);
                tangent_at(b, &total).map(|c| -c)
            })
            .collect();
        (vec![0.0; bubbles.len()], a)
    } else {
        (g.log_alpha.iter().map(|v| -v).collect(), g.a.iter().map(|v| v.map(|c| -c)).collect())
    };
    Ok(Velocity {
        la,
        a,
        ll: g
            .log_lambda
            .iter()
            .zip(bubbles)
            .map(|(v, b)| -(b.lambda / opts.lambda_ref).powi(2) * v)
            .collect(),
        energy: r.expansion.value,
        grad_norm: if opts.balance_alpha {
            let s: f64 = a_norm2(&g.a) + g.log_lambda.iter().map(|v| v * v).sum::<f64>();
            s.sqrt()
        } else {
            g.norm()
        },
    })
}

fn a_norm2(a: &[Vec5]) -> f64 {
    a.iter().flatten().map(|v| v * v).sum()
}

/// Applies tangent increments at `base`.
fn shifted(k: &KExpression, base: &[Bubble], la: &[f64], a: &[Vec5], ll: &[f64], balance: bool) -> Vec<Bubble> {
    let moved: Vec<Bubble> = base
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let mut p = exp_map(b.a.coords(), &a[i]);
            if !b.is_interior() {
                p[4] = 0.0;
            }
            Bubble {
                kind: b.kind,
                a: HemispherePoint::from_unchecked(p),
                lambda: b.lambda * ll[i].exp(),
                alpha: b.alpha * la[i].exp(),
            }
        })
        .collect();
    if balance {
        balanced(k, &moved)
    } else {
        moved
    }
}

pub(super) struct Attempt {
    pub bubbles: Vec<Bubble>,
    pub last: Velocity,
    pub err: f64,
}

/// One embedded step of size `h` from `base` with first stage `k1`.
pub(super) fn step(
    k: &KExpression,
    base: &[Bubble],
    k1: &Velocity,
    h: f64,
    cfg: &ExpansionConfig,
    opts: &FlowOptions,
) -> Result<Attempt> {
    let n = base.len();
    let project = |v: &[Vec5]| -> Vec<Vec5> { v.iter().zip(base).map(|(x, b)| tangent_at(b, x)).collect() };
    let mut stages: Vec<(Vec<f64>, Vec<Vec5>, Vec<f64>)> = vec![(k1.la.clone(), project(&k1.a), k1.ll.clone())];
    let combine = |stages: &[(Vec<f64>, Vec<Vec5>, Vec<f64>)], w: &[f64]| {
        let mut la = vec![0.0; n];
        let mut a = vec![[0.0; 5]; n];
        let mut ll = vec![0.0; n];
        for (s, &c) in stages.iter().zip(w) {
            if c == 0.0 {
                continue;
            }
            for i in 0..n {
                la[i] += h * c * s.0[i];
                ll[i] += h * c * s.2[i];
                for m in 0..5 {
                    a[i][m] += h * c * s.1[i][m];
                }
            }
        }
        (la, a, ll)
    };
    let mut last = None;
    for (s, row) in A.iter().enumerate().skip(1) {
        let (la, a, ll) = combine(&stages, &row[..s]);
        let v = velocity(k, &shifted(k, base, &la, &a, &ll, opts.balance_alpha), cfg, opts)?;
        stages.push((v.la.clone(), project(&v.a), v.ll.clone()));
        last = Some(v);
    }
    let (la5, a5, ll5) = combine(&stages, &A[6]);
    let (la4, a4, ll4) = combine(&stages, &B4);
    let mut sum = 0.0;
    let mut count = 0;
    for i in 0..n {
        let tol_la = opts.atol + opts.rtol * (base[i].alpha.ln().abs());
        let tol_ll = opts.atol + opts.rtol * (base[i].lambda.ln().abs());
        sum += ((la5[i] - la4[i]) / tol_la).powi(2) + ((ll5[i] - ll4[i]) / tol_ll).powi(2);
        for m in 0..5 {
            sum += ((a5[i][m] - a4[i][m]) / (opts.atol + opts.rtol)).powi(2);
        }
        count += 7;
    }
    Ok(Attempt {
        bubbles: shifted(k, base, &la5, &a5, &ll5, opts.balance_alpha),
        last: last.expect("six stages"),
        err: (sum / count as f64).sqrt(),
    })
}
