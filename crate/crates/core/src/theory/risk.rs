//! Ramp loss, squared risk and the risk decomposition of averaged sign predictors.
//!
//! For sign predictors `f`, `f_A` and their average `f~ = (f + f_A) / 2`,
//! with `R(g) = E[(g - y)^2] / 4`:
//!
//! `R(f~) - R(f) = (E[f y] - E[f_A y]) / 4 + (E[f f_A] - 1) / 8`.

use rand::Rng as _;

use crate::error::{invalid, Result};
use crate::rng::Rng;

/// Margin surrogate: 1 for `t <= 0`, `1 - t / rho` on `(0, rho)`, 0 beyond.
pub fn ramp_loss(t: f64, rho: f64) -> f64 {
    assert!(rho > 0.0, "ramp loss needs rho > 0");
    if t <= 0.0 {
        1.0
    } else if t >= rho {
        0.0
    } else {
        1.0 - t / rho
    }
}

/// `E[(g - y)^2] / 4` over `(g, y, probability)` triples.
pub fn risk_squared(values: &[(f64, f64, f64)]) -> f64 {
    values
        .iter()
        .map(|(g, y, p)| p * (g - y) * (g - y))
        .sum::<f64>()
        / 4.0
}

/// `P(y g <= 0)` over `(g, y, probability)` triples.
pub fn zero_one_risk(values: &[(f64, f64, f64)]) -> f64 {
    values
        .iter()
        .filter(|(g, y, _)| g * y <= 0.0)
        .map(|(_, _, p)| p)
        .sum()
}

/// One point of a finite outcome space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Outcome {
    pub f: i8,
    pub f_aug: i8,
    pub y: i8,
    pub prob: f64,
}

/// Joint law of `(f, f_A, y)` on a finite outcome space.
#[derive(Clone, Debug, PartialEq)]
pub struct SignPredictorTable {
    outcomes: Vec<Outcome>,
}

impl SignPredictorTable {
    pub fn new(outcomes: Vec<Outcome>) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(invalid!("outcome space must be non-empty"));
        }
        for o in &outcomes {
            if [o.f, o.f_aug, o.y].iter().any(|v| *v != 1 && *v != -1) {
                return Err(invalid!("predictor values and labels must be +1 or -1"));
            }
            if !(o.prob >= 0.0 && o.prob.is_finite()) {
                return Err(invalid!("probabilities must be non-negative"));
            }
        }
        let total: f64 = outcomes.iter().map(|o| o.prob).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid!("probabilities sum to {total}, not 1"));
        }
        Ok(Self { outcomes })
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    fn expect(&self, h: impl Fn(&Outcome) -> f64) -> f64 {
        self.outcomes.iter().map(|o| o.prob * h(o)).sum()
    }
}

/// Both sides of the decomposition and their gap.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prop1Check {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
}

/// Evaluates `R(f~) - R(f)` and the accuracy-gap plus agreement expression.
pub fn verify_prop1(table: &SignPredictorTable) -> Prop1Check {
    let triples = |g: &dyn Fn(&Outcome) -> f64| -> Vec<(f64, f64, f64)> {
        table
            .outcomes
            .iter()
            .map(|o| (g(o), o.y as f64, o.prob))
            .collect()
    };
    let r_avg = risk_squared(&triples(&|o| (o.f as f64 + o.f_aug as f64) / 2.0));
    let r_f = risk_squared(&triples(&|o| o.f as f64));
    let lhs = r_avg - r_f;
    let fy = table.expect(|o| (o.f * o.y) as f64);
    let fay = table.expect(|o| (o.f_aug * o.y) as f64);
    let ffa = table.expect(|o| (o.f * o.f_aug) as f64);
    let rhs = (fy - fay) / 4.0 + (ffa - 1.0) / 8.0;
    Prop1Check {
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
    }
}

/// The eight sign triples `(f, f_A, y)`.
fn sign_triples() -> Vec<(i8, i8, i8)> {
    let mut out = Vec::with_capacity(8);
    for f in [-1i8, 1] {
        for a in [-1i8, 1] {
            for y in [-1i8, 1] {
                out.push((f, a, y));
            }
        }
    }
    out
}

/// Summary of a family of decomposition checks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prop1Audit {
    pub tables: usize,
    pub max_gap: f64,
}

/// Checks every table on outcome spaces of size `1..=max_outcomes` whose
/// probabilities are positive multiples of `1 / denominator`.
///
/// Outcome points may share the same sign triple, so multisets of triples
/// are enumerated together with every composition of `denominator`.
pub fn exhaustive_prop1(max_outcomes: usize, denominator: u32) -> Prop1Audit {
    let triples = sign_triples();
    let mut audit = Prop1Audit {
        tables: 0,
        max_gap: 0.0,
    };
    for n in 1..=max_outcomes {
        for_each_multiset(triples.len(), n, &mut |picks| {
            for_each_composition(denominator, n, &mut |parts| {
                let outcomes = picks
                    .iter()
                    .zip(parts)
                    .map(|(&i, &c)| {
                        let (f, f_aug, y) = triples[i];
                        Outcome {
                            f,
                            f_aug,
                            y,
                            prob: c as f64 / denominator as f64,
                        }
                    })
                    .collect();
                let table = SignPredictorTable { outcomes };
                audit.tables += 1;
                audit.max_gap = audit.max_gap.max(verify_prop1(&table).gap);
            });
        });
    }
    audit
}

fn for_each_multiset(k: usize, n: usize, visit: &mut dyn FnMut(&[usize])) {
    fn rec(
        k: usize,
        n: usize,
        start: usize,
        cur: &mut Vec<usize>,
        visit: &mut dyn FnMut(&[usize]),
    ) {
        if cur.len() == n {
            visit(cur);
            return;
        }
        for i in start..k {
            cur.push(i);
            rec(k, n, i, cur, visit);
            cur.pop();
        }
    }
    rec(k, n, 0, &mut Vec::with_capacity(n), visit);
}

fn for_each_composition(total: u32, parts: usize, visit: &mut dyn FnMut(&[u32])) {
    fn rec(left: u32, parts: usize, cur: &mut Vec<u32>, visit: &mut dyn FnMut(&[u32])) {
        if parts == 1 {
            if left > 0 {
                cur.push(left);
                visit(cur);
                cur.pop();
            }
            return;
        }
        for c in 1..left {
            cur.push(c);
            rec(left - c, parts - 1, cur, visit);
            cur.pop();
        }
    }
    rec(total, parts, &mut Vec::with_capacity(parts), visit);
}

/// A random table with `1..=8` outcomes and normalised uniform weights.
pub fn random_table(rng: &mut Rng) -> SignPredictorTable {
    let n = rng.random_range(1..=8);
    let sign = |rng: &mut Rng| if rng.random::<bool>() { 1 } else { -1 };
    let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
    let total: f64 = raw.iter().sum();
    let outcomes = raw
        .iter()
        .map(|w| Outcome {
            f: sign(rng),
            f_aug: sign(rng),
            y: sign(rng),
            prob: w / total,
        })
        .collect();
    SignPredictorTable::new(outcomes).expect("normalised random table")
}

/// Checks `tables` random tables drawn from `rng`.
pub fn random_prop1(tables: usize, rng: &mut Rng) -> Prop1Audit {
    let max_gap = (0..tables)
        .map(|_| verify_prop1(&random_table(rng)).gap)
        .fold(0.0, f64::max);
    Prop1Audit { tables, max_gap }
}
