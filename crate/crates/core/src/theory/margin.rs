//! Pairwise world, linear encoder grids and the margin bound audit.
//!
//! Features live in homogeneous coordinates: a query is `(c, omega)` and its
//! prototype is `(c, 0)`, so every encoder of the grid
//! `W_b = [[1, 0], [b, I]]` is linear and gives the difference feature
//! `Omega = (0, omega + c b)`. Under the Gaussian world the squared norm of
//! `Omega` is a scaled noncentral chi-square, which makes the classification
//! risk of every hypothesis exact.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::function::gamma::{gamma_lr, ln_gamma};

use super::risk::ramp_loss;
use super::PairwiseInstance;
use crate::error::{invalid, Error, Result};
use crate::rng::{stream, tag, Rng};

/// Sub-stream tags under the theory tag.
pub mod sub {
    pub const MARGIN: u64 = 1;
    pub const RADIUS: u64 = 2;
    pub const RATE: u64 = 3;
    pub const PROP3: u64 = 4;
    pub const BOUND: u64 = 5;
    pub const PROP1: u64 = 6;
    pub const BETA: u64 = 7;
}

/// Gaussian model of query-minus-prototype offsets.
///
/// With probability `pos_prob` a pair is same-class and its offset is
/// `N(0, pos_std^2 I)`; otherwise it is drawn around one of `neg_centers`
/// (chosen uniformly) with spread `neg_std`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseWorld {
    homogeneous: f64,
    pos_std: f64,
    neg_std: f64,
    neg_centers: Vec<Vec<f64>>,
    pos_prob: f64,
}

impl Default for PairwiseWorld {
    fn default() -> Self {
        Self::ring(0.0)
    }
}

impl PairwiseWorld {
    pub fn new(
        homogeneous: f64,
        pos_std: f64,
        neg_std: f64,
        neg_centers: Vec<Vec<f64>>,
        pos_prob: f64,
    ) -> Result<Self> {
        let dim = neg_centers.first().map(Vec::len).unwrap_or(0);
        if dim == 0 || neg_centers.iter().any(|c| c.len() != dim) {
            return Err(invalid!(
                "negative centers must be non-empty with equal dimension"
            ));
        }
        if !(pos_std > 0.0 && neg_std > 0.0) {
            return Err(invalid!("offset spreads must be positive"));
        }
        if !(pos_prob > 0.0 && pos_prob < 1.0) {
            return Err(invalid!("pos_prob must lie in (0, 1)"));
        }
        if !homogeneous.is_finite() || neg_centers.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid!("world parameters must be finite"));
        }
        Ok(Self {
            homogeneous,
            pos_std,
            neg_std,
            neg_centers,
            pos_prob,
        })
    }

    /// Two-dimensional world with four negative centers at radius 2 rotated by `angle`.
    fn ring(angle: f64) -> Self {
        let centers = (0..4)
            .map(|j| {
                let a = angle + j as f64 * std::f64::consts::FRAC_PI_2;
                vec![2.0 * a.cos(), 2.0 * a.sin()]
            })
            .collect();
        Self::new(1.0, 0.5, 0.5, centers, 0.5).expect("valid default world")
    }

    /// Default novel-class world: the default geometry rotated by 45 degrees.
    pub fn default_novel() -> Self {
        Self::ring(std::f64::consts::FRAC_PI_4)
    }

    /// The same world with every offset multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.homogeneous,
            self.pos_std * factor,
            self.neg_std * factor,
            self.neg_centers
                .iter()
                .map(|c| c.iter().map(|v| v * factor).collect())
                .collect(),
            self.pos_prob,
        )
    }

    /// Offset dimension (the feature dimension minus the homogeneous coordinate).
    pub fn dim(&self) -> usize {
        self.neg_centers[0].len()
    }

    pub fn homogeneous(&self) -> f64 {
        self.homogeneous
    }

    /// Number of mixture components; component 0 is the same-class one.
    pub fn components(&self) -> usize {
        self.neg_centers.len() + 1
    }

    fn component_law(&self, comp: usize) -> (Option<&[f64]>, f64) {
        if comp == 0 {
            (None, self.pos_std)
        } else {
            (Some(&self.neg_centers[comp - 1]), self.neg_std)
        }
    }

    /// Draws a component index. Uses exactly one uniform draw.
    pub fn draw_component(&self, rng: &mut Rng) -> usize {
        let u: f64 = rng.random();
        if u < self.pos_prob {
            0
        } else {
            let j = ((u - self.pos_prob) / (1.0 - self.pos_prob) * self.neg_centers.len() as f64)
                as usize;
            1 + j.min(self.neg_centers.len() - 1)
        }
    }

    /// Draws an offset from component `comp`. Uses exactly `dim` normal draws.
    pub fn draw_offset(&self, comp: usize, rng: &mut Rng) -> Vec<f64> {
        let (center, std) = self.component_law(comp);
        (0..self.dim())
            .map(|i| {
                let z: f64 = rng.sample(StandardNormal);
                center.map_or(0.0, |c| c[i]) + std * z
            })
            .collect()
    }

    /// The pair `((c, omega), (c, 0))` with the label of component `comp`.
    pub fn instance(&self, comp: usize, offset: &[f64]) -> PairwiseInstance {
        let mut query = Vec::with_capacity(offset.len() + 1);
        query.push(self.homogeneous);
        query.extend_from_slice(offset);
        let mut prototype = vec![0.0; offset.len() + 1];
        prototype[0] = self.homogeneous;
        PairwiseInstance {
            query,
            prototype,
            label: if comp == 0 { 1 } else { -1 },
        }
    }

    /// Draws `m` independent pairs.
    pub fn sample(&self, m: usize, rng: &mut Rng) -> Vec<PairwiseInstance> {
        (0..m)
            .map(|_| {
                let comp = self.draw_component(rng);
                let offset = self.draw_offset(comp, rng);
                self.instance(comp, &offset)
            })
            .collect()
    }

    /// Exact `P(y g <= 0)` for the encoder with threshold `beta`.
    pub fn exact_risk(&self, encoder: &LinearEncoder, beta: f64) -> f64 {
        let b = encoder.bias();
        assert_eq!(b.len(), self.dim(), "encoder and world dimensions differ");
        let shift: Vec<f64> = b.iter().map(|v| v * self.homogeneous).collect();
        let d = self.dim() as f64;
        let tail = |center: Option<&[f64]>, std: f64| {
            let nc: f64 = shift
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let m = center.map_or(0.0, |c| c[i]) + s;
                    m * m
                })
                .sum::<f64>()
                / (std * std);
            noncentral_chi2_cdf(beta / (std * std), d, nc)
        };
        let pos_err = 1.0 - tail(None, self.pos_std);
        let neg_err = self
            .neg_centers
            .iter()
            .map(|c| tail(Some(c), self.neg_std))
            .sum::<f64>()
            / self.neg_centers.len() as f64;
        self.pos_prob * pos_err + (1.0 - self.pos_prob) * neg_err
    }

    /// Midpoint of the mean squared offset norms of same-class and
    /// cross-class pairs on a calibration sample of size `n`.
    pub fn calibrate_beta(&self, n: usize, seed: u64) -> f64 {
        let mut rng = stream(seed, &[tag::THEORY, sub::BETA]);
        let (mut pos, mut neg) = ((0.0, 0usize), (0.0, 0usize));
        for x in self.sample(n.max(2), &mut rng) {
            let d2 = beta_free_dist(&x);
            let acc = if x.label == 1 { &mut pos } else { &mut neg };
            acc.0 += d2;
            acc.1 += 1;
        }
        (pos.0 / pos.1.max(1) as f64 + neg.0 / neg.1.max(1) as f64) / 2.0
    }
}

fn beta_free_dist(x: &PairwiseInstance) -> f64 {
    -x.score(0.0)
}

/// `P(X <= x)` for a noncentral chi-square with `k` degrees of freedom and
/// noncentrality `lambda`, as a Poisson mixture of central terms.
pub fn noncentral_chi2_cdf(x: f64, k: f64, lambda: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let half = lambda / 2.0;
    if half == 0.0 {
        return gamma_lr(k / 2.0, x / 2.0);
    }
    // sum outward from the Poisson mode so no weight underflows before it matters
    let mode = half.floor() as usize;
    let weight = |j: usize| (-half + j as f64 * half.ln() - ln_gamma(j as f64 + 1.0)).exp();
    let term = |j: usize| weight(j) * gamma_lr(k / 2.0 + j as f64, x / 2.0);
    let mut total = 0.0;
    let mut j = mode;
    loop {
        let w = weight(j);
        total += term(j);
        if (j > mode && w < 1e-18) || j > mode + 100_000 {
            break;
        }
        j += 1;
    }
    for j in (0..mode).rev() {
        let w = weight(j);
        total += term(j);
        if w < 1e-18 {
            break;
        }
    }
    total.clamp(0.0, 1.0)
}

/// Linear encoder `W_b = [[1, 0], [b, I]]` on homogeneous features.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearEncoder {
    bias: Vec<f64>,
}

impl LinearEncoder {
    pub fn new(bias: Vec<f64>) -> Result<Self> {
        if bias.is_empty() || bias.iter().any(|v| !v.is_finite()) {
            return Err(invalid!("encoder bias must be non-empty and finite"));
        }
        Ok(Self { bias })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            bias: vec![0.0; dim],
        }
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Dense `(d + 1) x (d + 1)` matrix, row-major.
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        let n = self.bias.len() + 1;
        (0..n)
            .map(|r| {
                (0..n)
                    .map(|c| match (r, c) {
                        (r, c) if r == c => 1.0,
                        (r, 0) => self.bias[r - 1],
                        _ => 0.0,
                    })
                    .collect()
            })
            .collect()
    }

    pub fn encode(&self, q: &[f64]) -> Vec<f64> {
        let mut out = q.to_vec();
        for (o, b) in out[1..].iter_mut().zip(&self.bias) {
            *o += q[0] * b;
        }
        out
    }

    /// Spectral norm: `sqrt((2 + n^2 + n sqrt(n^2 + 4)) / 2)` with `n = |b|`.
    pub fn lipschitz(&self) -> f64 {
        let n2: f64 = self.bias.iter().map(|v| v * v).sum();
        ((2.0 + n2 + (n2 * (n2 + 4.0)).sqrt()) / 2.0).sqrt()
    }

    /// `g = beta - ||Phi(q) - p||^2` for one pair.
    pub fn score(&self, x: &PairwiseInstance, beta: f64) -> f64 {
        let q = self.encode(&x.query);
        beta - q
            .iter()
            .zip(&x.prototype)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
    }
}

/// A finite set of encoders.
#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisGrid {
    encoders: Vec<LinearEncoder>,
}

impl HypothesisGrid {
    pub fn new(encoders: Vec<LinearEncoder>) -> Result<Self> {
        if encoders.is_empty() {
            return Err(invalid!("hypothesis grid is empty"));
        }
        let d = encoders[0].bias.len();
        if encoders.iter().any(|e| e.bias.len() != d) {
            return Err(Error::DimensionMismatch(
                "grid encoders differ in dimension".into(),
            ));
        }
        Ok(Self { encoders })
    }

    /// `count` biases evenly spaced on a circle of `radius` in the first two coordinates.
    pub fn bias_circle(dim: usize, count: usize, radius: f64) -> Result<Self> {
        if dim < 2 {
            return Err(invalid!("bias circle needs dimension >= 2"));
        }
        Self::new(
            (0..count)
                .map(|k| {
                    let a = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                    let mut b = vec![0.0; dim];
                    b[0] = radius * a.cos();
                    b[1] = radius * a.sin();
                    LinearEncoder { bias: b }
                })
                .collect(),
        )
    }

    pub fn encoders(&self) -> &[LinearEncoder] {
        &self.encoders
    }

    pub fn len(&self) -> usize {
        self.encoders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.encoders.is_empty()
    }

    /// Score matrix, one row per hypothesis.
    pub fn scores(&self, sample: &[PairwiseInstance], beta: f64) -> Vec<Vec<f64>> {
        self.encoders
            .iter()
            .map(|e| sample.iter().map(|x| e.score(x, beta)).collect())
            .collect()
    }
}

/// Margin parameters of the bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarginConfig {
    pub rho: f64,
    pub beta: f64,
    pub delta: f64,
    pub m: usize,
}

impl MarginConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rho.is_nan() || self.rho <= 0.0 {
            return Err(invalid!("rho must be positive"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid!("delta must lie in (0, 1)"));
        }
        if self.m < 1 {
            return Err(invalid!("sample size must be at least 1"));
        }
        if !self.beta.is_finite() {
            return Err(invalid!("beta must be finite"));
        }
        Ok(())
    }

    /// `sqrt(log(1 / delta) / (2 m))`.
    pub fn confidence_term(&self) -> f64 {
        confidence_term(self.delta, self.m)
    }
}

pub(crate) fn confidence_term(delta: f64, m: usize) -> f64 {
    ((1.0 / delta).ln() / (2.0 * m as f64)).sqrt()
}

/// Mean ramp loss of the margins `y g`.
pub fn empirical_margin_risk(scores: &[f64], sample: &[PairwiseInstance], rho: f64) -> f64 {
    scores
        .iter()
        .zip(sample)
        .map(|(g, x)| ramp_loss(x.label as f64 * g, rho))
        .sum::<f64>()
        / scores.len() as f64
}

/// Monte Carlo estimate of `E_sigma sup_h (1/m) sum_i sigma_i g_h(x_i)`.
///
/// Sign vectors are used in antithetic pairs `(sigma, -sigma)`, so at least
/// `sign_vectors` vectors are averaged and any part of the scores shared by
/// all hypotheses cancels exactly.
pub fn rademacher_estimate(scores: &[Vec<f64>], sign_vectors: usize, rng: &mut Rng) -> f64 {
    let m = scores.first().map_or(0, Vec::len);
    if m == 0 {
        return 0.0;
    }
    let pairs = sign_vectors.div_ceil(2).max(1);
    let mut sigma = vec![0.0; m];
    let mut acc = 0.0;
    for _ in 0..pairs {
        for s in sigma.iter_mut() {
            *s = if rng.random::<bool>() { 1.0 } else { -1.0 };
        }
        let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
        for row in scores {
            let c: f64 = row.iter().zip(&sigma).map(|(g, s)| g * s).sum::<f64>() / m as f64;
            hi = hi.max(c);
            lo = lo.min(c);
        }
        acc += hi - lo;
    }
    acc / (2 * pairs) as f64
}

/// Monte Carlo settings of the bound audit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarginAuditConfig {
    pub margin: MarginConfig,
    pub trials: usize,
    pub sign_vectors: usize,
    pub seed: u64,
}

/// One audit trial.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarginTrial {
    pub trial: usize,
    pub rademacher: f64,
    /// Smallest `rhs - R_cls` over the grid.
    pub worst_slack: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarginBoundReport {
    pub trials: Vec<MarginTrial>,
    pub exact_risks: Vec<f64>,
    pub confidence_term: f64,
    pub fraction: f64,
    pub mc_sigma: f64,
    pub threshold: f64,
    pub passes: bool,
}

/// Audits `R_cls <= R_rho + (2 / rho) R_complexity + sqrt(log(1/delta) / (2m))`
/// simultaneously over the grid, as a frequency over fresh samples.
pub fn margin_bound_report(
    world: &PairwiseWorld,
    grid: &HypothesisGrid,
    audit: &MarginAuditConfig,
) -> Result<MarginBoundReport> {
    let cfg = audit.margin;
    cfg.validate()?;
    if audit.trials < 100 {
        return Err(invalid!("the audit needs at least 100 trials"));
    }
    if grid.encoders[0].bias.len() != world.dim() {
        return Err(Error::DimensionMismatch(
            "grid and world dimensions differ".into(),
        ));
    }
    let exact: Vec<f64> = grid
        .encoders
        .iter()
        .map(|e| world.exact_risk(e, cfg.beta))
        .collect();
    let conf = cfg.confidence_term();
    let trials: Vec<MarginTrial> = (0..audit.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream(audit.seed, &[tag::THEORY, sub::MARGIN, t as u64]);
            let sample = world.sample(cfg.m, &mut rng);
            let scores = grid.scores(&sample, cfg.beta);
            let rad = rademacher_estimate(&scores, audit.sign_vectors, &mut rng);
            let worst_slack = scores
                .iter()
                .zip(&exact)
                .map(|(row, r)| {
                    empirical_margin_risk(row, &sample, cfg.rho) + 2.0 / cfg.rho * rad + conf - r
                })
                .fold(f64::INFINITY, f64::min);
            MarginTrial {
                trial: t,
                rademacher: rad,
                worst_slack,
                holds: worst_slack >= 0.0,
            }
        })
        .collect();
    let n = trials.len() as f64;
    let fraction = trials.iter().filter(|t| t.holds).count() as f64 / n;
    let p = 1.0 - cfg.delta;
    let mc_sigma = (p * (1.0 - p) / n).sqrt();
    let threshold = p - 3.0 * mc_sigma;
    Ok(MarginBoundReport {
        trials,
        exact_risks: exact,
        confidence_term: conf,
        fraction,
        mc_sigma,
        threshold,
        passes: fraction >= threshold,
    })
}

/// Rademacher estimates of the world and its rescaled copy on paired draws.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadiusScaling {
    pub factor: f64,
    pub base: f64,
    pub scaled: f64,
    pub ratio: f64,
}

/// Rescales every offset by `factor` and compares Rademacher estimates on
/// the same component draws, normal draws and sign vectors.
pub fn radius_scaling(
    world: &PairwiseWorld,
    grid: &HypothesisGrid,
    beta: f64,
    m: usize,
    factor: f64,
    sign_vectors: usize,
    seed: u64,
) -> Result<RadiusScaling> {
    let shrunk = world.scaled(factor)?;
    let estimate = |w: &PairwiseWorld, beta: f64| {
        let mut rng = stream(seed, &[tag::THEORY, sub::RADIUS]);
        let sample = w.sample(m, &mut rng);
        rademacher_estimate(&grid.scores(&sample, beta), sign_vectors, &mut rng)
    };
    let base = estimate(world, beta);
    let scaled = estimate(&shrunk, beta * factor * factor);
    Ok(RadiusScaling {
        factor,
        base,
        scaled,
        ratio: scaled / base,
    })
}

/// Rademacher estimates across sample sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct RateScaling {
    pub sizes: Vec<usize>,
    pub estimates: Vec<f64>,
    /// `estimate * sqrt(m)`, constant under a `1 / sqrt(m)` rate.
    pub normalized: Vec<f64>,
    /// Largest relative deviation of `normalized` from its mean.
    pub max_rel_dev: f64,
}

/// Averages `repeats` sample draws per size and checks the `1 / sqrt(m)` rate.
pub fn rate_scaling(
    world: &PairwiseWorld,
    grid: &HypothesisGrid,
    beta: f64,
    sizes: &[usize],
    repeats: usize,
    sign_vectors: usize,
    seed: u64,
) -> Result<RateScaling> {
    if sizes.is_empty() || sizes.contains(&0) || repeats == 0 {
        return Err(invalid!("rate scaling needs positive sizes and repeats"));
    }
    let estimates: Vec<f64> = sizes
        .iter()
        .map(|&m| {
            (0..repeats)
                .into_par_iter()
                .map(|r| {
                    let mut rng = stream(seed, &[tag::THEORY, sub::RATE, m as u64, r as u64]);
                    let sample = world.sample(m, &mut rng);
                    rademacher_estimate(&grid.scores(&sample, beta), sign_vectors, &mut rng)
                })
                .collect::<Vec<_>>()
                .iter()
                .sum::<f64>()
                / repeats as f64
        })
        .collect();
    let normalized: Vec<f64> = estimates
        .iter()
        .zip(sizes)
        .map(|(e, &m)| e * (m as f64).sqrt())
        .collect();
    let mean = normalized.iter().sum::<f64>() / normalized.len() as f64;
    let max_rel_dev = normalized
        .iter()
        .map(|v| (v - mean).abs() / mean)
        .fold(0.0, f64::max);
    Ok(RateScaling {
        sizes: sizes.to_vec(),
        estimates,
        normalized,
        max_rel_dev,
    })
}
