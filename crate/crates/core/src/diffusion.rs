//! Variance-preserving diffusion: schedule, forward kernel and reverse update.
//!
//! Time steps are 1-based, `t` in `1..=T`. The forward kernel is
//! `x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps` and the reverse update is
//! `x_{t-1} = alpha_t^{-1/2} (x_t - beta_t / sqrt(1 - abar_t) eps_hat) + sigma_t z`.
//! Noise predictors here are exact for point-mass and Gaussian-mixture data.

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::image::RasterImage;
use crate::rng::Rng;
use crate::world::{GmmWorld, VARIANCE_FLOOR};

/// The `(beta_t, alpha_t, abar_t)` tables of a VP process.
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

/// Default number of diffusion steps.
pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

impl VarianceSchedule {
    /// Linear `beta` from `beta_start` to `beta_end` inclusive over `steps` steps.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(invalid!("schedule needs at least one step"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(invalid!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            ));
        }
        let beta = if steps == 1 {
            vec![beta_start]
        } else {
            let span = (steps - 1) as f64;
            (0..steps)
                .map(|i| beta_start + (beta_end - beta_start) * i as f64 / span)
                .collect()
        };
        Self::from_betas(beta)
    }

    /// Schedule from explicit `beta` values, each in `(0, 1)`.
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(invalid!("schedule needs at least one step"));
        }
        if let Some(b) = beta.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(invalid!("beta value {b} outside (0, 1)"));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            beta,
            alpha,
            alpha_bar,
        })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(invalid!("step {t} outside 1..={}", self.steps()));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// Cumulative signal retention; `alpha_bar(0)` is 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Posterior variance `(1 - abar_{t-1}) / (1 - abar_t) beta_t`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t)) * self.beta(t)
    }
}

impl Default for VarianceSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule is valid")
    }
}

/// Builds the linear-beta schedule.
pub fn build_linear_schedule(
    steps: usize,
    beta_start: f64,
    beta_end: f64,
) -> Result<VarianceSchedule> {
    VarianceSchedule::linear(steps, beta_start, beta_end)
}

/// User-facing noise level in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct NoiseLevel(f64);

impl NoiseLevel {
    pub fn new(eta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(invalid!("noise level {eta} outside [0, 1]"));
        }
        Ok(Self(eta))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Start time whose cumulative noise `1 - abar_t` is closest to `eta^2`.
///
/// Ties go to the smaller step.
pub fn eta_to_start_time(s: &VarianceSchedule, eta: NoiseLevel) -> usize {
    let target = eta.0 * eta.0;
    let mut best = (1, f64::INFINITY);
    for (i, ab) in s.alpha_bar.iter().enumerate() {
        let gap = ((1.0 - ab) - target).abs();
        if gap < best.1 {
            best = (i + 1, gap);
        }
    }
    best.0
}

/// Predicted noise for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisePrediction {
    pub epsilon_hat: Vec<f64>,
}

/// `sqrt(abar_t) x0 + sqrt(1 - abar_t) eps` for a given `eps`.
pub fn forward_with_noise(
    s: &VarianceSchedule,
    x0: &RasterImage,
    t: usize,
    eps: &[f64],
) -> Result<RasterImage> {
    s.check_step(t)?;
    if eps.len() != x0.len() {
        return Err(Error::DimensionMismatch(format!(
            "noise has {} entries, image has {}",
            eps.len(),
            x0.len()
        )));
    }
    let ab = s.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let pixels = x0
        .pixels()
        .iter()
        .zip(eps)
        .map(|(x, e)| a * x + b * e)
        .collect();
    Ok(RasterImage::from_parts_unchecked(
        x0.width(),
        x0.height(),
        pixels,
    ))
}

/// Draws `x_t` from the forward kernel; returns it with the noise used.
pub fn forward_noise(
    s: &VarianceSchedule,
    x0: &RasterImage,
    t: usize,
    rng: &mut Rng,
) -> Result<(RasterImage, Vec<f64>)> {
    let eps: Vec<f64> = (0..x0.len()).map(|_| rng.sample(StandardNormal)).collect();
    let xt = forward_with_noise(s, x0, t, &eps)?;
    Ok((xt, eps))
}

/// One reverse update from step `t` to `t - 1`.
///
/// With `sigma_t = 0` no randomness is drawn from `rng`.
pub fn reverse_step(
    s: &VarianceSchedule,
    x_t: &RasterImage,
    t: usize,
    eps_hat: &NoisePrediction,
    sigma_t: f64,
    rng: &mut Rng,
) -> Result<RasterImage> {
    s.check_step(t)?;
    if !(sigma_t >= 0.0 && sigma_t.is_finite()) {
        return Err(invalid!("sigma_t must be finite and >= 0, got {sigma_t}"));
    }
    if eps_hat.epsilon_hat.len() != x_t.len() {
        return Err(Error::DimensionMismatch(format!(
            "prediction has {} entries, image has {}",
            eps_hat.epsilon_hat.len(),
            x_t.len()
        )));
    }
    let inv_sqrt_alpha = 1.0 / s.alpha(t).sqrt();
    let noise_var = 1.0 - s.alpha_bar(t);
    // no accumulated noise means nothing to remove
    let coef = if noise_var > 0.0 {
        s.beta(t) / noise_var.sqrt()
    } else {
        0.0
    };
    let mut pixels: Vec<f64> = x_t
        .pixels()
        .iter()
        .zip(&eps_hat.epsilon_hat)
        .map(|(x, e)| inv_sqrt_alpha * (x - coef * e))
        .collect();
    if sigma_t > 0.0 {
        for p in pixels.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *p += sigma_t * z;
        }
    }
    Ok(RasterImage::from_parts_unchecked(
        x_t.width(),
        x_t.height(),
        pixels,
    ))
}

/// Exact noise when the clean image is known to be `x0`.
pub fn pointmass_eps_predictor(
    s: &VarianceSchedule,
    x_t: &RasterImage,
    t: usize,
    x0: &RasterImage,
) -> Result<NoisePrediction> {
    s.check_step(t)?;
    if !x_t.same_shape(x0) {
        return Err(Error::DimensionMismatch(
            "x_t and x0 differ in shape".into(),
        ));
    }
    let ab = s.alpha_bar(t);
    if 1.0 - ab < VARIANCE_FLOOR {
        return Err(Error::Precondition(format!(
            "cumulative noise 1 - abar_{t} = {} is below {VARIANCE_FLOOR}",
            1.0 - ab
        )));
    }
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let epsilon_hat = x_t
        .pixels()
        .iter()
        .zip(x0.pixels())
        .map(|(x, m)| (x - a * m) / b)
        .collect();
    Ok(NoisePrediction { epsilon_hat })
}

/// Exact noise predictor of the world's mixture, unconditional prior.
pub fn gmm_eps_predictor(
    s: &VarianceSchedule,
    world: &GmmWorld,
    x_t: &RasterImage,
    t: usize,
) -> Result<NoisePrediction> {
    let uniform = vec![-(world.class_count() as f64).ln(); world.class_count()];
    mixture_eps_predictor(s, world, &uniform, x_t, t)
}

/// Exact noise predictor of the world's mixture under log prior weights `log_prior`.
///
/// At step `t` component `k` is `N(sqrt(abar) mu_k, v I)` with
/// `v = abar s^2 + 1 - abar`, so `eps_hat = sqrt(1 - abar) / v (x_t - sqrt(abar) sum_k r_k mu_k)`
/// with responsibilities `r_k` from a log-space softmax.
pub fn mixture_eps_predictor(
    s: &VarianceSchedule,
    world: &GmmWorld,
    log_prior: &[f64],
    x_t: &RasterImage,
    t: usize,
) -> Result<NoisePrediction> {
    s.check_step(t)?;
    if log_prior.len() != world.class_count() {
        return Err(Error::DimensionMismatch(format!(
            "{} prior weights for {} classes",
            log_prior.len(),
            world.class_count()
        )));
    }
    if x_t.len() != world.pixel_count() {
        return Err(Error::DimensionMismatch(format!(
            "image has {} pixels, world has {}",
            x_t.len(),
            world.pixel_count()
        )));
    }
    let ab = s.alpha_bar(t);
    let root_ab = ab.sqrt();
    let var = (ab * world.std() * world.std() + (1.0 - ab)).max(VARIANCE_FLOOR);
    let xx = x_t.norm_sq();
    let logits: Vec<f64> = world
        .templates()
        .iter()
        .zip(world.template_norms_sq())
        .zip(log_prior)
        .map(|((mu, nn), lp)| {
            let d = (xx - 2.0 * root_ab * x_t.dot(mu) + ab * nn).max(0.0);
            lp - d / (2.0 * var)
        })
        .collect();
    let resp = softmax(&logits);
    let mut mean = vec![0.0; x_t.len()];
    for (r, mu) in resp.iter().zip(world.templates()) {
        if *r > 0.0 {
            for (m, v) in mean.iter_mut().zip(mu.pixels()) {
                *m += r * v;
            }
        }
    }
    let scale = (1.0 - ab).sqrt() / var;
    let epsilon_hat = x_t
        .pixels()
        .iter()
        .zip(&mean)
        .map(|(x, m)| scale * (x - root_ab * m))
        .collect();
    Ok(NoisePrediction { epsilon_hat })
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Log-space softmax, `l_k - logsumexp(l)`.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// How much fresh noise each reverse step injects.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SigmaPolicy {
    /// `sigma_t = 0`.
    Deterministic,
    /// `sigma_t = scale * sqrt(posterior_variance(t))`.
    Stochastic { scale: f64 },
}

impl Default for SigmaPolicy {
    fn default() -> Self {
        SigmaPolicy::Stochastic { scale: 1.0 }
    }
}

impl SigmaPolicy {
    pub fn sigma(&self, s: &VarianceSchedule, t: usize) -> f64 {
        match *self {
            SigmaPolicy::Deterministic => 0.0,
            SigmaPolicy::Stochastic { scale } => scale * s.posterior_variance(t).sqrt(),
        }
    }
}

/// Runs reverse steps from `t0` down to 1 with the given predictor.
pub fn reverse_rollout<F>(
    s: &VarianceSchedule,
    x_t0: RasterImage,
    t0: usize,
    policy: SigmaPolicy,
    rng: &mut Rng,
    mut predictor: F,
) -> Result<RasterImage>
where
    F: FnMut(&RasterImage, usize) -> Result<NoisePrediction>,
{
    s.check_step(t0)?;
    let mut x = x_t0;
    for t in (1..=t0).rev() {
        let eps = predictor(&x, t)?;
        x = reverse_step(s, &x, t, &eps, policy.sigma(s, t), rng)?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;

    fn img(px: &[f64]) -> RasterImage {
        RasterImage::new(px.len(), 1, px.to_vec()).unwrap()
    }

    #[test]
    fn tiny_schedules_match_hand_products() {
        let s = VarianceSchedule::linear(1, 0.1, 0.1).unwrap();
        assert!((s.alpha_bar(1) - 0.9).abs() < 1e-15);
        let s = VarianceSchedule::linear(2, 0.1, 0.2).unwrap();
        assert!((s.alpha_bar(1) - 0.9).abs() < 1e-15);
        assert!((s.alpha_bar(2) - 0.72).abs() < 1e-15);
    }

    #[test]
    fn long_schedule_matches_log_space_oracle() {
        let s = VarianceSchedule::default();
        let mut log_sum = 0.0;
        for i in 0..1000 {
            let beta = 1e-4 + (0.02 - 1e-4) * i as f64 / 999.0;
            log_sum += (-beta).ln_1p();
            let oracle = log_sum.exp();
            let got = s.alpha_bar(i + 1);
            assert!((got - oracle).abs() <= 1e-12 * oracle, "t={}", i + 1);
        }
        assert!((s.beta(1) - 1e-4).abs() < 1e-18 && (s.beta(1000) - 0.02).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_endpoints() {
        assert!(VarianceSchedule::linear(0, 0.1, 0.2).is_err());
        assert!(VarianceSchedule::linear(10, 0.2, 0.1).is_err());
        assert!(VarianceSchedule::linear(10, 0.0, 0.1).is_err());
        assert!(VarianceSchedule::linear(10, 0.1, 1.0).is_err());
        assert!(NoiseLevel::new(1.5).is_err());
        assert!(NoiseLevel::new(f64::NAN).is_err());
    }

    #[test]
    fn start_time_endpoints_and_scan_oracle() {
        let s = VarianceSchedule::default();
        assert_eq!(eta_to_start_time(&s, NoiseLevel::new(0.0).unwrap()), 1);
        assert_eq!(eta_to_start_time(&s, NoiseLevel::new(1.0).unwrap()), 1000);
        // brute-force scan written independently: smallest t among exact minimisers
        let target = 0.49;
        let gaps: Vec<f64> = (1..=1000)
            .map(|t| ((1.0 - s.alpha_bar(t)) - target).abs())
            .collect();
        let min = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
        let oracle = 1 + gaps.iter().position(|g| *g == min).unwrap();
        assert_eq!(eta_to_start_time(&s, NoiseLevel::new(0.7).unwrap()), oracle);
        assert_eq!(oracle, 255);
    }

    #[test]
    fn start_time_ties_go_to_smaller_step() {
        // 1 - abar = [0.19, 0.352]; target 0.271 sits exactly between them
        let s = VarianceSchedule::from_betas(vec![0.19, 0.2]).unwrap();
        let mid = ((1.0 - s.alpha_bar(1)) + (1.0 - s.alpha_bar(2))) / 2.0;
        let eta = NoiseLevel::new(mid.sqrt()).unwrap();
        let gaps = [
            ((1.0 - s.alpha_bar(1)) - eta.value() * eta.value()).abs(),
            ((1.0 - s.alpha_bar(2)) - eta.value() * eta.value()).abs(),
        ];
        let expected = if gaps[1] < gaps[0] { 2 } else { 1 };
        assert_eq!(eta_to_start_time(&s, eta), expected);
    }

    #[test]
    fn zero_signal_forward_is_scaled_noise() {
        let s = VarianceSchedule::default();
        let x0 = RasterImage::zeros(4, 4);
        let (xt, eps) = forward_noise(&s, &x0, 300, &mut stream(1, &[])).unwrap();
        let b = (1.0 - s.alpha_bar(300)).sqrt();
        for (x, e) in xt.pixels().iter().zip(&eps) {
            assert_eq!(*x, b * e);
        }
    }

    #[test]
    fn forward_is_identity_in_zero_noise_limit() {
        let s = VarianceSchedule::from_betas(vec![1e-14]).unwrap();
        let x0 = img(&[0.3, -1.0, 2.0]);
        let (xt, _) = forward_noise(&s, &x0, 1, &mut stream(2, &[])).unwrap();
        for (a, b) in xt.pixels().iter().zip(x0.pixels()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn forward_moments_match_kernel() {
        let s = VarianceSchedule::default();
        let x0 = img(&[1.0, -0.5]);
        let n = 100_000;
        let mut rng = stream(3, &[]);
        for &t in &[1usize, 100, 500, 1000] {
            let ab = s.alpha_bar(t);
            let mut sum = [0.0; 2];
            let mut sum_sq = [0.0; 2];
            for _ in 0..n {
                let (xt, _) = forward_noise(&s, &x0, t, &mut rng).unwrap();
                for i in 0..2 {
                    sum[i] += xt.pixels()[i];
                    sum_sq[i] += xt.pixels()[i] * xt.pixels()[i];
                }
            }
            for i in 0..2 {
                let mean = sum[i] / n as f64;
                let var = sum_sq[i] / n as f64 - mean * mean;
                let want_var = 1.0 - ab;
                let se_mean = (want_var / n as f64).sqrt();
                let se_var = want_var * (2.0 / (n - 1) as f64).sqrt();
                assert!(
                    (mean - ab.sqrt() * x0.pixels()[i]).abs() < 3.0 * se_mean,
                    "t={t}"
                );
                assert!((var - want_var).abs() < 3.0 * se_var, "t={t}");
            }
        }
    }

    #[test]
    fn round_trip_with_recorded_noise() {
        let s = VarianceSchedule::default();
        let world = crate::world::GmmWorld::with_std(0.0);
        let x0 = world.template(3).clone();
        let mut rng = stream(4, &[]);
        for &t0 in &[1usize, 255, 1000] {
            let (xt, eps) = forward_noise(&s, &x0, t0, &mut rng).unwrap();
            let first = pointmass_eps_predictor(&s, &xt, t0, &x0).unwrap();
            for (a, b) in first.epsilon_hat.iter().zip(&eps) {
                assert!((a - b).abs() < 1e-9);
            }
            let back = reverse_rollout(&s, xt, t0, SigmaPolicy::Deterministic, &mut rng, |x, t| {
                pointmass_eps_predictor(&s, x, t, &x0)
            })
            .unwrap();
            for (a, b) in back.pixels().iter().zip(x0.pixels()) {
                assert!((a - b).abs() < 1e-6, "t0={t0}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn identity_step_when_nothing_to_remove() {
        let s = VarianceSchedule::from_betas(vec![1e-300]).unwrap();
        let x = img(&[0.5, -2.0]);
        let zero = NoisePrediction {
            epsilon_hat: vec![0.0; 2],
        };
        let out = reverse_step(&s, &x, 1, &zero, 0.0, &mut stream(0, &[])).unwrap();
        assert_eq!(out, x);
        assert!(reverse_step(&s, &x, 2, &zero, 0.0, &mut stream(0, &[])).is_err());
        assert!(reverse_step(&s, &x, 1, &zero, -1.0, &mut stream(0, &[])).is_err());
    }

    #[test]
    fn stochastic_step_is_reproducible() {
        let s = VarianceSchedule::default();
        let x = img(&[0.5, -2.0, 1.0]);
        let e = NoisePrediction {
            epsilon_hat: vec![0.1, 0.2, 0.3],
        };
        let a = reverse_step(&s, &x, 10, &e, 0.3, &mut stream(9, &[])).unwrap();
        let b = reverse_step(&s, &x, 10, &e, 0.3, &mut stream(9, &[])).unwrap();
        assert_eq!(a.to_pgm_bytes(), b.to_pgm_bytes());
        assert_eq!(a, b);
    }

    #[test]
    fn pointmass_inverts_forward_kernel() {
        let s = VarianceSchedule::default();
        let x0 = img(&[0.2, 0.9, -0.4]);
        let (xt, eps) = forward_noise(&s, &x0, 77, &mut stream(5, &[])).unwrap();
        let p = pointmass_eps_predictor(&s, &xt, 77, &x0).unwrap();
        for (a, b) in p.epsilon_hat.iter().zip(&eps) {
            assert!((a - b).abs() < 1e-12);
        }
        let clean = forward_with_noise(&s, &x0, 77, &[0.0; 3]).unwrap();
        let p = pointmass_eps_predictor(&s, &clean, 77, &x0).unwrap();
        assert!(p.epsilon_hat.iter().all(|e| e.abs() < 1e-12));
        let tiny = VarianceSchedule::from_betas(vec![1e-14]).unwrap();
        assert!(pointmass_eps_predictor(&tiny, &x0, 1, &x0).is_err());
    }

    #[test]
    fn single_component_mixture_is_pointmass() {
        let s = VarianceSchedule::default();
        let mu = img(&[0.3, 0.8, -0.2, 1.0]);
        let world = GmmWorld::new(vec![mu.clone()], 0.0).unwrap();
        let mut rng = stream(6, &[]);
        for &t in &[1usize, 50, 600, 1000] {
            let xt = world.sample(0, &mut rng);
            let (xt, _) = forward_noise(&s, &xt, t, &mut rng).unwrap();
            let a = gmm_eps_predictor(&s, &world, &xt, t).unwrap();
            let b = pointmass_eps_predictor(&s, &xt, t, &mu).unwrap();
            for (x, y) in a.epsilon_hat.iter().zip(&b.epsilon_hat) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn symmetric_mixture_predicts_zero_at_origin() {
        let s = VarianceSchedule::default();
        let world = GmmWorld::new(vec![img(&[1.0, -2.0]), img(&[-1.0, 2.0])], 0.4).unwrap();
        let p = gmm_eps_predictor(&s, &world, &img(&[0.0, 0.0]), 200).unwrap();
        assert!(p.epsilon_hat.iter().all(|e| e.abs() < 1e-15));
    }

    /// Direct log-density of the noised mixture, written without the
    /// responsibility shortcut.
    fn log_pt(s: &VarianceSchedule, mus: &[[f64; 2]], std: f64, x: [f64; 2], t: usize) -> f64 {
        let ab = s.alpha_bar(t);
        let v = ab * std * std + 1.0 - ab;
        let terms: Vec<f64> = mus
            .iter()
            .map(|m| {
                let d0 = x[0] - ab.sqrt() * m[0];
                let d1 = x[1] - ab.sqrt() * m[1];
                -(mus.len() as f64).ln()
                    - (2.0 * std::f64::consts::PI * v).ln()
                    - (d0 * d0 + d1 * d1) / (2.0 * v)
            })
            .collect();
        let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        max + terms.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
    }

    #[test]
    fn mixture_score_matches_finite_differences() {
        let s = VarianceSchedule::default();
        let worlds: [(&[[f64; 2]], f64); 3] = [
            (&[[1.0, 0.0], [-0.5, 0.7]], 0.3),
            (&[[2.0, 1.0], [0.0, -1.0], [-1.5, 0.5]], 0.6),
            (&[[0.4, 0.4], [-0.4, -0.4]], 0.05),
        ];
        let mut rng = stream(7, &[]);
        for (mus, std) in worlds {
            let templates = mus.iter().map(|m| img(m)).collect();
            let world = GmmWorld::new(templates, std).unwrap();
            for &t in &[5usize, 100, 400, 900] {
                for _ in 0..5 {
                    let x: [f64; 2] = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
                    let p = gmm_eps_predictor(&s, &world, &img(&x), t).unwrap();
                    let h = 1e-5;
                    for i in 0..2 {
                        let (mut up, mut dn) = (x, x);
                        up[i] += h;
                        dn[i] -= h;
                        let grad =
                            (log_pt(&s, mus, std, up, t) - log_pt(&s, mus, std, dn, t)) / (2.0 * h);
                        let fd = -(1.0 - s.alpha_bar(t)).sqrt() * grad;
                        let got = p.epsilon_hat[i];
                        let rel = (got - fd).abs() / fd.abs().max(1e-3);
                        assert!(rel < 1e-4, "t={t} i={i}: {got} vs {fd}");
                    }
                }
            }
        }
    }

    #[test]
    fn deterministic_policy_has_zero_sigma_and_last_step_is_clean() {
        let s = VarianceSchedule::default();
        assert_eq!(SigmaPolicy::Deterministic.sigma(&s, 500), 0.0);
        assert_eq!(SigmaPolicy::default().sigma(&s, 1), 0.0);
        let v = s.posterior_variance(500);
        assert!(v > 0.0 && v < s.beta(500));
    }

    proptest! {
        #[test]
        fn start_time_is_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let s = VarianceSchedule::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let tl = eta_to_start_time(&s, NoiseLevel::new(lo).unwrap());
            let th = eta_to_start_time(&s, NoiseLevel::new(hi).unwrap());
            prop_assert!(tl <= th);
        }

        #[test]
        fn alpha_bar_strictly_decreasing(steps in 1usize..300, b0 in 1e-5f64..0.05, span in 0.0f64..0.3) {
            let s = VarianceSchedule::linear(steps, b0, (b0 + span).min(0.999)).unwrap();
            let ab = s.alpha_bars();
            prop_assert!(ab.iter().all(|v| *v > 0.0 && *v < 1.0));
            prop_assert!(ab.windows(2).all(|w| w[1] < w[0]));
        }

        #[test]
        fn pointmass_reconstructs_any_state(px in proptest::collection::vec(-3.0f64..3.0, 4), t in 1usize..=1000) {
            let s = VarianceSchedule::default();
            let x0 = img(&[0.1, 0.5, -0.3, 0.9]);
            let xt = img(&px);
            let p = pointmass_eps_predictor(&s, &xt, t, &x0).unwrap();
            let back = forward_with_noise(&s, &x0, t, &p.epsilon_hat).unwrap();
            for (a, b) in back.pixels().iter().zip(xt.pixels()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
