//! The single-image augmentation operator and augmented view sets.
//!
//! One variant is produced in three stages: a sampled shape tweak of the
//! source, forward noising of the tweaked image to the start time matched to
//! `eta`, and a reverse rollout whose denoiser is conditioned on the untouched
//! source image.

use std::path::{Path, PathBuf};

use rand::Rng as _;

use crate::conditioning::{tempered_log_prior, ConditioningConfig, DEFAULT_LAMBDA_IMG};
use crate::diffusion::{
    eta_to_start_time, forward_noise, mixture_eps_predictor, reverse_rollout, NoiseLevel,
    SigmaPolicy, VarianceSchedule,
};
use crate::error::{invalid, Error, Result};
use crate::geometry::{apply_tweak, sample_tweak, ShapeTweakParams, ShapeTweakRanges};
use crate::image::RasterImage;
use crate::rng::{self, tag, Rng};
use crate::world::GmmWorld;

/// Default noise level.
pub const DEFAULT_ETA: f64 = 0.7;

/// Hyperparameters of the augmentation operator.
#[derive(Clone, Debug, PartialEq)]
pub struct AugConfig {
    pub ranges: ShapeTweakRanges,
    pub eta: NoiseLevel,
    pub lambda_img: f64,
    pub sigma_policy: SigmaPolicy,
    /// Number of generated variants per image.
    pub variants: usize,
}

impl Default for AugConfig {
    fn default() -> Self {
        Self {
            ranges: ShapeTweakRanges::default(),
            eta: NoiseLevel::new(DEFAULT_ETA).expect("default eta is valid"),
            lambda_img: DEFAULT_LAMBDA_IMG,
            sigma_policy: SigmaPolicy::default(),
            variants: 2,
        }
    }
}

impl AugConfig {
    pub fn validate(&self) -> Result<()> {
        self.ranges.validate()?;
        if !(self.lambda_img >= 0.0 && self.lambda_img.is_finite()) {
            return Err(invalid!(
                "lambda_img must be finite and >= 0, got {}",
                self.lambda_img
            ));
        }
        if let SigmaPolicy::Stochastic { scale } = self.sigma_policy {
            if !(scale >= 0.0 && scale.is_finite()) {
                return Err(invalid!("sigma scale must be finite and >= 0, got {scale}"));
            }
        }
        Ok(())
    }

    fn conditioning(&self, x: &RasterImage) -> ConditioningConfig {
        ConditioningConfig {
            lambda_img: self.lambda_img,
            condition_image: Some(x.clone()),
            text_tokens: None,
        }
    }
}

/// Record of how one variant was made.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VariantLog {
    pub psi: ShapeTweakParams,
    pub t0: usize,
}

/// The source image (view 0) and its generated variants.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedSet {
    pub original: RasterImage,
    pub variants: Vec<RasterImage>,
    pub params_log: Vec<VariantLog>,
}

impl AugmentedSet {
    /// A set holding only the source.
    pub fn single(x: RasterImage) -> Self {
        Self {
            original: x,
            variants: Vec::new(),
            params_log: Vec::new(),
        }
    }

    /// Number of views including the original.
    pub fn view_count(&self) -> usize {
        1 + self.variants.len()
    }

    /// View `k`, where view 0 is the original.
    pub fn view(&self, k: usize) -> &RasterImage {
        if k == 0 {
            &self.original
        } else {
            &self.variants[k - 1]
        }
    }

    pub fn views(&self) -> impl Iterator<Item = &RasterImage> {
        std::iter::once(&self.original).chain(&self.variants)
    }

    /// Writes every view as `view_<k>.pgm` under `dir`.
    pub fn dump_pgm(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.views()
            .enumerate()
            .map(|(k, v)| {
                let path = dir.join(format!("view_{k}.pgm"));
                v.write_pgm(&path)?;
                Ok(path)
            })
            .collect()
    }
}

fn rollout(
    x: &RasterImage,
    log_prior: &[f64],
    cfg: &AugConfig,
    world: &GmmWorld,
    schedule: &VarianceSchedule,
    rng: &mut Rng,
) -> Result<(RasterImage, VariantLog)> {
    let psi = sample_tweak(&cfg.ranges, rng);
    let geom = apply_tweak(x, &psi);
    let t0 = eta_to_start_time(schedule, cfg.eta);
    let (x_t0, _) = forward_noise(schedule, &geom, t0, rng)?;
    let out = reverse_rollout(schedule, x_t0, t0, cfg.sigma_policy, rng, |xt, t| {
        mixture_eps_predictor(schedule, world, log_prior, xt, t)
    })?;
    Ok((out, VariantLog { psi, t0 }))
}

/// Generates one variant of `x`.
pub fn augment_once(
    x: &RasterImage,
    cfg: &AugConfig,
    world: &GmmWorld,
    schedule: &VarianceSchedule,
    rng: &mut Rng,
) -> Result<RasterImage> {
    let log_prior = tempered_log_prior(world, &cfg.conditioning(x));
    rollout(x, &log_prior, cfg, world, schedule, rng).map(|(img, _)| img)
}

/// Generates `cfg.variants` independent variants of `x`.
///
/// Variant `k` draws from its own stream under `seed`, so the first `k`
/// variants do not depend on how many are requested.
pub fn augment_set(
    x: &RasterImage,
    cfg: &AugConfig,
    world: &GmmWorld,
    schedule: &VarianceSchedule,
    seed: u64,
) -> Result<AugmentedSet> {
    cfg.validate()?;
    let log_prior = tempered_log_prior(world, &cfg.conditioning(x));
    let mut variants = Vec::with_capacity(cfg.variants);
    let mut params_log = Vec::with_capacity(cfg.variants);
    for k in 0..cfg.variants {
        let mut rng = rng::stream(seed, &[tag::VARIANT, k as u64]);
        let (img, log) = rollout(x, &log_prior, cfg, world, schedule, &mut rng)?;
        variants.push(img);
        params_log.push(log);
    }
    Ok(AugmentedSet {
        original: x.clone(),
        variants,
        params_log,
    })
}

/// Classic augmentation: a shape tweak followed by contrast and brightness jitter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraditionalConfig {
    pub ranges: ShapeTweakRanges,
    /// Contrast factors are drawn from `[1 - contrast_max, 1 + contrast_max]`.
    pub contrast_max: f64,
    /// Additive brightness offsets are drawn from `[-brightness_max, brightness_max]`.
    pub brightness_max: f64,
}

impl Default for TraditionalConfig {
    fn default() -> Self {
        Self {
            ranges: ShapeTweakRanges::default(),
            contrast_max: 0.2,
            brightness_max: 0.1,
        }
    }
}

/// Scales contrast about the image mean and adds a brightness offset.
pub fn photometric_jitter(x: &RasterImage, contrast: f64, brightness: f64) -> RasterImage {
    let mean = x.mean();
    let pixels = x
        .pixels()
        .iter()
        .map(|v| contrast * (v - mean) + mean + brightness)
        .collect();
    RasterImage::from_parts_unchecked(x.width(), x.height(), pixels)
}

/// One classic augmented view.
pub fn traditional_view(x: &RasterImage, cfg: &TraditionalConfig, rng: &mut Rng) -> RasterImage {
    let psi = sample_tweak(&cfg.ranges, rng);
    let contrast = 1.0 + cfg.contrast_max * (2.0 * rng.random::<f64>() - 1.0);
    let brightness = cfg.brightness_max * (2.0 * rng.random::<f64>() - 1.0);
    photometric_jitter(&apply_tweak(x, &psi), contrast, brightness)
}

/// The source plus `count` classic views, each from its own stream under `seed`.
pub fn traditional_set(
    x: &RasterImage,
    cfg: &TraditionalConfig,
    count: usize,
    seed: u64,
) -> AugmentedSet {
    let variants = (0..count)
        .map(|k| {
            traditional_view(
                x,
                cfg,
                &mut rng::stream(seed, &[tag::TRADITIONAL, k as u64]),
            )
        })
        .collect();
    AugmentedSet {
        original: x.clone(),
        variants,
        params_log: Vec::new(),
    }
}

/// Mean over pairs of the per-pixel mean squared distance; `None` below two images.
pub fn mean_pairwise_distance(images: &[RasterImage]) -> Option<f64> {
    if images.len() < 2 {
        return None;
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..images.len() {
        for b in a + 1..images.len() {
            total += images[a].dist_sq(&images[b]) / images[a].len() as f64;
            pairs += 1;
        }
    }
    Some(total / pairs as f64)
}

/// Where faithfulness trials take their source images from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaithSource {
    /// The clean class template.
    Template,
    /// A fresh draw from the class distribution.
    Sample,
}

/// Fraction of generated variants whose nearest template is the source class.
///
/// Trial `i` uses class `i mod class_count` and its own stream under `seed`.
pub fn faithfulness(
    world: &GmmWorld,
    schedule: &VarianceSchedule,
    cfg: &AugConfig,
    source: FaithSource,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    cfg.validate()?;
    use rayon::prelude::*;
    let hits: Vec<bool> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let class = i % world.class_count();
            let mut rng = rng::stream(seed, &[tag::FAITHFULNESS, i as u64]);
            let x = match source {
                FaithSource::Template => world.template(class).clone(),
                FaithSource::Sample => world.sample(class, &mut rng),
            };
            let y = augment_once(&x, cfg, world, schedule, &mut rng)?;
            Ok(world.nearest_template(&y) == class)
        })
        .collect::<Result<_>>()?;
    Ok(hits.iter().filter(|h| **h).count() as f64 / trials.max(1) as f64)
}
