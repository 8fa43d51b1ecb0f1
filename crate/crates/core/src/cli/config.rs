//! Flat `key=value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default; unknown keys are rejected.

use std::path::{Path, PathBuf};

use crate::augment::{AugConfig, TraditionalConfig};
use crate::diffusion::{
    NoiseLevel, SigmaPolicy, VarianceSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_STEPS,
};
use crate::error::{Error, Result};
use crate::fsl::{AugMode, BenchmarkConfig, Encoder, EpisodeSpec, Metric, DEFAULT_ORIGINAL_WEIGHT};
use crate::geometry::ShapeTweakRanges;
use crate::image::RasterImage;
use crate::rng::{derive_seed, tag};
use crate::world::{default_glyphs, GmmWorld, DEFAULT_WITHIN_CLASS_STD};

/// Environment variable overriding the configured master seed.
pub const SEED_ENV: &str = "ONESHOT_DAUG_SEED";

/// Where class templates come from.
#[derive(Clone, Debug, PartialEq)]
pub enum TemplateSource {
    Glyphs,
    /// Every `*.pgm` file of a directory, in file-name order.
    Directory(PathBuf),
}

/// Encoder selector; the random-linear weights are seeded from the master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderSpec {
    Identity,
    RandomLinear(usize),
    AvgPool(usize),
}

/// Settings of the theory audits.
#[derive(Clone, Debug, PartialEq)]
pub struct TheoryConfig {
    pub prop1_max_outcomes: usize,
    pub prop1_denominator: u32,
    pub prop1_random_tables: usize,
    /// `(dim, m)` cases.
    pub prop3_cases: Vec<(usize, usize)>,
    pub prop3_trials: usize,
    pub margin_rho: f64,
    pub margin_delta: f64,
    pub margin_m: usize,
    pub margin_trials: usize,
    pub margin_sign_vectors: usize,
    pub margin_grid: usize,
    pub margin_grid_radius: f64,
    /// Calibrated from the world when absent.
    pub margin_beta: Option<f64>,
    pub margin_radius_factor: f64,
    pub margin_rate_sizes: Vec<usize>,
    pub margin_rate_repeats: usize,
    /// No default: the bound comparison fails without it.
    pub bound_c_enc: Option<f64>,
    pub bound_m_base: usize,
    pub bound_m_novel: usize,
    pub bound_m_tr: usize,
    pub bound_m_test: usize,
    pub bound_resamples: usize,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            prop1_max_outcomes: 4,
            prop1_denominator: 12,
            prop1_random_tables: 10_000,
            prop3_cases: vec![(1, 2), (8, 16), (32, 5)],
            prop3_trials: 100_000,
            margin_rho: 1.0,
            margin_delta: 0.1,
            margin_m: 200,
            margin_trials: 500,
            margin_sign_vectors: 1000,
            margin_grid: 64,
            margin_grid_radius: 0.5,
            margin_beta: None,
            margin_radius_factor: 0.5,
            margin_rate_sizes: vec![50, 200, 800],
            margin_rate_repeats: 20,
            bound_c_enc: None,
            bound_m_base: 200,
            bound_m_novel: 25,
            bound_m_tr: 1,
            bound_m_test: 1,
            bound_resamples: 10_000,
        }
    }
}

/// Everything a command needs.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub templates: TemplateSource,
    pub world_std: f64,
    /// Use the first `classes` templates; all when absent.
    pub classes: Option<usize>,
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub aug: AugConfig,
    pub traditional: TraditionalConfig,
    pub spec: EpisodeSpec,
    pub mode: AugMode,
    pub k_sup: usize,
    pub k_qry: usize,
    pub original_weight: f64,
    pub metric: Metric,
    pub encoder: EncoderSpec,
    pub seed: u64,
    pub out: PathBuf,
    pub calibrate_episodes: usize,
    pub calibrate_trials: usize,
    pub theory: TheoryConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            templates: TemplateSource::Glyphs,
            world_std: DEFAULT_WITHIN_CLASS_STD,
            classes: None,
            steps: DEFAULT_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            aug: AugConfig::default(),
            traditional: TraditionalConfig::default(),
            spec: EpisodeSpec::default(),
            mode: AugMode::OneShotDaug,
            k_sup: 2,
            k_qry: 2,
            original_weight: DEFAULT_ORIGINAL_WEIGHT,
            metric: Metric::Euclidean,
            encoder: EncoderSpec::Identity,
            seed: 0,
            out: PathBuf::from("out"),
            calibrate_episodes: 300,
            calibrate_trials: 400,
            theory: TheoryConfig::default(),
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse {key}={value}")))
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let items = value
        .split(',')
        .map(|v| num(key, v.trim()))
        .collect::<Result<Vec<T>>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("{key} needs at least one value")));
    }
    Ok(items)
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key} expects a boolean, got {value}"
        ))),
    }
}

impl RunConfig {
    /// Parses config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            cfg.set(key.trim(), value.trim()).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", n + 1)),
                other => other,
            })?;
        }
        Ok(cfg)
    }

    /// Reads and parses a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let t = &mut self.theory;
        let r = &mut self.aug.ranges;
        match key {
            "world.templates" => {
                self.templates = if v == "glyphs" {
                    TemplateSource::Glyphs
                } else {
                    TemplateSource::Directory(PathBuf::from(v))
                }
            }
            "world.std" => self.world_std = num(key, v)?,
            "world.classes" => self.classes = Some(num(key, v)?),
            "schedule.steps" => self.steps = num(key, v)?,
            "schedule.beta_start" => self.beta_start = num(key, v)?,
            "schedule.beta_end" => self.beta_end = num(key, v)?,
            "aug.eta" => {
                self.aug.eta =
                    NoiseLevel::new(num(key, v)?).map_err(|e| Error::Config(e.to_string()))?
            }
            "aug.lambda_img" => self.aug.lambda_img = num(key, v)?,
            "aug.sigma" => {
                self.aug.sigma_policy = match v {
                    "deterministic" => SigmaPolicy::Deterministic,
                    "stochastic" => SigmaPolicy::Stochastic {
                        scale: match self.aug.sigma_policy {
                            SigmaPolicy::Stochastic { scale } => scale,
                            SigmaPolicy::Deterministic => 1.0,
                        },
                    },
                    _ => {
                        return Err(Error::Config(format!(
                            "aug.sigma must be stochastic or deterministic, got {v}"
                        )))
                    }
                }
            }
            "aug.sigma_scale" => {
                self.aug.sigma_policy = SigmaPolicy::Stochastic {
                    scale: num(key, v)?,
                }
            }
            "aug.variants" => self.aug.variants = num(key, v)?,
            "aug.shape_tweak" => {
                if !boolean(key, v)? {
                    *r = ShapeTweakRanges::none();
                }
            }
            "aug.rotate_max" => r.rotate_max = num(key, v)?,
            "aug.stretch_max" => r.stretch_max = num(key, v)?,
            "aug.translate_max" => r.translate_max = num(key, v)?,
            "aug.persp_max" => r.persp_max = num(key, v)?,
            "aug.hflip_prob" => r.hflip_prob = num(key, v)?,
            "traditional.contrast_max" => self.traditional.contrast_max = num(key, v)?,
            "traditional.brightness_max" => self.traditional.brightness_max = num(key, v)?,
            "episode.way" => self.spec.way = num(key, v)?,
            "episode.shot" => self.spec.shot = num(key, v)?,
            "episode.queries" => self.spec.queries = num(key, v)?,
            "episode.episodes" => self.spec.episodes = num(key, v)?,
            "mode" => self.mode = AugMode::parse(v).map_err(|e| Error::Config(e.to_string()))?,
            "k_sup" => self.k_sup = num(key, v)?,
            "k_qry" => self.k_qry = num(key, v)?,
            "original_weight" => self.original_weight = num(key, v)?,
            "metric" => self.metric = Metric::parse(v).map_err(|e| Error::Config(e.to_string()))?,
            "encoder" => self.encoder = parse_encoder(v)?,
            "seed" => self.seed = num(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "calibrate.episodes" => self.calibrate_episodes = num(key, v)?,
            "calibrate.trials" => self.calibrate_trials = num(key, v)?,
            "prop1.max_outcomes" => t.prop1_max_outcomes = num(key, v)?,
            "prop1.denominator" => t.prop1_denominator = num(key, v)?,
            "prop1.random_tables" => t.prop1_random_tables = num(key, v)?,
            "prop3.cases" => {
                t.prop3_cases = v
                    .split(',')
                    .map(|c| {
                        let (d, m) = c.trim().split_once(':').ok_or_else(|| {
                            Error::Config(format!("prop3.cases entries are dim:m, got {c}"))
                        })?;
                        Ok((num(key, d)?, num(key, m)?))
                    })
                    .collect::<Result<_>>()?
            }
            "prop3.trials" => t.prop3_trials = num(key, v)?,
            "margin.rho" => t.margin_rho = num(key, v)?,
            "margin.delta" => t.margin_delta = num(key, v)?,
            "margin.m" => t.margin_m = num(key, v)?,
            "margin.trials" => t.margin_trials = num(key, v)?,
            "margin.sign_vectors" => t.margin_sign_vectors = num(key, v)?,
            "margin.grid" => t.margin_grid = num(key, v)?,
            "margin.grid_radius" => t.margin_grid_radius = num(key, v)?,
            "margin.beta" => t.margin_beta = Some(num(key, v)?),
            "margin.radius_factor" => t.margin_radius_factor = num(key, v)?,
            "margin.rate_sizes" => t.margin_rate_sizes = list(key, v)?,
            "margin.rate_repeats" => t.margin_rate_repeats = num(key, v)?,
            "bound.c_enc" => t.bound_c_enc = Some(num(key, v)?),
            "bound.m_base" => t.bound_m_base = num(key, v)?,
            "bound.m_novel" => t.bound_m_novel = num(key, v)?,
            "bound.m_tr" => t.bound_m_tr = num(key, v)?,
            "bound.m_test" => t.bound_m_test = num(key, v)?,
            "bound.resamples" => t.bound_resamples = num(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    /// Builds the configured world.
    pub fn world(&self) -> Result<GmmWorld> {
        let templates = match &self.templates {
            TemplateSource::Glyphs => default_glyphs(),
            TemplateSource::Directory(dir) => load_templates(dir)?,
        };
        let world = GmmWorld::new(templates, self.world_std)?;
        match self.classes {
            Some(n) => world.truncated(n),
            None => Ok(world),
        }
    }

    pub fn schedule(&self) -> Result<VarianceSchedule> {
        VarianceSchedule::linear(self.steps, self.beta_start, self.beta_end)
    }

    pub fn benchmark(&self, world: &GmmWorld) -> Result<BenchmarkConfig> {
        let encoder = match self.encoder {
            EncoderSpec::Identity => Encoder::Identity,
            EncoderSpec::RandomLinear(dim) => Encoder::random_linear(
                world.pixel_count(),
                dim,
                derive_seed(self.seed, &[tag::ENCODER]),
            )?,
            EncoderSpec::AvgPool(f) => Encoder::avg_pool(f, world.width(), world.height())?,
        };
        Ok(BenchmarkConfig {
            spec: self.spec,
            mode: self.mode,
            k_sup: self.k_sup,
            k_qry: self.k_qry,
            original_weight: self.original_weight,
            metric: self.metric,
            encoder,
            aug: self.aug.clone(),
            traditional: self.traditional,
        })
    }
}

fn parse_encoder(v: &str) -> Result<EncoderSpec> {
    let (name, arg) = v.split_once(':').unwrap_or((v, ""));
    match name {
        "identity" if arg.is_empty() => Ok(EncoderSpec::Identity),
        "random-linear" => Ok(EncoderSpec::RandomLinear(num("encoder", arg)?)),
        "avg-pool" => Ok(EncoderSpec::AvgPool(num("encoder", arg)?)),
        _ => Err(Error::Config(format!(
            "encoder must be identity, random-linear:DIM or avg-pool:FACTOR, got {v}"
        ))),
    }
}

fn load_templates(dir: &Path) -> Result<Vec<RasterImage>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Config(format!(
            "no .pgm templates in {}",
            dir.display()
        )));
    }
    paths.iter().map(|p| RasterImage::read_pgm(p)).collect()
}

/// Sweep axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    Eta,
    LambdaImg,
    KaSup,
    KaQry,
    Mode,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Eta => "eta",
            SweepAxis::LambdaImg => "lambda_img",
            SweepAxis::KaSup => "K_a_sup",
            SweepAxis::KaQry => "K_a_qry",
            SweepAxis::Mode => "mode",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [
            Self::Eta,
            Self::LambdaImg,
            Self::KaSup,
            Self::KaQry,
            Self::Mode,
        ]
        .into_iter()
        .find(|a| a.name() == s)
        .ok_or_else(|| {
            Error::Config(format!(
                "unknown sweep axis {s}; expected eta, lambda_img, K_a_sup, K_a_qry or mode"
            ))
        })
    }
}

/// One sweep axis with its values, written `axis=v1,v2,...`.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<String>,
}

impl SweepSpec {
    pub fn parse(s: &str) -> Result<Self> {
        let (axis, values) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("sweep spec must be axis=v1,v2,..., got {s}")))?;
        let axis = SweepAxis::parse(axis.trim())?;
        let values: Vec<String> = values
            .split(',')
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .collect();
        if values.is_empty() {
            return Err(Error::Config(format!(
                "sweep axis {} has no values",
                axis.name()
            )));
        }
        let probe = RunConfig::default();
        for v in &values {
            let mut c = probe.clone();
            match axis {
                SweepAxis::Eta => c.set("aug.eta", v)?,
                SweepAxis::LambdaImg => c.set("aug.lambda_img", v)?,
                SweepAxis::KaSup => c.set("k_sup", v)?,
                SweepAxis::KaQry => c.set("k_qry", v)?,
                SweepAxis::Mode => c.set("mode", v)?,
            }
        }
        Ok(Self { axis, values })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_empty_text() {
        assert_eq!(
            RunConfig::parse("# nothing\n\n").unwrap(),
            RunConfig::default()
        );
    }

    #[test]
    fn parses_known_keys() {
        let c = RunConfig::parse(
            "world.std=0\nmode=none\nepisode.episodes = 10\nencoder=avg-pool:2\nprop3.cases=1:2, 4:3\nmargin.rate_sizes=5,10\naug.shape_tweak=false\n",
        )
        .unwrap();
        assert_eq!(c.world_std, 0.0);
        assert_eq!(c.mode, AugMode::None);
        assert_eq!(c.spec.episodes, 10);
        assert_eq!(c.encoder, EncoderSpec::AvgPool(2));
        assert_eq!(c.theory.prop3_cases, vec![(1, 2), (4, 3)]);
        assert_eq!(c.theory.margin_rate_sizes, vec![5, 10]);
        assert_eq!(c.aug.ranges, ShapeTweakRanges::none());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(
            matches!(RunConfig::parse("colour=blue"), Err(Error::Config(m)) if m.contains("colour"))
        );
        assert!(RunConfig::parse("aug.eta=1.5").is_err());
        assert!(RunConfig::parse("k_sup=two").is_err());
        assert!(RunConfig::parse("no equals sign").is_err());
    }

    #[test]
    fn missing_file_names_the_path() {
        let e = RunConfig::load(Path::new("/no/such/run.cfg")).unwrap_err();
        assert!(e.to_string().contains("/no/such/run.cfg"));
    }

    #[test]
    fn sweep_specs() {
        let s = SweepSpec::parse("eta=0.2,0.7,1.0").unwrap();
        assert_eq!(s.axis, SweepAxis::Eta);
        assert_eq!(s.values.len(), 3);
        assert!(SweepSpec::parse("eta=").is_err());
        assert!(SweepSpec::parse("gamma=1").is_err());
        assert!(SweepSpec::parse("mode=none,bogus").is_err());
    }
}
