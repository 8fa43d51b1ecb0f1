//! Few-shot episodes, prototype classification and the episodic benchmark.
//!
//! Supports and queries are expanded into views (the original plus generated
//! variants). Support views are averaged in feature space into one embedding
//! per image and prototypes are per-class means of those embeddings. Query
//! views are scored against every prototype and the per-view logits are
//! averaged before the argmax.

use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::augment::{
    augment_set, mean_pairwise_distance, traditional_set, AugConfig, AugmentedSet,
    TraditionalConfig,
};
use crate::diffusion::VarianceSchedule;
use crate::error::{invalid, Error, Result};
use crate::image::RasterImage;
use crate::rng::{self, tag, Rng};
use crate::world::GmmWorld;

/// One N-way K-shot task. Labels are episode-local, `0..way`.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub way: usize,
    pub shot: usize,
    pub queries_per_class: usize,
    /// World class behind each episode label.
    pub classes: Vec<usize>,
    pub supports: Vec<(RasterImage, usize)>,
    pub queries: Vec<(RasterImage, usize)>,
}

/// Samples `way` distinct classes, then `shot` supports and `queries` queries per class.
pub fn sample_episode(
    world: &GmmWorld,
    way: usize,
    shot: usize,
    queries: usize,
    rng: &mut Rng,
) -> Result<Episode> {
    if way == 0 || way > world.class_count() {
        return Err(invalid!(
            "way {way} outside 1..={} classes",
            world.class_count()
        ));
    }
    let classes: Vec<usize> = sample_indices(rng, world.class_count(), way).into_vec();
    let mut supports = Vec::with_capacity(way * shot);
    for (label, &c) in classes.iter().enumerate() {
        for _ in 0..shot {
            supports.push((world.sample(c, rng), label));
        }
    }
    let mut qs = Vec::with_capacity(way * queries);
    for (label, &c) in classes.iter().enumerate() {
        for _ in 0..queries {
            qs.push((world.sample(c, rng), label));
        }
    }
    Ok(Episode {
        way,
        shot,
        queries_per_class: queries,
        classes,
        supports,
        queries: qs,
    })
}

/// Frozen feature map applied to every view.
#[derive(Clone, Debug, PartialEq)]
pub enum Encoder {
    Identity,
    /// Dense map with i.i.d. `N(0, 1 / in_dim)` weights drawn from `seed`.
    RandomLinear {
        in_dim: usize,
        out_dim: usize,
        seed: u64,
        weights: Vec<f64>,
    },
    /// Mean over non-overlapping `factor` x `factor` blocks.
    AvgPool {
        factor: usize,
        width: usize,
        height: usize,
    },
}

impl Encoder {
    pub fn random_linear(in_dim: usize, out_dim: usize, seed: u64) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(invalid!("random linear encoder needs positive dimensions"));
        }
        let mut rng = rng::stream(seed, &[tag::ENCODER]);
        let scale = 1.0 / (in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Ok(Encoder::RandomLinear {
            in_dim,
            out_dim,
            seed,
            weights,
        })
    }

    pub fn avg_pool(factor: usize, width: usize, height: usize) -> Result<Self> {
        if factor == 0 || !width.is_multiple_of(factor) || !height.is_multiple_of(factor) {
            return Err(invalid!(
                "pool factor {factor} must divide the {width}x{height} image"
            ));
        }
        Ok(Encoder::AvgPool {
            factor,
            width,
            height,
        })
    }

    /// Maps an image to its feature vector.
    pub fn encode(&self, x: &RasterImage) -> Vec<f64> {
        match self {
            Encoder::Identity => x.pixels().to_vec(),
            Encoder::RandomLinear {
                in_dim,
                out_dim,
                weights,
                ..
            } => {
                assert_eq!(x.len(), *in_dim, "encoder input size");
                (0..*out_dim)
                    .map(|o| {
                        weights[o * in_dim..(o + 1) * in_dim]
                            .iter()
                            .zip(x.pixels())
                            .map(|(w, v)| w * v)
                            .sum()
                    })
                    .collect()
            }
            Encoder::AvgPool {
                factor,
                width,
                height,
            } => {
                assert!(
                    x.width() == *width && x.height() == *height,
                    "encoder input size"
                );
                let f = *factor;
                let mut out = Vec::with_capacity((width / f) * (height / f));
                for by in 0..height / f {
                    for bx in 0..width / f {
                        let mut s = 0.0;
                        for y in by * f..(by + 1) * f {
                            for xx in bx * f..(bx + 1) * f {
                                s += x.get(xx, y);
                            }
                        }
                        out.push(s / (f * f) as f64);
                    }
                }
                out
            }
        }
    }

    /// Operator norm, which is the Lipschitz constant of these linear maps.
    pub fn lipschitz(&self) -> f64 {
        match self {
            Encoder::Identity => 1.0,
            Encoder::AvgPool { factor, .. } => 1.0 / *factor as f64,
            Encoder::RandomLinear {
                in_dim,
                out_dim,
                weights,
                ..
            } => {
                // power iteration on W^T W
                let mut v = vec![1.0 / (*in_dim as f64).sqrt(); *in_dim];
                let mut norm = 0.0;
                for _ in 0..500 {
                    let wv: Vec<f64> = (0..*out_dim)
                        .map(|o| {
                            weights[o * in_dim..(o + 1) * in_dim]
                                .iter()
                                .zip(&v)
                                .map(|(a, b)| a * b)
                                .sum()
                        })
                        .collect();
                    let mut next = vec![0.0; *in_dim];
                    for (o, s) in wv.iter().enumerate() {
                        for (n, w) in next.iter_mut().zip(&weights[o * in_dim..(o + 1) * in_dim]) {
                            *n += w * s;
                        }
                    }
                    let len = next.iter().map(|a| a * a).sum::<f64>().sqrt();
                    if len == 0.0 {
                        return 0.0;
                    }
                    norm = len.sqrt();
                    v = next.into_iter().map(|a| a / len).collect();
                }
                norm
            }
        }
    }
}

/// Convex view weights: `original_weight` on view 0 and the rest split evenly.
pub fn convex_weights(extra_views: usize, original_weight: f64) -> Vec<f64> {
    if extra_views == 0 {
        return vec![1.0];
    }
    let rest = (1.0 - original_weight) / extra_views as f64;
    std::iter::once(original_weight)
        .chain(std::iter::repeat_n(rest, extra_views))
        .collect()
}

/// Support-side and query-side view weights.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregationWeights {
    pub support: Vec<f64>,
    pub query: Vec<f64>,
}

/// Default weight of the original view.
pub const DEFAULT_ORIGINAL_WEIGHT: f64 = 0.5;

impl AggregationWeights {
    pub fn new(support: Vec<f64>, query: Vec<f64>) -> Result<Self> {
        check_convex(&support)?;
        check_convex(&query)?;
        Ok(Self { support, query })
    }

    /// Weights for `k_sup` and `k_qry` generated views per image.
    pub fn with_original_weight(k_sup: usize, k_qry: usize, original_weight: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&original_weight) {
            return Err(invalid!("original weight {original_weight} outside [0, 1]"));
        }
        Self::new(
            convex_weights(k_sup, original_weight),
            convex_weights(k_qry, original_weight),
        )
    }
}

fn check_convex(w: &[f64]) -> Result<()> {
    if w.is_empty() || w.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
        return Err(invalid!(
            "weights must be a non-empty vector of non-negative reals"
        ));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(invalid!("weights sum to {total}, not 1"));
    }
    Ok(())
}

/// Convex combination of feature vectors.
pub fn aggregate_features(features: &[Vec<f64>], weights: &[f64]) -> Result<Vec<f64>> {
    if features.len() != weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} views but {} weights",
            features.len(),
            weights.len()
        )));
    }
    let dim = features.first().map_or(0, Vec::len);
    let mut out = vec![0.0; dim];
    for (f, a) in features.iter().zip(weights) {
        for (o, v) in out.iter_mut().zip(f) {
            *o += a * v;
        }
    }
    Ok(out)
}

/// Aggregated support embedding `sum_k alpha_k Phi(view_k)`.
pub fn aggregate_support(views: &AugmentedSet, enc: &Encoder, weights: &[f64]) -> Result<Vec<f64>> {
    let features: Vec<Vec<f64>> = views.views().map(|v| enc.encode(v)).collect();
    aggregate_features(&features, weights)
}

/// Per-class mean of the aggregated support embeddings, in label order.
pub fn prototypes(episode: &Episode, support_features: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if support_features.len() != episode.supports.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} support features for {} supports",
            support_features.len(),
            episode.supports.len()
        )));
    }
    let dim = support_features.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; dim]; episode.way];
    let mut counts = vec![0usize; episode.way];
    for ((_, label), f) in episode.supports.iter().zip(support_features) {
        for (s, v) in sums[*label].iter_mut().zip(f) {
            *s += v;
        }
        counts[*label] += 1;
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, n)| s.into_iter().map(|v| v / n.max(1) as f64).collect())
        .collect())
}

/// Score between a query feature and a prototype.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    /// Negative squared distance, so the argmax is the nearest prototype.
    Euclidean,
    /// Cosine similarity; zero when either vector is zero.
    Cosine,
}

impl Metric {
    pub fn logit(&self, z: &[f64], p: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => -z.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
            Metric::Cosine => {
                let dot: f64 = z.iter().zip(p).map(|(a, b)| a * b).sum();
                let nz = z.iter().map(|a| a * a).sum::<f64>().sqrt();
                let np = p.iter().map(|a| a * a).sum::<f64>().sqrt();
                if nz == 0.0 || np == 0.0 {
                    0.0
                } else {
                    dot / (nz * np)
                }
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            _ => Err(invalid!("unknown metric {s:?}")),
        }
    }
}

/// Index of the largest value; ties go to the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Averages per-view logits with `weights` and returns the argmax and the logits.
pub fn classify_features(
    view_features: &[Vec<f64>],
    prototypes: &[Vec<f64>],
    weights: &[f64],
    metric: Metric,
) -> Result<(usize, Vec<f64>)> {
    if view_features.len() != weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} query views but {} weights",
            view_features.len(),
            weights.len()
        )));
    }
    let logits: Vec<f64> = prototypes
        .iter()
        .map(|p| {
            view_features
                .iter()
                .zip(weights)
                .map(|(z, a)| a * metric.logit(z, p))
                .sum()
        })
        .collect();
    Ok((argmax(&logits), logits))
}

/// Classifies a query from all its views.
pub fn classify_query(
    q_views: &AugmentedSet,
    prototypes: &[Vec<f64>],
    enc: &Encoder,
    weights: &[f64],
    metric: Metric,
) -> Result<(usize, Vec<f64>)> {
    let features: Vec<Vec<f64>> = q_views.views().map(|v| enc.encode(v)).collect();
    classify_features(&features, prototypes, weights, metric)
}

/// Nearest prototype to a single feature vector; ties go to the smallest index.
pub fn nearest_prototype(z: &[f64], prototypes: &[Vec<f64>]) -> usize {
    let logits: Vec<f64> = prototypes
        .iter()
        .map(|p| Metric::Euclidean.logit(z, p))
        .collect();
    argmax(&logits)
}

/// Query-prototype pairs of an episode scored by `g = beta - ||z - p||^2`.
///
/// Returns `(errors, pairs)` where a pair with label `y = +1` (same class) or
/// `y = -1` errs when `y g <= 0`.
pub fn episode_pairwise_error(
    query_features: &[(Vec<f64>, usize)],
    prototypes: &[Vec<f64>],
    beta: f64,
) -> (usize, usize) {
    let mut errors = 0;
    let mut pairs = 0;
    for (z, label) in query_features {
        for (c, p) in prototypes.iter().enumerate() {
            let y = if *label == c { 1.0 } else { -1.0 };
            let g = beta + Metric::Euclidean.logit(z, p);
            if y * g <= 0.0 {
                errors += 1;
            }
            pairs += 1;
        }
    }
    (errors, pairs)
}

/// Source of the extra views in a benchmark.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AugMode {
    /// Original view only.
    None,
    /// Generated variants from the tweak, noise, denoise operator.
    OneShotDaug,
    /// Shape tweak plus photometric jitter.
    Traditional,
    /// Fresh true samples of the same class.
    Oracle,
}

impl AugMode {
    pub const ALL: [AugMode; 4] = [
        AugMode::None,
        AugMode::OneShotDaug,
        AugMode::Traditional,
        AugMode::Oracle,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AugMode::None => "none",
            AugMode::OneShotDaug => "1s-daug",
            AugMode::Traditional => "traditional",
            AugMode::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        AugMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                invalid!("unknown mode {s:?}; expected none, 1s-daug, traditional or oracle")
            })
    }
}

/// Shape of the sampled episodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EpisodeSpec {
    pub way: usize,
    pub shot: usize,
    pub queries: usize,
    pub episodes: usize,
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        Self {
            way: 5,
            shot: 1,
            queries: 3,
            episodes: 2000,
        }
    }
}

/// Everything that defines one benchmark run.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkConfig {
    pub spec: EpisodeSpec,
    pub mode: AugMode,
    pub k_sup: usize,
    pub k_qry: usize,
    pub original_weight: f64,
    pub metric: Metric,
    pub encoder: Encoder,
    pub aug: AugConfig,
    pub traditional: TraditionalConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            spec: EpisodeSpec::default(),
            mode: AugMode::OneShotDaug,
            k_sup: 2,
            k_qry: 2,
            original_weight: DEFAULT_ORIGINAL_WEIGHT,
            metric: Metric::Euclidean,
            encoder: Encoder::Identity,
            aug: AugConfig::default(),
            traditional: TraditionalConfig::default(),
        }
    }
}

/// Outcome of one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    pub index: usize,
    /// Seed of the episode's sampling stream.
    pub seed: u64,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    /// `confusion[true][predicted]` over episode labels.
    pub confusion: Vec<Vec<u32>>,
}

/// Aggregate over episodes.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkSummary {
    pub mean: f64,
    pub stderr: f64,
    /// Half-width of the 95% interval, `1.96 stderr`.
    pub ci95: f64,
    /// Mean pairwise per-pixel squared distance among generated variants.
    pub diversity: Option<f64>,
    pub episodes: Vec<EpisodeResult>,
}

impl BenchmarkSummary {
    /// Summarises episodes from integer counts, independent of their order.
    pub fn from_episodes(episodes: Vec<EpisodeResult>, diversity: Option<f64>) -> Self {
        let n = episodes.len();
        let q = episodes.first().map_or(1, |e| e.total.max(1));
        let sum: u64 = episodes.iter().map(|e| e.correct as u64).sum();
        let sum_sq: u64 = episodes
            .iter()
            .map(|e| (e.correct * e.correct) as u64)
            .sum();
        let mean = sum as f64 / (n.max(1) * q) as f64;
        let stderr = if n > 1 {
            let var_counts =
                (sum_sq as f64 - (sum as f64) * (sum as f64) / n as f64) / (n - 1) as f64;
            (var_counts.max(0.0) / n as f64).sqrt() / q as f64
        } else {
            0.0
        };
        Self {
            mean,
            stderr,
            ci95: 1.96 * stderr,
            diversity,
            episodes,
        }
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.accuracy).collect()
    }
}

/// Encoded views of every image of one episode.
struct EpisodeViews {
    episode: Episode,
    seed: u64,
    supports: Vec<Vec<Vec<f64>>>,
    queries: Vec<Vec<Vec<f64>>>,
    diversity_sum: f64,
    diversity_count: usize,
}

fn image_views(
    x: &RasterImage,
    class: usize,
    count: usize,
    seed: u64,
    world: &GmmWorld,
    schedule: &VarianceSchedule,
    cfg: &BenchmarkConfig,
) -> Result<AugmentedSet> {
    Ok(match cfg.mode {
        AugMode::None => AugmentedSet::single(x.clone()),
        AugMode::OneShotDaug => {
            let aug = AugConfig {
                variants: count,
                ..cfg.aug.clone()
            };
            augment_set(x, &aug, world, schedule, seed)?
        }
        AugMode::Traditional => traditional_set(x, &cfg.traditional, count, seed),
        AugMode::Oracle => {
            let variants = (0..count)
                .map(|k| world.sample(class, &mut rng::stream(seed, &[tag::ORACLE, k as u64])))
                .collect();
            AugmentedSet {
                original: x.clone(),
                variants,
                params_log: Vec::new(),
            }
        }
    })
}

fn episode_views(
    world: &GmmWorld,
    schedule: &VarianceSchedule,
    cfg: &BenchmarkConfig,
    master: u64,
    index: usize,
    max_sup: usize,
    max_qry: usize,
) -> Result<EpisodeViews> {
    let seed = rng::derive_seed(master, &[tag::EPISODE, index as u64]);
    let mut rng = Rng::seed_from(seed);
    let episode = sample_episode(
        world,
        cfg.spec.way,
        cfg.spec.shot,
        cfg.spec.queries,
        &mut rng,
    )?;
    let mut diversity_sum = 0.0;
    let mut diversity_count = 0;
    let mut expand = |items: &[(RasterImage, usize)],
                      offset: usize,
                      count: usize|
     -> Result<Vec<Vec<Vec<f64>>>> {
        items
            .iter()
            .enumerate()
            .map(|(i, (x, label))| {
                let img_seed =
                    rng::derive_seed(master, &[tag::VARIANT, index as u64, (offset + i) as u64]);
                let set = image_views(
                    x,
                    episode.classes[*label],
                    count,
                    img_seed,
                    world,
                    schedule,
                    cfg,
                )?;
                if let Some(d) = mean_pairwise_distance(&set.variants) {
                    diversity_sum += d;
                    diversity_count += 1;
                }
                Ok(set.views().map(|v| cfg.encoder.encode(v)).collect())
            })
            .collect()
    };
    let supports = expand(&episode.supports, 0, max_sup)?;
    let queries = expand(&episode.queries, episode.supports.len(), max_qry)?;
    Ok(EpisodeViews {
        episode,
        seed,
        supports,
        queries,
        diversity_sum,
        diversity_count,
    })
}

fn evaluate(
    views: &EpisodeViews,
    index: usize,
    k_sup: usize,
    k_qry: usize,
    original_weight: f64,
    metric: Metric,
) -> Result<EpisodeResult> {
    let ep = &views.episode;
    let k_sup = k_sup.min(views.supports.first().map_or(0, |v| v.len() - 1));
    let k_qry = k_qry.min(views.queries.first().map_or(0, |v| v.len() - 1));
    let w = AggregationWeights::with_original_weight(k_sup, k_qry, original_weight)?;
    let support_features = views
        .supports
        .iter()
        .map(|v| aggregate_features(&v[..=k_sup], &w.support))
        .collect::<Result<Vec<_>>>()?;
    let protos = prototypes(ep, &support_features)?;
    let mut confusion = vec![vec![0u32; ep.way]; ep.way];
    let mut correct = 0;
    for (v, (_, label)) in views.queries.iter().zip(&ep.queries) {
        let (pred, _) = classify_features(&v[..=k_qry], &protos, &w.query, metric)?;
        confusion[*label][pred] += 1;
        if pred == *label {
            correct += 1;
        }
    }
    let total = ep.queries.len();
    Ok(EpisodeResult {
        index,
        seed: views.seed,
        correct,
        total,
        accuracy: correct as f64 / total.max(1) as f64,
        confusion,
    })
}

/// Runs `cfg.spec.episodes` episodes and evaluates every `(k_sup, k_qry)` in `grid`.
///
/// Views are generated once per episode at the largest requested counts and
/// reused, so grid points share episodes and variants. Episodes fan out over
/// the current rayon pool and are collected in index order.
pub fn run_grid(
    world: &GmmWorld,
    schedule: &VarianceSchedule,
    cfg: &BenchmarkConfig,
    grid: &[(usize, usize)],
    master: u64,
) -> Result<Vec<BenchmarkSummary>> {
    if cfg.spec.episodes == 0 {
        return Err(invalid!("need at least one episode"));
    }
    if grid.is_empty() {
        return Err(invalid!("empty augmentation grid"));
    }
    cfg.aug.validate()?;
    let max_sup = grid.iter().map(|g| g.0).max().unwrap_or(0);
    let max_qry = grid.iter().map(|g| g.1).max().unwrap_or(0);
    let per_episode: Vec<(Vec<EpisodeResult>, f64, usize)> = (0..cfg.spec.episodes)
        .into_par_iter()
        .map(|e| {
            let views = episode_views(world, schedule, cfg, master, e, max_sup, max_qry)?;
            let results = grid
                .iter()
                .map(|&(ks, kq)| evaluate(&views, e, ks, kq, cfg.original_weight, cfg.metric))
                .collect::<Result<Vec<_>>>()?;
            Ok((results, views.diversity_sum, views.diversity_count))
        })
        .collect::<Result<_>>()?;
    let (div_sum, div_count) = per_episode
        .iter()
        .fold((0.0, 0usize), |(s, c), (_, ds, dc)| (s + ds, c + dc));
    let diversity = (div_count > 0).then(|| div_sum / div_count as f64);
    Ok((0..grid.len())
        .map(|g| {
            let eps = per_episode.iter().map(|(r, _, _)| r[g].clone()).collect();
            BenchmarkSummary::from_episodes(eps, diversity)
        })
        .collect())
}

/// Runs the benchmark at the configured augmentation counts.
pub fn run_benchmark(
    world: &GmmWorld,
    schedule: &VarianceSchedule,
    cfg: &BenchmarkConfig,
    master: u64,
) -> Result<BenchmarkSummary> {
    let (ks, kq) = match cfg.mode {
        AugMode::None => (0, 0),
        _ => (cfg.k_sup, cfg.k_qry),
    };
    Ok(run_grid(world, schedule, cfg, &[(ks, kq)], master)?.remove(0))
}

/// The episode at `index` with the view sets of its supports and queries,
/// exactly as the benchmark generates them.
pub fn episode_sets(
    world: &GmmWorld,
    schedule: &VarianceSchedule,
    cfg: &BenchmarkConfig,
    master: u64,
    index: usize,
) -> Result<(Episode, Vec<AugmentedSet>, Vec<AugmentedSet>)> {
    let seed = rng::derive_seed(master, &[tag::EPISODE, index as u64]);
    let episode = sample_episode(
        world,
        cfg.spec.way,
        cfg.spec.shot,
        cfg.spec.queries,
        &mut Rng::seed_from(seed),
    )?;
    let sets = |items: &[(RasterImage, usize)],
                offset: usize,
                count: usize|
     -> Result<Vec<AugmentedSet>> {
        items
            .iter()
            .enumerate()
            .map(|(i, (x, label))| {
                let img_seed =
                    rng::derive_seed(master, &[tag::VARIANT, index as u64, (offset + i) as u64]);
                image_views(
                    x,
                    episode.classes[*label],
                    count,
                    img_seed,
                    world,
                    schedule,
                    cfg,
                )
            })
            .collect()
    };
    let supports = sets(&episode.supports, 0, cfg.k_sup)?;
    let queries = sets(&episode.queries, episode.supports.len(), cfg.k_qry)?;
    Ok((episode, supports, queries))
}

trait SeedFrom {
    fn seed_from(seed: u64) -> Self;
}

impl SeedFrom for Rng {
    fn seed_from(seed: u64) -> Self {
        use rand::SeedableRng;
        Rng::seed_from_u64(seed)
    }
}
