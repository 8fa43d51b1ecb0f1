//! The synthetic image world: class templates plus isotropic Gaussian noise.
//!
//! Each class `k` is `N(mu_k, s^2 I)` over the pixels of a small raster, with a
//! uniform class prior. Because the data distribution is known in closed form,
//! the diffusion noise predictor, class likelihoods and nearest-template labels
//! are exact.

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::image::RasterImage;
use crate::rng::Rng;

/// Lower bound applied to variances before they divide anything.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Within-class standard deviation of the default world.
///
/// Calibrated so that 5-way 1-shot nearest-prototype accuracy without
/// augmentation sits inside `[0.55, 0.75]`.
pub const DEFAULT_WITHIN_CLASS_STD: f64 = 0.65;

/// Side length of the default glyph raster.
pub const GLYPH_SIZE: usize = 16;

/// L2 norm shared by all default templates.
pub const GLYPH_NORM: f64 = 6.0;

/// Gaussian-mixture world over raster images.
#[derive(Clone, Debug)]
pub struct GmmWorld {
    templates: Vec<RasterImage>,
    std: f64,
    norms_sq: Vec<f64>,
}

impl GmmWorld {
    /// Builds a world from class means and a shared within-class std.
    pub fn new(templates: Vec<RasterImage>, std: f64) -> Result<Self> {
        if templates.is_empty() {
            return Err(invalid!("world needs at least one template"));
        }
        if !(std.is_finite() && std >= 0.0) {
            return Err(invalid!(
                "within-class std must be finite and >= 0, got {std}"
            ));
        }
        let first = &templates[0];
        if let Some(k) = templates.iter().position(|t| !t.same_shape(first)) {
            return Err(Error::DimensionMismatch(format!(
                "template {k} is {}x{}, template 0 is {}x{}",
                templates[k].width(),
                templates[k].height(),
                first.width(),
                first.height()
            )));
        }
        for a in 0..templates.len() {
            for b in a + 1..templates.len() {
                if templates[a] == templates[b] {
                    return Err(invalid!("templates {a} and {b} are identical"));
                }
            }
        }
        let norms_sq = templates.iter().map(RasterImage::norm_sq).collect();
        Ok(Self {
            templates,
            std,
            norms_sq,
        })
    }

    /// The calibrated 16-glyph world.
    pub fn default_world() -> Self {
        Self::with_std(DEFAULT_WITHIN_CLASS_STD)
    }

    /// The 16-glyph world with a custom within-class std.
    pub fn with_std(std: f64) -> Self {
        Self::new(default_glyphs(), std).expect("default glyphs form a valid world")
    }

    /// Same templates, different within-class std.
    pub fn rescaled_std(&self, std: f64) -> Result<Self> {
        Self::new(self.templates.clone(), std)
    }

    /// Keeps the first `count` classes.
    pub fn truncated(&self, count: usize) -> Result<Self> {
        if count == 0 || count > self.class_count() {
            return Err(invalid!(
                "class count {count} outside 1..={}",
                self.class_count()
            ));
        }
        Self::new(self.templates[..count].to_vec(), self.std)
    }

    pub fn templates(&self) -> &[RasterImage] {
        &self.templates
    }

    pub fn template(&self, k: usize) -> &RasterImage {
        &self.templates[k]
    }

    pub(crate) fn template_norms_sq(&self) -> &[f64] {
        &self.norms_sq
    }

    pub fn std(&self) -> f64 {
        self.std
    }

    pub fn class_count(&self) -> usize {
        self.templates.len()
    }

    pub fn width(&self) -> usize {
        self.templates[0].width()
    }

    pub fn height(&self) -> usize {
        self.templates[0].height()
    }

    pub fn pixel_count(&self) -> usize {
        self.templates[0].len()
    }

    /// Draws one image of class `k`.
    pub fn sample(&self, k: usize, rng: &mut Rng) -> RasterImage {
        let t = &self.templates[k];
        let pixels = t
            .pixels()
            .iter()
            .map(|&m| {
                let z: f64 = rng.sample(StandardNormal);
                m + self.std * z
            })
            .collect();
        RasterImage::from_parts_unchecked(t.width(), t.height(), pixels)
    }

    /// Index of the closest template; ties go to the smallest index.
    pub fn nearest_template(&self, x: &RasterImage) -> usize {
        let mut best = (0, f64::INFINITY);
        for (k, t) in self.templates.iter().enumerate() {
            let d = x.dist_sq(t);
            if d < best.1 {
                best = (k, d);
            }
        }
        best.0
    }

    /// Per-class log-likelihoods of `x` up to a shared additive constant.
    pub fn log_likelihoods(&self, x: &RasterImage) -> Vec<f64> {
        let var = (self.std * self.std).max(VARIANCE_FLOOR);
        self.templates
            .iter()
            .map(|t| -x.dist_sq(t) / (2.0 * var))
            .collect()
    }

    /// Smallest distance between two distinct templates.
    pub fn min_template_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for a in 0..self.templates.len() {
            for b in a + 1..self.templates.len() {
                best = best.min(self.templates[a].dist_sq(&self.templates[b]).sqrt());
            }
        }
        best
    }

    /// Minimum template distance divided by `6 s sqrt(P)`.
    ///
    /// Values above one mean classes are separated by more than six noise
    /// radii. The calibrated world sits well below one by design.
    pub fn separability_ratio(&self) -> f64 {
        let budget = 6.0 * self.std * (self.pixel_count() as f64).sqrt();
        self.min_template_distance() / budget
    }
}

/// Stroke half-width of the glyph strokes, in pixels.
const STROKE_WIDTH: f64 = 2.0;
/// Scale applied to all glyph coordinates.
const GLYPH_SCALE: f64 = 1.2;
/// Blob radius of the dot glyphs, before scaling.
const DOT_RADIUS: f64 = 1.7;

type Segment = (f64, f64, f64, f64);

enum Part {
    Strokes(&'static [Segment]),
    Blob(f64, f64, f64),
}

const TOP: (f64, f64) = (0.0, -4.5);
const BOTTOM: (f64, f64) = (0.0, 4.5);
const LEFT: (f64, f64) = (-4.5, 0.0);
const RIGHT: (f64, f64) = (4.5, 0.0);

fn dot(site: (f64, f64)) -> Part {
    Part::Blob(site.0, site.1, DOT_RADIUS)
}

const BOX_WIDE: &[Segment] = &[
    (-5.0, -2.5, 5.0, -2.5),
    (5.0, -2.5, 5.0, 2.5),
    (5.0, 2.5, -5.0, 2.5),
    (-5.0, 2.5, -5.0, -2.5),
];
const BOX_TALL: &[Segment] = &[
    (-2.5, -5.0, 2.5, -5.0),
    (2.5, -5.0, 2.5, 5.0),
    (2.5, 5.0, -2.5, 5.0),
    (-2.5, 5.0, -2.5, -5.0),
];

/// Names of the default glyphs, in class order.
pub const GLYPH_NAMES: [&str; 16] = [
    "dot",
    "dot_top",
    "dot_bottom",
    "dots_bottom_corners",
    "inverted_t",
    "knob_bar",
    "dots_sides_top_corners",
    "side_bars",
    "top_bottom_bars",
    "hbar",
    "dots_sides_bottom_corners",
    "y_shape",
    "plus",
    "x_cross",
    "wide_box",
    "tall_box",
];

fn glyph_parts(k: usize) -> Vec<Part> {
    use Part::*;
    let c = (0.0, 0.0);
    match k {
        0 => vec![dot(c)],
        1 => vec![dot(c), dot(TOP)],
        2 => vec![dot(c), dot(BOTTOM)],
        3 => vec![dot(BOTTOM), dot((-4.0, 4.0)), dot((4.0, 4.0))],
        4 => vec![Strokes(&[(-4.5, 4.0, 4.5, 4.0), (0.0, -4.5, 0.0, 4.0)])],
        5 => vec![Blob(0.0, -3.0, 1.0), Strokes(&[(-3.0, -3.0, 3.0, -3.0)])],
        6 => vec![dot(LEFT), dot(RIGHT), dot((-4.0, -4.0)), dot((4.0, -4.0))],
        7 => vec![Strokes(&[(-4.5, -5.0, -4.5, 5.0), (4.5, -5.0, 4.5, 5.0)])],
        8 => vec![Strokes(&[(-5.0, -4.5, 5.0, -4.5), (-5.0, 4.5, 5.0, 4.5)])],
        9 => vec![Strokes(&[(-5.0, 0.0, 5.0, 0.0)])],
        10 => vec![dot(LEFT), dot(RIGHT), dot((-4.0, 4.0)), dot((4.0, 4.0))],
        11 => vec![Strokes(&[
            (-4.0, -4.5, 0.0, 0.0),
            (4.0, -4.5, 0.0, 0.0),
            (0.0, 0.0, 0.0, 5.0),
        ])],
        12 => vec![Strokes(&[(-5.0, 0.0, 5.0, 0.0), (0.0, -5.0, 0.0, 5.0)])],
        13 => vec![Strokes(&[(-3.6, -3.6, 3.6, 3.6), (-3.6, 3.6, 3.6, -3.6)])],
        14 => vec![Strokes(BOX_WIDE)],
        15 => vec![Strokes(BOX_TALL)],
        _ => unreachable!("glyph index out of range"),
    }
}

fn point_segment_dist(px: f64, py: f64, (x0, y0, x1, y1): Segment) -> f64 {
    let (dx, dy) = (x1 - x0, y1 - y0);
    let len_sq = dx * dx + dy * dy;
    let t = if len_sq > 0.0 {
        (((px - x0) * dx + (py - y0) * dy) / len_sq).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (px - (x0 + t * dx)).hypot(py - (y0 + t * dy))
}

/// Renders glyph `k` on a `size` x `size` raster before normalisation.
fn render_glyph(k: usize, size: usize) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let parts = glyph_parts(k);
    let mut out = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 - c, y as f64 - c);
            let mut v = 0.0;
            for part in &parts {
                v += match *part {
                    Part::Strokes(segs) => {
                        let d = segs
                            .iter()
                            .map(|&(a, b, e, f)| {
                                let s = GLYPH_SCALE;
                                point_segment_dist(px, py, (a * s, b * s, e * s, f * s))
                            })
                            .fold(f64::INFINITY, f64::min);
                        (-d * d / (2.0 * STROKE_WIDTH * STROKE_WIDTH)).exp()
                    }
                    Part::Blob(bx, by, r) => {
                        let s = GLYPH_SCALE;
                        let (dx, dy) = (px - bx * s, py - by * s);
                        let r = r * s;
                        (-(dx * dx + dy * dy) / (2.0 * r * r)).exp()
                    }
                };
            }
            out[y * size + x] = v.clamp(0.0, 1.0);
        }
    }
    out
}

/// The 16 default glyph templates, each with L2 norm [`GLYPH_NORM`].
///
/// All glyphs are left-right symmetric so that a horizontal flip never turns
/// one class into another.
pub fn default_glyphs() -> Vec<RasterImage> {
    (0..GLYPH_NAMES.len())
        .map(|k| {
            let mut px = render_glyph(k, GLYPH_SIZE);
            let norm = px.iter().map(|v| v * v).sum::<f64>().sqrt();
            px.iter_mut().for_each(|v| *v *= GLYPH_NORM / norm);
            RasterImage::from_parts_unchecked(GLYPH_SIZE, GLYPH_SIZE, px)
        })
        .collect()
}
