//! Shape tweaks: sampled flip, stretch, rotation, translation and perspective warps.
//!
//! Transforms act in pixel coordinates centred on the image centre and compose
//! as `perspective . translate . rotate . stretch . flip`. Output pixels are
//! inverse-mapped into the source and sampled bilinearly; samples that fall
//! outside the source take the mean of its border pixels.

use rand::Rng as _;

use crate::error::{invalid, Result};
use crate::image::RasterImage;
use crate::rng::Rng;

/// Sampling ranges of the shape tweak.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapeTweakRanges {
    /// Maximum absolute rotation, in degrees.
    pub rotate_max: f64,
    /// Stretch factors are drawn from `[1 - stretch_max, 1 + stretch_max]`.
    pub stretch_max: f64,
    /// Maximum absolute shift as a fraction of width or height.
    pub translate_max: f64,
    /// Maximum corner displacement as a fraction of the width.
    pub persp_max: f64,
    pub hflip_prob: f64,
}

impl Default for ShapeTweakRanges {
    fn default() -> Self {
        Self {
            rotate_max: 20.0,
            stretch_max: 0.20,
            translate_max: 0.025,
            persp_max: 0.12,
            hflip_prob: 0.5,
        }
    }
}

impl ShapeTweakRanges {
    /// Ranges that always produce the identity.
    pub fn none() -> Self {
        Self {
            rotate_max: 0.0,
            stretch_max: 0.0,
            translate_max: 0.0,
            persp_max: 0.0,
            hflip_prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("rotate_max", self.rotate_max),
            ("stretch_max", self.stretch_max),
            ("translate_max", self.translate_max),
            ("persp_max", self.persp_max),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if self.stretch_max >= 1.0 {
            return Err(invalid!(
                "stretch_max must be < 1, got {}",
                self.stretch_max
            ));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(invalid!("hflip_prob {} outside [0, 1]", self.hflip_prob));
        }
        Ok(())
    }
}

/// One sampled shape tweak.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapeTweakParams {
    pub rotate_deg: f64,
    pub stretch_x: f64,
    pub stretch_y: f64,
    /// Shift as a fraction of the width.
    pub translate_x: f64,
    /// Shift as a fraction of the height.
    pub translate_y: f64,
    /// Corner displacement magnitude as a fraction of the width.
    pub persp_jitter: f64,
    /// Displacement direction of each corner (top-left, top-right,
    /// bottom-right, bottom-left) as offsets in `[-1, 1]^2`.
    pub persp_corners: [[f64; 2]; 4],
    pub hflip: bool,
}

impl ShapeTweakParams {
    pub fn identity() -> Self {
        Self {
            rotate_deg: 0.0,
            stretch_x: 1.0,
            stretch_y: 1.0,
            translate_x: 0.0,
            translate_y: 0.0,
            persp_jitter: 0.0,
            persp_corners: [[0.0; 2]; 4],
            hflip: false,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.rotate_deg == 0.0
            && self.stretch_x == 1.0
            && self.stretch_y == 1.0
            && self.translate_x == 0.0
            && self.translate_y == 0.0
            && (self.persp_jitter == 0.0 || self.persp_corners == [[0.0; 2]; 4])
            && !self.hflip
    }

    /// Whether every field lies inside `ranges`.
    pub fn within(&self, r: &ShapeTweakRanges) -> bool {
        self.rotate_deg.abs() <= r.rotate_max
            && (self.stretch_x - 1.0).abs() <= r.stretch_max
            && (self.stretch_y - 1.0).abs() <= r.stretch_max
            && self.translate_x.abs() <= r.translate_max
            && self.translate_y.abs() <= r.translate_max
            && (0.0..=r.persp_max).contains(&self.persp_jitter)
            && self.persp_corners.iter().flatten().all(|c| c.abs() <= 1.0)
    }
}

fn symmetric(rng: &mut Rng, half_width: f64) -> f64 {
    half_width * (2.0 * rng.random::<f64>() - 1.0)
}

/// Draws each field uniformly in its range and the flip as a Bernoulli.
///
/// The number of draws is fixed, so streams stay aligned across configurations.
pub fn sample_tweak(ranges: &ShapeTweakRanges, rng: &mut Rng) -> ShapeTweakParams {
    let rotate_deg = symmetric(rng, ranges.rotate_max);
    let stretch_x = 1.0 + symmetric(rng, ranges.stretch_max);
    let stretch_y = 1.0 + symmetric(rng, ranges.stretch_max);
    let translate_x = symmetric(rng, ranges.translate_max);
    let translate_y = symmetric(rng, ranges.translate_max);
    let persp_jitter = ranges.persp_max * rng.random::<f64>();
    let mut persp_corners = [[0.0; 2]; 4];
    for c in persp_corners.iter_mut().flatten() {
        *c = symmetric(rng, 1.0);
    }
    let hflip = rng.random::<f64>() < ranges.hflip_prob;
    ShapeTweakParams {
        rotate_deg,
        stretch_x,
        stretch_y,
        translate_x,
        translate_y,
        persp_jitter,
        persp_corners,
        hflip,
    }
}

type Mat3 = [[f64; 3]; 3];

const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

fn mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn invert(m: &Mat3) -> Option<Mat3> {
    let cof =
        |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let det = m[0][0] * cof(1, 2, 1, 2) - m[0][1] * cof(1, 2, 0, 2) + m[0][2] * cof(1, 2, 0, 1);
    if det.abs() < 1e-14 {
        return None;
    }
    let adj = [
        [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
        [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
        [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
    ];
    Some(adj.map(|row| row.map(|v| v / det)))
}

/// Homography taking the four `src` points to the four `dst` points.
fn homography(src: &[[f64; 2]; 4], dst: &[[f64; 2]; 4]) -> Option<Mat3> {
    let mut a = [[0.0f64; 9]; 8];
    for i in 0..4 {
        let ([x, y], [u, v]) = (src[i], dst[i]);
        a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
        a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
    }
    // Gaussian elimination with partial pivoting on the augmented system
    for col in 0..8 {
        let pivot = (col..8).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        for row in 0..8 {
            if row != col {
                let f = a[row][col] / a[col][col];
                let pivot_row = a[col];
                for (x, p) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                    *x -= f * p;
                }
            }
        }
    }
    let h: Vec<f64> = (0..8).map(|i| a[i][8] / a[i][i]).collect();
    Some([[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]])
}

/// Inverse of the forward map in centred pixel coordinates.
fn inverse_map(psi: &ShapeTweakParams, width: usize, height: usize) -> Mat3 {
    let (w, h) = (width as f64, height as f64);
    let flip_inv = if psi.hflip {
        [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    } else {
        IDENTITY
    };
    let stretch_inv = [
        [1.0 / psi.stretch_x, 0.0, 0.0],
        [0.0, 1.0 / psi.stretch_y, 0.0],
        [0.0, 0.0, 1.0],
    ];
    let (sin, cos) = psi.rotate_deg.to_radians().sin_cos();
    let rotate_inv = [[cos, sin, 0.0], [-sin, cos, 0.0], [0.0, 0.0, 1.0]];
    let translate_inv = [
        [1.0, 0.0, -psi.translate_x * w],
        [0.0, 1.0, -psi.translate_y * h],
        [0.0, 0.0, 1.0],
    ];
    let persp_inv = if psi.persp_jitter == 0.0 {
        IDENTITY
    } else {
        let (hw, hh) = (w / 2.0, h / 2.0);
        let src = [[-hw, -hh], [hw, -hh], [hw, hh], [-hw, hh]];
        let mut dst = src;
        for (d, o) in dst.iter_mut().zip(&psi.persp_corners) {
            d[0] += psi.persp_jitter * w * o[0];
            d[1] += psi.persp_jitter * w * o[1];
        }
        homography(&src, &dst)
            .and_then(|m| invert(&m))
            .unwrap_or(IDENTITY)
    };
    let m = mul(&flip_inv, &stretch_inv);
    let m = mul(&m, &rotate_inv);
    let m = mul(&m, &translate_inv);
    mul(&m, &persp_inv)
}

/// Warps `x` by the tweak `psi`; identity parameters return `x` unchanged.
pub fn apply_tweak(x: &RasterImage, psi: &ShapeTweakParams) -> RasterImage {
    if psi.is_identity() {
        return x.clone();
    }
    let (w, h) = (x.width(), x.height());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let inv = inverse_map(psi, w, h);
    let fill = x.border_mean();
    let mut out = Vec::with_capacity(x.len());
    for py in 0..h {
        for px in 0..w {
            let (u, v) = (px as f64 - cx, py as f64 - cy);
            let hx = inv[0][0] * u + inv[0][1] * v + inv[0][2];
            let hy = inv[1][0] * u + inv[1][1] * v + inv[1][2];
            let hz = inv[2][0] * u + inv[2][1] * v + inv[2][2];
            out.push(if hz.abs() < 1e-12 {
                fill
            } else {
                bilinear(x, hx / hz + cx, hy / hz + cy, fill)
            });
        }
    }
    RasterImage::from_parts_unchecked(w, h, out)
}

/// Bilinear sample at source coordinates; `fill` outside the pixel grid.
fn bilinear(x: &RasterImage, sx: f64, sy: f64, fill: f64) -> f64 {
    const EDGE: f64 = 1e-9;
    let (w, h) = (x.width(), x.height());
    if !(sx >= -EDGE && sy >= -EDGE && sx <= w as f64 - 1.0 + EDGE && sy <= h as f64 - 1.0 + EDGE) {
        return fill;
    }
    let (sx, sy) = (sx.clamp(0.0, w as f64 - 1.0), sy.clamp(0.0, h as f64 - 1.0));
    let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
    let top = (1.0 - fx) * x.get(x0, y0) + fx * x.get(x1, y0);
    let bottom = (1.0 - fx) * x.get(x0, y1) + fx * x.get(x1, y1);
    (1.0 - fy) * top + fy * bottom
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::world::GmmWorld;
    use proptest::prelude::*;

    fn pure(f: impl FnOnce(&mut ShapeTweakParams)) -> ShapeTweakParams {
        let mut p = ShapeTweakParams::identity();
        f(&mut p);
        p
    }

    #[test]
    fn zero_ranges_sample_identity() {
        let mut rng = stream(1, &[]);
        for _ in 0..10 {
            assert!(sample_tweak(&ShapeTweakRanges::none(), &mut rng).is_identity());
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let r = ShapeTweakRanges::default();
        assert_eq!(
            sample_tweak(&r, &mut stream(5, &[])),
            sample_tweak(&r, &mut stream(5, &[]))
        );
    }

    #[test]
    fn rotation_samples_cover_symmetric_range() {
        let r = ShapeTweakRanges::default();
        let mut rng = stream(2, &[]);
        let n = 10_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_tweak(&r, &mut rng).rotate_deg)
            .collect();
        assert!(draws.iter().all(|d| d.abs() <= 20.0));
        let mean = draws.iter().sum::<f64>() / n as f64;
        let se = 40.0 / 12f64.sqrt() / (n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "{mean}");
        let flips = (0..n).filter(|_| sample_tweak(&r, &mut rng).hflip).count() as f64 / n as f64;
        assert!((flips - 0.5).abs() < 3.0 * (0.25 / n as f64).sqrt());
    }

    #[test]
    fn identity_is_byte_stable() {
        let x = GmmWorld::default_world().template(4).clone();
        let y = apply_tweak(&x, &ShapeTweakParams::identity());
        assert_eq!(x.to_pgm_bytes(), y.to_pgm_bytes());
        assert_eq!(x, y);
    }

    #[test]
    fn double_flip_is_identity() {
        let x = RasterImage::new(5, 4, (0..20).map(|i| (i * 7 % 11) as f64).collect()).unwrap();
        let flip = pure(|p| p.hflip = true);
        let once = apply_tweak(&x, &flip);
        assert_eq!(once.get(0, 1), x.get(4, 1));
        let twice = apply_tweak(&once, &flip);
        for (a, b) in twice.pixels().iter().zip(x.pixels()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn quarter_turn_matches_coordinate_map() {
        // two lit pixels that no symmetry of the square maps onto each other
        let n = 6;
        let mut x = RasterImage::zeros(n, n);
        x.set(1, 0, 1.0);
        x.set(4, 2, 0.5);
        let rot = pure(|p| p.rotate_deg = 90.0);
        let y = apply_tweak(&x, &rot);
        // forward map about the centre c: (x, y) -> (c - (y - c), c + (x - c))
        let c = (n as f64 - 1.0) / 2.0;
        let map = |px: usize, py: usize| {
            let nx = c - (py as f64 - c);
            let ny = c + (px as f64 - c);
            (nx.round() as usize, ny.round() as usize)
        };
        let (ax, ay) = map(1, 0);
        let (bx, by) = map(4, 2);
        assert_eq!((ax, ay), (5, 1));
        assert_eq!((bx, by), (3, 4));
        for py in 0..n {
            for px in 0..n {
                let want = if (px, py) == (ax, ay) {
                    1.0
                } else if (px, py) == (bx, by) {
                    0.5
                } else {
                    0.0
                };
                assert!((y.get(px, py) - want).abs() < 1e-9, "({px},{py})");
            }
        }
    }

    #[test]
    fn out_of_bounds_fills_with_border_mean() {
        let mut x = RasterImage::filled(4, 4, 0.25);
        x.set(1, 1, 5.0);
        let shift = pure(|p| p.translate_x = 0.5);
        let y = apply_tweak(&x, &shift);
        assert_eq!(y.get(0, 0), 0.25);
        assert_eq!(y.get(2, 1), 0.25);
        assert_eq!(y.get(3, 1), 5.0);
    }

    #[test]
    fn homography_maps_corners() {
        let src = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];
        let dst = [[-1.2, -0.9], [1.1, -1.0], [0.8, 1.3], [-1.0, 0.9]];
        let h = homography(&src, &dst).unwrap();
        for (s, d) in src.iter().zip(&dst) {
            let z = h[2][0] * s[0] + h[2][1] * s[1] + h[2][2];
            let u = (h[0][0] * s[0] + h[0][1] * s[1] + h[0][2]) / z;
            let v = (h[1][0] * s[0] + h[1][1] * s[1] + h[1][2]) / z;
            assert!((u - d[0]).abs() < 1e-12 && (v - d[1]).abs() < 1e-12);
        }
        let inv = invert(&h).unwrap();
        let id = mul(&h, &inv);
        for i in 0..3 {
            for j in 0..3 {
                assert!((id[i][j] - IDENTITY[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rotation_and_flip_preserve_template_mass() {
        let world = GmmWorld::default_world();
        let mut rng = stream(3, &[]);
        let ranges = ShapeTweakRanges {
            stretch_max: 0.0,
            translate_max: 0.0,
            persp_max: 0.0,
            ..ShapeTweakRanges::default()
        };
        for t in world.templates() {
            for _ in 0..50 {
                let psi = sample_tweak(&ranges, &mut rng);
                let change = (apply_tweak(t, &psi).sum() / t.sum() - 1.0).abs();
                assert!(change < 0.05, "mass change {change}");
            }
        }
    }

    #[test]
    fn stretch_moves_mass_toward_area_factor() {
        // a stretch rescales mass by roughly sx * sy; border fill adds mass when
        // shrinking and the frame clips mass when enlarging
        let world = GmmWorld::default_world();
        for t in world.templates() {
            for &(sx, sy) in &[(0.8, 0.8), (0.9, 0.8), (1.2, 1.1)] {
                let psi = pure(|p| {
                    p.stretch_x = sx;
                    p.stretch_y = sy;
                });
                let ratio = apply_tweak(t, &psi).sum() / t.sum();
                let area = sx * sy;
                if area < 1.0 {
                    assert!(ratio >= area && ratio < 1.0, "{sx}x{sy}: {ratio}");
                } else {
                    assert!(ratio <= area * 1.01 && ratio > 0.99, "{sx}x{sy}: {ratio}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn samples_stay_in_range(seed in any::<u64>(), rot in 0.0f64..45.0, st in 0.0f64..0.9,
                                 tr in 0.0f64..0.2, pp in 0.0f64..0.3, hp in 0.0f64..=1.0) {
            let r = ShapeTweakRanges { rotate_max: rot, stretch_max: st, translate_max: tr, persp_max: pp, hflip_prob: hp };
            prop_assert!(r.validate().is_ok());
            let psi = sample_tweak(&r, &mut stream(seed, &[]));
            prop_assert!(psi.within(&r));
        }

        #[test]
        fn warp_output_is_finite_and_bounded(seed in any::<u64>()) {
            let world = GmmWorld::default_world();
            let mut rng = stream(seed, &[]);
            let psi = sample_tweak(&ShapeTweakRanges::default(), &mut rng);
            let t = world.template((seed % 16) as usize);
            let y = apply_tweak(t, &psi);
            let (lo, hi) = t.pixels().iter().fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(*v), b.max(*v)));
            prop_assert!(y.pixels().iter().all(|v| v.is_finite() && *v >= lo - 1e-12 && *v <= hi + 1e-12));
        }
    }
}
