//! Radius reduction by averaging one augmented view.
//!
//! Draws `m` i.i.d. pairs `(Omega0, Omega1)`, averages each pair and compares
//! the largest averaged norm with the largest original norm.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::margin::sub;
use crate::error::{invalid, Error, Result};
use crate::rng::{stream, tag, Rng};

/// Trials drawn from one stream; fixes the stream layout independently of threads.
const CHUNK: usize = 1000;

/// Law of the difference features.
#[derive(Clone, Debug, PartialEq)]
pub enum RadiusDistribution {
    StandardNormal,
    /// Independent uniform coordinates on `[-1, 1]`.
    UniformCube,
    /// All mass at one point; violates the continuity precondition.
    PointMass(Vec<f64>),
}

impl RadiusDistribution {
    fn draw(&self, dim: usize, rng: &mut Rng, out: &mut [f64]) {
        for v in out.iter_mut().take(dim) {
            *v = match self {
                RadiusDistribution::StandardNormal => rng.sample(StandardNormal),
                RadiusDistribution::UniformCube => rng.random_range(-1.0..=1.0),
                RadiusDistribution::PointMass(_) => unreachable!("rejected before sampling"),
            };
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prop3Estimate {
    pub dim: usize,
    pub m: usize,
    pub trials: usize,
    pub successes: usize,
    pub estimate: f64,
    pub stderr: f64,
    /// `estimate - 3 stderr`; must exceed 0.5.
    pub lower: f64,
    pub passes: bool,
}

/// Estimates `P(max_i ||(Omega0_i + Omega1_i) / 2|| < max_i ||Omega0_i||)`.
pub fn verify_prop3(
    dim: usize,
    m: usize,
    trials: usize,
    dist: &RadiusDistribution,
    seed: u64,
) -> Result<Prop3Estimate> {
    if m <= 1 {
        return Err(Error::Precondition(format!(
            "sample size must exceed 1, got {m}"
        )));
    }
    if let RadiusDistribution::PointMass(_) = dist {
        return Err(Error::Precondition(
            "the feature law must be continuous, not a point mass".into(),
        ));
    }
    if dim == 0 || trials == 0 {
        return Err(invalid!("dimension and trial count must be positive"));
    }
    let chunks = trials.div_ceil(CHUNK);
    let successes: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(
                seed,
                &[tag::THEORY, sub::PROP3, dim as u64, m as u64, c as u64],
            );
            let n = CHUNK.min(trials - c * CHUNK);
            let (mut a, mut b) = (vec![0.0; dim], vec![0.0; dim]);
            let mut wins = 0;
            for _ in 0..n {
                let (mut r0, mut r_bar) = (0.0f64, 0.0f64);
                for _ in 0..m {
                    dist.draw(dim, &mut rng, &mut a);
                    dist.draw(dim, &mut rng, &mut b);
                    let n0: f64 = a.iter().map(|v| v * v).sum();
                    let nb: f64 = a.iter().zip(&b).map(|(x, y)| (x + y) * (x + y) / 4.0).sum();
                    r0 = r0.max(n0);
                    r_bar = r_bar.max(nb);
                }
                wins += (r_bar < r0) as usize;
            }
            wins
        })
        .sum();
    let estimate = successes as f64 / trials as f64;
    let stderr = (estimate * (1.0 - estimate) / trials as f64).sqrt();
    let lower = estimate - 3.0 * stderr;
    Ok(Prop3Estimate {
        dim,
        m,
        trials,
        successes,
        estimate,
        stderr,
        lower,
        passes: lower > 0.5,
    })
}
