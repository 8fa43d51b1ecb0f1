//! Train-time augmentation bound versus the test-time aggregated bound.
//!
//! Both right-hand sides share the shape
//! `R_rho + (2 C_enc B_X L_enc / rho) r / sqrt(n) + sqrt(log(1/delta) / (2 n))`.
//! The train-time bound runs on `m_base (M_tr + 1)` augmented base pairs with
//! radius `r0_aug` and carries an extra distribution-shift term that is only
//! printed symbolically. The test-time bound runs on `m_novel` novel pairs
//! whose difference features are averaged over `M_test + 1` views.

use rayon::prelude::*;

use super::margin::{confidence_term, sub, LinearEncoder, PairwiseWorld};
use super::risk::ramp_loss;
use crate::error::{invalid, Error, Result};
use crate::rng::{stream, tag, Rng};

/// Inputs of the comparison. `c_enc` has no default and must be supplied.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundComparisonParams {
    pub m_base: usize,
    pub m_novel: usize,
    pub m_tr: usize,
    pub m_test: usize,
    pub c_enc: Option<f64>,
    pub rho: f64,
    pub delta: f64,
    pub beta: f64,
    pub resamples: usize,
    pub seed: u64,
}

impl BoundComparisonParams {
    /// Defaults for everything except `c_enc`.
    pub fn with_c_enc(c_enc: Option<f64>, beta: f64) -> Self {
        Self {
            m_base: 200,
            m_novel: 25,
            m_tr: 1,
            m_test: 1,
            c_enc,
            rho: 1.0,
            delta: 0.1,
            beta,
            resamples: 10_000,
            seed: 0,
        }
    }
}

/// One evaluated right-hand side.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundRow {
    pub setting: &'static str,
    pub sample_size: usize,
    pub radius: f64,
    pub b_x: f64,
    pub l_enc: f64,
    pub margin_risk: f64,
    pub complexity_term: f64,
    pub confidence_term: f64,
    pub rhs: f64,
    /// Terms that are part of the bound but not evaluated.
    pub symbolic: &'static str,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundComparison {
    pub c_enc: f64,
    pub rows: Vec<BoundRow>,
    pub resamples: usize,
    /// Resamples with aggregated radius strictly below the original radius.
    pub wins: usize,
    pub fraction: f64,
    pub mean_r0: f64,
    pub mean_r_hat: f64,
    pub passes: bool,
}

/// A pair drawn with extra views from the same component.
struct Draw {
    comp: usize,
    views: Vec<Vec<f64>>,
}

fn draw(world: &PairwiseWorld, m: usize, extra: usize, rng: &mut Rng) -> Vec<Draw> {
    (0..m)
        .map(|_| {
            let comp = world.draw_component(rng);
            let views = (0..=extra).map(|_| world.draw_offset(comp, rng)).collect();
            Draw { comp, views }
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn mean_view(views: &[Vec<f64>]) -> Vec<f64> {
    let n = views.len() as f64;
    (0..views[0].len())
        .map(|i| views.iter().map(|v| v[i]).sum::<f64>() / n)
        .collect()
}

struct Terms {
    c_enc: f64,
    l_enc: f64,
    rho: f64,
    delta: f64,
    beta: f64,
}

impl Terms {
    /// Evaluates the bound on difference features `omegas` with labels and query norms.
    fn row(
        &self,
        setting: &'static str,
        omegas: &[(Vec<f64>, i8)],
        b_x: f64,
        symbolic: &'static str,
    ) -> BoundRow {
        let n = omegas.len();
        let radius = omegas.iter().map(|(o, _)| norm(o)).fold(0.0, f64::max);
        let margin_risk = omegas
            .iter()
            .map(|(o, y)| {
                let g = self.beta - norm(o).powi(2);
                ramp_loss(*y as f64 * g, self.rho)
            })
            .sum::<f64>()
            / n as f64;
        let complexity_term =
            2.0 * self.c_enc * b_x * self.l_enc / self.rho * radius / (n as f64).sqrt();
        let confidence = confidence_term(self.delta, n);
        BoundRow {
            setting,
            sample_size: n,
            radius,
            b_x,
            l_enc: self.l_enc,
            margin_risk,
            complexity_term,
            confidence_term: confidence,
            rhs: margin_risk + complexity_term + confidence,
            symbolic,
        }
    }
}

fn query_norm(world: &PairwiseWorld, offset: &[f64]) -> f64 {
    (world.homogeneous().powi(2) + offset.iter().map(|v| v * v).sum::<f64>()).sqrt()
}

fn label(comp: usize) -> i8 {
    if comp == 0 {
        1
    } else {
        -1
    }
}

/// Evaluates both bounds with the identity encoder and audits `r_hat < r0`.
pub fn bound_comparison_report(
    base: &PairwiseWorld,
    novel: &PairwiseWorld,
    params: &BoundComparisonParams,
) -> Result<BoundComparison> {
    let c_enc = params
        .c_enc
        .ok_or_else(|| Error::Config("the encoder constant C_enc must be supplied".into()))?;
    if !(c_enc > 0.0 && c_enc.is_finite()) {
        return Err(invalid!("C_enc must be positive and finite"));
    }
    if params.m_base == 0 || params.m_novel == 0 || params.resamples == 0 {
        return Err(invalid!("sample sizes and resamples must be positive"));
    }
    if params.rho.is_nan()
        || params.rho <= 0.0
        || !(0.0..1.0).contains(&params.delta)
        || params.delta == 0.0
    {
        return Err(invalid!("rho must be positive and delta in (0, 1)"));
    }
    if base.dim() != novel.dim() {
        return Err(Error::DimensionMismatch(
            "base and novel worlds differ in dimension".into(),
        ));
    }
    let encoder = LinearEncoder::identity(base.dim());
    let terms = Terms {
        c_enc,
        l_enc: encoder.lipschitz(),
        rho: params.rho,
        delta: params.delta,
        beta: params.beta,
    };

    let mut rng = stream(params.seed, &[tag::THEORY, sub::BOUND, 0]);
    let train = draw(base, params.m_base, params.m_tr, &mut rng);
    let train_omegas: Vec<(Vec<f64>, i8)> = train
        .iter()
        .flat_map(|d| d.views.iter().map(move |v| (v.clone(), label(d.comp))))
        .collect();
    let train_bx = train_omegas
        .iter()
        .map(|(o, _)| query_norm(base, o))
        .fold(0.0, f64::max);

    let test = draw(novel, params.m_novel, params.m_test, &mut rng);
    let original: Vec<(Vec<f64>, i8)> = test
        .iter()
        .map(|d| (d.views[0].clone(), label(d.comp)))
        .collect();
    let aggregated: Vec<(Vec<f64>, i8)> = test
        .iter()
        .map(|d| (mean_view(&d.views), label(d.comp)))
        .collect();
    let orig_bx = original
        .iter()
        .map(|(o, _)| query_norm(novel, o))
        .fold(0.0, f64::max);
    let all_bx = test
        .iter()
        .flat_map(|d| d.views.iter())
        .map(|o| query_norm(novel, o))
        .fold(0.0, f64::max);

    let rows = vec![
        terms.row("train_time_augmented", &train_omegas, train_bx, "+ disc_G"),
        terms.row("test_time_unaugmented", &original, orig_bx, ""),
        terms.row("test_time_aggregated", &aggregated, all_bx, ""),
    ];

    let radii: Vec<(f64, f64)> = (0..params.resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(params.seed, &[tag::THEORY, sub::BOUND, 1, r as u64]);
            let draws = draw(novel, params.m_novel, params.m_test, &mut rng);
            let r0 = draws.iter().map(|d| norm(&d.views[0])).fold(0.0, f64::max);
            let r_hat = draws
                .iter()
                .map(|d| norm(&mean_view(&d.views)))
                .fold(0.0, f64::max);
            (r0, r_hat)
        })
        .collect();
    let wins = radii.iter().filter(|(r0, rh)| rh < r0).count();
    let n = radii.len() as f64;
    let fraction = wins as f64 / n;
    Ok(BoundComparison {
        c_enc,
        rows,
        resamples: params.resamples,
        wins,
        fraction,
        mean_r0: radii.iter().map(|r| r.0).sum::<f64>() / n,
        mean_r_hat: radii.iter().map(|r| r.1).sum::<f64>() / n,
        passes: fraction > 0.5,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(m_tr: usize, m_test: usize) -> BoundComparisonParams {
        BoundComparisonParams {
            m_tr,
            m_test,
            resamples: 2000,
            ..BoundComparisonParams::with_c_enc(Some(1.0), 2.5)
        }
    }

    #[test]
    fn missing_constant_is_an_error() {
        let w = PairwiseWorld::default();
        let p = BoundComparisonParams::with_c_enc(None, 2.5);
        assert!(matches!(
            bound_comparison_report(&w, &w, &p),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn no_test_views_reproduce_unaugmented_bound() {
        let w = PairwiseWorld::default();
        let r =
            bound_comparison_report(&w, &PairwiseWorld::default_novel(), &params(1, 0)).unwrap();
        let (a, b) = (&r.rows[1], &r.rows[2]);
        assert_eq!(
            (
                a.sample_size,
                a.radius,
                a.b_x,
                a.margin_risk,
                a.complexity_term,
                a.confidence_term,
                a.rhs
            ),
            (
                b.sample_size,
                b.radius,
                b.b_x,
                b.margin_risk,
                b.complexity_term,
                b.confidence_term,
                b.rhs
            )
        );
        assert_eq!(r.wins, 0);
    }

    #[test]
    fn train_sample_factor() {
        let w = PairwiseWorld::default();
        let r = bound_comparison_report(&w, &w, &params(0, 1)).unwrap();
        assert_eq!(r.rows[0].sample_size, 200);
        let r = bound_comparison_report(&w, &w, &params(3, 1)).unwrap();
        assert_eq!(r.rows[0].sample_size, 800);
        assert_eq!(r.rows[0].symbolic, "+ disc_G");
        let c = &r.rows[0];
        let expect = 2.0 * c.b_x / 1.0 * c.radius / 800f64.sqrt();
        assert!((c.complexity_term - expect).abs() < 1e-12);
    }

    #[test]
    fn one_test_view_shrinks_radius() {
        let r = bound_comparison_report(
            &PairwiseWorld::default(),
            &PairwiseWorld::default_novel(),
            &params(1, 1),
        )
        .unwrap();
        assert!(r.passes, "{}", r.fraction);
        assert!(r.mean_r_hat < r.mean_r0);
    }
}
