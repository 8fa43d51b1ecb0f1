//! Cross-attention conditioning algebra and the image-conditioned noise predictor.
//!
//! [`cross_attention`] and [`concat_conditioning`] implement
//! `softmax(Q K^T / sqrt(d_k)) V` over text and weighted image tokens. The
//! predictor used by the pipeline realises image conditioning on the analytic
//! world as a tempered posterior: class priors `pi_k` become
//! `pi_k L_k(x_cond)^lambda` before the mixture noise predictor is evaluated.

use crate::diffusion::{
    log_softmax, mixture_eps_predictor, softmax, NoisePrediction, VarianceSchedule,
};
use crate::error::{invalid, Error, Result};
use crate::image::RasterImage;
use crate::world::GmmWorld;

/// Row-major matrix of tokens, one token per row.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenMatrix {
    rows: usize,
    dim: usize,
    values: Vec<f64>,
}

impl TokenMatrix {
    pub fn new(rows: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid!("token dimension must be positive"));
        }
        if values.len() != rows * dim {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {rows}x{dim} tokens",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid!("token values must be finite"));
        }
        Ok(Self { rows, dim, values })
    }

    /// A matrix with no tokens.
    pub fn empty(dim: usize) -> Result<Self> {
        Self::new(0, dim, Vec::new())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    fn scaled(&self, factor: f64) -> Self {
        Self {
            rows: self.rows,
            dim: self.dim,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }
}

/// Row-wise `softmax(Q K^T / sqrt(d_k))`.
pub fn attention_weights(q: &TokenMatrix, k: &TokenMatrix) -> Result<TokenMatrix> {
    if q.dim != k.dim {
        return Err(Error::DimensionMismatch(format!(
            "query dim {} vs key dim {}",
            q.dim, k.dim
        )));
    }
    if k.rows == 0 {
        return Err(invalid!("attention needs at least one key"));
    }
    let scale = 1.0 / (q.dim as f64).sqrt();
    let mut values = Vec::with_capacity(q.rows * k.rows);
    for i in 0..q.rows {
        let logits: Vec<f64> = (0..k.rows)
            .map(|j| {
                scale
                    * q.row(i)
                        .iter()
                        .zip(k.row(j))
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect();
        values.extend(softmax(&logits));
    }
    TokenMatrix::new(q.rows, k.rows, values)
}

/// `softmax(Q K^T / sqrt(d_k)) V`.
pub fn cross_attention(q: &TokenMatrix, k: &TokenMatrix, v: &TokenMatrix) -> Result<TokenMatrix> {
    if k.rows != v.rows {
        return Err(Error::DimensionMismatch(format!(
            "{} keys vs {} values",
            k.rows, v.rows
        )));
    }
    let w = attention_weights(q, k)?;
    let mut out = vec![0.0; q.rows * v.dim];
    for i in 0..q.rows {
        let dst = &mut out[i * v.dim..(i + 1) * v.dim];
        for (j, a) in w.row(i).iter().enumerate() {
            for (o, x) in dst.iter_mut().zip(v.row(j)) {
                *o += a * x;
            }
        }
    }
    TokenMatrix::new(q.rows, v.dim, out)
}

fn stack(top: &TokenMatrix, bottom: &TokenMatrix) -> Result<TokenMatrix> {
    if top.dim != bottom.dim {
        return Err(Error::DimensionMismatch(format!(
            "token dims {} and {} cannot be stacked",
            top.dim, bottom.dim
        )));
    }
    let mut values = top.values.clone();
    values.extend_from_slice(&bottom.values);
    TokenMatrix::new(top.rows + bottom.rows, top.dim, values)
}

/// Stacks text tokens over image tokens scaled by `lambda_img`.
pub fn concat_conditioning(
    txt_k: &TokenMatrix,
    txt_v: &TokenMatrix,
    img_k: &TokenMatrix,
    img_v: &TokenMatrix,
    lambda_img: f64,
) -> Result<(TokenMatrix, TokenMatrix)> {
    if !(lambda_img >= 0.0 && lambda_img.is_finite()) {
        return Err(invalid!(
            "lambda_img must be finite and >= 0, got {lambda_img}"
        ));
    }
    if txt_k.rows != txt_v.rows || img_k.rows != img_v.rows {
        return Err(Error::DimensionMismatch(
            "key and value token counts differ".into(),
        ));
    }
    let k = stack(txt_k, &img_k.scaled(lambda_img))?;
    let v = stack(txt_v, &img_v.scaled(lambda_img))?;
    Ok((k, v))
}

/// Image conditioning of the denoiser.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningConfig {
    pub lambda_img: f64,
    pub condition_image: Option<RasterImage>,
    pub text_tokens: Option<TokenMatrix>,
}

/// Default conditioning strength.
pub const DEFAULT_LAMBDA_IMG: f64 = 0.8;

impl ConditioningConfig {
    pub fn new(lambda_img: f64, condition_image: Option<RasterImage>) -> Result<Self> {
        if !(lambda_img >= 0.0 && lambda_img.is_finite()) {
            return Err(invalid!(
                "lambda_img must be finite and >= 0, got {lambda_img}"
            ));
        }
        Ok(Self {
            lambda_img,
            condition_image,
            text_tokens: None,
        })
    }

    pub fn unconditional() -> Self {
        Self {
            lambda_img: 0.0,
            condition_image: None,
            text_tokens: None,
        }
    }
}

/// Normalised log prior weights `log pi_k + lambda log L_k(x_cond)`.
pub fn tempered_log_prior(world: &GmmWorld, cfg: &ConditioningConfig) -> Vec<f64> {
    let k = world.class_count();
    let base = -(k as f64).ln();
    match &cfg.condition_image {
        Some(x) if cfg.lambda_img > 0.0 => {
            let logits: Vec<f64> = world
                .log_likelihoods(x)
                .into_iter()
                .map(|l| base + cfg.lambda_img * l)
                .collect();
            log_softmax(&logits)
        }
        _ => vec![base; k],
    }
}

/// Tempered class weights as probabilities.
pub fn tempered_weights(world: &GmmWorld, cfg: &ConditioningConfig) -> Vec<f64> {
    tempered_log_prior(world, cfg)
        .into_iter()
        .map(f64::exp)
        .collect()
}

/// Mixture noise predictor under the tempered prior.
pub fn conditioned_eps_predictor(
    s: &VarianceSchedule,
    world: &GmmWorld,
    x_t: &RasterImage,
    t: usize,
    cfg: &ConditioningConfig,
) -> Result<NoisePrediction> {
    mixture_eps_predictor(s, world, &tempered_log_prior(world, cfg), x_t, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::gmm_eps_predictor;
    use crate::rng::stream;
    use proptest::prelude::*;

    fn tm(rows: usize, dim: usize, v: &[f64]) -> TokenMatrix {
        TokenMatrix::new(rows, dim, v.to_vec()).unwrap()
    }

    #[test]
    fn single_key_copies_its_value() {
        let q = tm(3, 2, &[1.0, 2.0, -3.0, 0.5, 0.0, 9.0]);
        let k = tm(1, 2, &[0.7, -0.1]);
        let v = tm(1, 3, &[4.0, 5.0, 6.0]);
        let out = cross_attention(&q, &k, &v).unwrap();
        for i in 0..3 {
            assert_eq!(out.row(i), &[4.0, 5.0, 6.0]);
        }
    }

    #[test]
    fn zero_query_averages_values() {
        let q = tm(2, 2, &[0.0; 4]);
        let k = tm(3, 2, &[1.0, 2.0, -1.0, 0.0, 5.0, 5.0]);
        let v = tm(3, 1, &[1.0, 2.0, 6.0]);
        let out = cross_attention(&q, &k, &v).unwrap();
        assert!((out.row(0)[0] - 3.0).abs() < 1e-12);
        assert!((out.row(1)[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn two_by_two_matches_hand_arithmetic() {
        let q = tm(2, 2, &[1.0, 0.0, 0.5, -1.0]);
        let k = tm(2, 2, &[2.0, 1.0, 0.0, 3.0]);
        let v = tm(2, 2, &[1.0, -1.0, 4.0, 2.0]);
        let out = cross_attention(&q, &k, &v).unwrap();
        let r = 2f64.sqrt();
        // row 0: logits (2, 0)/sqrt2; row 1: (0, -3)/sqrt2
        let rows = [[2.0 / r, 0.0], [0.0, -3.0 / r]];
        for (i, l) in rows.iter().enumerate() {
            let (e0, e1) = (l[0].exp(), l[1].exp());
            let (a0, a1) = (e0 / (e0 + e1), e1 / (e0 + e1));
            let want = [a0 + a1 * 4.0, -a0 + a1 * 2.0];
            for (got, w) in out.row(i).iter().zip(want) {
                assert!((got - w).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let a = tm(2, 2, &[0.0; 4]);
        let b = tm(3, 2, &[0.0; 6]);
        let c = tm(2, 3, &[0.0; 6]);
        assert!(cross_attention(&a, &a, &b).is_err());
        assert!(cross_attention(&c, &a, &a).is_err());
        assert!(concat_conditioning(&a, &a, &c, &c, 1.0).is_err());
        assert!(TokenMatrix::new(1, 0, vec![]).is_err());
        assert!(TokenMatrix::new(1, 2, vec![0.0]).is_err());
    }

    #[test]
    fn concatenation_scales_image_rows() {
        let tk = tm(1, 2, &[1.0, 2.0]);
        let tv = tm(1, 2, &[3.0, 4.0]);
        let ik = tm(2, 2, &[1.0, -1.0, 0.5, 2.0]);
        let iv = tm(2, 2, &[2.0, 2.0, -4.0, 8.0]);
        let (k, v) = concat_conditioning(&tk, &tv, &ik, &iv, 0.5).unwrap();
        assert_eq!(k.rows(), 3);
        assert_eq!(k.row(0), &[1.0, 2.0]);
        assert_eq!(k.row(2), &[0.25, 1.0]);
        assert_eq!(v.row(1), &[1.0, 1.0]);
        assert_eq!(v.row(2), &[-2.0, 4.0]);
        let empty = TokenMatrix::empty(2).unwrap();
        let (k, v) = concat_conditioning(&empty, &empty, &ik, &iv, 1.0).unwrap();
        assert_eq!((k, v), (ik.clone(), iv.clone()));
        // zero weight: image keys give logit 0 and contribute zero values
        let (k, v) = concat_conditioning(&tk, &tv, &ik, &iv, 0.0).unwrap();
        let q = tm(1, 2, &[0.3, -0.2]);
        let out = cross_attention(&q, &k, &v).unwrap();
        let l = (0.3 * 1.0 - 0.2 * 2.0) / 2f64.sqrt();
        let a = l.exp() / (l.exp() + 2.0);
        assert!((out.row(0)[0] - a * 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_lambda_recovers_unconditional_predictor() {
        let s = VarianceSchedule::default();
        let world = GmmWorld::default_world();
        let mut rng = stream(1, &[]);
        let x = world.sample(5, &mut rng);
        let cfg = ConditioningConfig::new(0.0, Some(world.sample(2, &mut rng))).unwrap();
        for &t in &[1usize, 100, 700] {
            let a = conditioned_eps_predictor(&s, &world, &x, t, &cfg).unwrap();
            let b = gmm_eps_predictor(&s, &world, &x, t).unwrap();
            for (p, q) in a.epsilon_hat.iter().zip(&b.epsilon_hat) {
                assert!((p - q).abs() <= 1e-12);
            }
        }
        let absent = ConditioningConfig::new(3.0, None).unwrap();
        let c = conditioned_eps_predictor(&s, &world, &x, 9, &absent).unwrap();
        assert_eq!(c, gmm_eps_predictor(&s, &world, &x, 9).unwrap());
    }

    #[test]
    fn equidistant_condition_leaves_weights_unchanged() {
        let a = RasterImage::new(2, 1, vec![1.0, 0.0]).unwrap();
        let b = RasterImage::new(2, 1, vec![-1.0, 0.0]).unwrap();
        let world = GmmWorld::new(vec![a, b], 0.5).unwrap();
        let mid = RasterImage::new(2, 1, vec![0.0, 3.0]).unwrap();
        let w = tempered_weights(&world, &ConditioningConfig::new(7.0, Some(mid)).unwrap());
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn strong_conditioning_concentrates_on_nearest_class() {
        let world = GmmWorld::default_world();
        let mut rng = stream(2, &[]);
        for k in 0..world.class_count() {
            let x = world.sample(k, &mut rng);
            let w = tempered_weights(
                &world,
                &ConditioningConfig::new(1e3, Some(x.clone())).unwrap(),
            );
            let nearest = world.nearest_template(&x);
            assert!(w[nearest] > 1.0 - 1e-9);
        }
    }

    proptest! {
        #[test]
        fn attention_rows_are_distributions(q in proptest::collection::vec(-5.0f64..5.0, 6),
                                            k in proptest::collection::vec(-5.0f64..5.0, 8)) {
            let w = attention_weights(&tm(3, 2, &q), &tm(4, 2, &k)).unwrap();
            for i in 0..3 {
                prop_assert!(w.row(i).iter().all(|a| *a >= 0.0));
                prop_assert!((w.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn attention_is_permutation_invariant(q in proptest::collection::vec(-3.0f64..3.0, 4),
                                              k in proptest::collection::vec(-3.0f64..3.0, 6),
                                              v in proptest::collection::vec(-3.0f64..3.0, 9),
                                              shift in 0usize..3) {
            let (q, k, v) = (tm(2, 2, &q), tm(3, 2, &k), tm(3, 3, &v));
            let perm: Vec<usize> = (0..3).map(|i| (i + shift) % 3).collect();
            let pk: Vec<f64> = perm.iter().flat_map(|&i| k.row(i).to_vec()).collect();
            let pv: Vec<f64> = perm.iter().flat_map(|&i| v.row(i).to_vec()).collect();
            let a = cross_attention(&q, &k, &v).unwrap();
            let b = cross_attention(&q, &tm(3, 2, &pk), &tm(3, 3, &pv)).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn tempered_weights_are_distributions(seed in any::<u64>(), lambda in 0.0f64..50.0) {
            let world = GmmWorld::default_world();
            let x = world.sample((seed % 16) as usize, &mut stream(seed, &[]));
            let w = tempered_weights(&world, &ConditioningConfig::new(lambda, Some(x)).unwrap());
            prop_assert!(w.iter().all(|p| *p >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
