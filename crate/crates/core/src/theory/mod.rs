//! Executable checks of the pairwise risk theory.
//!
//! A query-prototype pair `x = (q, p)` with label `y = +1` (same class) or
//! `y = -1` is scored by `g(x) = beta - ||Phi(q) - p||^2`. The submodules check
//! the squared-risk decomposition of averaged sign predictors ([`risk`]), the
//! margin bound with a Monte Carlo Rademacher estimate ([`margin`]), radius
//! reduction by averaging ([`radius`]) and the train-time versus test-time
//! bound report ([`bound`]).

pub mod bound;
pub mod margin;
pub mod radius;
pub mod risk;

use crate::error::{invalid, Error, Result};

/// One labelled query-prototype pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseInstance {
    pub query: Vec<f64>,
    pub prototype: Vec<f64>,
    /// `+1` for a same-class pair, `-1` otherwise.
    pub label: i8,
}

impl PairwiseInstance {
    pub fn new(query: Vec<f64>, prototype: Vec<f64>, label: i8) -> Result<Self> {
        if query.len() != prototype.len() {
            return Err(Error::DimensionMismatch(format!(
                "query has {} entries, prototype {}",
                query.len(),
                prototype.len()
            )));
        }
        if label != 1 && label != -1 {
            return Err(invalid!("label must be +1 or -1, got {label}"));
        }
        if query.iter().chain(&prototype).any(|v| !v.is_finite()) {
            return Err(invalid!("pair features must be finite"));
        }
        Ok(Self {
            query,
            prototype,
            label,
        })
    }

    /// `g = beta - ||q - p||^2` with the query already encoded.
    pub fn score(&self, beta: f64) -> f64 {
        beta - self
            .query
            .iter()
            .zip(&self.prototype)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
    }
}

/// Number of pairs with `y g <= 0`, the empirical pairwise 0-1 error count.
pub fn pairwise_error_count(pairs: &[PairwiseInstance], beta: f64) -> usize {
    pairs
        .iter()
        .filter(|x| x.label as f64 * x.score(beta) <= 0.0)
        .count()
}
