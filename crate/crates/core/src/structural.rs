//! Skip-gram structural loss with negative sampling.
//!
//! A pair `(v, u)` has center node `v` and context node `u`. Its score is
//! `center(v) . context(u)`; the center table is only read through the
//! center role and the context table only through the context role.

use rand::distr::Distribution;
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::matrix::{axpy, dot, sigmoid};
use crate::params::{EmbeddingTables, ModelGrads};
use crate::walk::TrainPair;
use crate::Real;

/// Scores are clamped to this magnitude before the log-sigmoid.
pub const SCORE_CLAMP: Real = 35.0;

/// Negative-sampling distribution with weight `degree^power` per node.
#[derive(Clone, Debug)]
pub struct NoiseDistribution {
    probabilities: Vec<f64>,
    alias: WeightedAliasIndex<f64>,
    power: f64,
}

impl NoiseDistribution {
    pub fn from_degrees(graph: &Graph, power: f64) -> Result<Self> {
        let weights: Vec<f64> = (0..graph.node_count())
            .map(|v| (graph.degree(v) as f64).powf(power))
            .collect();
        Self::from_weights(weights, power)
    }

    pub fn from_weights(weights: Vec<f64>, power: f64) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || total <= 0.0 {
            return Err(Error::Validation("noise weights must be non-negative with a positive sum".into()));
        }
        let positive = weights.iter().filter(|&&w| w > 0.0).count();
        if positive < 2 {
            return Err(Error::Validation(
                "negative sampling needs at least two nodes with positive weight".into(),
            ));
        }
        let probabilities = weights.iter().map(|w| w / total).collect();
        let alias = WeightedAliasIndex::new(weights)
            .map_err(|e| Error::Validation(format!("noise distribution: {e}")))?;
        Ok(NoiseDistribution {
            probabilities,
            alias,
            power,
        })
    }

    pub fn probability(&self, node: usize) -> f64 {
        self.probabilities[node]
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        self.alias.sample(rng)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StructuralBatchResult {
    /// Mean per-pair loss.
    pub loss: Real,
    pub grads: ModelGrads,
}

/// Reference `Pr(u | v)` under the full softmax over context rows.
///
/// O(|V|) per call; used for checking, never for training.
pub fn softmax_prob(context: usize, center: usize, tables: &EmbeddingTables) -> Real {
    let c = tables.center.row(center);
    let scores: Vec<Real> = (0..tables.node_count())
        .map(|u| dot(c, tables.context.row(u)))
        .collect();
    let max = scores.iter().copied().fold(Real::NEG_INFINITY, Real::max);
    let norm: Real = scores.iter().map(|s| (s - max).exp()).sum();
    (scores[context] - max).exp() / norm
}

/// Mean of `-ln Pr(context | center)` under the full softmax.
pub fn full_softmax_loss(pairs: &[TrainPair], tables: &EmbeddingTables) -> Real {
    let total: Real = pairs
        .iter()
        .map(|p| -softmax_prob(p.context, p.center, tables).ln())
        .sum();
    total / pairs.len() as Real
}

/// Draws `negatives` noise nodes per pair, redrawing any that equal the
/// pair's context. Row-major, `batch.len() * negatives` entries.
pub fn draw_negatives(
    batch: &[TrainPair],
    negatives: usize,
    noise: &NoiseDistribution,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let mut out = Vec::with_capacity(batch.len() * negatives);
    for pair in batch {
        for _ in 0..negatives {
            let mut n = noise.sample(rng);
            while n == pair.context {
                n = noise.sample(rng);
            }
            out.push(n);
        }
    }
    out
}

/// `-ln sigmoid(x)` and its derivative, with `x` clamped.
#[inline]
fn neg_log_sigmoid(x: Real) -> (Real, Real) {
    if !(-SCORE_CLAMP..=SCORE_CLAMP).contains(&x) {
        let c = x.clamp(-SCORE_CLAMP, SCORE_CLAMP);
        return (-sigmoid(c).ln(), 0.0);
    }
    (-sigmoid(x).ln(), sigmoid(x) - 1.0)
}

/// Negative-sampling loss and exact gradients for fixed negatives.
///
/// `negatives` holds `k` nodes per pair, row-major.
pub fn loss_with_negatives(
    batch: &[TrainPair],
    negatives: &[usize],
    k: usize,
    tables: &EmbeddingTables,
) -> StructuralBatchResult {
    assert_eq!(negatives.len(), batch.len() * k, "negatives per pair");
    let dim = tables.dim();
    let mut grads = ModelGrads::new(dim);
    if batch.is_empty() {
        return StructuralBatchResult { loss: 0.0, grads };
    }
    let scale = 1.0 / batch.len() as Real;
    let mut total = 0.0;
    let mut center_grad = vec![0.0; dim];
    for (pair, negs) in batch.iter().zip(negatives.chunks_exact(k.max(1))) {
        let center = tables.center.row(pair.center);
        center_grad.iter_mut().for_each(|x| *x = 0.0);

        let pos = tables.context.row(pair.context);
        let (loss, d) = neg_log_sigmoid(dot(center, pos));
        total += loss;
        axpy(d * scale, pos, &mut center_grad);
        axpy(d * scale, center, grads.context.row_mut(pair.context));

        for &n in &negs[..k] {
            let neg = tables.context.row(n);
            // -ln sigmoid(-s) has derivative sigmoid(s) in s.
            let (loss, d) = neg_log_sigmoid(-dot(center, neg));
            total += loss;
            axpy(-d * scale, neg, &mut center_grad);
            axpy(-d * scale, center, grads.context.row_mut(n));
        }
        axpy(1.0, &center_grad, grads.center.row_mut(pair.center));
    }
    StructuralBatchResult {
        loss: total * scale,
        grads,
    }
}

/// Negative-sampling skip-gram loss of a pair batch with `k` noise nodes
/// per pair.
pub fn negative_sampling_loss(
    batch: &[TrainPair],
    k: usize,
    tables: &EmbeddingTables,
    noise: &NoiseDistribution,
    rng: &mut ChaCha8Rng,
) -> StructuralBatchResult {
    let negatives = draw_negatives(batch, k, noise, rng);
    loss_with_negatives(batch, &negatives, k, tables)
}
