//! Edge-label prediction from concatenated endpoint embeddings.
//!
//! An edge `{u, v}` is represented by `center(min(u, v)) ++ center(max(u, v))`
//! and fed through a ReLU feed-forward network with a sigmoid output per
//! label. The loss is the multi-label binary cross-entropy, and its gradient
//! reaches both the classifier and the endpoint rows of the center table.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, sigmoid, Matrix};
use crate::params::{EmbeddingTables, ModelGrads, RowGrads};
use crate::rng::{self, Purpose};
use crate::Real;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside the log.
pub const PROB_CLAMP: Real = 1e-12;

/// Examples per parallel work item. Partial gradients are summed in chunk
/// order, so results do not depend on the thread count.
const CHUNK: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `out x in`
    pub weights: Matrix,
    pub bias: Vec<Real>,
}

impl DenseLayer {
    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    fn forward_into(&self, input: &[Real], out: &mut Vec<Real>) {
        out.clear();
        out.extend((0..self.outputs()).map(|o| dot(self.weights.row(o), input) + self.bias[o]));
    }
}

/// Feed-forward classifier: ReLU hidden layers, sigmoid output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<DenseLayer>,
}

impl MlpParams {
    /// Glorot-uniform weights, zero biases.
    pub fn new(input: usize, hidden: &[usize], output: usize, seed: u64) -> Self {
        let mut rng = rng::stream(seed, Purpose::ClassifierInit, 0);
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
                DenseLayer {
                    weights: Matrix::from_fn(fan_out, fan_in, |_, _| {
                        rng.random_range(-bound..=bound) as Real
                    }),
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        MlpParams { layers }
    }

    /// All-zero parameters with the given layer sizes.
    pub fn zeros(sizes: &[usize]) -> Self {
        MlpParams {
            layers: sizes
                .windows(2)
                .map(|w| DenseLayer {
                    weights: Matrix::zeros(w[1], w[0]),
                    bias: vec![0.0; w[1]],
                })
                .collect(),
        }
    }

    pub fn input_size(&self) -> usize {
        self.layers.first().map_or(0, DenseLayer::inputs)
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::outputs)
    }

    /// Parameter tensors in optimizer order: `W1, b1, W2, b2, ...`.
    pub fn tensors(&self) -> Vec<&[Real]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [Real]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

/// One labeled edge; `target` is the multi-hot label vector.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeExample {
    pub u: usize,
    pub v: usize,
    pub target: Vec<Real>,
}

impl EdgeExample {
    pub fn new(u: usize, v: usize, target: Vec<Real>) -> Self {
        EdgeExample { u, v, target }
    }

    fn endpoints(&self) -> (usize, usize) {
        (self.u.min(self.v), self.u.max(self.v))
    }
}

/// Concatenated center rows of the endpoints, lower dense index first.
pub fn compose_edge_embedding(u: usize, v: usize, tables: &EmbeddingTables) -> Vec<Real> {
    let (lo, hi) = (u.min(v), u.max(v));
    let mut out = Vec::with_capacity(2 * tables.dim());
    out.extend_from_slice(tables.center.row(lo));
    out.extend_from_slice(tables.center.row(hi));
    out
}

/// Layer inputs and pre-activations kept for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct ForwardCache {
    /// `inputs[k]` is the input of layer `k` (`inputs[0]` is the edge vector).
    pub inputs: Vec<Vec<Real>>,
    /// Pre-activation of every layer.
    pub pre: Vec<Vec<Real>>,
}

/// Runs the classifier, returning per-label probabilities and the cache.
pub fn mlp_forward(x: &[Real], params: &MlpParams) -> (Vec<Real>, ForwardCache) {
    assert_eq!(x.len(), params.input_size(), "classifier input size");
    let mut cache = ForwardCache::default();
    let mut current = x.to_vec();
    let last = params.layers.len() - 1;
    for (k, layer) in params.layers.iter().enumerate() {
        let mut z = Vec::new();
        layer.forward_into(&current, &mut z);
        let next = if k == last {
            z.iter().map(|&s| sigmoid(s)).collect()
        } else {
            z.iter().map(|&s| s.max(0.0)).collect()
        };
        cache.inputs.push(std::mem::replace(&mut current, next));
        cache.pre.push(z);
    }
    (current, cache)
}

/// Multi-label binary cross-entropy, summed over labels.
pub fn bce_loss(target: &[Real], predicted: &[Real]) -> Real {
    assert_eq!(target.len(), predicted.len(), "label vector lengths differ");
    target
        .iter()
        .zip(predicted)
        .map(|(&y, &p)| {
            let (y, p) = (y as f64, (p as f64).clamp(PROB_CLAMP as f64, 1.0 - PROB_CLAMP as f64));
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum::<f64>() as Real
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelationalBatchResult {
    /// Mean per-edge loss.
    pub loss: Real,
    pub grads: ModelGrads,
}

fn check_output(predicted: &[Real], example: &EdgeExample) -> Result<()> {
    if predicted.iter().all(|p| p.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            block: "classifier activations".into(),
            detail: format!("edge ({}, {})", example.u, example.v),
        })
    }
}

/// Mean relational loss without gradients.
pub fn relational_loss(batch: &[EdgeExample], tables: &EmbeddingTables, params: &MlpParams) -> Result<Real> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let partial: Vec<Result<Real>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut total = 0.0;
            for example in chunk {
                let x = compose_edge_embedding(example.u, example.v, tables);
                let (p, _) = mlp_forward(&x, params);
                check_output(&p, example)?;
                total += bce_loss(&example.target, &p);
            }
            Ok(total)
        })
        .collect();
    let mut total = 0.0;
    for p in partial {
        total += p?;
    }
    Ok(total / batch.len() as Real)
}

struct Partial {
    loss: Real,
    classifier: Vec<Vec<Real>>,
    center: RowGrads,
}

fn backward_chunk(
    chunk: &[EdgeExample],
    scale: Real,
    tables: &EmbeddingTables,
    params: &MlpParams,
) -> Result<Partial> {
    let dim = tables.dim();
    let mut classifier: Vec<Vec<Real>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
    let mut center = RowGrads::new(dim);
    let mut loss = 0.0;
    for example in chunk {
        let (lo, hi) = example.endpoints();
        let x = compose_edge_embedding(lo, hi, tables);
        let (p, cache) = mlp_forward(&x, params);
        check_output(&p, example)?;
        loss += bce_loss(&example.target, &p);

        // d loss / d z at the sigmoid output.
        let mut delta: Vec<Real> = p
            .iter()
            .zip(&example.target)
            .map(|(p, y)| (p - y) * scale)
            .collect();
        for k in (0..params.layers.len()).rev() {
            let layer = &params.layers[k];
            let input = &cache.inputs[k];
            let (w_grad, rest) = classifier[2 * k..].split_at_mut(1);
            let w_grad = &mut w_grad[0];
            let b_grad = &mut rest[0];
            let inputs = layer.inputs();
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                b_grad[o] += d;
                let row = &mut w_grad[o * inputs..(o + 1) * inputs];
                for (g, &h) in row.iter_mut().zip(input) {
                    *g += d * h;
                }
            }
            let mut back = vec![0.0; inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    for (b, &w) in back.iter_mut().zip(layer.weights.row(o)) {
                        *b += d * w;
                    }
                }
            }
            if k > 0 {
                for (b, &z) in back.iter_mut().zip(&cache.pre[k - 1]) {
                    if z <= 0.0 {
                        *b = 0.0;
                    }
                }
            }
            delta = back;
        }
        for (g, d) in center.row_mut(lo).iter_mut().zip(&delta[..dim]) {
            *g += d;
        }
        for (g, d) in center.row_mut(hi).iter_mut().zip(&delta[dim..]) {
            *g += d;
        }
    }
    Ok(Partial {
        loss,
        classifier,
        center,
    })
}

/// Mean relational loss of `batch` with exact gradients for every
/// classifier tensor and the endpoint rows of the center table.
pub fn relational_backward(
    batch: &[EdgeExample],
    tables: &EmbeddingTables,
    params: &MlpParams,
) -> Result<RelationalBatchResult> {
    if batch.is_empty() {
        return Err(Error::Validation("relational batch is empty".into()));
    }
    if params.input_size() != 2 * tables.dim() {
        return Err(Error::Validation(format!(
            "classifier expects {} inputs, edge vectors have {}",
            params.input_size(),
            2 * tables.dim()
        )));
    }
    let scale = 1.0 / batch.len() as Real;
    let partials: Vec<Result<Partial>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| backward_chunk(chunk, scale, tables, params))
        .collect();
    let mut grads = ModelGrads::new(tables.dim());
    let mut classifier: Option<Vec<Vec<Real>>> = None;
    let mut loss = 0.0;
    for partial in partials {
        let partial = partial?;
        loss += partial.loss;
        grads.center.merge(&partial.center);
        match &mut classifier {
            None => classifier = Some(partial.classifier),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&partial.classifier) {
                    for (x, y) in a.iter_mut().zip(g) {
                        *x += y;
                    }
                }
            }
        }
    }
    grads.classifier = classifier;
    Ok(RelationalBatchResult {
        loss: loss * scale,
        grads,
    })
}
