//! Trainable parameters and the lazy sparse Adam optimizer.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::relational::MlpParams;
use crate::rng::{self, Purpose};
use crate::Real;

/// Center and context embedding tables, one row per node.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTables {
    pub center: Matrix,
    pub context: Matrix,
}

impl EmbeddingTables {
    pub fn dim(&self) -> usize {
        self.center.cols()
    }

    pub fn node_count(&self) -> usize {
        self.center.rows()
    }
}

/// Center rows uniform in `[-0.5/d, 0.5/d]`, context rows zero.
pub fn init_embeddings(node_count: usize, dim: usize, seed: u64) -> Result<EmbeddingTables> {
    if dim == 0 {
        return Err(Error::Config("embedding dimension must be at least 1".into()));
    }
    let mut rng = rng::stream(seed, Purpose::EmbeddingInit, 0);
    let bound = 0.5 / dim as f64;
    let center = Matrix::from_fn(node_count, dim, |_, _| rng.random_range(-bound..=bound) as Real);
    Ok(EmbeddingTables {
        center,
        context: Matrix::zeros(node_count, dim),
    })
}

/// Gradient rows for a subset of an embedding table.
///
/// Rows are unique and kept in first-touched order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RowGrads {
    dim: usize,
    slots: HashMap<usize, usize>,
    rows: Vec<usize>,
    values: Vec<Real>,
}

impl RowGrads {
    pub fn new(dim: usize) -> Self {
        RowGrads {
            dim,
            ..Default::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Mutable gradient row, zero-initialized on first touch.
    pub fn row_mut(&mut self, row: usize) -> &mut [Real] {
        let dim = self.dim;
        let slot = match self.slots.get(&row) {
            Some(&s) => s,
            None => {
                let s = self.rows.len();
                self.slots.insert(row, s);
                self.rows.push(row);
                self.values.resize(self.values.len() + dim, 0.0);
                s
            }
        };
        &mut self.values[slot * dim..(slot + 1) * dim]
    }

    pub fn get(&self, row: usize) -> Option<&[Real]> {
        self.slots
            .get(&row)
            .map(|&s| &self.values[s * self.dim..(s + 1) * self.dim])
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[Real])> {
        self.rows
            .iter()
            .zip(self.values.chunks_exact(self.dim.max(1)))
            .map(|(&r, v)| (r, v))
    }

    pub fn scale(&mut self, factor: Real) {
        self.values.iter_mut().for_each(|x| *x *= factor);
    }

    /// Adds `other` into `self`, row by row in `other`'s order.
    pub fn merge(&mut self, other: &RowGrads) {
        for (row, values) in other.iter() {
            for (a, b) in self.row_mut(row).iter_mut().zip(values) {
                *a += b;
            }
        }
    }
}

/// Gradient of one batch over all parameter blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads {
    pub center: RowGrads,
    pub context: RowGrads,
    /// Dense gradients for each classifier tensor, in
    /// [`MlpParams::tensors`] order. `None` leaves the classifier untouched.
    pub classifier: Option<Vec<Vec<Real>>>,
}

impl ModelGrads {
    pub fn new(dim: usize) -> Self {
        ModelGrads {
            center: RowGrads::new(dim),
            context: RowGrads::new(dim),
            classifier: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment accumulators of one parameter block.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Vec<Real>,
    pub v: Vec<Real>,
}

impl Moments {
    pub fn zeros(len: usize) -> Self {
        Moments {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub center: Moments,
    pub context: Moments,
    pub classifier: Vec<Moments>,
}

impl AdamState {
    pub fn new(config: AdamConfig, tables: &EmbeddingTables, classifier: Option<&MlpParams>) -> Self {
        let n = tables.center.as_slice().len();
        AdamState {
            config,
            t: 0,
            center: Moments::zeros(n),
            context: Moments::zeros(n),
            classifier: classifier
                .map(|mlp| mlp.tensors().iter().map(|t| Moments::zeros(t.len())).collect())
                .unwrap_or_default(),
        }
    }
}

struct StepScalars {
    lr: Real,
    beta1: Real,
    beta2: Real,
    eps: Real,
    correction1: Real,
    correction2: Real,
}

impl StepScalars {
    fn new(config: &AdamConfig, t: u64) -> Self {
        let t = t as i32;
        StepScalars {
            lr: config.learning_rate as Real,
            beta1: config.beta1 as Real,
            beta2: config.beta2 as Real,
            eps: config.epsilon as Real,
            correction1: 1.0 - (config.beta1 as Real).powi(t),
            correction2: 1.0 - (config.beta2 as Real).powi(t),
        }
    }

    #[inline]
    fn apply(&self, params: &mut [Real], grads: &[Real], m: &mut [Real], v: &mut [Real]) {
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = m[i] / self.correction1;
            let v_hat = v[i] / self.correction2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

fn check_finite<'a>(block: &str, values: impl IntoIterator<Item = (usize, &'a [Real])>) -> Result<()> {
    for (row, v) in values {
        if let Some(c) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                block: block.to_owned(),
                detail: format!("gradient entry ({row}, {c}) is {}", v[c]),
            });
        }
    }
    Ok(())
}

/// One Adam step with bias correction.
///
/// Embedding rows absent from `grads` keep their parameters and moments
/// unchanged. The step counter advances once per call. Gradients are
/// validated before any parameter is written.
pub fn adam_step(
    tables: &mut EmbeddingTables,
    classifier: Option<&mut MlpParams>,
    grads: &ModelGrads,
    state: &mut AdamState,
) -> Result<()> {
    let dim = tables.dim();
    for (name, g) in [("center embeddings", &grads.center), ("context embeddings", &grads.context)] {
        if !g.is_empty() && g.dim() != dim {
            return Err(Error::Validation(format!("{name} gradient has dimension {}", g.dim())));
        }
        if let Some(&row) = g.rows().iter().find(|&&r| r >= tables.node_count()) {
            return Err(Error::Validation(format!("{name} gradient row {row} out of range")));
        }
        check_finite(name, g.iter())?;
    }
    if let Some(dense) = &grads.classifier {
        let Some(mlp) = classifier.as_deref() else {
            return Err(Error::Validation("classifier gradient without classifier parameters".into()));
        };
        let shapes = mlp.tensors();
        if dense.len() != shapes.len() || dense.iter().zip(&shapes).any(|(g, p)| g.len() != p.len()) {
            return Err(Error::Validation("classifier gradient shape mismatch".into()));
        }
        if state.classifier.len() != shapes.len() {
            return Err(Error::Validation("optimizer state has no classifier moments".into()));
        }
        for (k, g) in dense.iter().enumerate() {
            check_finite(&format!("classifier tensor {k}"), [(0, g.as_slice())])?;
        }
    }

    state.t += 1;
    let step = StepScalars::new(&state.config, state.t);
    for (table, moments, g) in [
        (&mut tables.center, &mut state.center, &grads.center),
        (&mut tables.context, &mut state.context, &grads.context),
    ] {
        for (row, values) in g.iter() {
            let span = row * dim..(row + 1) * dim;
            step.apply(
                table.row_mut(row),
                values,
                &mut moments.m[span.clone()],
                &mut moments.v[span],
            );
        }
    }
    if let (Some(dense), Some(mlp)) = (&grads.classifier, classifier) {
        for ((params, g), moments) in mlp.tensors_mut().into_iter().zip(dense).zip(&mut state.classifier) {
            step.apply(params, g, &mut moments.m, &mut moments.v);
        }
    }
    Ok(())
}
