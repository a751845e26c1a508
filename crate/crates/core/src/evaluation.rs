//! Multi-label node classification on learned embeddings.
//!
//! Nodes are split at random into a training and a test part. One
//! L2-regularized logistic regression per label is fit on the training
//! part; each test node then receives as many labels as it truly has, taken
//! in order of classifier score, and the predictions are scored with
//! Macro-F1. The whole procedure is repeated with fresh splits.

use std::io::Write;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{LabelSet, NodeLabelSet};
use crate::rng::{self, Purpose};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub train_ratios: Vec<f64>,
    pub repeats: usize,
    /// Coefficient of `0.5 * ||w||^2` in each per-label objective.
    pub l2_strength: f64,
    /// Scale every feature vector to unit length first.
    pub normalize: bool,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            train_ratios: vec![0.05, 0.10, 0.20],
            repeats: 10,
            l2_strength: 1.0,
            normalize: false,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_ratios.is_empty() {
            return Err(Error::Config("no training ratios given".into()));
        }
        if let Some(r) = self.train_ratios.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
            return Err(Error::Config(format!("training ratio {r} outside (0, 1)")));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if !(self.l2_strength > 0.0 && self.l2_strength.is_finite()) {
            return Err(Error::Config(format!("l2_strength {} must be positive", self.l2_strength)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    /// Stop once the gradient norm falls to this value.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: 1e-6,
            max_iterations: 1000,
        }
    }
}

/// Binary logistic regression fit.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub objective: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
}

impl LogisticModel {
    pub fn score(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LabelModel {
    Fitted(LogisticModel),
    /// Training split had only positives (`true`) or only negatives.
    Constant(bool),
}

#[derive(Clone, Debug, PartialEq)]
pub struct OvrClassifier {
    pub labels: Vec<LabelModel>,
}

impl OvrClassifier {
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.labels
            .iter()
            .map(|m| match m {
                LabelModel::Fitted(model) => model.score(x),
                LabelModel::Constant(true) => f64::INFINITY,
                LabelModel::Constant(false) => f64::NEG_INFINITY,
            })
            .collect()
    }

    /// Labels without a fitted model.
    pub fn skipped(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, m)| matches!(m, LabelModel::Constant(_)))
            .map(|(i, _)| i)
            .collect()
    }
}

/// `sum_i log(1 + exp(-s_i m_i))`, stable in `m`.
fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Objective `0.5 * l2 * ||w||^2 + sum_i log(1 + exp(-s_i (w . x_i + b)))`.
pub fn logistic_objective(features: &[Vec<f64>], signs: &[f64], l2: f64, weights: &[f64], bias: f64) -> f64 {
    let reg = 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>();
    let data: f64 = features
        .iter()
        .zip(signs)
        .map(|(x, s)| {
            let m = bias + weights.iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
            log1p_exp(-s * m)
        })
        .sum();
    reg + data
}

/// Fits one binary logistic regression with a damped Newton method.
///
/// `signs` are `+1` / `-1`. The bias is not regularized.
pub fn fit_logistic(
    features: &[Vec<f64>],
    signs: &[f64],
    l2: f64,
    options: SolverOptions,
) -> LogisticModel {
    let dim = features.first().map_or(0, Vec::len);
    let n = dim + 1;
    let mut theta = DVector::<f64>::zeros(n);
    let objective = |theta: &DVector<f64>| {
        logistic_objective(features, signs, l2, &theta.as_slice()[..dim], theta[dim])
    };
    let mut value = objective(&theta);
    let mut iterations = 0;
    let mut gradient_norm;
    loop {
        let mut grad = DVector::<f64>::zeros(n);
        let mut hess = DMatrix::<f64>::zeros(n, n);
        for (x, &s) in features.iter().zip(signs) {
            let m = theta[dim] + x.iter().zip(theta.iter()).map(|(a, b)| a * b).sum::<f64>();
            let p = logistic(m);
            // d/dm log(1 + exp(-s m)) = p - y with y = (s + 1) / 2
            let residual = p - (s + 1.0) / 2.0;
            let curvature = p * (1.0 - p);
            for i in 0..dim {
                grad[i] += residual * x[i];
            }
            grad[dim] += residual;
            for i in 0..n {
                let xi = if i == dim { 1.0 } else { x[i] };
                if xi == 0.0 {
                    continue;
                }
                let ci = curvature * xi;
                for j in i..n {
                    let xj = if j == dim { 1.0 } else { x[j] };
                    hess[(i, j)] += ci * xj;
                }
            }
        }
        for i in 0..dim {
            grad[i] += l2 * theta[i];
            hess[(i, i)] += l2;
        }
        for i in 0..n {
            for j in 0..i {
                hess[(i, j)] = hess[(j, i)];
            }
        }
        gradient_norm = grad.norm();
        if gradient_norm <= options.tolerance || iterations >= options.max_iterations {
            break;
        }
        iterations += 1;

        let direction = match hess.clone().cholesky() {
            Some(chol) => chol.solve(&grad),
            None => {
                let mut damped = hess;
                for i in 0..n {
                    damped[(i, i)] += 1e-8;
                }
                match damped.cholesky() {
                    Some(chol) => chol.solve(&grad),
                    None => grad.clone(),
                }
            }
        };
        let slope = grad.dot(&direction);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let candidate = &theta - step * &direction;
            let candidate_value = objective(&candidate);
            if candidate_value <= value - 1e-4 * step * slope {
                theta = candidate;
                value = candidate_value;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // No representable descent left.
            break;
        }
    }
    LogisticModel {
        weights: theta.as_slice()[..dim].to_vec(),
        bias: theta[dim],
        objective: value,
        gradient_norm,
        iterations,
    }
}

/// One-vs-rest logistic regression on `features` (one row per training
/// node) with label sets `labels`.
///
/// Labels whose training column is all-positive or all-negative are not
/// fitted and reported with a warning.
pub fn train_ovr_logreg(
    features: &[Vec<f64>],
    labels: &[LabelSet],
    label_count: usize,
    l2_strength: f64,
    options: SolverOptions,
) -> OvrClassifier {
    assert_eq!(features.len(), labels.len(), "one label set per feature row");
    let models: Vec<LabelModel> = (0..label_count)
        .into_par_iter()
        .map(|label| {
            let signs: Vec<f64> = labels
                .iter()
                .map(|s| if s.contains(label) { 1.0 } else { -1.0 })
                .collect();
            let positives = signs.iter().filter(|&&s| s > 0.0).count();
            if positives == 0 || positives == signs.len() {
                LabelModel::Constant(positives > 0)
            } else {
                LabelModel::Fitted(fit_logistic(features, &signs, l2_strength, options))
            }
        })
        .collect();
    let classifier = OvrClassifier { labels: models };
    let skipped = classifier.skipped();
    if !skipped.is_empty() {
        warn!("{} labels have only one class in the training split and were not fitted", skipped.len());
    }
    classifier
}

/// Indices of the `k` highest scores; ties go to the lower index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    order
}

/// Predicts `k_per_node[i]` labels for `features[i]`.
pub fn predict_top_k(
    classifier: &OvrClassifier,
    features: &[Vec<f64>],
    k_per_node: &[usize],
) -> Vec<LabelSet> {
    let universe = classifier.labels.len();
    features
        .iter()
        .zip(k_per_node)
        .map(|(x, &k)| LabelSet::from_indices(universe, top_k(&classifier.scores(x), k)))
        .collect()
}

/// Per-label confusion counts `(tp, fp, fn)`.
pub fn confusion_counts(truth: &[LabelSet], predicted: &[LabelSet], label_count: usize) -> Vec<(usize, usize, usize)> {
    assert_eq!(truth.len(), predicted.len(), "truth and predictions cover the same nodes");
    let mut counts = vec![(0, 0, 0); label_count];
    for (t, p) in truth.iter().zip(predicted) {
        for (label, c) in counts.iter_mut().enumerate() {
            match (t.contains(label), p.contains(label)) {
                (true, true) => c.0 += 1,
                (false, true) => c.1 += 1,
                (true, false) => c.2 += 1,
                (false, false) => {}
            }
        }
    }
    counts
}

/// Unweighted mean of per-label F1 over labels present in `truth`.
///
/// Labels never true in `truth` are excluded. Returns 0 when no label is
/// present.
pub fn macro_f1(truth: &[LabelSet], predicted: &[LabelSet], label_count: usize) -> f64 {
    let counts = confusion_counts(truth, predicted, label_count);
    let scores: Vec<f64> = counts
        .iter()
        .filter(|(tp, _, fn_)| tp + fn_ > 0)
        // 2PR / (P + R) in counts; tp + fn > 0 keeps the denominator positive.
        .map(|&(tp, fp, fn_)| (2 * tp) as f64 / (2 * tp + fp + fn_) as f64)
        .collect();
    if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioSummary {
    pub ratio: f64,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single repeat.
    pub std: f64,
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ratios: Vec<RatioSummary>,
}

impl EvalReport {
    /// Summary table with Macro-F1 in percent, one column per ratio.
    pub fn write_table<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "{:<16}", "Training Ratio")?;
        for r in &self.ratios {
            write!(out, "{:>10}", format!("{}%", fmt_percent(r.ratio)))?;
        }
        writeln!(out)?;
        write!(out, "{:<16}", "Macro-F1")?;
        for r in &self.ratios {
            write!(out, "{:>10.2}", 100.0 * r.mean)?;
        }
        writeln!(out)?;
        write!(out, "{:<16}", "std")?;
        for r in &self.ratios {
            write!(out, "{:>10.2}", 100.0 * r.std)?;
        }
        writeln!(out)?;
        Ok(())
    }

    /// `ratio,repeat,macro_f1` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "ratio,repeat,macro_f1")?;
        for r in &self.ratios {
            for (i, s) in r.scores.iter().enumerate() {
                writeln!(out, "{},{},{:.17e}", r.ratio, i, s)?;
            }
        }
        Ok(())
    }
}

fn fmt_percent(ratio: f64) -> String {
    let p = ratio * 100.0;
    if (p - p.round()).abs() < 1e-9 {
        format!("{}", p.round() as i64)
    } else {
        format!("{p:.1}")
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn unit(x: &[f64]) -> Vec<f64> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        x.iter().map(|v| v / norm).collect()
    } else {
        x.to_vec()
    }
}

/// Node split of one repeat, `(train, test)` node indices.
pub fn split_nodes(nodes: &[usize], ratio: f64, seed: u64, stream: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let train_n = (ratio * nodes.len() as f64).round() as usize;
    if train_n == 0 || train_n >= nodes.len() {
        return Err(Error::Config(format!(
            "training ratio {ratio} leaves an empty train or test split over {} nodes",
            nodes.len()
        )));
    }
    let mut order = nodes.to_vec();
    order.shuffle(&mut rng::stream(seed, Purpose::NodeSplit, stream));
    let test = order.split_off(train_n);
    Ok((order, test))
}

/// Runs every (ratio, repeat) split and reports Macro-F1 statistics.
///
/// `features[v]` is the embedding of node `v`; every labeled node must have
/// one.
pub fn node_classification_experiment(
    features: &[Vec<f64>],
    node_labels: &NodeLabelSet,
    config: &EvalConfig,
) -> Result<EvalReport> {
    config.validate()?;
    let nodes: Vec<usize> = node_labels.nodes().collect();
    if let Some(&v) = nodes.iter().find(|&&v| v >= features.len()) {
        return Err(Error::Validation(format!("labeled node {v} has no embedding")));
    }
    let features: Vec<Vec<f64>> = if config.normalize {
        features.iter().map(|x| unit(x)).collect()
    } else {
        features.to_vec()
    };
    let label_count = node_labels.vocab().len();
    let jobs: Vec<(usize, usize)> = (0..config.train_ratios.len())
        .flat_map(|r| (0..config.repeats).map(move |k| (r, k)))
        .collect();
    let scores: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(r, k)| {
            let ratio = config.train_ratios[r];
            let (train, test) = split_nodes(&nodes, ratio, config.seed, ((r as u64) << 32) | k as u64)?;
            let rows = |ids: &[usize]| ids.iter().map(|&v| features[v].clone()).collect::<Vec<_>>();
            let sets = |ids: &[usize]| {
                ids.iter()
                    .map(|&v| node_labels.get(v).expect("labeled node").clone())
                    .collect::<Vec<_>>()
            };
            let classifier = train_ovr_logreg(
                &rows(&train),
                &sets(&train),
                label_count,
                config.l2_strength,
                SolverOptions::default(),
            );
            let truth = sets(&test);
            let k_per_node: Vec<usize> = truth.iter().map(LabelSet::count).collect();
            let predicted = predict_top_k(&classifier, &rows(&test), &k_per_node);
            Ok(macro_f1(&truth, &predicted, label_count))
        })
        .collect();
    let mut flat = Vec::with_capacity(scores.len());
    for s in scores {
        flat.push(s?);
    }
    let ratios = config
        .train_ratios
        .iter()
        .enumerate()
        .map(|(r, &ratio)| {
            let scores = flat[r * config.repeats..(r + 1) * config.repeats].to_vec();
            let (mean, std) = mean_std(&scores);
            RatioSummary {
                ratio,
                mean,
                std,
                scores,
            }
        })
        .collect();
    Ok(EvalReport { ratios })
}
