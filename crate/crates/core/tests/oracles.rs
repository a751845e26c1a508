//! Independent numeric references for the losses, gradients and optimizer.
#![cfg(not(feature = "single-precision"))]

mod common;

use common::*;
use edgelab::matrix::Matrix;
use edgelab::params::{adam_step, init_embeddings, AdamConfig, AdamState, ModelGrads};
use edgelab::relational::{mlp_forward, relational_backward, EdgeExample, MlpParams};
use edgelab::rng::{stream, Purpose};
use edgelab::structural::{
    full_softmax_loss, loss_with_negatives, negative_sampling_loss, softmax_prob, NoiseDistribution,
};
use edgelab::walk::{extract_pairs, generate_walks, TrainPair};
use edgelab::EmbeddingTables;
use rand::Rng;

#[test]
fn structural_two_node_gradient_by_hand() {
    // center(0) = [a], context(1) = [b], one negative: node 0 with context [c].
    let (a, b, c) = (0.3, -0.7, 0.4);
    let tables = EmbeddingTables {
        center: Matrix::from_vec(2, 1, vec![a, 0.0]),
        context: Matrix::from_vec(2, 1, vec![c, b]),
    };
    let r = loss_with_negatives(&[TrainPair::new(0, 1)], &[0], 1, &tables);
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let loss = -sig(a * b).ln() - sig(-a * c).ln();
    assert!((r.loss - loss).abs() < 1e-15);
    let d_center = (sig(a * b) - 1.0) * b + sig(a * c) * c;
    assert!((r.grads.center.get(0).unwrap()[0] - d_center).abs() < 1e-15);
    assert!((r.grads.context.get(1).unwrap()[0] - (sig(a * b) - 1.0) * a).abs() < 1e-15);
    assert!((r.grads.context.get(0).unwrap()[0] - sig(a * c) * a).abs() < 1e-15);
}

#[test]
fn structural_gradients_match_finite_differences() {
    let mut rng = rng(11);
    for i in 0..200 {
        let mut case = structural_case(&mut rng);
        let err = structural_grad_error(&mut case);
        assert!(err <= 1e-6, "instance {i}: relative error {err:e}");
    }
}

#[test]
fn relational_gradients_match_finite_differences() {
    let mut rng = rng(12);
    for i in 0..200 {
        let mut case = relational_case(&mut rng);
        let err = relational_grad_error(&mut case);
        assert!(err <= 1e-6, "instance {i}: relative error {err:e}");
    }
}

#[test]
fn softmax_sums_to_one() {
    let mut rng = rng(13);
    for _ in 0..20 {
        let n = rng.random_range(2..=50);
        let tables = random_tables(n, 8, 2.0, &mut rng);
        for v in 0..n {
            let total: f64 = (0..n).map(|u| softmax_prob(u, v, &tables)).sum();
            assert!((total - 1.0).abs() <= 1e-12, "sum {total}");
        }
    }
}

/// Textbook dense Adam over a flat parameter vector.
fn dense_adam(params: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], t: i32, c: &AdamConfig) {
    for i in 0..params.len() {
        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * grad[i];
        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
        let m_hat = m[i] / (1.0 - c.beta1.powi(t));
        let v_hat = v[i] / (1.0 - c.beta2.powi(t));
        params[i] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
    }
}

#[test]
fn sparse_adam_on_dense_gradient_equals_dense_adam() {
    let config = AdamConfig::default();
    let mut rng = rng(14);
    let mut tables = EmbeddingTables {
        center: Matrix::from_fn(1, 5, |_, _| rng.random_range(-1.0..1.0)),
        context: Matrix::zeros(1, 5),
    };
    let mut state = AdamState::new(config, &tables, None);
    let mut reference = tables.center.as_slice().to_vec();
    let (mut m, mut v) = (vec![0.0; 5], vec![0.0; 5]);
    for t in 1..=50 {
        // quadratic toy: gradient of 0.5 * ||x - target||^2
        let target = [1.0, -2.0, 0.5, 3.0, 0.0];
        let grad: Vec<f64> = reference.iter().zip(&target).map(|(x, y)| x - y).collect();
        let mut grads = ModelGrads::new(5);
        grads.center.row_mut(0).copy_from_slice(&grad);
        adam_step(&mut tables, None, &grads, &mut state).unwrap();
        dense_adam(&mut reference, &grad, &mut m, &mut v, t, &config);
        for (a, b) in tables.center.as_slice().iter().zip(&reference) {
            assert!((a - b).abs() <= 1e-12, "step {t}: {a} vs {b}");
        }
    }
}

#[test]
fn adam_negated_gradient_gives_negated_delta() {
    let mut rng = rng(15);
    for _ in 0..50 {
        // Zero parameters make the written value the update itself, free of
        // the rounding in `x - delta`.
        let start = EmbeddingTables {
            center: Matrix::zeros(3, 4),
            context: Matrix::zeros(3, 4),
        };
        let mut grads = ModelGrads::new(4);
        for r in 0..3 {
            for x in grads.center.row_mut(r) {
                *x = rng.random_range(-5.0..5.0);
            }
        }
        let mut neg = grads.clone();
        neg.center.scale(-1.0);
        let run = |g: &ModelGrads| {
            let mut t = start.clone();
            let mut s = AdamState::new(AdamConfig::default(), &t, None);
            adam_step(&mut t, None, g, &mut s).unwrap();
            t
        };
        let (a, b) = (run(&grads), run(&neg));
        for (x, y) in a.center.as_slice().iter().zip(b.center.as_slice()) {
            assert_eq!(*x, -*y);
            assert!(*x != 0.0);
        }
    }
}

#[test]
fn adam_step_bounded_by_learning_rate() {
    let config = AdamConfig::default();
    let lr = config.learning_rate;
    let mut rng = rng(16);
    let start = init_embeddings(4, 6, 1).unwrap();
    let random_grads = |rng: &mut rand_chacha::ChaCha8Rng| {
        let mut grads = ModelGrads::new(6);
        for r in 0..4 {
            for x in grads.center.row_mut(r) {
                *x = rng.random_range(-1.0..1.0) * 10f64.powi(rng.random_range(-4..4));
            }
        }
        grads
    };
    let max_delta = |a: &EmbeddingTables, b: &EmbeddingTables| {
        a.center
            .as_slice()
            .iter()
            .zip(b.center.as_slice())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    };

    // First step and stationary gradients: |delta| = lr * |g| / (|g| + eps) <= lr.
    for _ in 0..50 {
        let grads = random_grads(&mut rng);
        let mut tables = start.clone();
        let mut state = AdamState::new(config, &tables, None);
        for _ in 0..20 {
            let before = tables.clone();
            adam_step(&mut tables, None, &grads, &mut state).unwrap();
            assert!(max_delta(&tables, &before) <= lr * (1.0 + 1e-9));
        }
    }

    // Arbitrary gradient sequences: |m_hat| / sqrt(v_hat) <= (1 - b1) / sqrt(1 - b2).
    let bound = lr * (1.0 - config.beta1) / (1.0 - config.beta2).sqrt();
    let mut tables = start.clone();
    let mut state = AdamState::new(config, &tables, None);
    for _ in 0..500 {
        let before = tables.clone();
        adam_step(&mut tables, None, &random_grads(&mut rng), &mut state).unwrap();
        assert!(max_delta(&tables, &before) <= bound * (1.0 + 1e-9));
    }
}

#[test]
fn structural_loss_decreases_on_fixed_pair() {
    let mut rng = rng(17);
    let mut tables = random_tables(4, 3, 0.1, &mut rng);
    let mut state = AdamState::new(AdamConfig::default(), &tables, None);
    let batch = [TrainPair::new(0, 1)];
    let negatives = [2, 3];
    let mut prev = f64::INFINITY;
    for _ in 0..20 {
        let r = loss_with_negatives(&batch, &negatives, 2, &tables);
        assert!(r.loss < prev, "{} !< {prev}", r.loss);
        prev = r.loss;
        adam_step(&mut tables, None, &r.grads, &mut state).unwrap();
    }
}

#[test]
fn relational_classifier_overfits_ten_edges() {
    // 10 disjoint edges, edge i carries label i only.
    let n_edges = 10;
    let dim = 8;
    let mut tables = init_embeddings(2 * n_edges, dim, 3).unwrap();
    let mut params = MlpParams::new(2 * dim, &[16], n_edges, 3);
    let batch: Vec<EdgeExample> = (0..n_edges)
        .map(|i| {
            let mut target = vec![0.0; n_edges];
            target[i] = 1.0;
            EdgeExample::new(2 * i, 2 * i + 1, target)
        })
        .collect();
    let mut state = AdamState::new(AdamConfig::default(), &tables, Some(&params));
    let accuracy = |tables: &EmbeddingTables, params: &MlpParams| {
        let mut correct = 0;
        for ex in &batch {
            let x = edgelab::relational::compose_edge_embedding(ex.u, ex.v, tables);
            let (p, _) = mlp_forward(&x, params);
            for (y, q) in ex.target.iter().zip(&p) {
                correct += ((*q >= 0.5) == (*y == 1.0)) as usize;
            }
        }
        correct as f64 / (n_edges * n_edges) as f64
    };
    let mut steps = 0;
    while accuracy(&tables, &params) < 0.99 {
        assert!(steps < 2000, "accuracy {} after 2000 steps", accuracy(&tables, &params));
        let r = relational_backward(&batch, &tables, &params).unwrap();
        adam_step(&mut tables, Some(&mut params), &r.grads, &mut state).unwrap();
        steps += 1;
    }
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let rank = |x: &[f64]| {
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
        let mut r = vec![0.0; x.len()];
        for (pos, &i) in idx.iter().enumerate() {
            r[i] = pos as f64;
        }
        r
    };
    let (ra, rb) = (rank(a), rank(b));
    let n = a.len() as f64;
    let mean = (n - 1.0) / 2.0;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - mean) * (y - mean)).sum();
    let var: f64 = ra.iter().map(|x| (x - mean).powi(2)).sum();
    cov / var
}

#[test]
fn full_softmax_and_negative_sampling_decrease_together() {
    let g = edgelab::synth::PlantedPartition {
        communities: 3,
        nodes_per_community: 12,
        p_in: 0.4,
        p_out: 0.03,
        label_fraction: 0.1,
        seed: 2,
    }
    .generate()
    .unwrap()
    .graph;
    assert!(g.node_count() <= 50);
    let corpus = generate_walks(&g, 10, 10, 1).unwrap();
    let pairs: Vec<TrainPair> = corpus.walks().iter().flat_map(|w| extract_pairs(w, 3)).collect();
    let noise = NoiseDistribution::from_degrees(&g, 0.75).unwrap();
    let mut tables = init_embeddings(g.node_count(), 16, 4).unwrap();
    let mut state = AdamState::new(AdamConfig::default(), &tables, None);
    let mut rng_pairs = stream(4, Purpose::PairSampling, 0);
    let mut rng_neg = stream(4, Purpose::NegativeSampling, 0);
    let (mut full, mut ns) = (Vec::new(), Vec::new());
    for checkpoint in 0..12 {
        if checkpoint > 0 {
            for _ in 0..25 {
                let batch: Vec<TrainPair> =
                    (0..100).map(|_| pairs[rng_pairs.random_range(0..pairs.len())]).collect();
                let r = negative_sampling_loss(&batch, 5, &tables, &noise, &mut rng_neg);
                adam_step(&mut tables, None, &r.grads, &mut state).unwrap();
            }
        }
        full.push(full_softmax_loss(&pairs, &tables));
        // same noise draws at every checkpoint
        let mut eval = stream(5, Purpose::NegativeSampling, 0);
        ns.push(negative_sampling_loss(&pairs, 5, &tables, &noise, &mut eval).loss);
    }
    let rho = spearman(&full, &ns);
    assert!(rho > 0.9, "rank correlation {rho}: {full:?} {ns:?}");
    assert!(full.last() < full.first());
}
