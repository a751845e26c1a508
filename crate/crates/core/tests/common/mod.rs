#![allow(dead_code, clippy::unnecessary_cast)]

use edgelab::graph::{load_edge_list, Graph, LabelSet};
use edgelab::matrix::Matrix;
use edgelab::relational::{relational_backward, relational_loss, EdgeExample, MlpParams};
use edgelab::structural::loss_with_negatives;
use edgelab::walk::TrainPair;
use edgelab::{EmbeddingTables, Real};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for relative errors of near-zero gradient entries.
pub const REL_FLOOR: f64 = 1e-4;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn graph(text: &str) -> Graph {
    load_edge_list(text.as_bytes()).unwrap()
}

pub fn random_tables(n: usize, d: usize, scale: f64, rng: &mut ChaCha8Rng) -> EmbeddingTables {
    let mut draw = |_, _| rng.random_range(-scale..scale) as Real;
    let center = Matrix::from_fn(n, d, &mut draw);
    let context = Matrix::from_fn(n, d, &mut draw);
    EmbeddingTables { center, context }
}

/// Numeric gradient of `loss` over every element of the slice selected by
/// `slot`.
pub fn numeric_grad<S, L>(state: &mut S, len: usize, mut slot: impl FnMut(&mut S) -> &mut [Real], mut loss: L) -> Vec<f64>
where
    L: FnMut(&S) -> f64,
{
    (0..len)
        .map(|i| {
            let orig = slot(state)[i];
            slot(state)[i] = orig + FD_STEP as Real;
            let plus = loss(state);
            slot(state)[i] = orig - FD_STEP as Real;
            let minus = loss(state);
            slot(state)[i] = orig;
            (plus - minus) / (2.0 * FD_STEP)
        })
        .collect()
}

/// A random skip-gram instance: tables, pairs, fixed negatives, `k`.
pub struct StructuralCase {
    pub tables: EmbeddingTables,
    pub batch: Vec<TrainPair>,
    pub negatives: Vec<usize>,
    pub k: usize,
}

pub fn structural_case(rng: &mut ChaCha8Rng) -> StructuralCase {
    let n = rng.random_range(2..8);
    let d = rng.random_range(1..6);
    let k = rng.random_range(1..4);
    let tables = random_tables(n, d, 1.0, rng);
    let batch: Vec<TrainPair> = (0..rng.random_range(1..6))
        .map(|_| {
            let center = rng.random_range(0..n);
            let mut context = rng.random_range(0..n);
            while context == center {
                context = rng.random_range(0..n);
            }
            TrainPair::new(center, context)
        })
        .collect();
    let mut negatives = Vec::new();
    for p in &batch {
        for _ in 0..k {
            let mut x = rng.random_range(0..n);
            while x == p.context {
                x = rng.random_range(0..n);
            }
            negatives.push(x);
        }
    }
    StructuralCase {
        tables,
        batch,
        negatives,
        k,
    }
}

/// Largest relative error between analytic and numeric structural
/// gradients over every table entry.
pub fn structural_grad_error(case: &mut StructuralCase) -> f64 {
    let r = loss_with_negatives(&case.batch, &case.negatives, case.k, &case.tables);
    let (n, d) = (case.tables.node_count(), case.tables.dim());
    let mut worst: f64 = 0.0;
    for which in 0..2 {
        let grads = if which == 0 { &r.grads.center } else { &r.grads.context };
        let mut analytic = vec![0.0; n * d];
        for (row, g) in grads.iter() {
            for (c, &x) in g.iter().enumerate() {
                analytic[row * d + c] = x as f64;
            }
        }
        let StructuralCase {
            tables,
            batch,
            negatives,
            k,
        } = case;
        let numeric = numeric_grad(
            tables,
            n * d,
            |t| {
                if which == 0 {
                    t.center.as_mut_slice()
                } else {
                    t.context.as_mut_slice()
                }
            },
            |t| loss_with_negatives(batch, negatives, *k, t).loss as f64,
        );
        for (a, m) in analytic.iter().zip(&numeric) {
            worst = worst.max(rel_err(*a, *m));
        }
    }
    worst
}

pub struct RelationalCase {
    pub tables: EmbeddingTables,
    pub params: MlpParams,
    pub batch: Vec<EdgeExample>,
}

/// Smallest |pre-activation| of any hidden unit over the batch.
fn kink_distance(case: &RelationalCase) -> f64 {
    let mut closest = f64::INFINITY;
    for ex in &case.batch {
        let x = edgelab::relational::compose_edge_embedding(ex.u, ex.v, &case.tables);
        let (_, cache) = edgelab::relational::mlp_forward(&x, &case.params);
        let hidden = cache.pre.len() - 1;
        for z in &cache.pre[..hidden] {
            for &s in z {
                closest = closest.min((s as f64).abs());
            }
        }
    }
    closest
}

/// A random relational instance whose hidden units all sit clear of the
/// ReLU kink, so central differences see a smooth function.
pub fn relational_case(rng: &mut ChaCha8Rng) -> RelationalCase {
    loop {
        let n = rng.random_range(2..7);
        let d = rng.random_range(1..5);
        let labels = rng.random_range(1..5);
        let hidden: Vec<usize> = (0..rng.random_range(0..3)).map(|_| rng.random_range(1..6)).collect();
        let tables = random_tables(n, d, 1.0, rng);
        let mut params = MlpParams::new(2 * d, &hidden, labels, rng.random());
        for t in params.tensors_mut() {
            for x in t.iter_mut() {
                *x = rng.random_range(-1.0..1.0) as Real;
            }
        }
        let batch = (0..rng.random_range(1..5))
            .map(|_| {
                let u = rng.random_range(0..n);
                let mut v = rng.random_range(0..n);
                while v == u {
                    v = rng.random_range(0..n);
                }
                let target = (0..labels).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
                EdgeExample::new(u, v, target)
            })
            .collect();
        let case = RelationalCase { tables, params, batch };
        if kink_distance(&case) > 1e-3 {
            return case;
        }
    }
}

pub fn relational_grad_error(case: &mut RelationalCase) -> f64 {
    let r = relational_backward(&case.batch, &case.tables, &case.params).unwrap();
    let (n, d) = (case.tables.node_count(), case.tables.dim());
    let mut worst: f64 = 0.0;

    let mut analytic = vec![0.0; n * d];
    for (row, g) in r.grads.center.iter() {
        for (c, &x) in g.iter().enumerate() {
            analytic[row * d + c] = x as f64;
        }
    }
    assert!(r.grads.context.is_empty(), "relational loss never touches context rows");
    let RelationalCase { tables, params, batch } = case;
    let numeric = numeric_grad(
        tables,
        n * d,
        |t| t.center.as_mut_slice(),
        |t| relational_loss(batch, t, params).unwrap() as f64,
    );
    for (a, m) in analytic.iter().zip(&numeric) {
        worst = worst.max(rel_err(*a, *m));
    }

    let dense = r.grads.classifier.expect("classifier gradient");
    for (k, g) in dense.iter().enumerate() {
        let numeric = numeric_grad(
            params,
            g.len(),
            |p| p.tensors_mut().swap_remove(k),
            |p| relational_loss(batch, tables, p).unwrap() as f64,
        );
        for (a, m) in g.iter().zip(&numeric) {
            worst = worst.max(rel_err(*a as f64, *m));
        }
    }
    worst
}

/// Macro-F1 straight from per-label confusion matrices built by
/// enumerating every (node, label) cell.
pub fn brute_force_macro_f1(truth: &[LabelSet], predicted: &[LabelSet], labels: usize) -> f64 {
    let mut sum = 0.0;
    let mut present = 0usize;
    for l in 0..labels {
        let mut m = [[0usize; 2]; 2];
        for (t, p) in truth.iter().zip(predicted) {
            m[t.contains(l) as usize][p.contains(l) as usize] += 1;
        }
        let (tp, fp, fn_) = (m[1][1], m[0][1], m[1][0]);
        if tp + fn_ == 0 {
            continue;
        }
        present += 1;
        sum += (2 * tp) as f64 / (2 * tp + fp + fn_) as f64;
    }
    if present == 0 {
        0.0
    } else {
        sum / present as f64
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
