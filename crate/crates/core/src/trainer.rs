//! Alternating structural/relational optimization.
//!
//! Each round runs `round((1 - lambda) * T)` structural batches followed by
//! the remaining relational batches, all through one Adam optimizer. After a
//! round the relational loss on the held-out labeled edges is measured and
//! training stops once it has failed to improve for `early_stop_window`
//! consecutive rounds.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use log::{debug, info};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{split_labeled_edges, Graph, LabeledEdgeSet};
use crate::params::{adam_step, init_embeddings, AdamConfig, AdamState, EmbeddingTables};
use crate::relational::{relational_backward, relational_loss, EdgeExample, MlpParams};
use crate::rng::{self, Purpose};
use crate::structural::{negative_sampling_loss, NoiseDistribution};
use crate::walk::{generate_walks, epoch_seed, PairSampler, WalkCorpus};
use crate::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the relational part, in `[0, 1]`.
    pub lambda: f64,
    /// Batches per round (`T`).
    pub batches_per_round: usize,
    /// Pairs per structural batch (`N1`).
    pub structural_batch: usize,
    /// Edges per relational batch (`N2`).
    pub relational_batch: usize,
    pub walks_per_node: usize,
    pub walk_length: usize,
    pub window: usize,
    pub dim: usize,
    /// Negative samples per positive pair.
    pub negatives: usize,
    /// Exponent of the degree-based noise distribution.
    pub noise_power: f64,
    /// Hidden layer width of the edge classifier.
    pub hidden: usize,
    pub learning_rate: f64,
    pub early_stop_window: usize,
    pub max_rounds: usize,
    /// Share of labeled edges held out for early stopping.
    pub validation_fraction: f64,
    /// Fixed number of rounds when `lambda == 0`.
    pub unsupervised_rounds: usize,
    /// Structural batches per round when `lambda == 0`; `None` means one
    /// pass over the window pairs of a walk corpus.
    pub unsupervised_round_batches: Option<usize>,
    /// Return the parameters of the round with the lowest validation loss.
    pub restore_best: bool,
    /// Reuse (or create) a walk corpus at this path instead of regenerating
    /// walks every epoch.
    pub walk_cache: Option<PathBuf>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.8,
            batches_per_round: 50,
            structural_batch: 400,
            relational_batch: 400,
            walks_per_node: 80,
            walk_length: 10,
            window: 10,
            dim: 128,
            negatives: 5,
            noise_power: 0.75,
            hidden: 128,
            learning_rate: 0.01,
            early_stop_window: 5,
            max_rounds: 200,
            validation_fraction: 0.1,
            unsupervised_rounds: 5,
            unsupervised_round_batches: None,
            restore_best: true,
            walk_cache: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} outside [0, 1]", self.lambda));
        }
        for (name, value) in [
            ("batches_per_round", self.batches_per_round),
            ("structural_batch", self.structural_batch),
            ("walks_per_node", self.walks_per_node),
            ("window", self.window),
            ("dim", self.dim),
            ("negatives", self.negatives),
            ("hidden", self.hidden),
            ("early_stop_window", self.early_stop_window),
            ("max_rounds", self.max_rounds),
            ("unsupervised_rounds", self.unsupervised_rounds),
        ] {
            if value == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.lambda > 0.0 && self.relational_batch == 0 {
            return bad("relational_batch must be at least 1 when lambda > 0".into());
        }
        if self.walk_length < 2 {
            return bad("walk_length must be at least 2".into());
        }
        if self.unsupervised_round_batches == Some(0) {
            return bad("unsupervised_round_batches must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!(
                "validation_fraction {} outside [0, 1)",
                self.validation_fraction
            ));
        }
        if !(self.noise_power >= 0.0 && self.noise_power.is_finite()) {
            return bad(format!("noise_power {} must be non-negative", self.noise_power));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }

    /// SHA-256 of the canonical JSON form of the configuration.
    pub fn digest(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(json).into()
    }
}

/// Splits `batches` into `(structural, relational)` counts.
///
/// The structural share `(1 - lambda) * batches` is rounded half-up and the
/// remainder goes to the relational side.
pub fn schedule_counts(batches: usize, lambda: f64) -> (usize, usize) {
    let structural = ((1.0 - lambda) * batches as f64 + 0.5).floor() as usize;
    let structural = structural.min(batches);
    (structural, batches - structural)
}

/// `(1 - lambda) * structural + lambda * relational`, for reporting.
pub fn combined_loss(structural: f64, relational: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return structural;
    }
    if lambda == 1.0 {
        return relational;
    }
    (1.0 - lambda) * structural + lambda * relational
}

/// Tracks the best validation loss and the number of rounds since it last
/// strictly decreased.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    window: usize,
    best: Option<f64>,
    stale: usize,
}

impl EarlyStopper {
    pub fn new(window: usize) -> Self {
        EarlyStopper {
            window,
            best: None,
            stale: 0,
        }
    }

    /// Records one round; returns `true` when training should stop.
    pub fn observe(&mut self, loss: f64) -> bool {
        match self.best {
            Some(best) if loss >= best => self.stale += 1,
            _ => {
                self.best = Some(loss);
                self.stale = 0;
            }
        }
        self.stale >= self.window
    }

    /// True if the last observation set a new best.
    pub fn improved(&self) -> bool {
        self.best.is_some() && self.stale == 0
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    EarlyStop,
    MaxRounds,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::EarlyStop => "early-stop",
            StopReason::MaxRounds => "max-rounds",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based.
    pub round: usize,
    /// Mean structural batch loss; NaN when the round had no structural step.
    pub structural_loss: f64,
    /// Mean relational batch loss; NaN when the round had no relational step.
    pub relational_loss: f64,
    pub validation_loss: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub rounds: Vec<RoundRecord>,
    pub stop_reason: StopReason,
    pub structural_steps_per_round: usize,
    pub relational_steps_per_round: usize,
    /// Round whose parameters were returned.
    pub selected_round: usize,
}

impl TrainReport {
    /// Tab-separated report, one line per round:
    /// `round  Ls  Lr  val-loss [seconds]`.
    pub fn write_tsv<W: Write>(&self, mut out: W, with_seconds: bool) -> Result<()> {
        write!(out, "round\tstructural_loss\trelational_loss\tvalidation_loss")?;
        if with_seconds {
            write!(out, "\tseconds")?;
        }
        writeln!(out)?;
        for r in &self.rounds {
            let val = r.validation_loss.map_or("NA".to_owned(), |v| format!("{v:.17e}"));
            write!(
                out,
                "{}\t{:.17e}\t{:.17e}\t{}",
                r.round, r.structural_loss, r.relational_loss, val
            )?;
            if with_seconds {
                write!(out, "\t{:.3}", r.seconds)?;
            }
            writeln!(out)?;
        }
        writeln!(out, "# stop: {} (selected round {})", self.stop_reason, self.selected_round)?;
        Ok(())
    }
}

/// Parameters and optimizer state of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub tables: EmbeddingTables,
    pub classifier: MlpParams,
    pub adam: AdamState,
}

impl TrainState {
    /// Fresh parameters for `graph` under `config`.
    pub fn init(graph: &Graph, label_count: usize, config: &TrainConfig) -> Result<Self> {
        let tables = init_embeddings(graph.node_count(), config.dim, config.seed)?;
        let classifier = MlpParams::new(2 * config.dim, &[config.hidden], label_count, config.seed);
        let adam = AdamState::new(config.adam(), &tables, Some(&classifier));
        Ok(TrainState {
            tables,
            classifier,
            adam,
        })
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub state: TrainState,
    pub report: TrainReport,
}

/// Structural half of a round: pair sampling, negative sampling, Adam.
pub struct StructuralBranch<'g> {
    sampler: PairSampler<'g>,
    noise: NoiseDistribution,
    rng: ChaCha8Rng,
    batch_size: usize,
    negatives: usize,
}

impl<'g> StructuralBranch<'g> {
    pub fn new(graph: &'g Graph, config: &TrainConfig) -> Result<Self> {
        let sampler = match &config.walk_cache {
            None => PairSampler::new(
                graph,
                config.walks_per_node,
                config.walk_length,
                config.window,
                config.seed,
            )?,
            Some(path) => {
                let corpus = cached_corpus(graph, config, path)?;
                PairSampler::pinned(graph, corpus, config.window, config.seed)
            }
        };
        Ok(StructuralBranch {
            sampler,
            noise: NoiseDistribution::from_degrees(graph, config.noise_power)?,
            rng: rng::stream(config.seed, Purpose::NegativeSampling, 0),
            batch_size: config.structural_batch,
            negatives: config.negatives,
        })
    }

    pub fn sampler(&self) -> &PairSampler<'g> {
        &self.sampler
    }

    /// One structural Adam step; returns the batch loss.
    pub fn step(&mut self, tables: &mut EmbeddingTables, adam: &mut AdamState) -> Result<Real> {
        let batch = self.sampler.next_batch(self.batch_size)?;
        let result = negative_sampling_loss(&batch, self.negatives, tables, &self.noise, &mut self.rng);
        adam_step(tables, None, &result.grads, adam)?;
        Ok(result.loss)
    }
}

fn cached_corpus(graph: &Graph, config: &TrainConfig, path: &PathBuf) -> Result<WalkCorpus> {
    if path.exists() {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        return WalkCorpus::read(BufReader::new(file), graph, config.seed);
    }
    let corpus = generate_walks(
        graph,
        config.walks_per_node,
        config.walk_length,
        epoch_seed(config.seed, 0),
    )?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    corpus.write(graph, &mut out)?;
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(corpus)
}

/// Relational half of a round: edge sampling with replacement, Adam.
struct RelationalBranch {
    train: Vec<EdgeExample>,
    validation: Vec<EdgeExample>,
    rng: ChaCha8Rng,
    batch_size: usize,
}

impl RelationalBranch {
    fn new(graph: &Graph, edges: &LabeledEdgeSet, config: &TrainConfig) -> Result<Self> {
        let (train, validation) = split_labeled_edges(edges, 1.0 - config.validation_fraction, config.seed)?;
        let examples = |set: &LabeledEdgeSet| -> Vec<EdgeExample> {
            set.labeled()
                .iter()
                .map(|(&e, labels)| {
                    let (u, v) = graph.edge(e);
                    EdgeExample::new(u, v, labels.to_multi_hot())
                })
                .collect()
        };
        Ok(RelationalBranch {
            train: examples(&train),
            validation: examples(&validation),
            rng: rng::stream(config.seed, Purpose::EdgeSampling, 0),
            batch_size: config.relational_batch,
        })
    }

    fn step(&mut self, state: &mut TrainState) -> Result<Real> {
        let batch: Vec<EdgeExample> = (0..self.batch_size)
            .map(|_| self.train[self.rng.random_range(0..self.train.len())].clone())
            .collect();
        let result = relational_backward(&batch, &state.tables, &state.classifier)?;
        adam_step(&mut state.tables, Some(&mut state.classifier), &result.grads, &mut state.adam)?;
        Ok(result.loss)
    }

    /// Held-out loss, or the training loss when nothing was held out.
    fn validation_loss(&self, state: &TrainState) -> Result<Real> {
        let set = if self.validation.is_empty() {
            &self.train
        } else {
            &self.validation
        };
        relational_loss(set, &state.tables, &state.classifier)
    }
}

fn mean(values: &[Real]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().map(|&x| x as f64).sum::<f64>() / values.len() as f64
    }
}

/// Trains from fresh parameters.
pub fn train(graph: &Graph, edges: &LabeledEdgeSet, config: &TrainConfig) -> Result<TrainOutput> {
    let state = TrainState::init(graph, edges.label_count(), config)?;
    train_from(graph, edges, config, state)
}

/// Trains starting from `state` (for example a loaded checkpoint).
pub fn train_from(
    graph: &Graph,
    edges: &LabeledEdgeSet,
    config: &TrainConfig,
    mut state: TrainState,
) -> Result<TrainOutput> {
    config.validate()?;
    if state.tables.node_count() != graph.node_count() || state.tables.dim() != config.dim {
        return Err(Error::Config("initial parameters do not match graph and dimension".into()));
    }
    let supervised = config.lambda > 0.0;
    if supervised && edges.labeled_count() == 0 {
        return Err(Error::Config("lambda > 0 requires labeled edges".into()));
    }
    if supervised && state.classifier.output_size() != edges.label_count() {
        return Err(Error::Config("classifier output size does not match the edge labels".into()));
    }

    let mut structural = StructuralBranch::new(graph, config)?;
    let mut relational = if supervised {
        Some(RelationalBranch::new(graph, edges, config)?)
    } else {
        None
    };
    let (n_structural, n_relational, rounds) = if supervised {
        let (s, r) = schedule_counts(config.batches_per_round, config.lambda);
        (s, r, config.max_rounds)
    } else {
        let pass = structural
            .sampler()
            .epoch_pairs()
            .div_ceil(config.structural_batch)
            .max(1);
        (
            config.unsupervised_round_batches.unwrap_or(pass),
            0,
            config.unsupervised_rounds,
        )
    };
    info!(
        "training: {} structural + {} relational steps per round, up to {} rounds",
        n_structural, n_relational, rounds
    );

    let mut stopper = EarlyStopper::new(config.early_stop_window);
    let mut records = Vec::new();
    let mut best: Option<(usize, EmbeddingTables, MlpParams)> = None;
    let mut stop_reason = StopReason::MaxRounds;
    for round in 1..=rounds {
        let started = Instant::now();
        let mut s_losses = Vec::with_capacity(n_structural);
        for _ in 0..n_structural {
            s_losses.push(structural.step(&mut state.tables, &mut state.adam)?);
        }
        let mut r_losses = Vec::with_capacity(n_relational);
        let mut validation_loss = None;
        if let Some(branch) = relational.as_mut() {
            for _ in 0..n_relational {
                r_losses.push(branch.step(&mut state)?);
            }
            validation_loss = Some(branch.validation_loss(&state)? as f64);
        }
        let record = RoundRecord {
            round,
            structural_loss: mean(&s_losses),
            relational_loss: mean(&r_losses),
            validation_loss,
            seconds: started.elapsed().as_secs_f64(),
        };
        if s_losses.iter().chain(&r_losses).any(|x| !x.is_finite())
            || validation_loss.is_some_and(|v| !v.is_finite())
        {
            return Err(Error::Diverged {
                round,
                detail: format!(
                    "Ls={} Lr={} val={:?} after {} completed rounds",
                    record.structural_loss,
                    record.relational_loss,
                    validation_loss,
                    records.len()
                ),
            });
        }
        debug!(
            "round {round}: Ls={:.6} Lr={:.6} val={:?}",
            record.structural_loss, record.relational_loss, validation_loss
        );
        records.push(record);

        if let Some(val) = validation_loss {
            let stop = stopper.observe(val);
            if stopper.improved() && config.restore_best {
                best = Some((round, state.tables.clone(), state.classifier.clone()));
            }
            if stop {
                stop_reason = StopReason::EarlyStop;
                break;
            }
        }
    }
    let mut selected_round = records.len();
    if let Some((round, tables, classifier)) = best {
        selected_round = round;
        state.tables = tables;
        state.classifier = classifier;
    }
    info!("stopped after {} rounds ({stop_reason})", records.len());
    Ok(TrainOutput {
        state,
        report: TrainReport {
            rounds: records,
            stop_reason,
            structural_steps_per_round: n_structural,
            relational_steps_per_round: n_relational,
            selected_round,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_follows_loop_bounds() {
        assert_eq!(schedule_counts(10, 0.8), (2, 8));
        assert_eq!(schedule_counts(10, 0.0), (10, 0));
        assert_eq!(schedule_counts(10, 1.0), (0, 10));
        assert_eq!(schedule_counts(50, 0.8), (10, 40));
        // half-up: (1 - 0.75) * 2 = 0.5 -> 1
        assert_eq!(schedule_counts(2, 0.75), (1, 1));
        assert_eq!(schedule_counts(1, 0.5), (1, 0));
    }

    #[test]
    fn schedule_is_monotone_in_lambda() {
        let t = 50;
        let mut prev = usize::MAX;
        for i in 0..=100 {
            let (s, r) = schedule_counts(t, i as f64 / 100.0);
            assert_eq!(s + r, t);
            assert!(s <= prev);
            prev = s;
        }
    }

    #[test]
    fn combined_loss_weights() {
        assert_eq!(combined_loss(2.0, 4.0, 0.5), 3.0);
        assert_eq!(combined_loss(2.0, 4.0, 0.0), 2.0);
        assert_eq!(combined_loss(2.0, 4.0, 1.0), 4.0);
        assert_eq!(combined_loss(2.0, f64::NAN, 0.0), 2.0);
    }

    #[test]
    fn early_stop_scripted() {
        let mut s = EarlyStopper::new(5);
        let seq = [3.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0];
        let fired: Vec<bool> = seq.iter().map(|&x| s.observe(x)).collect();
        assert_eq!(fired, [false, false, false, false, false, false, true]);
    }

    #[test]
    fn early_stop_resets_on_improvement() {
        let mut s = EarlyStopper::new(2);
        assert!(!s.observe(5.0));
        assert!(!s.observe(6.0));
        assert!(!s.observe(4.0));
        assert!(s.improved());
        assert!(!s.observe(4.0));
        assert!(s.observe(4.5));
    }

    #[test]
    fn default_config_values() {
        let c = TrainConfig::default();
        assert_eq!(c.lambda, 0.8);
        assert_eq!((c.structural_batch, c.relational_batch), (400, 400));
        assert_eq!((c.walks_per_node, c.walk_length, c.window), (80, 10, 10));
        assert_eq!(c.dim, 128);
        assert_eq!(c.learning_rate, 0.01);
        assert_eq!(c.early_stop_window, 5);
        assert_eq!(c.max_rounds, 200);
        assert_eq!(c.batches_per_round, 50);
        c.validate().unwrap();
    }

    #[test]
    fn config_validation() {
        let bad = [
            TrainConfig { lambda: 1.5, ..Default::default() },
            TrainConfig { dim: 0, ..Default::default() },
            TrainConfig { walk_length: 1, ..Default::default() },
            TrainConfig { validation_fraction: 1.0, ..Default::default() },
            TrainConfig { learning_rate: 0.0, ..Default::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
        }
    }

    #[test]
    fn config_from_partial_toml() {
        let c: TrainConfig = toml::from_str("lambda = 0.5\ndim = 16\n").unwrap();
        assert_eq!(c.lambda, 0.5);
        assert_eq!(c.dim, 16);
        assert_eq!(c.window, 10);
        assert!(toml::from_str::<TrainConfig>("lamda = 0.5").is_err());
    }
}
