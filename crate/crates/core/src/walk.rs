//! Uniform random walks and skip-gram window pairs.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::{self, Purpose};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TrainPair {
    pub center: usize,
    pub context: usize,
}

impl TrainPair {
    pub fn new(center: usize, context: usize) -> Self {
        TrainPair { center, context }
    }
}

/// `walks_per_node` walks of `walk_length` nodes from each node, node-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WalkCorpus {
    walks: Vec<Vec<usize>>,
    walks_per_node: usize,
    walk_length: usize,
    seed: u64,
}

impl WalkCorpus {
    pub fn from_walks(walks: Vec<Vec<usize>>, walks_per_node: usize, walk_length: usize, seed: u64) -> Self {
        WalkCorpus {
            walks,
            walks_per_node,
            walk_length,
            seed,
        }
    }

    pub fn walks(&self) -> &[Vec<usize>] {
        &self.walks
    }

    pub fn len(&self) -> usize {
        self.walks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.walks.is_empty()
    }

    pub fn walks_per_node(&self) -> usize {
        self.walks_per_node
    }

    pub fn walk_length(&self) -> usize {
        self.walk_length
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of window pairs in the whole corpus.
    pub fn pair_count(&self, window: usize) -> usize {
        self.walks.iter().map(|w| pair_count(w.len(), window)).sum()
    }

    /// Writes one walk per line as space-separated external ids.
    pub fn write<W: Write>(&self, graph: &Graph, mut out: W) -> Result<()> {
        for walk in &self.walks {
            let line: Vec<&str> = walk.iter().map(|&v| graph.node_id(v)).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }

    /// Reads a corpus written by [`WalkCorpus::write`], checking every step
    /// against `graph`.
    pub fn read<R: BufRead>(reader: R, graph: &Graph, seed: u64) -> Result<Self> {
        let mut walks = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let walk = line
                .split_whitespace()
                .map(|id| {
                    graph
                        .node_index(id)
                        .ok_or_else(|| Error::parse(n + 1, format!("unknown node {id:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            if walk.windows(2).any(|s| !graph.has_edge(s[0], s[1])) {
                return Err(Error::parse(n + 1, "walk steps along a non-edge"));
            }
            walks.push(walk);
        }
        let walk_length = walks.first().map_or(0, Vec::len);
        if walks.iter().any(|w| w.len() != walk_length) || walk_length < 2 {
            return Err(Error::Validation("walk cache has inconsistent walk lengths".into()));
        }
        let walks_per_node = walks.len() / graph.node_count().max(1);
        Ok(WalkCorpus::from_walks(walks, walks_per_node, walk_length, seed))
    }
}

/// Generates `walks_per_node` uniform random walks of `walk_length` nodes
/// from every node.
///
/// Walk `k` from node `v` draws from its own substream, so the corpus does
/// not depend on thread scheduling.
pub fn generate_walks(
    graph: &Graph,
    walks_per_node: usize,
    walk_length: usize,
    seed: u64,
) -> Result<WalkCorpus> {
    if walks_per_node == 0 || walk_length < 2 {
        return Err(Error::Config(format!(
            "walks need walks_per_node >= 1 and walk_length >= 2, got {walks_per_node} and {walk_length}"
        )));
    }
    if let Some(v) = (0..graph.node_count()).find(|&v| graph.degree(v) == 0) {
        return Err(Error::Validation(format!(
            "node {:?} has no neighbors to walk to",
            graph.node_id(v)
        )));
    }
    let walks = (0..graph.node_count() * walks_per_node)
        .into_par_iter()
        .map(|slot| {
            let start = slot / walks_per_node;
            let mut rng = rng::stream(seed, Purpose::Walks, slot as u64);
            walk_from(graph, start, walk_length, &mut rng)
        })
        .collect();
    Ok(WalkCorpus::from_walks(walks, walks_per_node, walk_length, seed))
}

fn walk_from(graph: &Graph, start: usize, walk_length: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut walk = Vec::with_capacity(walk_length);
    walk.push(start);
    let mut current = start;
    for _ in 1..walk_length {
        let nbrs = graph.neighbors(current);
        current = nbrs[rng.random_range(0..nbrs.len())];
        walk.push(current);
    }
    walk
}

/// Number of `(i, j)` pairs with `i != j` and `|i - j| <= window` in a
/// sequence of `len` nodes.
pub fn pair_count(len: usize, window: usize) -> usize {
    (0..len)
        .map(|i| (i + window).min(len.saturating_sub(1)) - i.saturating_sub(window))
        .sum()
}

/// All window pairs of one walk, positions in order.
pub fn extract_pairs(walk: &[usize], window: usize) -> Vec<TrainPair> {
    let mut pairs = Vec::with_capacity(pair_count(walk.len(), window));
    for (i, &center) in walk.iter().enumerate() {
        let lo = i.saturating_sub(window);
        let hi = (i + window).min(walk.len() - 1);
        for (j, &context) in walk.iter().enumerate().take(hi + 1).skip(lo) {
            if j != i {
                pairs.push(TrainPair::new(center, context));
            }
        }
    }
    pairs
}

/// Draws one pair: uniform walk, uniform position, uniform in-window offset.
fn draw_pair(corpus: &WalkCorpus, window: usize, rng: &mut ChaCha8Rng) -> TrainPair {
    let walk = &corpus.walks[rng.random_range(0..corpus.walks.len())];
    let i = rng.random_range(0..walk.len());
    let lo = i.saturating_sub(window);
    let hi = (i + window).min(walk.len() - 1);
    let mut j = lo + rng.random_range(0..hi - lo);
    if j >= i {
        j += 1;
    }
    TrainPair::new(walk[i], walk[j])
}

/// Samples `batch_size` window pairs from `corpus`.
pub fn sample_pair_batch(
    corpus: &WalkCorpus,
    window: usize,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<TrainPair> {
    assert!(!corpus.is_empty(), "cannot sample from an empty walk corpus");
    assert!(window >= 1, "window must be at least 1");
    (0..batch_size).map(|_| draw_pair(corpus, window, rng)).collect()
}

/// Endless source of pair batches.
///
/// Once the drawn pairs reach the corpus size the walks are regenerated
/// from the next epoch's substreams, unless the corpus is pinned.
pub struct PairSampler<'g> {
    graph: &'g Graph,
    corpus: WalkCorpus,
    window: usize,
    seed: u64,
    epoch: u64,
    drawn: usize,
    epoch_pairs: usize,
    pinned: bool,
    rng: ChaCha8Rng,
}

impl<'g> PairSampler<'g> {
    pub fn new(
        graph: &'g Graph,
        walks_per_node: usize,
        walk_length: usize,
        window: usize,
        seed: u64,
    ) -> Result<Self> {
        let corpus = generate_walks(graph, walks_per_node, walk_length, epoch_seed(seed, 0))?;
        Ok(Self::build(graph, corpus, window, seed, false))
    }

    /// Sampler over a fixed corpus that is never regenerated.
    pub fn pinned(graph: &'g Graph, corpus: WalkCorpus, window: usize, seed: u64) -> Self {
        Self::build(graph, corpus, window, seed, true)
    }

    fn build(graph: &'g Graph, corpus: WalkCorpus, window: usize, seed: u64, pinned: bool) -> Self {
        let epoch_pairs = corpus.pair_count(window);
        PairSampler {
            graph,
            corpus,
            window,
            seed,
            epoch: 0,
            drawn: 0,
            epoch_pairs,
            pinned,
            rng: rng::stream(seed, Purpose::PairSampling, 0),
        }
    }

    pub fn corpus(&self) -> &WalkCorpus {
        &self.corpus
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Window pairs per corpus.
    pub fn epoch_pairs(&self) -> usize {
        self.epoch_pairs
    }

    pub fn next_batch(&mut self, batch_size: usize) -> Result<Vec<TrainPair>> {
        if !self.pinned && self.drawn >= self.epoch_pairs {
            self.epoch += 1;
            self.drawn = 0;
            self.corpus = generate_walks(
                self.graph,
                self.corpus.walks_per_node,
                self.corpus.walk_length,
                epoch_seed(self.seed, self.epoch),
            )?;
        }
        self.drawn += batch_size;
        Ok(sample_pair_batch(&self.corpus, self.window, batch_size, &mut self.rng))
    }
}

/// Seed of the walk corpus for a given epoch.
pub fn epoch_seed(seed: u64, epoch: u64) -> u64 {
    seed.wrapping_add(epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::load_edge_list;
    use std::collections::HashSet;

    fn g(text: &str) -> Graph {
        load_edge_list(text.as_bytes()).unwrap()
    }

    #[test]
    fn path_walk_is_forced() {
        let graph = g("a b");
        let corpus = generate_walks(&graph, 1, 3, 42).unwrap();
        assert_eq!(corpus.walks()[0], [0, 1, 0]);
    }

    #[test]
    fn triangle_corpus_shape() {
        let graph = g("a b\nb c\nc a");
        let corpus = generate_walks(&graph, 2, 10, 1).unwrap();
        assert_eq!(corpus.len(), 6);
        for walk in corpus.walks() {
            assert_eq!(walk.len(), 10);
            assert!(walk.windows(2).all(|s| graph.has_edge(s[0], s[1])));
        }
    }

    #[test]
    fn star_walk_alternates_through_hub() {
        let graph = g("h a\nh b\nh c\nh d");
        let hub = graph.node_index("h").unwrap();
        let corpus = generate_walks(&graph, 1, 4, 9).unwrap();
        for (start, walk) in corpus.walks().iter().enumerate() {
            if start == hub {
                continue;
            }
            assert_eq!(walk[0], start);
            assert_eq!(walk[1], hub);
            assert_eq!(walk[3], hub);
            assert_ne!(walk[2], hub);
        }
    }

    #[test]
    fn rejects_bad_walk_parameters() {
        let graph = g("a b");
        assert!(generate_walks(&graph, 0, 3, 0).is_err());
        assert!(generate_walks(&graph, 1, 1, 0).is_err());
    }

    #[test]
    fn window_enumeration() {
        let p = |c, x| TrainPair::new(c, x);
        assert_eq!(
            extract_pairs(&[0, 1, 2], 1),
            [p(0, 1), p(1, 0), p(1, 2), p(2, 1)]
        );
        let two: HashSet<_> = extract_pairs(&[0, 1, 2], 2).into_iter().collect();
        assert_eq!(two.len(), 6);
        assert!(two.contains(&p(0, 2)) && two.contains(&p(2, 0)));
        let walk: Vec<usize> = (0..7).collect();
        assert_eq!(extract_pairs(&walk, 6).len(), 7 * 6);
        assert_eq!(extract_pairs(&walk, 100).len(), 7 * 6);
    }

    #[test]
    fn batch_size_and_support() {
        let corpus = WalkCorpus::from_walks(vec![vec![0, 1]], 1, 2, 0);
        let mut rng = rng::stream(0, Purpose::PairSampling, 0);
        let batch = sample_pair_batch(&corpus, 1, 4, &mut rng);
        assert_eq!(batch.len(), 4);
        for pair in batch {
            assert!(pair == TrainPair::new(0, 1) || pair == TrainPair::new(1, 0));
        }
        let graph = g("a b\nb c\nc d\nd a");
        let corpus = generate_walks(&graph, 3, 10, 5).unwrap();
        assert_eq!(sample_pair_batch(&corpus, 10, 400, &mut rng).len(), 400);
    }

    #[test]
    fn sampler_stream_is_reproducible() {
        let graph = g("a b\nb c\nc d\nd a\na c");
        let mut s1 = PairSampler::new(&graph, 2, 6, 2, 3).unwrap();
        let first = s1.next_batch(20).unwrap();
        let second = s1.next_batch(20).unwrap();
        assert_ne!(first, second);
        let mut s2 = PairSampler::new(&graph, 2, 6, 2, 3).unwrap();
        assert_eq!(s2.next_batch(20).unwrap(), first);
        assert_eq!(s2.next_batch(20).unwrap(), second);
    }

    #[test]
    fn sampler_regenerates_after_epoch() {
        let graph = g("a b\nb c\nc d\nd a\na c");
        let mut s = PairSampler::new(&graph, 1, 3, 1, 3).unwrap();
        let per_epoch = s.epoch_pairs();
        assert_eq!(per_epoch, 4 * 4);
        let before = s.corpus().clone();
        s.next_batch(per_epoch).unwrap();
        assert_eq!(s.epoch(), 0);
        s.next_batch(1).unwrap();
        assert_eq!(s.epoch(), 1);
        assert_ne!(s.corpus().seed(), before.seed());
    }

    #[test]
    fn corpus_file_round_trip() {
        let graph = g("a b\nb c\nc a\nc d");
        let corpus = generate_walks(&graph, 2, 5, 11).unwrap();
        let mut buf = Vec::new();
        corpus.write(&graph, &mut buf).unwrap();
        let back = WalkCorpus::read(buf.as_slice(), &graph, 11).unwrap();
        assert_eq!(back, corpus);
        assert!(WalkCorpus::read("a d\n".as_bytes(), &graph, 0).is_err());
    }
}
