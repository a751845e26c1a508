//! Undirected graph store, label vocabularies and the partially labeled
//! edge set.
//!
//! Text formats, one record per line, `#` starts a comment line:
//!
//! - edge list: `src dst`
//! - edge labels: `src dst label1[,label2,...]`
//! - node labels: `node label1[,label2,...]`
//!
//! Fields are separated by arbitrary whitespace. Node ids are interned in
//! first-seen order.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// Immutable undirected, unweighted graph without self-loops.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    /// Canonical `(lo, hi)` endpoint pairs in first-seen order.
    edges: Vec<(usize, usize)>,
    edge_index: HashMap<(usize, usize), usize>,
    adjacency: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph from `(src, dst)` id pairs.
    ///
    /// Duplicate and reversed-duplicate pairs collapse into one edge.
    /// Self-loops are rejected.
    pub fn from_id_pairs<I, S>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, S)>,
        S: AsRef<str>,
    {
        let mut builder = GraphBuilder::default();
        for (n, (a, b)) in pairs.into_iter().enumerate() {
            builder.add(a.as_ref(), b.as_ref(), n + 1)?;
        }
        builder.finish()
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge(&self, edge: usize) -> (usize, usize) {
        self.edges[edge]
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    pub fn node_id(&self, node: usize) -> &str {
        &self.ids[node]
    }

    pub fn node_ids(&self) -> &[String] {
        &self.ids
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Index of the undirected edge `{u, v}`, if present.
    pub fn edge_between(&self, u: usize, v: usize) -> Option<usize> {
        self.edge_index.get(&(u.min(v), u.max(v))).copied()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edge_between(u, v).is_some()
    }

    /// True when every node is reachable from node 0.
    pub fn is_connected(&self) -> bool {
        if self.ids.is_empty() {
            return true;
        }
        let mut seen = vec![false; self.ids.len()];
        let mut stack = vec![0];
        seen[0] = true;
        let mut reached = 1;
        while let Some(v) = stack.pop() {
            for &u in &self.adjacency[v] {
                if !seen[u] {
                    seen[u] = true;
                    reached += 1;
                    stack.push(u);
                }
            }
        }
        reached == self.ids.len()
    }
}

#[derive(Default)]
struct GraphBuilder {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    edges: Vec<(usize, usize)>,
    edge_index: HashMap<(usize, usize), usize>,
}

impl GraphBuilder {
    fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_owned());
        self.index.insert(id.to_owned(), i);
        i
    }

    fn add(&mut self, a: &str, b: &str, line: usize) -> Result<()> {
        if a == b {
            return Err(Error::Validation(format!(
                "line {line}: self-loop on node {a:?}"
            )));
        }
        let u = self.intern(a);
        let v = self.intern(b);
        let key = (u.min(v), u.max(v));
        if !self.edge_index.contains_key(&key) {
            self.edge_index.insert(key, self.edges.len());
            self.edges.push(key);
        }
        Ok(())
    }

    fn finish(self) -> Result<Graph> {
        let mut adjacency = vec![Vec::new(); self.ids.len()];
        for &(u, v) in &self.edges {
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(Graph {
            ids: self.ids,
            index: self.index,
            edges: self.edges,
            edge_index: self.edge_index,
            adjacency,
        })
    }
}

/// Yields `(line_number, fields)` for each non-empty, non-comment line.
fn records<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, Vec<String>)>> {
    reader.lines().enumerate().filter_map(|(n, line)| match line {
        Err(e) => Some(Err(Error::Stream(e))),
        Ok(line) => {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                None
            } else {
                Some(Ok((
                    n + 1,
                    trimmed.split_whitespace().map(str::to_owned).collect(),
                )))
            }
        }
    })
}

/// Reads an edge list (`src dst` per line).
pub fn load_edge_list<R: BufRead>(reader: R) -> Result<Graph> {
    let mut builder = GraphBuilder::default();
    for record in records(reader) {
        let (line, fields) = record?;
        if fields.len() != 2 {
            return Err(Error::parse(
                line,
                format!("expected 2 fields `src dst`, found {}", fields.len()),
            ));
        }
        builder.add(&fields[0], &fields[1], line)?;
    }
    builder.finish()
}

/// Writes the graph in edge-list format, one canonical edge per line.
pub fn write_edge_list<W: Write>(graph: &Graph, mut out: W) -> Result<()> {
    for &(u, v) in graph.edges() {
        writeln!(out, "{} {}", graph.node_id(u), graph.node_id(v))?;
    }
    Ok(())
}

/// Fixed-size bitset over a label vocabulary.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelSet {
    len: usize,
    words: Vec<u64>,
}

impl LabelSet {
    pub fn empty(len: usize) -> Self {
        LabelSet {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn from_indices(len: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut set = LabelSet::empty(len);
        for i in indices {
            set.insert(i);
        }
        set
    }

    /// Vocabulary size the set ranges over.
    pub fn universe(&self) -> usize {
        self.len
    }

    pub fn insert(&mut self, label: usize) {
        assert!(label < self.len, "label {label} outside vocabulary of {}", self.len);
        self.words[label / 64] |= 1 << (label % 64);
    }

    pub fn contains(&self, label: usize) -> bool {
        label < self.len && self.words[label / 64] & (1 << (label % 64)) != 0
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(move |&i| self.contains(i))
    }

    /// Multi-hot encoding of length `universe()`.
    pub fn to_multi_hot(&self) -> Vec<crate::Real> {
        (0..self.len)
            .map(|i| if self.contains(i) { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Ordered vocabulary of distinct label strings.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabelVocabulary {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelVocabulary {
    pub fn from_labels<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = LabelVocabulary::default();
        for label in labels {
            let label = label.into();
            if vocab.index.contains_key(&label) {
                return Err(Error::Validation(format!("duplicate label {label:?}")));
            }
            vocab.intern(&label);
        }
        Ok(vocab)
    }

    fn intern(&mut self, label: &str) -> usize {
        if let Some(&i) = self.index.get(label) {
            return i;
        }
        let i = self.labels.len();
        self.labels.push(label.to_owned());
        self.index.insert(label.to_owned(), i);
        i
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }
}

fn parse_label_list(
    vocab: &mut LabelVocabulary,
    field: Option<&String>,
    line: usize,
) -> Result<Vec<usize>> {
    let field = field.ok_or_else(|| Error::Validation(format!("line {line}: empty label list")))?;
    field
        .split(',')
        .map(|label| {
            if label.is_empty() {
                Err(Error::Validation(format!(
                    "line {line}: empty label in {field:?}"
                )))
            } else {
                Ok(vocab.intern(label))
            }
        })
        .collect()
}

/// Partition of the edges into labeled (`E_L` with label sets) and
/// unlabeled (`E_U`) parts.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledEdgeSet {
    labeled: BTreeMap<usize, LabelSet>,
    unlabeled: Vec<usize>,
    label_count: usize,
}

impl LabeledEdgeSet {
    /// All edges unlabeled.
    pub fn unlabeled(edge_count: usize, label_count: usize) -> Self {
        LabeledEdgeSet {
            labeled: BTreeMap::new(),
            unlabeled: (0..edge_count).collect(),
            label_count,
        }
    }

    /// Builds the partition from explicit per-edge label sets.
    pub fn from_labeled(
        edge_count: usize,
        label_count: usize,
        labeled: BTreeMap<usize, LabelSet>,
    ) -> Result<Self> {
        for (&edge, labels) in &labeled {
            if edge >= edge_count {
                return Err(Error::Validation(format!("edge index {edge} out of range")));
            }
            if labels.is_empty() || labels.universe() != label_count {
                return Err(Error::Validation(format!(
                    "edge {edge} has an empty or mis-sized label set"
                )));
            }
        }
        let unlabeled = (0..edge_count).filter(|e| !labeled.contains_key(e)).collect();
        Ok(LabeledEdgeSet {
            labeled,
            unlabeled,
            label_count,
        })
    }

    pub fn labeled(&self) -> &BTreeMap<usize, LabelSet> {
        &self.labeled
    }

    pub fn unlabeled_edges(&self) -> &[usize] {
        &self.unlabeled
    }

    pub fn labeled_count(&self) -> usize {
        self.labeled.len()
    }

    pub fn label_count(&self) -> usize {
        self.label_count
    }

    pub fn labels_of(&self, edge: usize) -> Option<&LabelSet> {
        self.labeled.get(&edge)
    }
}

/// Reads the edge-label file against `graph`.
///
/// Labels of an edge listed on several lines are unioned. The vocabulary
/// follows first-seen order.
pub fn load_edge_labels<R: BufRead>(
    reader: R,
    graph: &Graph,
) -> Result<(LabelVocabulary, LabeledEdgeSet)> {
    let mut vocab = LabelVocabulary::default();
    let mut raw: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for record in records(reader) {
        let (line, fields) = record?;
        if fields.len() < 2 || fields.len() > 3 {
            return Err(Error::parse(
                line,
                format!(
                    "expected `src dst label1[,label2,...]`, found {} fields",
                    fields.len()
                ),
            ));
        }
        let endpoint = |id: &str| {
            graph.node_index(id).ok_or_else(|| {
                Error::Validation(format!("line {line}: unknown node {id:?}"))
            })
        };
        let u = endpoint(&fields[0])?;
        let v = endpoint(&fields[1])?;
        let edge = graph.edge_between(u, v).ok_or_else(|| {
            Error::Validation(format!(
                "line {line}: {} {} is not an edge of the graph",
                fields[0], fields[1]
            ))
        })?;
        let labels = parse_label_list(&mut vocab, fields.get(2), line)?;
        raw.entry(edge).or_default().extend(labels);
    }
    let size = vocab.len();
    let labeled = raw
        .into_iter()
        .map(|(edge, labels)| (edge, LabelSet::from_indices(size, labels)))
        .collect();
    let set = LabeledEdgeSet::from_labeled(graph.edge_count(), size, labeled)?;
    Ok((vocab, set))
}

/// Randomly partitions `E_L` into training and validation parts.
///
/// The training part receives `ceil(train_fraction * |E_L|)` edges. Each
/// returned set keeps the full edge universe: edges outside its labeled part
/// count as unlabeled.
pub fn split_labeled_edges(
    set: &LabeledEdgeSet,
    train_fraction: f64,
    seed: u64,
) -> Result<(LabeledEdgeSet, LabeledEdgeSet)> {
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "train fraction {train_fraction} outside (0, 1]"
        )));
    }
    if set.labeled.is_empty() {
        return Err(Error::Config("cannot split an empty labeled edge set".into()));
    }
    let mut edges: Vec<usize> = set.labeled.keys().copied().collect();
    edges.shuffle(&mut rng::stream(seed, Purpose::EdgeSplit, 0));
    let n = edges.len();
    let train_n = ((train_fraction * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    let edge_count = set.labeled.len() + set.unlabeled.len();
    let pick = |ids: &[usize]| -> BTreeMap<usize, LabelSet> {
        ids.iter().map(|e| (*e, set.labeled[e].clone())).collect()
    };
    let train = LabeledEdgeSet::from_labeled(edge_count, set.label_count, pick(&edges[..train_n]))?;
    let validation =
        LabeledEdgeSet::from_labeled(edge_count, set.label_count, pick(&edges[train_n..]))?;
    Ok((train, validation))
}

/// Keeps a uniformly random `fraction` of the labeled edges (at least one);
/// the rest become unlabeled.
pub fn keep_labeled_fraction(set: &LabeledEdgeSet, fraction: f64, seed: u64) -> Result<LabeledEdgeSet> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("label fraction {fraction} outside (0, 1]")));
    }
    let mut edges: Vec<usize> = set.labeled.keys().copied().collect();
    edges.shuffle(&mut rng::stream(seed, Purpose::LabelSubsample, 0));
    let keep = ((fraction * edges.len() as f64).round() as usize).clamp(1.min(edges.len()), edges.len());
    let labeled = edges[..keep]
        .iter()
        .map(|e| (*e, set.labeled[e].clone()))
        .collect();
    LabeledEdgeSet::from_labeled(set.labeled.len() + set.unlabeled.len(), set.label_count, labeled)
}

/// Node label assignments used by evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeLabelSet {
    vocab: LabelVocabulary,
    labels: BTreeMap<usize, LabelSet>,
}

impl NodeLabelSet {
    pub fn new(vocab: LabelVocabulary, labels: BTreeMap<usize, LabelSet>) -> Result<Self> {
        for (node, set) in &labels {
            if set.is_empty() || set.universe() != vocab.len() {
                return Err(Error::Validation(format!(
                    "node {node} has an empty or mis-sized label set"
                )));
            }
        }
        Ok(NodeLabelSet { vocab, labels })
    }

    pub fn vocab(&self) -> &LabelVocabulary {
        &self.vocab
    }

    pub fn labels(&self) -> &BTreeMap<usize, LabelSet> {
        &self.labels
    }

    pub fn get(&self, node: usize) -> Option<&LabelSet> {
        self.labels.get(&node)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels.keys().copied()
    }
}

/// Node-label records whose id could not be resolved.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct UnknownNodes(pub Vec<String>);

/// Reads a node-label file, resolving ids through `lookup`.
///
/// Ids that `lookup` cannot resolve are collected and skipped; callers
/// decide whether that is fatal.
pub fn load_node_labels<R: BufRead>(
    reader: R,
    lookup: impl Fn(&str) -> Option<usize>,
) -> Result<(NodeLabelSet, UnknownNodes)> {
    let mut vocab = LabelVocabulary::default();
    let mut raw: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut unknown = Vec::new();
    for record in records(reader) {
        let (line, fields) = record?;
        if fields.is_empty() || fields.len() > 2 {
            return Err(Error::parse(
                line,
                format!("expected `node label1[,label2,...]`, found {} fields", fields.len()),
            ));
        }
        let labels = parse_label_list(&mut vocab, fields.get(1), line)?;
        match lookup(&fields[0]) {
            Some(node) => raw.entry(node).or_default().extend(labels),
            None => {
                if !unknown.contains(&fields[0]) {
                    unknown.push(fields[0].clone());
                }
            }
        }
    }
    let size = vocab.len();
    let labels = raw
        .into_iter()
        .map(|(node, l)| (node, LabelSet::from_indices(size, l)))
        .collect();
    Ok((NodeLabelSet::new(vocab, labels)?, UnknownNodes(unknown)))
}
