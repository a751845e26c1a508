//! Planted-partition test graphs with community-aligned labels.
//!
//! Node `v` of community `c` is labeled `c{c}`. An edge inside community `c`
//! carries the relation label `r{c}`, an edge between communities carries
//! the shared label `bridge`.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    keep_labeled_fraction, Graph, LabelSet, LabelVocabulary, LabeledEdgeSet, NodeLabelSet,
};
use crate::rng::{self, Purpose};

pub const MAX_ATTEMPTS: u64 = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedPartition {
    pub communities: usize,
    pub nodes_per_community: usize,
    pub p_in: f64,
    pub p_out: f64,
    /// Share of edges whose label is kept.
    pub label_fraction: f64,
    pub seed: u64,
}

impl Default for PlantedPartition {
    fn default() -> Self {
        PlantedPartition {
            communities: 4,
            nodes_per_community: 50,
            p_in: 0.2,
            p_out: 0.01,
            label_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticGraph {
    pub graph: Graph,
    pub edge_vocab: LabelVocabulary,
    /// Every edge with its label.
    pub all_edge_labels: LabeledEdgeSet,
    /// The kept `label_fraction` of `all_edge_labels`.
    pub edge_labels: LabeledEdgeSet,
    pub node_labels: NodeLabelSet,
    /// Community of each dense node index.
    pub community: Vec<usize>,
}

impl PlantedPartition {
    pub fn validate(&self) -> Result<()> {
        if self.communities < 2 || self.nodes_per_community < 4 {
            return Err(Error::Config(
                "need at least 2 communities of at least 4 nodes".into(),
            ));
        }
        if !(self.p_in > self.p_out && self.p_out > 0.0 && self.p_in <= 1.0) {
            return Err(Error::Config(format!(
                "need 1 >= p_in > p_out > 0, got p_in={} p_out={}",
                self.p_in, self.p_out
            )));
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "label fraction {} outside (0, 1]",
                self.label_fraction
            )));
        }
        Ok(())
    }

    /// Samples a connected graph, retrying with fresh streams up to
    /// [`MAX_ATTEMPTS`] times.
    pub fn generate(&self) -> Result<SyntheticGraph> {
        self.validate()?;
        let n = self.communities * self.nodes_per_community;
        let name = |v: usize| format!("v{v}");
        for attempt in 0..MAX_ATTEMPTS {
            let mut rng = rng::stream(self.seed, Purpose::Synthetic, attempt);
            let mut pairs = Vec::new();
            for a in 0..n {
                for b in a + 1..n {
                    let same = a / self.nodes_per_community == b / self.nodes_per_community;
                    let p = if same { self.p_in } else { self.p_out };
                    if rng.random::<f64>() < p {
                        pairs.push((name(a), name(b)));
                    }
                }
            }
            let graph = Graph::from_id_pairs(pairs)?;
            if graph.node_count() != n || !graph.is_connected() {
                continue;
            }
            return self.label(graph);
        }
        Err(Error::Validation(format!(
            "no connected graph after {MAX_ATTEMPTS} attempts; raise p_in or p_out"
        )))
    }

    fn label(&self, graph: Graph) -> Result<SyntheticGraph> {
        let community: Vec<usize> = graph
            .node_ids()
            .iter()
            .map(|id| id[1..].parse::<usize>().expect("generated id") / self.nodes_per_community)
            .collect();
        let mut names: Vec<String> = (0..self.communities).map(|c| format!("r{c}")).collect();
        names.push("bridge".into());
        let edge_vocab = LabelVocabulary::from_labels(names)?;
        let bridge = self.communities;
        let size = edge_vocab.len();
        let labeled: BTreeMap<usize, LabelSet> = graph
            .edges()
            .iter()
            .enumerate()
            .map(|(e, &(u, v))| {
                let label = if community[u] == community[v] { community[u] } else { bridge };
                (e, LabelSet::from_indices(size, [label]))
            })
            .collect();
        let all_edge_labels = LabeledEdgeSet::from_labeled(graph.edge_count(), size, labeled)?;
        let edge_labels = keep_labeled_fraction(&all_edge_labels, self.label_fraction, self.seed)?;

        let node_vocab = LabelVocabulary::from_labels((0..self.communities).map(|c| format!("c{c}")))?;
        let nodes = community
            .iter()
            .enumerate()
            .map(|(v, &c)| (v, LabelSet::from_indices(self.communities, [c])))
            .collect();
        let node_labels = NodeLabelSet::new(node_vocab, nodes)?;
        Ok(SyntheticGraph {
            graph,
            edge_vocab,
            all_edge_labels,
            edge_labels,
            node_labels,
            community,
        })
    }
}

impl SyntheticGraph {
    pub fn write_edges<W: Write>(&self, out: W) -> Result<()> {
        crate::graph::write_edge_list(&self.graph, out)
    }

    /// Writes the kept edge labels, `src dst label` per line.
    pub fn write_edge_labels<W: Write>(&self, mut out: W) -> Result<()> {
        for (&e, labels) in self.edge_labels.labeled() {
            let (u, v) = self.graph.edge(e);
            let names: Vec<&str> = labels.iter().map(|l| self.edge_vocab.label(l)).collect();
            writeln!(out, "{} {} {}", self.graph.node_id(u), self.graph.node_id(v), names.join(","))?;
        }
        Ok(())
    }

    pub fn write_node_labels<W: Write>(&self, mut out: W) -> Result<()> {
        let vocab = self.node_labels.vocab();
        for (&v, labels) in self.node_labels.labels() {
            let names: Vec<&str> = labels.iter().map(|l| vocab.label(l)).collect();
            writeln!(out, "{} {}", self.graph.node_id(v), names.join(","))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_family_shape() {
        let g = PlantedPartition::default().generate().unwrap();
        assert_eq!(g.graph.node_count(), 200);
        assert_eq!(g.node_labels.vocab().len(), 4);
        assert_eq!(g.edge_vocab.len(), 5);
        assert!(g.graph.is_connected());
        let expected = (0.1 * g.graph.edge_count() as f64).round() as usize;
        assert_eq!(g.edge_labels.labeled_count(), expected);
    }

    #[test]
    fn labels_follow_communities() {
        let g = PlantedPartition { seed: 3, ..Default::default() }.generate().unwrap();
        for (&e, labels) in g.all_edge_labels.labeled() {
            let (u, v) = g.graph.edge(e);
            let label = labels.iter().next().unwrap();
            if g.community[u] == g.community[v] {
                assert_eq!(label, g.community[u]);
            } else {
                assert_eq!(g.edge_vocab.label(label), "bridge");
            }
        }
    }

    #[test]
    fn full_label_fraction_labels_everything() {
        let g = PlantedPartition { label_fraction: 1.0, ..Default::default() }.generate().unwrap();
        assert_eq!(g.edge_labels.labeled_count(), g.graph.edge_count());
    }

    #[test]
    fn rejects_bad_parameters() {
        for p in [
            PlantedPartition { communities: 1, ..Default::default() },
            PlantedPartition { nodes_per_community: 3, ..Default::default() },
            PlantedPartition { p_in: 0.01, p_out: 0.2, ..Default::default() },
            PlantedPartition { p_out: 0.0, ..Default::default() },
        ] {
            assert!(matches!(p.generate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn sparse_settings_exhaust_attempts() {
        let p = PlantedPartition { p_in: 0.02, p_out: 0.001, ..Default::default() };
        assert!(matches!(p.generate(), Err(Error::Validation(_))));
    }
}
