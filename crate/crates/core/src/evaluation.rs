//! Cluster-quality measurement and human-annotation packets.

use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::embedding::EmbeddingTable;
use crate::taxonomy::{Taxonomy, TopicNode};
use crate::vector::{cosine, mean_direction, normalized};
use crate::TermId;

#[derive(Debug, Error, PartialEq)]
pub enum DbError {
    #[error("need at least 2 clusters, got {0}")]
    TooFewClusters(usize),
    #[error("cluster {0} is empty")]
    EmptyCluster(usize),
    #[error("degenerate cluster pair ({0}, {1})")]
    DegeneratePair(usize, usize),
}

/// Members and center of one cluster.
#[derive(Debug, Clone)]
pub struct ClusterView<'a> {
    pub members: Vec<&'a [f64]>,
    pub center: Vec<f64>,
}

impl<'a> ClusterView<'a> {
    /// Center is the mean direction of the unit-normalized members.
    pub fn from_members(members: Vec<&'a [f64]>) -> Self {
        let dim = members.first().map_or(0, |m| m.len());
        let units: Vec<Vec<f64>> = members.iter().filter_map(|m| normalized(m)).collect();
        let center = mean_direction(dim, units.iter().map(Vec::as_slice))
            .unwrap_or_else(|| vec![0.0; dim]);
        ClusterView { members, center }
    }
}

const DEGENERATE_EPS: f64 = 1e-12;

/// Davies-Bouldin index with cosine scatter and cosine center distance.
///
/// `s_i = mean(1 - cos(x, c_i))`, `d_ij = 1 - cos(c_i, c_j)`,
/// `DB = mean_i max_{j != i} (s_i + s_j) / d_ij`. Lower is better.
pub fn db_index(clusters: &[ClusterView<'_>]) -> Result<f64, DbError> {
    if clusters.len() < 2 {
        return Err(DbError::TooFewClusters(clusters.len()));
    }
    let mut scatter = Vec::with_capacity(clusters.len());
    for (i, c) in clusters.iter().enumerate() {
        if c.members.is_empty() {
            return Err(DbError::EmptyCluster(i));
        }
        let s = c.members.iter().map(|m| 1.0 - cosine(m, &c.center)).sum::<f64>()
            / c.members.len() as f64;
        scatter.push(s);
    }
    let mut total = 0.0;
    for i in 0..clusters.len() {
        let mut worst = f64::NEG_INFINITY;
        for j in 0..clusters.len() {
            if i == j {
                continue;
            }
            let d = 1.0 - cosine(&clusters[i].center, &clusters[j].center);
            if d <= DEGENERATE_EPS {
                return Err(DbError::DegeneratePair(i.min(j), i.max(j)));
            }
            worst = worst.max((scatter[i] + scatter[j]) / d);
        }
        total += worst;
    }
    Ok(total / clusters.len() as f64)
}

/// DB index of term clusters in the given space. Terms without a vector are ignored.
pub fn db_index_for_terms(clusters: &[Vec<TermId>], table: &EmbeddingTable) -> Result<f64, DbError> {
    let views: Vec<ClusterView<'_>> = clusters
        .iter()
        .map(|terms| ClusterView::from_members(terms.iter().filter_map(|&t| table.vector(t)).collect()))
        .collect();
    db_index(&views)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeDb {
    pub path: String,
    pub label: String,
    pub clusters: usize,
    pub db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DbReport {
    /// Which embedding space the values were measured in.
    pub space: String,
    pub nodes: Vec<NodeDb>,
    /// Mean over `nodes`; `None` when no node has two or more children.
    pub mean: Option<f64>,
}

impl DbReport {
    fn from_nodes(space: &str, nodes: Vec<NodeDb>) -> Self {
        let mean = (!nodes.is_empty())
            .then(|| nodes.iter().map(|n| n.db).sum::<f64>() / nodes.len() as f64);
        DbReport {
            space: space.to_string(),
            nodes,
            mean,
        }
    }

    /// Values recorded at build time, each in the space that split the node.
    pub fn from_build(tax: &Taxonomy) -> Self {
        let nodes = tax
            .nodes()
            .into_iter()
            .filter(|n| n.children.len() >= 2)
            .filter_map(|n| {
                n.db_index.map(|db| NodeDb {
                    path: n.path_string(),
                    label: tax.label_of(n),
                    clusters: n.children.len(),
                    db,
                })
            })
            .collect();
        Self::from_nodes("build", nodes)
    }

    /// Values for every split node, measured in one shared space.
    pub fn in_space(tax: &Taxonomy, table: &EmbeddingTable, space: &str) -> Self {
        let mut nodes = Vec::new();
        for node in tax.nodes() {
            if node.children.len() < 2 {
                continue;
            }
            let clusters: Vec<Vec<TermId>> = node
                .children
                .iter()
                .map(|c| c.terms.iter().map(|&(t, _)| t).collect())
                .collect();
            match db_index_for_terms(&clusters, table) {
                Ok(db) => nodes.push(NodeDb {
                    path: node.path_string(),
                    label: tax.label_of(node),
                    clusters: clusters.len(),
                    db,
                }),
                Err(e) => log::warn!("{}: skipped: {e}", node.path_string()),
            }
        }
        Self::from_nodes(space, nodes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopicView {
    pub path: String,
    pub label: String,
    pub terms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationRecord {
    pub id: String,
    pub parent: TopicView,
    pub child: TopicView,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntrusionRecord {
    pub id: String,
    pub path: String,
    pub terms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntrusionKey {
    pub id: String,
    pub intruder_position: usize,
    pub intruder: String,
    pub intruder_from: String,
}

pub const INTRUSION_TERMS: usize = 5;

fn view(tax: &Taxonomy, node: &TopicNode, top_n: usize) -> TopicView {
    TopicView {
        path: node.path_string(),
        label: tax.label_of(node),
        terms: node
            .terms
            .iter()
            .take(top_n)
            .map(|&(t, _)| tax.terms.term(t).to_string())
            .collect(),
    }
}

/// One record per parent-child edge, in shuffled order.
///
/// Ids follow pre-order traversal, so a given edge keeps its id for any seed.
pub fn relation_packet(tax: &Taxonomy, top_n: usize, seed: u64) -> Vec<RelationRecord> {
    let mut records = Vec::new();
    for parent in tax.nodes() {
        for child in &parent.children {
            records.push(RelationRecord {
                id: format!("rel-{:04}", records.len()),
                parent: view(tax, parent, top_n),
                child: view(tax, child, top_n),
            });
        }
    }
    records.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    records
}

/// Term-intrusion quiz: each node's top terms plus one term from a sibling.
pub fn intrusion_packet(tax: &Taxonomy, seed: u64) -> (Vec<IntrusionRecord>, Vec<IntrusionKey>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut quiz = Vec::new();
    let mut keys = Vec::new();
    for parent in tax.nodes() {
        for (i, node) in parent.children.iter().enumerate() {
            if parent.children.len() < 2 {
                log::warn!("{}: skipped, no siblings", node.path_string());
                continue;
            }
            if node.terms.len() < INTRUSION_TERMS {
                log::warn!(
                    "{}: skipped, only {} terms",
                    node.path_string(),
                    node.terms.len()
                );
                continue;
            }
            let own = node.term_ids();
            let candidates: Vec<(TermId, &TopicNode)> = parent
                .children
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .flat_map(|(_, s)| s.terms.iter().map(move |&(t, _)| (t, s)))
                .filter(|(t, _)| !own.contains(t))
                .collect();
            if candidates.is_empty() {
                log::warn!("{}: skipped, no sibling terms", node.path_string());
                continue;
            }
            let (intruder, sibling) = candidates[rng.gen_range(0..candidates.len())];
            let mut terms: Vec<String> = node
                .terms
                .iter()
                .take(INTRUSION_TERMS)
                .map(|&(t, _)| tax.terms.term(t).to_string())
                .collect();
            terms.shuffle(&mut rng);
            let position = rng.gen_range(0..=terms.len());
            let intruder = tax.terms.term(intruder).to_string();
            terms.insert(position, intruder.clone());
            let id = format!("int-{:04}", quiz.len());
            quiz.push(IntrusionRecord {
                id: id.clone(),
                path: node.path_string(),
                terms,
            });
            keys.push(IntrusionKey {
                id,
                intruder_position: position,
                intruder,
                intruder_from: sibling.path_string(),
            });
        }
    }
    (quiz, keys)
}

/// Write records as JSON lines.
pub fn write_jsonl<W: Write, T: Serialize>(mut out: W, records: &[T]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
