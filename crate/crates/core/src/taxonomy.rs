//! Recursive top-down taxonomy construction, plus JSON export and import.
//!
//! The root holds every seed term and every document and is split with the
//! global embeddings. Each child receives the terms retained in its cluster
//! and the documents assigned to it. Before a non-root node is split, local
//! embeddings are trained on its sub-corpus: its own documents, expanded by
//! retrieval when there are fewer than `min_docs`. Sibling subtrees are built
//! in parallel; every random choice is seeded from the node's path, so the
//! result does not depend on scheduling.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::assignment::{build_subcorpus, Bm25Params, DocEmbeddings};
use crate::corpus::{Corpus, Document, TermSet};
use crate::embedding::{train_skipgram, EmbeddingError, EmbeddingTable, TrainConfig};
use crate::evaluation::db_index_for_terms;
use crate::spherical::KMeansConfig;
use crate::splitter::{adaptive_split, select_label, RoundTrace, SplitParams, SplitResult};
use crate::{derive_seed, DocId, TermId};

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("invalid build config: {0}")]
    InvalidConfig(String),
    #[error("global embedding training failed: {0}")]
    GlobalEmbedding(#[source] EmbeddingError),
    #[error("taxonomy file {path}: {message}")]
    Schema { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TaxonomyError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Adaptive clustering with local embeddings.
    Full,
    /// Plain spherical clustering: the representativeness threshold is ignored.
    NoAc,
    /// Global embeddings at every level.
    NoLe,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Full => "full",
            Mode::NoAc => "no_ac",
            Mode::NoLe => "no_le",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildConfig {
    /// Children per split.
    pub k: usize,
    /// Representativeness threshold for pushing terms up.
    pub delta: f64,
    /// Maximum number of levels, root included.
    pub l_max: usize,
    /// Nodes with fewer terms stay leaves. Defaults to `4 * k`.
    pub min_terms_to_split: Option<usize>,
    /// Sub-corpora smaller than this are expanded by retrieval.
    pub min_docs: usize,
    /// Documents added per retrieval step.
    pub m_step: usize,
    pub mode: Mode,
    pub seed: u64,
    /// Cap on adaptive rounds per split.
    pub split_max_iter: usize,
    pub kmeans: KMeansConfig,
    pub bm25: Bm25Params,
    /// Seeds inside these configs are replaced by seeds derived from `seed`.
    pub global_embedding: TrainConfig,
    pub local_embedding: TrainConfig,
    /// Keep per-round split audits on the nodes.
    pub keep_split_trace: bool,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            k: 5,
            delta: 0.25,
            l_max: 4,
            min_terms_to_split: None,
            min_docs: 100,
            m_step: 100,
            mode: Mode::Full,
            seed: 1,
            split_max_iter: 10,
            kmeans: KMeansConfig::default(),
            bm25: Bm25Params::default(),
            global_embedding: TrainConfig::global(),
            local_embedding: TrainConfig::local(),
            keep_split_trace: false,
        }
    }
}

impl BuildConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TaxonomyError::InvalidConfig(m));
        if self.k < 2 {
            return bad(format!("k must be >= 2, got {}", self.k));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return bad(format!("delta must be in [0, 1), got {}", self.delta));
        }
        if self.l_max < 1 {
            return bad("l_max must be >= 1".into());
        }
        if !self.bm25.is_valid() {
            return bad("bm25 needs k1 > 0 and b in [0, 1]".into());
        }
        for (name, c) in [
            ("global_embedding", &self.global_embedding),
            ("local_embedding", &self.local_embedding),
        ] {
            if let Err(e) = c.validate() {
                return bad(format!("{name}: {e}"));
            }
        }
        Ok(())
    }

    pub fn min_terms(&self) -> usize {
        self.min_terms_to_split.unwrap_or(4 * self.k)
    }

    /// Threshold actually applied: ignored in [`Mode::NoAc`].
    pub fn effective_delta(&self) -> f64 {
        match self.mode {
            Mode::NoAc => 0.0,
            _ => self.delta,
        }
    }

    pub fn global_train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, &[GLOBAL_STREAM]),
            ..self.global_embedding.clone()
        }
    }
}

const GLOBAL_STREAM: u64 = 0;
const LOCAL_STREAM: u64 = 1;
const SPLIT_STREAM: u64 = 2;

/// Which embedding table split a node.
#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingSource {
    Global,
    Local {
        docs: usize,
        expanded: usize,
        vocab: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum LeafReason {
    MaxDepth,
    TooFewTerms(usize),
    EmbeddingFailed(String),
    SplitFailed(String),
    /// Imported from a file; no build information.
    Imported,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicNode {
    /// Child indices from the root.
    pub path: Vec<usize>,
    pub level: usize,
    /// `None` at the root.
    pub label: Option<TermId>,
    /// Ranked terms with scores.
    pub terms: Vec<(TermId, f64)>,
    /// Cluster center in the parent's embedding space.
    pub center: Option<Vec<f64>>,
    pub doc_ids: Vec<DocId>,
    pub num_docs: usize,
    pub children: Vec<TopicNode>,
    /// Terms that stayed in this node when it was split.
    pub pushed_up: Vec<TermId>,
    pub embedding: Option<EmbeddingSource>,
    pub leaf_reason: Option<LeafReason>,
    /// Davies-Bouldin index of the children, in the space that split this node.
    pub db_index: Option<f64>,
    pub split_iterations: usize,
    /// Per-round audit of this node's split, kept when `keep_split_trace` is set.
    pub split_trace: Vec<RoundTrace>,
}

impl TopicNode {
    fn leaf(seed: NodeSeed, reason: LeafReason) -> Self {
        TopicNode {
            level: seed.path.len(),
            path: seed.path,
            label: seed.label,
            terms: seed.terms,
            center: seed.center,
            num_docs: seed.docs.len(),
            doc_ids: seed.docs,
            children: Vec::new(),
            pushed_up: Vec::new(),
            embedding: None,
            leaf_reason: Some(reason),
            db_index: None,
            split_iterations: 0,
            split_trace: Vec::new(),
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// `root`, `root/2`, `root/2/0`, ...
    pub fn path_string(&self) -> String {
        path_string(&self.path)
    }

    /// Pre-order traversal.
    pub fn walk(&self) -> Vec<&TopicNode> {
        let mut out = vec![self];
        for child in &self.children {
            out.extend(child.walk());
        }
        out
    }

    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(TopicNode::depth).max().unwrap_or(0)
    }

    pub fn term_ids(&self) -> BTreeSet<TermId> {
        self.terms.iter().map(|&(t, _)| t).collect()
    }
}

pub(crate) fn path_string(path: &[usize]) -> String {
    let mut s = String::from("root");
    for p in path {
        s.push('/');
        s.push_str(&p.to_string());
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct Taxonomy {
    pub terms: TermSet,
    pub root: TopicNode,
}

impl Taxonomy {
    pub fn nodes(&self) -> Vec<&TopicNode> {
        self.root.walk()
    }

    pub fn label_of(&self, node: &TopicNode) -> String {
        match node.label {
            Some(t) => self.terms.term(t).to_string(),
            None => "*".to_string(),
        }
    }

    /// Split audits of every node as JSON lines tagged with the node path.
    pub fn split_trace_json_lines(&self) -> String {
        let mut out = String::new();
        for node in self.nodes() {
            for round in &node.split_trace {
                let mut value = round.to_json(&self.terms);
                value["node"] = serde_json::Value::String(node.path_string());
                out.push_str(&value.to_string());
                out.push('\n');
            }
        }
        out
    }

    /// Document ids per node as JSON lines.
    pub fn doc_ids_json_lines(&self) -> String {
        let mut out = String::new();
        for node in self.nodes() {
            let line = serde_json::json!({
                "node": node.path_string(),
                "label": self.label_of(node),
                "doc_ids": node.doc_ids,
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }

    /// Check the structural invariants; returns the first violation.
    pub fn validate(&self, l_max: Option<usize>) -> std::result::Result<(), String> {
        if let Some(l) = l_max {
            if self.root.depth() > l {
                return Err(format!("depth {} exceeds l_max {l}", self.root.depth()));
            }
        }
        for node in self.nodes() {
            let own = node.term_ids();
            let pushed: BTreeSet<TermId> = node.pushed_up.iter().copied().collect();
            let mut seen = BTreeSet::new();
            for child in &node.children {
                if child.level != node.level + 1 {
                    return Err(format!("{}: level {}", child.path_string(), child.level));
                }
                for (t, _) in &child.terms {
                    if !seen.insert(*t) {
                        return Err(format!(
                            "{}: term {} appears in two children",
                            node.path_string(),
                            self.terms.term(*t)
                        ));
                    }
                    if pushed.contains(t) {
                        return Err(format!(
                            "{}: pushed-up term {} also in a child",
                            node.path_string(),
                            self.terms.term(*t)
                        ));
                    }
                    if !own.is_empty() && !own.contains(t) && node.leaf_reason.is_none() {
                        return Err(format!(
                            "{}: child term {} not in parent",
                            child.path_string(),
                            self.terms.term(*t)
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

struct NodeSeed {
    path: Vec<usize>,
    label: Option<TermId>,
    terms: Vec<(TermId, f64)>,
    docs: Vec<DocId>,
    center: Option<Vec<f64>>,
}

struct Builder<'a> {
    corpus: &'a Corpus,
    config: &'a BuildConfig,
    global: &'a EmbeddingTable,
}

/// Train global embeddings on the whole corpus and build the taxonomy.
pub fn build_taxonomy(corpus: &Corpus, config: &BuildConfig) -> Result<Taxonomy> {
    config.validate()?;
    let global = train_global(corpus, config)?;
    build_taxonomy_with_global(corpus, config, &global)
}

pub fn train_global(corpus: &Corpus, config: &BuildConfig) -> Result<EmbeddingTable> {
    let docs: Vec<&Document> = corpus.documents().iter().collect();
    train_skipgram(
        &docs,
        corpus.num_terms(),
        &config.global_train_config(),
        format!("global ({} documents)", docs.len()),
    )
    .map_err(TaxonomyError::GlobalEmbedding)
}

/// Build with precomputed global embeddings, which must be indexed by `corpus.terms`.
pub fn build_taxonomy_with_global(
    corpus: &Corpus,
    config: &BuildConfig,
    global: &EmbeddingTable,
) -> Result<Taxonomy> {
    config.validate()?;
    let builder = Builder {
        corpus,
        config,
        global,
    };
    let root = NodeSeed {
        path: Vec::new(),
        label: None,
        terms: (0..corpus.num_terms()).map(|t| (t, 0.0)).collect(),
        docs: corpus.all_doc_ids(),
        center: None,
    };
    let root = builder.grow(root, None);
    Ok(Taxonomy {
        terms: corpus.terms.clone(),
        root,
    })
}

impl Builder<'_> {
    fn splits(&self, level: usize) -> bool {
        level + 1 < self.config.l_max
    }

    fn grow(&self, seed: NodeSeed, parent_docs: Option<&DocEmbeddings>) -> TopicNode {
        let level = seed.path.len();
        if !self.splits(level) {
            return TopicNode::leaf(seed, LeafReason::MaxDepth);
        }
        if seed.terms.len() < self.config.min_terms() {
            let n = seed.terms.len();
            return TopicNode::leaf(seed, LeafReason::TooFewTerms(n));
        }

        let local;
        let (table, source) = match (level, self.config.mode, parent_docs) {
            (0, _, _) | (_, Mode::NoLe, _) | (_, _, None) => (self.global, EmbeddingSource::Global),
            (_, _, Some(doc_embeddings)) => match self.train_local(&seed, doc_embeddings) {
                Ok((table, source)) => {
                    local = table;
                    (&local, source)
                }
                Err(e) => {
                    log::warn!("{}: local embedding failed: {e}", path_string(&seed.path));
                    return TopicNode::leaf(seed, LeafReason::EmbeddingFailed(e.to_string()));
                }
            },
        };

        let (covered, uncovered): (Vec<TermId>, Vec<TermId>) = seed
            .terms
            .iter()
            .map(|&(t, _)| t)
            .partition(|&t| table.contains(t));
        let mut path_key = vec![SPLIT_STREAM];
        path_key.extend(seed.path.iter().map(|&p| p as u64));
        let params = SplitParams {
            k: self.config.k,
            delta: self.config.effective_delta(),
            seed: derive_seed(self.config.seed, &path_key),
            max_iter: self.config.split_max_iter,
            kmeans: self.config.kmeans,
            bm25: self.config.bm25,
        };
        let split = match adaptive_split(&covered, table, &seed.docs, self.corpus, &params) {
            Ok(split) => split,
            Err(e) => {
                log::info!("{}: stays a leaf: {e}", path_string(&seed.path));
                return TopicNode::leaf(seed, LeafReason::SplitFailed(e.to_string()));
            }
        };
        log::debug!(
            "{}: split into {} children after {} rounds, {} terms pushed up",
            path_string(&seed.path),
            split.children.len(),
            split.iterations,
            split.pushed_up.len()
        );

        let child_terms: Vec<Vec<TermId>> = split
            .children
            .iter()
            .map(|c| c.terms.iter().map(|&(t, _)| t).collect())
            .collect();
        let db_index = match db_index_for_terms(&child_terms, table) {
            Ok(db) => Some(db),
            Err(e) => {
                log::warn!("{}: no DB index: {e}", path_string(&seed.path));
                None
            }
        };

        let child_seeds: Vec<NodeSeed> = split
            .children
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let mut path = seed.path.clone();
                path.push(i);
                NodeSeed {
                    path,
                    label: select_label(&c.terms, &self.corpus.terms),
                    terms: c.terms.clone(),
                    docs: c.docs.clone(),
                    center: Some(c.center.clone()),
                }
            })
            .collect();
        let needs_docs = self.config.mode != Mode::NoLe
            && self.splits(level + 1)
            && child_seeds
                .iter()
                .any(|c| c.terms.len() >= self.config.min_terms());
        let doc_embeddings = needs_docs.then(|| DocEmbeddings::compute(self.corpus, table));
        let children: Vec<TopicNode> = child_seeds
            .into_par_iter()
            .map(|child| self.grow(child, doc_embeddings.as_ref()))
            .collect();

        let terms = display_ranking(level == 0, &seed.terms, &split, &uncovered);
        let mut pushed_up: Vec<TermId> = split.pushed_up.iter().map(|&(t, _)| t).collect();
        pushed_up.extend(&uncovered);
        TopicNode {
            level,
            path: seed.path,
            label: seed.label,
            terms,
            center: seed.center,
            num_docs: seed.docs.len(),
            doc_ids: seed.docs,
            children,
            pushed_up,
            embedding: Some(source),
            leaf_reason: None,
            db_index,
            split_iterations: split.iterations,
            split_trace: if self.config.keep_split_trace {
                split.trace
            } else {
                Vec::new()
            },
        }
    }

    fn train_local(
        &self,
        seed: &NodeSeed,
        doc_embeddings: &DocEmbeddings,
    ) -> std::result::Result<(EmbeddingTable, EmbeddingSource), EmbeddingError> {
        let center = seed
            .center
            .as_deref()
            .expect("non-root nodes carry a center");
        let sub = build_subcorpus(
            &seed.docs,
            center,
            doc_embeddings,
            self.config.min_docs,
            self.config.m_step,
        );
        let docs: Vec<&Document> = sub.docs.iter().map(|&d| self.corpus.document(d)).collect();
        let mut key = vec![LOCAL_STREAM];
        key.extend(seed.path.iter().map(|&p| p as u64));
        let config = TrainConfig {
            seed: derive_seed(self.config.seed, &key),
            ..self.config.local_embedding.clone()
        };
        let table = train_skipgram(
            &docs,
            self.corpus.num_terms(),
            &config,
            format!("local {} ({} documents)", path_string(&seed.path), docs.len()),
        )?;
        let source = EmbeddingSource::Local {
            docs: sub.docs.len(),
            expanded: sub.expanded,
            vocab: table.len(),
        };
        Ok((table, source))
    }
}

/// Display order of a split node's terms: terms retained in some child first,
/// ranked by the node's own score (at the root, by their score in the child),
/// then terms pushed up during the split ranked by their best child score,
/// then terms the split could not see (no vector) with score 0.
fn display_ranking(
    is_root: bool,
    own: &[(TermId, f64)],
    split: &SplitResult,
    uncovered: &[TermId],
) -> Vec<(TermId, f64)> {
    let mut retained: Vec<(TermId, f64)> = if is_root {
        split.children.iter().flat_map(|c| c.terms.clone()).collect()
    } else {
        let kept: BTreeSet<TermId> = split
            .children
            .iter()
            .flat_map(|c| c.terms.iter().map(|&(t, _)| t))
            .collect();
        own.iter().filter(|(t, _)| kept.contains(t)).copied().collect()
    };
    retained.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    retained.extend(&split.pushed_up);
    retained.extend(uncovered.iter().map(|&t| (t, 0.0)));
    retained
}

// ---- JSON export / import ----

#[derive(Serialize)]
struct NodeOut<'a> {
    label: String,
    level: usize,
    terms: Vec<TermOut<'a>>,
    num_docs: usize,
    children: Vec<NodeOut<'a>>,
}

#[derive(Serialize)]
struct TermOut<'a> {
    term: &'a str,
    #[serde(serialize_with = "six_places")]
    score: f64,
}

fn six_places<S: Serializer>(value: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    let raw = serde_json::value::RawValue::from_string(format!("{value:.6}"))
        .map_err(serde::ser::Error::custom)?;
    raw.serialize(s)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeIn {
    label: String,
    level: usize,
    terms: Vec<TermIn>,
    num_docs: usize,
    children: Vec<NodeIn>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TermIn {
    term: String,
    score: f64,
}

impl Taxonomy {
    fn node_out(&self, node: &TopicNode, top_n: usize) -> NodeOut<'_> {
        NodeOut {
            label: self.label_of(node),
            level: node.level,
            terms: node
                .terms
                .iter()
                .take(top_n)
                .map(|&(t, score)| TermOut {
                    term: self.terms.term(t),
                    score,
                })
                .collect(),
            num_docs: node.num_docs,
            children: node
                .children
                .iter()
                .map(|c| self.node_out(c, top_n))
                .collect(),
        }
    }

    /// Pretty-printed JSON with at most `top_n` terms per node.
    pub fn to_json(&self, top_n: usize) -> String {
        let mut s = serde_json::to_string_pretty(&self.node_out(&self.root, top_n))
            .expect("taxonomy serializes");
        s.push('\n');
        s
    }

    pub fn export(&self, path: &Path, top_n: usize) -> Result<()> {
        fs::write(path, self.to_json(top_n))?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let root: NodeIn = serde_json::from_str(text).map_err(|e| TaxonomyError::Schema {
            path: "root".into(),
            message: e.to_string(),
        })?;
        let mut all = Vec::new();
        collect_strings(&root, &mut all);
        let terms = TermSet::from_terms(&all);
        // Term strings must survive normalization unchanged.
        if let Some(bad) = all.iter().find(|s| terms.id(s).is_none()) {
            return Err(TaxonomyError::Schema {
                path: "root".into(),
                message: format!("term {bad:?} is not in normalized form"),
            });
        }
        let root = convert(&root, Vec::new(), &terms)?;
        Ok(Taxonomy { terms, root })
    }

    pub fn import(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

fn collect_strings(node: &NodeIn, out: &mut Vec<String>) {
    if !node.label.is_empty() && node.label != "*" {
        out.push(node.label.clone());
    }
    out.extend(node.terms.iter().map(|t| t.term.clone()));
    for c in &node.children {
        collect_strings(c, out);
    }
}

fn convert(node: &NodeIn, path: Vec<usize>, terms: &TermSet) -> Result<TopicNode> {
    let here = path_string(&path);
    let fail = |message: String| TaxonomyError::Schema {
        path: here.clone(),
        message,
    };
    if node.level != path.len() {
        return Err(fail(format!(
            "level is {}, expected {}",
            node.level,
            path.len()
        )));
    }
    let label = if path.is_empty() {
        if node.label != "*" {
            return Err(fail(format!("root label must be \"*\", found {:?}", node.label)));
        }
        None
    } else {
        Some(
            terms
                .id(&node.label)
                .ok_or_else(|| fail(format!("bad label {:?}", node.label)))?,
        )
    };
    let mut own = Vec::with_capacity(node.terms.len());
    for t in &node.terms {
        if !t.score.is_finite() {
            return Err(fail(format!("non-finite score for {}", t.term)));
        }
        own.push((terms.id(&t.term).unwrap(), t.score));
    }
    let mut children = Vec::with_capacity(node.children.len());
    let mut seen = BTreeSet::new();
    for (i, c) in node.children.iter().enumerate() {
        let mut child_path = path.clone();
        child_path.push(i);
        let child = convert(c, child_path, terms)?;
        for &(t, _) in &child.terms {
            if !seen.insert(t) {
                return Err(fail(format!(
                    "term {} appears under two children",
                    terms.term(t)
                )));
            }
        }
        children.push(child);
    }
    Ok(TopicNode {
        level: path.len(),
        path,
        label,
        terms: own,
        center: None,
        doc_ids: Vec::new(),
        num_docs: node.num_docs,
        children,
        pushed_up: Vec::new(),
        embedding: None,
        leaf_reason: Some(LeafReason::Imported),
        db_index: None,
        split_iterations: 0,
            split_trace: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{PlantedConfig, PlantedCorpus};

    fn small_config() -> BuildConfig {
        let embedding = TrainConfig {
            dim: 16,
            window: 3,
            negatives: 3,
            epochs: 3,
            initial_lr: 0.05,
            min_count: 2,
            seed: 0,
        };
        BuildConfig {
            k: 3,
            delta: 0.25,
            l_max: 3,
            min_docs: 50,
            m_step: 50,
            global_embedding: embedding.clone(),
            local_embedding: embedding,
            ..BuildConfig::default()
        }
    }

    fn planted() -> Corpus {
        PlantedCorpus::generate(&PlantedConfig {
            docs: 600,
            terms_per_subtopic: 10,
            general_terms: 5,
            ..PlantedConfig::default()
        })
        .corpus()
        .unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(BuildConfig::default().validate().is_ok());
        for bad in [
            BuildConfig {
                k: 1,
                ..BuildConfig::default()
            },
            BuildConfig {
                delta: 1.0,
                ..BuildConfig::default()
            },
            BuildConfig {
                l_max: 0,
                ..BuildConfig::default()
            },
        ] {
            assert!(matches!(bad.validate(), Err(TaxonomyError::InvalidConfig(_))));
        }
        assert_eq!(BuildConfig::default().min_terms(), 20);
    }

    #[test]
    fn single_level_is_root_only() {
        let corpus = planted();
        let config = BuildConfig {
            l_max: 1,
            ..small_config()
        };
        let tax = build_taxonomy(&corpus, &config).unwrap();
        assert!(tax.root.is_leaf());
        assert_eq!(tax.root.leaf_reason, Some(LeafReason::MaxDepth));
        assert_eq!(tax.root.terms.len(), corpus.num_terms());
        let json = tax.to_json(8);
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(value["label"], "*");
        assert_eq!(value["children"].as_array().unwrap().len(), 0);
        assert_eq!(value["terms"].as_array().unwrap().len(), 8);
    }

    #[test]
    fn built_tree_satisfies_invariants_and_round_trips() {
        let corpus = planted();
        let config = small_config();
        let tax = build_taxonomy(&corpus, &config).unwrap();
        tax.validate(Some(config.l_max)).unwrap();
        assert_eq!(tax.root.children.len(), 3);
        for child in &tax.root.children {
            assert!(matches!(child.embedding, None | Some(EmbeddingSource::Local { .. })));
        }
        let json = tax.to_json(8);
        let back = Taxonomy::from_json(&json).unwrap();
        assert_eq!(back.to_json(8), json);
        // Large top_n keeps every term without padding.
        let all = tax.to_json(usize::MAX);
        let value: serde_json::Value = serde_json::from_str(&all).unwrap();
        assert_eq!(value["terms"].as_array().unwrap().len(), tax.root.terms.len());
    }

    #[test]
    fn scores_are_written_with_six_decimals() {
        let terms = TermSet::from_terms(["a", "b"]);
        let root = TopicNode {
            path: vec![],
            level: 0,
            label: None,
            terms: vec![(0, 0.5), (1, 1.0 / 3.0)],
            center: None,
            doc_ids: vec![],
            num_docs: 2,
            children: vec![],
            pushed_up: vec![],
            embedding: None,
            leaf_reason: None,
            db_index: None,
            split_iterations: 0,
            split_trace: Vec::new(),
        };
        let json = Taxonomy { terms, root }.to_json(8);
        assert!(json.contains("\"score\": 0.500000"));
        assert!(json.contains("\"score\": 0.333333"));
    }

    #[test]
    fn import_reports_node_path_on_schema_violation() {
        let bad_level = r#"{"label":"*","level":0,"terms":[],"num_docs":1,"children":[
            {"label":"a","level":1,"terms":[{"term":"a","score":0.5}],"num_docs":1,"children":[]},
            {"label":"b","level":3,"terms":[{"term":"b","score":0.5}],"num_docs":1,"children":[]}]}"#;
        let err = Taxonomy::from_json(bad_level).unwrap_err().to_string();
        assert!(err.contains("root/1"), "{err}");

        let overlap = r#"{"label":"*","level":0,"terms":[],"num_docs":1,"children":[
            {"label":"a","level":1,"terms":[{"term":"a","score":0.5}],"num_docs":1,"children":[]},
            {"label":"b","level":1,"terms":[{"term":"a","score":0.5}],"num_docs":1,"children":[]}]}"#;
        let err = Taxonomy::from_json(overlap).unwrap_err().to_string();
        assert!(err.contains("two children"), "{err}");

        let root_label = r#"{"label":"x","level":0,"terms":[],"num_docs":1,"children":[]}"#;
        assert!(Taxonomy::from_json(root_label).is_err());

        let extra = r#"{"label":"*","level":0,"terms":[],"num_docs":1,"children":[],"x":1}"#;
        assert!(Taxonomy::from_json(extra).is_err());
    }

    #[test]
    fn no_ac_equals_full_with_zero_delta() {
        let corpus = planted();
        let no_ac = BuildConfig {
            mode: Mode::NoAc,
            ..small_config()
        };
        let zero = BuildConfig {
            delta: 0.0,
            ..small_config()
        };
        let a = build_taxonomy(&corpus, &no_ac).unwrap();
        let b = build_taxonomy(&corpus, &zero).unwrap();
        assert_eq!(a.to_json(8), b.to_json(8));
        assert!(a.root.pushed_up.is_empty());
    }

    #[test]
    fn no_le_uses_global_embeddings_everywhere() {
        let corpus = planted();
        let config = BuildConfig {
            mode: Mode::NoLe,
            ..small_config()
        };
        let tax = build_taxonomy(&corpus, &config).unwrap();
        for node in tax.nodes() {
            assert!(matches!(node.embedding, None | Some(EmbeddingSource::Global)));
        }
    }

    #[test]
    fn small_nodes_stay_leaves() {
        let corpus = planted();
        let config = BuildConfig {
            min_terms_to_split: Some(10_000),
            ..small_config()
        };
        let tax = build_taxonomy(&corpus, &config).unwrap();
        assert!(matches!(tax.root.leaf_reason, Some(LeafReason::TooFewTerms(_))));
    }
}
