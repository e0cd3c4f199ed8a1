//! Adaptive splitting of a topic into `k` sub-topics.
//!
//! Each round clusters the current candidate terms with spherical k-means,
//! assigns the topic's documents to the clusters, and scores every term in
//! the cluster it was assigned to:
//!
//! ```text
//! pop(t, k) = ln(tf(t, D_k) + 1) / ln(tf(D_k))
//! con(t, k) = exp(rel(t, k)) / (1 + Σ_j exp(rel(t, j)))
//! r(t, k)   = sqrt(pop · con)
//! ```
//!
//! where `rel` is BM25 of the term against the cluster pseudo-documents.
//! Terms with `r < delta` leave their cluster and are pushed up to the parent.
//! The loop stops when a round removes nothing, or after `max_iter` rounds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{assign_documents, Bm25Params, SubTopicDocs};
use crate::corpus::{Corpus, TermSet};
use crate::embedding::EmbeddingTable;
use crate::spherical::{spherical_kmeans, ClusterError, KMeansConfig};
use crate::{derive_seed, DocId, TermId};

#[derive(Debug, Error, PartialEq)]
pub enum SplitError {
    #[error("{have} candidate terms cannot form {k} clusters (need at least {need})")]
    TooFewTerms { have: usize, k: usize, need: usize },
    #[error("term {0} has no embedding vector")]
    MissingVector(TermId),
    #[error("cluster {cluster} lost all its terms in iteration {iteration}")]
    EmptyCluster { cluster: usize, iteration: usize },
    #[error("cluster {cluster} sub-corpus has {tokens} tokens; popularity needs at least 2")]
    DegenerateSubCorpus { cluster: usize, tokens: u64 },
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

pub type Result<T> = std::result::Result<T, SplitError>;

/// `ln(tf_t + 1) / ln(total)`. May exceed 1 when one term dominates a tiny sub-corpus.
pub fn popularity(tf_t: u64, total: u64) -> std::result::Result<f64, u64> {
    if total <= 1 {
        return Err(total);
    }
    Ok((tf_t as f64 + 1.0).ln() / (total as f64).ln())
}

/// BM25 idf with +0.5 smoothing, floored at zero.
pub fn bm25_idf(df: usize, n_docs: usize) -> f64 {
    let n = n_docs as f64;
    let df = df as f64;
    ((n - df + 0.5) / (df + 0.5) + 1.0).ln().max(0.0)
}

/// BM25 relevance of a single term to one document of a collection.
pub fn bm25_rel(
    tf: u64,
    doc_len: u64,
    avg_len: f64,
    df: usize,
    n_docs: usize,
    params: &Bm25Params,
) -> f64 {
    if tf == 0 || avg_len <= 0.0 {
        return 0.0;
    }
    let tf = tf as f64;
    let norm = params.k1 * (1.0 - params.b + params.b * doc_len as f64 / avg_len);
    bm25_idf(df, n_docs) * tf * (params.k1 + 1.0) / (tf + norm)
}

/// BM25 relevance of `t` to every pseudo-document of `docs`, in cluster order.
pub fn relevances(t: TermId, docs: &SubTopicDocs, params: &Bm25Params) -> Vec<f64> {
    let n = docs.k();
    let avg_len = docs.pseudo.iter().map(|p| p.len() as f64).sum::<f64>() / n as f64;
    let df = docs.pseudo.iter().filter(|p| p.count(t) > 0).count();
    docs.pseudo
        .iter()
        .map(|p| bm25_rel(p.count(t), p.len(), avg_len, df, n, params))
        .collect()
}

/// `exp(rel[k]) / (1 + Σ_j exp(rel[j]))`, evaluated with a max shift.
pub fn concentration(rels: &[f64], k: usize) -> f64 {
    let shift = rels.iter().cloned().fold(0.0, f64::max);
    let denom = (-shift).exp() + rels.iter().map(|r| (r - shift).exp()).sum::<f64>();
    (rels[k] - shift).exp() / denom
}

pub fn representativeness(pop: f64, con: f64) -> f64 {
    (pop * con).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TermScore {
    pub term: TermId,
    pub cluster: usize,
    pub pop: f64,
    pub con: f64,
    pub r: f64,
}

/// Score `t` against cluster `cluster` of `docs`.
pub fn score_term(
    t: TermId,
    cluster: usize,
    docs: &SubTopicDocs,
    params: &Bm25Params,
) -> Result<TermScore> {
    let pseudo = &docs.pseudo[cluster];
    let pop = popularity(pseudo.count(t), pseudo.len()).map_err(|tokens| {
        SplitError::DegenerateSubCorpus { cluster, tokens }
    })?;
    let con = concentration(&relevances(t, docs, params), cluster);
    Ok(TermScore {
        term: t,
        cluster,
        pop,
        con,
        r: representativeness(pop, con),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitParams {
    pub k: usize,
    pub delta: f64,
    pub seed: u64,
    /// Cap on adaptive rounds, in addition to the fixpoint test.
    pub max_iter: usize,
    pub kmeans: KMeansConfig,
    pub bm25: Bm25Params,
}

impl Default for SplitParams {
    fn default() -> Self {
        SplitParams {
            k: 5,
            delta: 0.25,
            seed: 1,
            max_iter: 10,
            kmeans: KMeansConfig::default(),
            bm25: Bm25Params::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChildCluster {
    /// Retained terms with their `r`, descending (ties by term id).
    pub terms: Vec<(TermId, f64)>,
    /// Spherical k-means center of the final round.
    pub center: Vec<f64>,
    /// Documents assigned to this cluster in the final round.
    pub docs: Vec<DocId>,
}

/// Audit record of one adaptive round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub iteration: usize,
    /// Scores of every clustered term, grouped by cluster.
    pub scores: Vec<Vec<TermScore>>,
    pub docs_per_cluster: Vec<usize>,
    /// Terms that dropped below the threshold in this round.
    pub removed: Vec<TermId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    pub children: Vec<ChildCluster>,
    /// Parent terms not retained in any child, with their best `r` over the final clusters.
    pub pushed_up: Vec<(TermId, f64)>,
    pub iterations: usize,
    /// `false` when the round cap stopped the loop before a fixpoint.
    pub converged: bool,
    pub trace: Vec<RoundTrace>,
}

impl SplitResult {
    /// JSON lines, one per round, with term strings resolved.
    pub fn trace_json_lines(&self, terms: &TermSet) -> String {
        let mut out = String::new();
        for round in &self.trace {
            out.push_str(&round.to_json(terms).to_string());
            out.push('\n');
        }
        out
    }
}

impl RoundTrace {
    pub fn to_json(&self, terms: &TermSet) -> serde_json::Value {
        let clusters: Vec<serde_json::Value> = self
            .scores
            .iter()
            .zip(&self.docs_per_cluster)
            .map(|(scores, docs)| {
                serde_json::json!({
                    "num_docs": docs,
                    "terms": scores.iter().map(|s| serde_json::json!({
                        "term": terms.term(s.term),
                        "pop": s.pop,
                        "con": s.con,
                        "r": s.r,
                    })).collect::<Vec<_>>(),
                })
            })
            .collect();
        serde_json::json!({
            "iteration": self.iteration,
            "clusters": clusters,
            "removed": self.removed.iter().map(|&t| terms.term(t)).collect::<Vec<_>>(),
        })
    }
}

type RoundState = (Vec<Vec<(TermId, f64)>>, Vec<Vec<f64>>, SubTopicDocs);

/// Split `parent_terms` into `params.k` sub-topics, pushing general terms up.
///
/// `doc_pool` is the parent topic's document set; it is re-assigned to the
/// clusters after every re-clustering.
pub fn adaptive_split(
    parent_terms: &[TermId],
    table: &EmbeddingTable,
    doc_pool: &[DocId],
    corpus: &Corpus,
    params: &SplitParams,
) -> Result<SplitResult> {
    let k = params.k;
    let mut candidates: Vec<TermId> = parent_terms.to_vec();
    candidates.sort_unstable();
    candidates.dedup();
    if candidates.len() < 2 * k {
        return Err(SplitError::TooFewTerms {
            have: candidates.len(),
            k,
            need: 2 * k,
        });
    }
    if let Some(&t) = candidates.iter().find(|&&t| !table.contains(t)) {
        return Err(SplitError::MissingVector(t));
    }

    let mut trace = Vec::new();
    let mut converged = false;
    let mut last: Option<RoundState> = None;

    for iteration in 1..=params.max_iter.max(1) {
        if candidates.len() < k {
            return Err(SplitError::TooFewTerms {
                have: candidates.len(),
                k,
                need: k,
            });
        }
        let vectors: Vec<&[f64]> = candidates
            .iter()
            .map(|&t| table.vector(t).unwrap())
            .collect();
        let clustering = spherical_kmeans(
            &vectors,
            k,
            derive_seed(params.seed, &[iteration as u64]),
            &params.kmeans,
        )?;
        let mut membership = vec![None; corpus.num_terms()];
        for (&t, &c) in candidates.iter().zip(&clustering.member_of) {
            membership[t] = Some(c);
        }
        let docs = assign_documents(doc_pool, &membership, k, corpus);

        let mut scores: Vec<Vec<TermScore>> = vec![Vec::new(); k];
        for (&t, &c) in candidates.iter().zip(&clustering.member_of) {
            scores[c].push(score_term(t, c, &docs, &params.bm25)?);
        }
        let mut retained: Vec<Vec<(TermId, f64)>> = scores
            .iter()
            .map(|cluster| {
                cluster
                    .iter()
                    .filter(|s| s.r >= params.delta)
                    .map(|s| (s.term, s.r))
                    .collect()
            })
            .collect();
        if let Some(cluster) = retained.iter().position(Vec::is_empty) {
            return Err(SplitError::EmptyCluster { cluster, iteration });
        }
        let mut next: Vec<TermId> = retained.iter().flatten().map(|&(t, _)| t).collect();
        next.sort_unstable();
        let removed: Vec<TermId> = candidates
            .iter()
            .copied()
            .filter(|t| next.binary_search(t).is_err())
            .collect();
        trace.push(RoundTrace {
            iteration,
            scores,
            docs_per_cluster: docs.docs.iter().map(Vec::len).collect(),
            removed,
        });
        for cluster in &mut retained {
            cluster.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        }
        let done = next == candidates;
        last = Some((retained, clustering.centers, docs));
        if done {
            converged = true;
            break;
        }
        candidates = next;
    }

    let (retained, centers, docs) = last.expect("at least one round runs");
    let mut kept: Vec<TermId> = retained.iter().flatten().map(|&(t, _)| t).collect();
    kept.sort_unstable();
    let mut pushed_up = Vec::new();
    let mut parent: Vec<TermId> = parent_terms.to_vec();
    parent.sort_unstable();
    parent.dedup();
    for t in parent {
        if kept.binary_search(&t).is_ok() {
            continue;
        }
        let mut best = 0.0f64;
        for c in 0..k {
            best = best.max(score_term(t, c, &docs, &params.bm25)?.r);
        }
        pushed_up.push((t, best));
    }
    pushed_up.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let children = retained
        .into_iter()
        .zip(centers)
        .zip(docs.docs)
        .map(|((terms, center), docs)| ChildCluster {
            terms,
            center,
            docs,
        })
        .collect();
    Ok(SplitResult {
        children,
        pushed_up,
        iterations: trace.len(),
        converged,
        trace,
    })
}

/// The most representative term of a cluster; ties go to the lexicographically smallest term.
pub fn select_label(cluster: &[(TermId, f64)], terms: &TermSet) -> Option<TermId> {
    cluster
        .iter()
        .min_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| terms.term(a.0).cmp(terms.term(b.0)))
        })
        .map(|&(t, _)| t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assignment::PseudoDoc;

    #[test]
    fn absent_term_has_zero_popularity() {
        assert_eq!(popularity(0, 100), Ok(0.0));
    }

    #[test]
    fn popularity_can_exceed_one() {
        let p = popularity(7, 7).unwrap();
        assert!((p - 8f64.ln() / 7f64.ln()).abs() < 1e-15);
        assert!(p > 1.0);
    }

    #[test]
    fn popularity_is_a_log_ratio() {
        let p = popularity(9, 1000).unwrap();
        assert!((p - 1.0 / 3.0).abs() < 1e-12);
        let common = 10f64.log10() / 1000f64.log10();
        assert!((p - common).abs() < 1e-12);
    }

    #[test]
    fn popularity_rejects_tiny_subcorpus() {
        assert_eq!(popularity(1, 1), Err(1));
        assert_eq!(popularity(0, 0), Err(0));
    }

    #[test]
    fn absent_everywhere_gives_uniform_concentration() {
        for k in 1..8 {
            let rels = vec![0.0; k];
            assert!((concentration(&rels, 0) - 1.0 / (1.0 + k as f64)).abs() < 1e-15);
        }
    }

    #[test]
    fn equal_relevance_is_suppressed_below_one_over_k() {
        let rels = vec![5.0; 4];
        let c = concentration(&rels, 2);
        let expected = 5f64.exp() / (1.0 + 4.0 * 5f64.exp());
        assert!((c - expected).abs() < 1e-15);
        assert!(c < 0.25);
    }

    #[test]
    fn bm25_of_absent_term_is_zero() {
        assert_eq!(bm25_rel(0, 100, 80.0, 2, 5, &Bm25Params::default()), 0.0);
    }

    #[test]
    fn bm25_idf_for_term_in_every_doc_is_small_positive() {
        for k in 2..10 {
            let idf = bm25_idf(k, k);
            let expected = (0.5 / (k as f64 + 0.5) + 1.0).ln();
            assert!((idf - expected).abs() < 1e-15);
            assert!(idf > 0.0 && idf < 0.25);
        }
    }

    #[test]
    fn bm25_hand_computed_value() {
        // tf=3, len=avglen, df=1, N=5: idf = ln(4.5/1.5 + 1) = ln 4; tf part = 3*2.2/(3+1.2).
        let expected = 4f64.ln() * (3.0 * 2.2) / (3.0 + 1.2);
        let got = bm25_rel(3, 50, 50.0, 1, 5, &Bm25Params::default());
        assert!((got - expected).abs() < 1e-12);
    }

    fn pseudo_docs(counts: &[Vec<u64>], lens: &[u64]) -> SubTopicDocs {
        SubTopicDocs {
            docs: vec![Vec::new(); counts.len()],
            pseudo: counts
                .iter()
                .zip(lens)
                .map(|(c, &len)| PseudoDoc::from_counts(c.clone(), len))
                .collect(),
            unassigned: Vec::new(),
        }
    }

    #[test]
    fn concentration_matches_direct_formula() {
        // Term 0 appears 4 times in cluster 0 (len 20) and once in cluster 1 (len 30).
        let docs = pseudo_docs(&[vec![4, 16], vec![1, 29]], &[20, 30]);
        let params = Bm25Params::default();
        let score = score_term(0, 0, &docs, &params).unwrap();
        let avg = 25.0;
        let idf = ((2.0 - 2.0 + 0.5) / (2.0 + 0.5) + 1.0f64).ln();
        let rel0 = idf * 4.0 * 2.2 / (4.0 + 1.2 * (0.25 + 0.75 * 20.0 / avg));
        let rel1 = idf * 1.0 * 2.2 / (1.0 + 1.2 * (0.25 + 0.75 * 30.0 / avg));
        let con = rel0.exp() / (1.0 + rel0.exp() + rel1.exp());
        assert!((score.con - con).abs() < 1e-12);
        let pop = 5f64.ln() / 20f64.ln();
        assert!((score.pop - pop).abs() < 1e-12);
        assert!((score.r * score.r - score.pop * score.con).abs() < 1e-12);
    }

    #[test]
    fn label_prefers_highest_score_then_smallest_string() {
        let terms = TermSet::from_terms(["alpha", "beta", "gamma"]);
        assert_eq!(select_label(&[(2, 0.4)], &terms), Some(2));
        assert_eq!(select_label(&[(1, 0.9), (0, 0.3)], &terms), Some(1));
        assert_eq!(select_label(&[(2, 0.5), (1, 0.5)], &terms), Some(1));
        assert_eq!(select_label(&[], &terms), None);
    }
}
