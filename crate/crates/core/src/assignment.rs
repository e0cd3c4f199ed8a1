//! Document-to-topic assignment and retrieval-based sub-corpus expansion.
//!
//! TF-IDF weights use the raw in-document count and `ln(N / df)` over the full
//! corpus, so sibling clusters are scored on the same scale.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::embedding::EmbeddingTable;
use crate::vector::{add_scaled, dot, normalized};
use crate::{DocId, TermId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn is_valid(&self) -> bool {
        self.k1 > 0.0 && (0.0..=1.0).contains(&self.b)
    }
}

/// Term counts of the concatenation of a cluster's documents.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoDoc {
    counts: Vec<u64>,
    len: u64,
}

impl PseudoDoc {
    fn new(num_terms: usize) -> Self {
        PseudoDoc {
            counts: vec![0; num_terms],
            len: 0,
        }
    }

    /// A pseudo-document with explicit per-term counts and total length.
    pub fn from_counts(counts: Vec<u64>, len: u64) -> Self {
        PseudoDoc { counts, len }
    }

    pub fn count(&self, t: TermId) -> u64 {
        self.counts[t]
    }

    /// Total number of tokens.
    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Documents assigned to each of `k` sibling clusters, with their pseudo-documents.
#[derive(Debug, Clone, PartialEq)]
pub struct SubTopicDocs {
    pub docs: Vec<Vec<DocId>>,
    pub pseudo: Vec<PseudoDoc>,
    /// Documents that contain no clustered term.
    pub unassigned: Vec<DocId>,
}

impl SubTopicDocs {
    pub fn k(&self) -> usize {
        self.docs.len()
    }
}

/// Assign each document in `docs` to the cluster with the largest TF-IDF mass
/// among its clustered terms. `membership[t]` is the cluster of term `t`, if any.
/// Ties go to the lowest cluster index.
pub fn assign_documents(
    docs: &[DocId],
    membership: &[Option<usize>],
    k: usize,
    corpus: &Corpus,
) -> SubTopicDocs {
    let mut out = SubTopicDocs {
        docs: vec![Vec::new(); k],
        pseudo: vec![PseudoDoc::new(corpus.num_terms()); k],
        unassigned: Vec::new(),
    };
    let mut scores = vec![0.0; k];
    for &d in docs {
        let doc = corpus.document(d);
        scores.iter_mut().for_each(|s| *s = 0.0);
        let mut hit = false;
        for &(t, c) in doc.counts() {
            if let Some(cluster) = membership.get(t).copied().flatten() {
                scores[cluster] += c as f64 * corpus.idf(t);
                hit = true;
            }
        }
        if !hit {
            out.unassigned.push(d);
            continue;
        }
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate().skip(1) {
            if s > scores[best] {
                best = i;
            }
        }
        out.docs[best].push(d);
        let pseudo = &mut out.pseudo[best];
        for &(t, c) in doc.counts() {
            pseudo.counts[t] += c as u64;
        }
        pseudo.len += doc.len() as u64;
    }
    out
}

/// Unit-normalized TF-IDF weighted averages of term input vectors.
#[derive(Debug, Clone)]
pub struct DocEmbeddings {
    ids: Vec<DocId>,
    vectors: Vec<Vec<f64>>,
    /// Documents skipped because none of their terms has a vector.
    pub excluded: usize,
}

impl DocEmbeddings {
    pub fn compute(corpus: &Corpus, table: &EmbeddingTable) -> Self {
        let computed: Vec<Option<Vec<f64>>> = corpus
            .documents()
            .par_iter()
            .map(|doc| {
                let mut sum = vec![0.0; table.dim()];
                for &(t, c) in doc.counts() {
                    if let Some(v) = table.vector(t) {
                        add_scaled(&mut sum, v, c as f64 * corpus.idf(t));
                    }
                }
                normalized(&sum)
            })
            .collect();
        let mut ids = Vec::new();
        let mut vectors = Vec::new();
        let mut excluded = 0;
        for (doc, v) in corpus.documents().iter().zip(computed) {
            match v {
                Some(v) => {
                    ids.push(doc.id);
                    vectors.push(v);
                }
                None => excluded += 1,
            }
        }
        DocEmbeddings {
            ids,
            vectors,
            excluded,
        }
    }

    /// Build from explicit unit vectors.
    pub fn from_vectors(entries: Vec<(DocId, Vec<f64>)>) -> Self {
        let (ids, vectors) = entries.into_iter().unzip();
        DocEmbeddings {
            ids,
            vectors,
            excluded: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, doc: DocId) -> Option<&[f64]> {
        self.ids
            .binary_search(&doc)
            .ok()
            .map(|i| self.vectors[i].as_slice())
    }

    /// All embedded documents ranked by cosine to `center`, ties by ascending id.
    fn ranked(&self, center: &[f64], exclude: &BTreeSet<DocId>) -> Vec<(DocId, f64)> {
        let mut scored: Vec<(DocId, f64)> = self
            .ids
            .iter()
            .zip(&self.vectors)
            .filter(|(id, _)| !exclude.contains(id))
            .map(|(&id, v)| (id, dot(center, v)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored
    }
}

/// The `m` documents closest to the unit vector `center`, excluding `exclude`.
pub fn retrieve_expansion(
    center: &[f64],
    embeddings: &DocEmbeddings,
    m: usize,
    exclude: &BTreeSet<DocId>,
) -> Vec<DocId> {
    if m == 0 {
        return Vec::new();
    }
    let mut ranked = embeddings.ranked(center, exclude);
    ranked.truncate(m);
    ranked.into_iter().map(|(id, _)| id).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubCorpus {
    /// Ascending document ids.
    pub docs: Vec<DocId>,
    /// How many documents came from retrieval.
    pub expanded: usize,
    /// Retrieval ran out of documents before reaching `min_docs`.
    pub exhausted: bool,
}

/// Grow the clustering-based document set `base` with retrieval-ranked documents,
/// `m_step` at a time, until it holds at least `min_docs` documents.
pub fn build_subcorpus(
    base: &[DocId],
    center: &[f64],
    embeddings: &DocEmbeddings,
    min_docs: usize,
    m_step: usize,
) -> SubCorpus {
    let mut docs: BTreeSet<DocId> = base.iter().copied().collect();
    if docs.len() >= min_docs {
        return SubCorpus {
            docs: docs.into_iter().collect(),
            expanded: 0,
            exhausted: false,
        };
    }
    let ranked = embeddings.ranked(center, &docs);
    let mut expanded = 0;
    for chunk in ranked.chunks(m_step.max(1)) {
        if docs.len() >= min_docs {
            break;
        }
        docs.extend(chunk.iter().map(|(id, _)| *id));
        expanded += chunk.len();
    }
    let exhausted = docs.len() < min_docs;
    if exhausted {
        log::warn!(
            "sub-corpus has only {} documents after exhausting retrieval (wanted {min_docs})",
            docs.len()
        );
    }
    SubCorpus {
        docs: docs.into_iter().collect(),
        expanded,
        exhausted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TermSet;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn corpus(lines: &[&str]) -> Corpus {
        let terms = TermSet::from_terms(lines.iter().flat_map(|l| l.split_whitespace()));
        Corpus::from_lines(lines, terms).unwrap()
    }

    fn membership(c: &Corpus, clusters: &[(&str, usize)]) -> Vec<Option<usize>> {
        let mut m = vec![None; c.num_terms()];
        for (t, k) in clusters {
            m[c.terms.id(t).unwrap()] = Some(*k);
        }
        m
    }

    #[test]
    fn document_follows_its_only_cluster() {
        let c = corpus(&["a b", "c d", "e"]);
        let m = membership(&c, &[("a", 0), ("b", 0), ("c", 2), ("d", 2), ("e", 1)]);
        let out = assign_documents(&c.all_doc_ids(), &m, 3, &c);
        assert_eq!(out.docs[2], vec![1]);
    }

    #[test]
    fn document_without_clustered_terms_is_unassigned() {
        let c = corpus(&["a b", "z"]);
        let m = membership(&c, &[("a", 0), ("b", 1)]);
        let out = assign_documents(&c.all_doc_ids(), &m, 2, &c);
        assert_eq!(out.unassigned, vec![1]);
        assert!(out.docs.iter().all(|d| !d.contains(&1)));
    }

    #[test]
    fn pseudo_docs_sum_member_counts() {
        let c = corpus(&["a a b", "a c", "c c"]);
        let m = membership(&c, &[("a", 0), ("c", 1)]);
        let out = assign_documents(&c.all_doc_ids(), &m, 2, &c);
        for (k, docs) in out.docs.iter().enumerate() {
            for t in 0..c.num_terms() {
                let expected: u64 = docs
                    .iter()
                    .map(|&d| c.document(d).tokens.iter().filter(|&&x| x == t).count() as u64)
                    .sum();
                assert_eq!(out.pseudo[k].count(t), expected);
            }
            let len: u64 = docs.iter().map(|&d| c.document(d).len() as u64).sum();
            assert_eq!(out.pseudo[k].len(), len);
        }
    }

    #[test]
    fn matches_brute_force_score_table() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let lines: Vec<String> = (0..30)
                .map(|_| {
                    (0..rng.gen_range(1..8))
                        .map(|_| format!("t{}", rng.gen_range(0..10)))
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .collect();
            let lines: Vec<&str> = lines.iter().map(String::as_str).collect();
            let c = corpus(&lines);
            let k = 3;
            let m: Vec<Option<usize>> = (0..c.num_terms())
                .map(|_| (rng.gen_bool(0.7)).then(|| rng.gen_range(0..k)))
                .collect();
            let out = assign_documents(&c.all_doc_ids(), &m, k, &c);
            for doc in c.documents() {
                // Independent table: per token position, accumulate tf-idf once per distinct term.
                let mut table = vec![0.0f64; k];
                let mut seen = BTreeSet::new();
                let mut hit = false;
                for &t in &doc.tokens {
                    if let Some(cl) = m[t] {
                        hit = true;
                        if seen.insert(t) {
                            let tf = doc.tokens.iter().filter(|&&x| x == t).count() as f64;
                            let idf = (c.num_docs() as f64 / c.doc_freq(t) as f64).ln();
                            table[cl] += tf * idf;
                        }
                    }
                }
                let placed: Vec<usize> = (0..k).filter(|&i| out.docs[i].contains(&doc.id)).collect();
                if !hit {
                    assert!(placed.is_empty());
                    continue;
                }
                let max = table.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let expected = table.iter().position(|&s| s == max).unwrap();
                assert_eq!(placed, vec![expected]);
            }
        }
    }

    fn random_embeddings(n: usize, seed: u64) -> DocEmbeddings {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DocEmbeddings::from_vectors(
            (0..n)
                .map(|i| {
                    let v: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    (i, normalized(&v).unwrap())
                })
                .collect(),
        )
    }

    #[test]
    fn zero_m_retrieves_nothing() {
        let e = random_embeddings(10, 1);
        assert!(retrieve_expansion(&[1.0, 0.0, 0.0, 0.0], &e, 0, &BTreeSet::new()).is_empty());
    }

    #[test]
    fn document_equal_to_center_ranks_first() {
        let e = random_embeddings(50, 2);
        let center = e.get(17).unwrap().to_vec();
        assert_eq!(retrieve_expansion(&center, &e, 3, &BTreeSet::new())[0], 17);
    }

    #[test]
    fn retrieval_matches_full_sort_and_is_prefix_closed() {
        let e = random_embeddings(100, 3);
        let center = normalized(&[0.3, -0.2, 0.9, 0.1]).unwrap();
        let exclude: BTreeSet<DocId> = [5, 9, 40].into_iter().collect();
        let mut oracle: Vec<(DocId, f64)> = (0..100)
            .filter(|d| !exclude.contains(d))
            .map(|d| (d, e.get(d).unwrap().iter().zip(&center).map(|(a, b)| a * b).sum()))
            .collect();
        oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let got = retrieve_expansion(&center, &e, 10, &exclude);
        let want: Vec<DocId> = oracle.iter().take(10).map(|x| x.0).collect();
        assert_eq!(got, want);
        let longer = retrieve_expansion(&center, &e, 11, &exclude);
        assert_eq!(&longer[..10], got.as_slice());
    }

    #[test]
    fn large_base_is_returned_unchanged() {
        let e = random_embeddings(20, 4);
        let base: Vec<DocId> = (0..10).collect();
        let sub = build_subcorpus(&base, &[1.0, 0.0, 0.0, 0.0], &e, 5, 3);
        assert_eq!(sub.docs, base);
        assert_eq!(sub.expanded, 0);
    }

    #[test]
    fn empty_base_becomes_pure_retrieval() {
        let e = random_embeddings(300, 5);
        let center = [0.0, 1.0, 0.0, 0.0];
        let sub = build_subcorpus(&[], &center, &e, 100, 100);
        assert_eq!(sub.docs.len(), 100);
        let mut top = retrieve_expansion(&center, &e, 100, &BTreeSet::new());
        top.sort();
        assert_eq!(sub.docs, top);
    }

    #[test]
    fn exhausted_retrieval_returns_everything() {
        let e = random_embeddings(30, 6);
        let sub = build_subcorpus(&[0, 1], &[1.0, 0.0, 0.0, 0.0], &e, 100, 7);
        assert!(sub.exhausted);
        assert_eq!(sub.docs.len(), 30);
    }
}
