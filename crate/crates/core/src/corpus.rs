//! Corpus ingestion: seed-term mining, greedy tokenization and frequency statistics.
//!
//! Raw text is normalized by lowercasing and deleting every character that is
//! not alphanumeric, `_` or `-`. Multi-word terms are written with their words
//! joined by `_` (`pose_estimation`); a pre-joined token in the input matches
//! the same term as the separate words would.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{DocId, TermId};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("zero documents: no line contains a known term")]
    Empty,
    #[error("invalid mining config: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "am", "an", "and", "any", "are",
    "as", "at", "be", "because", "been", "before", "being", "below", "between", "both", "but",
    "by", "can", "could", "did", "do", "does", "doing", "down", "during", "each", "few", "for",
    "from", "further", "had", "has", "have", "having", "he", "her", "here", "hers", "him", "his",
    "how", "i", "if", "in", "into", "is", "it", "its", "itself", "just", "me", "more", "most",
    "my", "no", "nor", "not", "now", "of", "off", "on", "once", "only", "or", "other", "our",
    "ours", "out", "over", "own", "same", "she", "should", "so", "some", "such", "than", "that",
    "the", "their", "theirs", "them", "then", "there", "these", "they", "this", "those",
    "through", "to", "too", "under", "until", "up", "very", "via", "was", "we", "were", "what",
    "when", "where", "which", "while", "who", "whom", "why", "will", "with", "would", "you",
    "your", "yours",
];

pub fn is_stopword(word: &str) -> bool {
    STOPWORDS.binary_search(&word).is_ok()
}

/// Lowercase a line and strip characters outside `[a-z0-9_-]`, splitting on whitespace.
pub fn normalize_words(line: &str) -> Vec<String> {
    line.split_whitespace()
        .map(|w| {
            w.chars()
                .flat_map(char::to_lowercase)
                .filter(|c| c.is_alphanumeric() || *c == '_' || *c == '-')
                .collect::<String>()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

/// The seed-term vocabulary. Term ids follow lexicographic order of the strings.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TermSet {
    terms: Vec<String>,
    index: HashMap<String, TermId>,
    max_parts: usize,
}

impl TermSet {
    /// Build from arbitrary strings; they are normalized, deduplicated and sorted.
    /// Spaces inside a term are treated as word separators and joined with `_`.
    pub fn from_terms<I, S>(terms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut terms: Vec<String> = terms
            .into_iter()
            .map(|t| normalize_words(t.as_ref()).join("_"))
            .filter(|t| !t.is_empty())
            .collect();
        terms.sort();
        terms.dedup();
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let max_parts = terms
            .iter()
            .map(|t| t.split('_').filter(|p| !p.is_empty()).count().max(1))
            .max()
            .unwrap_or(0);
        TermSet {
            terms,
            index,
            max_parts,
        }
    }

    /// Read a term list: one term per line, words joined by `_`. Blank lines are skipped.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_terms(text.lines()))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn id(&self, term: &str) -> Option<TermId> {
        self.index.get(term).copied()
    }

    /// Panics if `id` is out of range.
    pub fn term(&self, id: TermId) -> &str {
        &self.terms[id]
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    /// Largest number of `_`-separated words in any term.
    pub fn max_parts(&self) -> usize {
        self.max_parts
    }

    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for t in &self.terms {
            out.push_str(t);
            out.push('\n');
        }
        out
    }
}

/// A tokenized document. `tokens` holds term ids in text order.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: DocId,
    pub tokens: Vec<TermId>,
    counts: Vec<(TermId, u32)>,
}

impl Document {
    pub fn new(id: DocId, tokens: Vec<TermId>) -> Self {
        let mut sorted = tokens.clone();
        sorted.sort_unstable();
        let mut counts: Vec<(TermId, u32)> = Vec::new();
        for t in sorted {
            match counts.last_mut() {
                Some((last, c)) if *last == t => *c += 1,
                _ => counts.push((t, 1)),
            }
        }
        Document { id, tokens, counts }
    }

    /// Distinct terms with their in-document counts, ordered by term id.
    pub fn counts(&self) -> &[(TermId, u32)] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Greedy longest-match segmentation of `raw` into term ids. Words that do not
/// start any known term are dropped.
pub fn tokenize(raw: &str, terms: &TermSet) -> Vec<TermId> {
    let words = normalize_words(raw);
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < words.len() {
        let longest = terms.max_parts().min(words.len() - i);
        let hit = (1..=longest)
            .rev()
            .find_map(|n| terms.id(&words[i..i + n].join("_")).map(|id| (id, n)));
        match hit {
            Some((id, n)) => {
                tokens.push(id);
                i += n;
            }
            None => i += 1,
        }
    }
    tokens
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningConfig {
    pub min_count: usize,
    pub max_ngram: usize,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            min_count: 10,
            max_ngram: 3,
        }
    }
}

/// Frequent contiguous n-grams (`n <= max_ngram`) occurring at least `min_count`
/// times, excluding n-grams made only of stopwords.
pub fn mine_terms<S: AsRef<str>>(raw_docs: &[S], config: &MiningConfig) -> Result<TermSet> {
    if config.min_count == 0 || config.max_ngram == 0 {
        return Err(CorpusError::InvalidConfig(format!(
            "min_count and max_ngram must be >= 1 (got {} and {})",
            config.min_count, config.max_ngram
        )));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for doc in raw_docs {
        let words = normalize_words(doc.as_ref());
        for start in 0..words.len() {
            for n in 1..=config.max_ngram.min(words.len() - start) {
                *counts.entry(words[start..start + n].join("_")).or_default() += 1;
            }
        }
    }
    Ok(TermSet::from_terms(counts.into_iter().filter_map(
        |(gram, count)| {
            let all_stop = gram.split('_').filter(|p| !p.is_empty()).all(is_stopword);
            (count >= config.min_count && !all_stop).then_some(gram)
        },
    )))
}

/// Where the seed terms come from when loading a corpus.
#[derive(Debug, Clone)]
pub enum TermSource {
    Mine(MiningConfig),
    List(PathBuf),
    Given(TermSet),
}

/// Tokenized documents plus the statistics the rest of the pipeline reads.
/// Immutable once built.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub terms: TermSet,
    documents: Vec<Document>,
    term_freq: Vec<u64>,
    doc_freq: Vec<u64>,
    dropped: usize,
}

impl Corpus {
    /// Tokenize `lines` against `terms`. Lines with no known term are dropped and counted.
    pub fn from_lines<S: AsRef<str>>(lines: &[S], terms: TermSet) -> Result<Self> {
        let mut documents = Vec::new();
        let mut dropped = 0;
        for line in lines {
            let tokens = tokenize(line.as_ref(), &terms);
            if tokens.is_empty() {
                dropped += 1;
            } else {
                documents.push(Document::new(documents.len(), tokens));
            }
        }
        if documents.is_empty() {
            return Err(CorpusError::Empty);
        }
        let mut term_freq = vec![0u64; terms.len()];
        let mut doc_freq = vec![0u64; terms.len()];
        for doc in &documents {
            for &(t, c) in doc.counts() {
                term_freq[t] += c as u64;
                doc_freq[t] += 1;
            }
        }
        if dropped > 0 {
            log::info!("dropped {dropped} documents with no known term");
        }
        Ok(Corpus {
            terms,
            documents,
            term_freq,
            doc_freq,
            dropped,
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn document(&self, id: DocId) -> &Document {
        &self.documents[id]
    }

    pub fn num_docs(&self) -> usize {
        self.documents.len()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn term_freq(&self, t: TermId) -> u64 {
        self.term_freq[t]
    }

    pub fn doc_freq(&self, t: TermId) -> u64 {
        self.doc_freq[t]
    }

    /// Lines dropped at load time because they contained no known term.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    /// `ln(N / df)` over the full corpus; zero for terms that never occur.
    pub fn idf(&self, t: TermId) -> f64 {
        let df = self.doc_freq[t];
        if df == 0 {
            0.0
        } else {
            (self.documents.len() as f64 / df as f64).ln()
        }
    }

    pub fn all_doc_ids(&self) -> Vec<DocId> {
        (0..self.documents.len()).collect()
    }
}

/// Read a corpus file (one document per line) and tokenize it against the chosen term source.
pub fn load_corpus(path: &Path, source: &TermSource) -> Result<Corpus> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let lines: Vec<&str> = text.lines().collect();
    let terms = match source {
        TermSource::Mine(config) => mine_terms(&lines, config)?,
        TermSource::List(list) => TermSet::load(list)?,
        TermSource::Given(terms) => terms.clone(),
    };
    Corpus::from_lines(&lines, terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(terms: &[&str]) -> TermSet {
        TermSet::from_terms(terms.iter().copied())
    }

    #[test]
    fn stopword_table_is_sorted() {
        assert!(STOPWORDS.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn normalization_strips_punctuation() {
        assert_eq!(
            normalize_words("Pose-Estimation, (3D) pose_estimation!"),
            vec!["pose-estimation", "3d", "pose_estimation"]
        );
    }

    #[test]
    fn counts_simple_corpus() {
        let corpus = Corpus::from_lines(&["a b a", "b c"], set(&["a", "b", "c"])).unwrap();
        let a = corpus.terms.id("a").unwrap();
        let b = corpus.terms.id("b").unwrap();
        assert_eq!(corpus.term_freq(a), 2);
        assert_eq!(corpus.doc_freq(b), 2);
        assert_eq!(corpus.num_docs(), 2);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let lines: [&str; 0] = [];
        let err = Corpus::from_lines(&lines, set(&["a"])).unwrap_err();
        assert!(err.to_string().contains("zero documents"));
    }

    #[test]
    fn empty_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.txt");
        fs::write(&path, "").unwrap();
        let err = load_corpus(&path, &TermSource::Given(set(&["a"]))).unwrap_err();
        assert!(matches!(err, CorpusError::Empty));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_corpus(
            Path::new("/nonexistent/corpus.txt"),
            &TermSource::Mine(MiningConfig::default()),
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::Io { .. }));
    }

    #[test]
    fn lines_without_terms_are_dropped() {
        let corpus = Corpus::from_lines(&["q q", "x"], set(&["x"])).unwrap();
        assert_eq!(corpus.num_docs(), 1);
        assert_eq!(corpus.dropped(), 1);
    }

    #[test]
    fn mining_keeps_all_frequent_grams() {
        let terms = mine_terms(
            &["x y", "x y"],
            &MiningConfig {
                min_count: 2,
                max_ngram: 2,
            },
        )
        .unwrap();
        assert_eq!(terms.terms(), &["x", "x_y", "y"]);
    }

    #[test]
    fn mining_below_threshold_is_empty() {
        let terms = mine_terms(
            &["x"],
            &MiningConfig {
                min_count: 2,
                max_ngram: 3,
            },
        )
        .unwrap();
        assert!(terms.is_empty());
    }

    #[test]
    fn mining_drops_stopword_only_grams() {
        let terms = mine_terms(
            &["of the model", "of the model"],
            &MiningConfig {
                min_count: 2,
                max_ngram: 3,
            },
        )
        .unwrap();
        assert!(terms.id("of").is_none());
        assert!(terms.id("of_the").is_none());
        assert!(terms.id("the_model").is_some());
    }

    #[test]
    fn mining_rejects_zero_threshold() {
        let err = mine_terms(
            &["x"],
            &MiningConfig {
                min_count: 0,
                max_ngram: 1,
            },
        );
        assert!(matches!(err, Err(CorpusError::InvalidConfig(_))));
    }

    #[test]
    fn planted_bigram_is_mined() {
        // Background of shuffled unigrams plus one bigram planted 50 times.
        let mut docs = Vec::new();
        for i in 0..200 {
            let mut line = format!("w{} w{} w{}", i % 13, (i * 7) % 17, (i * 3) % 11);
            if i % 4 == 0 {
                line.push_str(" deep learning");
            }
            docs.push(line);
        }
        // Brute-force count of the bigram over normalized word pairs.
        let planted: usize = docs
            .iter()
            .map(|d| {
                let w = normalize_words(d);
                w.windows(2)
                    .filter(|p| p[0] == "deep" && p[1] == "learning")
                    .count()
            })
            .sum();
        assert_eq!(planted, 50);
        let terms = mine_terms(
            &docs,
            &MiningConfig {
                min_count: 10,
                max_ngram: 3,
            },
        )
        .unwrap();
        assert!(terms.id("deep_learning").is_some());
    }

    #[test]
    fn tokenize_prefers_longest_match() {
        let terms = set(&["x_y", "z"]);
        let tokens = tokenize("x y z", &terms);
        assert_eq!(
            tokens,
            vec![terms.id("x_y").unwrap(), terms.id("z").unwrap()]
        );
    }

    #[test]
    fn tokenize_drops_unknown_words() {
        assert!(tokenize("q q", &set(&["x"])).is_empty());
    }

    #[test]
    fn prejoined_tokens_match_multiword_terms() {
        let terms = set(&["pose_estimation", "pose"]);
        let id = terms.id("pose_estimation").unwrap();
        assert_eq!(tokenize("pose_estimation", &terms), vec![id]);
        assert_eq!(tokenize("Pose estimation", &terms), vec![id]);
    }

    #[test]
    fn term_list_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("terms.txt");
        let terms = set(&["machine_learning", "cs", "pose estimation"]);
        fs::write(&path, terms.to_lines()).unwrap();
        let loaded = TermSet::load(&path).unwrap();
        assert_eq!(loaded, terms);
        assert!(loaded.id("pose_estimation").is_some());
    }

    /// Exhaustive check of greedy segmentation: walk the words again and verify
    /// that at every position the emitted token is the longest in-vocabulary
    /// match, and that skipped words start no match at all.
    fn greedy_oracle(words: &[String], terms: &TermSet) -> Vec<TermId> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < words.len() {
            let mut best: Option<(usize, TermId)> = None;
            for j in i + 1..=words.len() {
                if let Some(id) = terms.id(&words[i..j].join("_")) {
                    best = Some((j - i, id));
                }
            }
            match best {
                Some((n, id)) => {
                    out.push(id);
                    i += n;
                }
                None => i += 1,
            }
        }
        out
    }

    proptest! {
        #[test]
        fn tokenize_matches_exhaustive_oracle(
            words in prop::collection::vec(0usize..5, 0..30),
            vocab in prop::collection::btree_set(prop::collection::vec(0usize..5, 1..4), 1..12),
        ) {
            let name = |w: &usize| format!("w{w}");
            let terms = TermSet::from_terms(
                vocab.iter().map(|g| g.iter().map(name).collect::<Vec<_>>().join("_")),
            );
            let words: Vec<String> = words.iter().map(name).collect();
            let line = words.join(" ");
            let tokens = tokenize(&line, &terms);
            prop_assert_eq!(&tokens, &greedy_oracle(&words, &terms));
            prop_assert_eq!(tokens, tokenize(&line, &terms));
        }

        #[test]
        fn raising_min_count_never_adds_terms(
            docs in prop::collection::vec(prop::collection::vec(0usize..6, 1..12), 1..20),
            low in 1usize..4,
            bump in 0usize..4,
        ) {
            let lines: Vec<String> = docs
                .iter()
                .map(|d| d.iter().map(|w| format!("w{w}")).collect::<Vec<_>>().join(" "))
                .collect();
            let loose = mine_terms(&lines, &MiningConfig { min_count: low, max_ngram: 3 }).unwrap();
            let strict = mine_terms(&lines, &MiningConfig { min_count: low + bump, max_ngram: 3 }).unwrap();
            for t in strict.terms() {
                prop_assert!(loose.id(t).is_some());
            }
        }

        #[test]
        fn statistics_match_recount(
            docs in prop::collection::vec(prop::collection::vec(0usize..8, 0..15), 1..25),
        ) {
            let lines: Vec<String> = docs
                .iter()
                .map(|d| d.iter().map(|w| format!("w{w}")).collect::<Vec<_>>().join(" "))
                .collect();
            let terms = TermSet::from_terms((0..6).map(|w| format!("w{w}")));
            let Ok(corpus) = Corpus::from_lines(&lines, terms) else {
                return Ok(());
            };
            let mut tf = vec![0u64; corpus.num_terms()];
            let mut df = vec![0u64; corpus.num_terms()];
            for doc in corpus.documents() {
                let mut seen = std::collections::BTreeSet::new();
                for &t in &doc.tokens {
                    tf[t] += 1;
                    seen.insert(t);
                }
                for t in seen {
                    df[t] += 1;
                }
            }
            for t in 0..corpus.num_terms() {
                prop_assert_eq!(corpus.term_freq(t), tf[t]);
                prop_assert_eq!(corpus.doc_freq(t), df[t]);
                if tf[t] > 0 {
                    prop_assert!(tf[t] >= df[t] && df[t] >= 1);
                }
            }
        }
    }
}
