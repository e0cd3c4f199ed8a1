//! Planted-hierarchy corpus generator.
//!
//! Produces documents over a vocabulary organised as `top_topics` topics, each
//! with `subtopics` sub-topics of `terms_per_subtopic` terms, plus a pool of
//! general terms sprinkled uniformly over all documents. Each document is
//! drawn from one sub-topic: most tokens come from that sub-topic, the rest
//! from anywhere in its parent topic. The generator records the ground truth
//! so recovered taxonomies can be scored.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CorpusError, TermSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub top_topics: usize,
    pub subtopics: usize,
    pub terms_per_subtopic: usize,
    pub general_terms: usize,
    pub docs: usize,
    /// Inclusive range of topical tokens per document.
    pub doc_len: (usize, usize),
    /// Probability that a topical token comes from the document's own sub-topic.
    pub subtopic_share: f64,
    /// Expected number of general tokens per document.
    pub general_rate: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            top_topics: 3,
            subtopics: 3,
            terms_per_subtopic: 40,
            general_terms: 20,
            docs: 3000,
            doc_len: (15, 25),
            subtopic_share: 0.7,
            general_rate: 0.06,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlantedRole {
    Specific { topic: usize, subtopic: usize },
    General,
}

#[derive(Debug, Clone)]
pub struct PlantedCorpus {
    pub config: PlantedConfig,
    pub lines: Vec<String>,
    /// Ground truth for every generated term.
    pub truth: BTreeMap<String, PlantedRole>,
}

pub fn specific_term(topic: usize, subtopic: usize, index: usize) -> String {
    format!("topic{topic}-sub{subtopic}-w{index:02}")
}

pub fn general_term(index: usize) -> String {
    format!("general-{index:02}")
}

impl PlantedCorpus {
    pub fn generate(config: &PlantedConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut truth = BTreeMap::new();
        for topic in 0..config.top_topics {
            for subtopic in 0..config.subtopics {
                for i in 0..config.terms_per_subtopic {
                    truth.insert(
                        specific_term(topic, subtopic, i),
                        PlantedRole::Specific { topic, subtopic },
                    );
                }
            }
        }
        for i in 0..config.general_terms {
            truth.insert(general_term(i), PlantedRole::General);
        }

        let mut lines = Vec::with_capacity(config.docs);
        for _ in 0..config.docs {
            let topic = rng.gen_range(0..config.top_topics);
            let subtopic = rng.gen_range(0..config.subtopics);
            let len = rng.gen_range(config.doc_len.0..=config.doc_len.1);
            let mut tokens: Vec<String> = (0..len)
                .map(|_| {
                    let sub = if rng.gen_bool(config.subtopic_share) {
                        subtopic
                    } else {
                        rng.gen_range(0..config.subtopics)
                    };
                    specific_term(topic, sub, rng.gen_range(0..config.terms_per_subtopic))
                })
                .collect();
            if config.general_terms > 0 {
                // Poisson-like: one Bernoulli trial per topical token.
                let p = (config.general_rate / len as f64).min(1.0);
                for _ in 0..len {
                    if rng.gen_bool(p) {
                        let at = rng.gen_range(0..=tokens.len());
                        tokens.insert(at, general_term(rng.gen_range(0..config.general_terms)));
                    }
                }
            }
            lines.push(tokens.join(" "));
        }
        PlantedCorpus {
            config: config.clone(),
            lines,
            truth,
        }
    }

    pub fn term_set(&self) -> TermSet {
        TermSet::from_terms(self.truth.keys())
    }

    pub fn corpus(&self) -> Result<Corpus, CorpusError> {
        Corpus::from_lines(&self.lines, self.term_set())
    }

    pub fn role(&self, term: &str) -> Option<PlantedRole> {
        self.truth.get(term).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_is_deterministic_and_complete() {
        let config = PlantedConfig {
            docs: 200,
            ..PlantedConfig::default()
        };
        let a = PlantedCorpus::generate(&config);
        let b = PlantedCorpus::generate(&config);
        assert_eq!(a.lines, b.lines);
        assert_eq!(a.truth.len(), 3 * 3 * 40 + 20);
        let corpus = a.corpus().unwrap();
        assert_eq!(corpus.num_docs(), 200);
    }

    #[test]
    fn documents_stay_inside_one_topic() {
        let planted = PlantedCorpus::generate(&PlantedConfig {
            docs: 100,
            ..PlantedConfig::default()
        });
        for line in &planted.lines {
            let topics: std::collections::BTreeSet<usize> = line
                .split_whitespace()
                .filter_map(|w| match planted.role(w) {
                    Some(PlantedRole::Specific { topic, .. }) => Some(topic),
                    _ => None,
                })
                .collect();
            assert_eq!(topics.len(), 1);
        }
    }
}
