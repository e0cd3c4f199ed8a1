//! Topic taxonomy construction from a text corpus.
//!
//! A taxonomy is grown top-down. The root holds every seed term; each node is
//! split into `k` children by spherical k-means over term embeddings, while an
//! adaptive loop scores every clustered term by popularity and concentration
//! and pushes general terms back to the parent. Nodes below the root are split
//! using embeddings retrained on a topic-specific sub-corpus.
//!
//! The crate is organised bottom-up:
//!
//! - [`corpus`]: term mining, tokenization, frequency statistics.
//! - [`embedding`]: skip-gram with negative sampling.
//! - [`spherical`]: spherical k-means.
//! - [`assignment`]: document-to-topic assignment and retrieval expansion.
//! - [`splitter`]: the adaptive splitting loop and its scoring functions.
//! - [`taxonomy`]: recursive construction, export and import.
//! - [`evaluation`]: Davies-Bouldin index and annotation packets.
//! - [`synthetic`]: planted-hierarchy corpus generator used by tests and demos.

pub mod assignment;
pub mod corpus;
pub mod embedding;
pub mod evaluation;
pub mod spherical;
pub mod splitter;
pub mod synthetic;
pub mod taxonomy;
mod vector;

pub use assignment::{Bm25Params, DocEmbeddings, SubTopicDocs};
pub use corpus::{Corpus, Document, MiningConfig, TermSet};
pub use embedding::{EmbeddingTable, TrainConfig};
pub use spherical::{ClusterAssignment, KMeansConfig};
pub use splitter::{SplitParams, SplitResult};
pub use taxonomy::{BuildConfig, Mode, Taxonomy, TopicNode};

/// Dense index of a term inside a [`TermSet`].
pub type TermId = usize;

/// Dense index of a document inside a [`Corpus`].
pub type DocId = usize;

/// Derive a child seed from a base seed and a path of discriminators.
///
/// Uses the SplitMix64 finalizer so that nearby inputs give unrelated seeds.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut state = base;
    for &p in path {
        state = splitmix(state ^ splitmix(p.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    splitmix(state)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_by_path() {
        let a = derive_seed(7, &[0]);
        let b = derive_seed(7, &[1]);
        let c = derive_seed(7, &[0, 0]);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(7, &[0]));
    }
}
