//! Skip-gram term embeddings trained with negative sampling.
//!
//! Every term has an input vector (the embedding used downstream) and a
//! context vector. For a center term `t` and a context term `w` inside the
//! window, the pair loss is
//!
//! ```text
//! -ln σ(v_t · v'_w) - Σ_neg ln σ(-v_t · v'_neg)
//! ```
//!
//! with negatives drawn from the unigram distribution raised to 0.75. The
//! learning rate decays linearly to 1/100 of its initial value over all
//! token occurrences. Training is single-threaded and bit-reproducible for a
//! fixed seed.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Document, TermSet};
use crate::vector::{cosine, dot};
use crate::TermId;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("vocabulary too small: {0} terms meet min_count, need at least 2")]
    VocabularyTooSmall(usize),
    #[error("training diverged: non-finite loss in epoch {epoch} (learning rate too high?)")]
    Diverged { epoch: usize },
    #[error("unknown term: {0}")]
    UnknownTerm(String),
    #[error("malformed embedding file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EmbeddingError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dim: usize,
    /// Context radius on each side of the center token.
    pub window: usize,
    /// Negative samples per positive pair.
    pub negatives: usize,
    pub epochs: usize,
    pub initial_lr: f64,
    pub min_count: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 100,
            window: 5,
            negatives: 5,
            epochs: 10,
            initial_lr: 0.025,
            min_count: 5,
            seed: 1,
        }
    }
}

impl TrainConfig {
    /// Defaults for embeddings trained on the whole corpus.
    pub fn global() -> Self {
        Self::default()
    }

    /// Defaults for embeddings trained on a topic sub-corpus.
    pub fn local() -> Self {
        TrainConfig {
            min_count: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(EmbeddingError::InvalidConfig(msg.to_string()));
        if self.dim < 2 {
            return bad("dim must be >= 2");
        }
        if self.window < 1 {
            return bad("window must be >= 1");
        }
        if self.negatives < 1 {
            return bad("negatives must be >= 1");
        }
        if self.epochs < 1 {
            return bad("epochs must be >= 1");
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return bad("initial_lr must be > 0");
        }
        Ok(())
    }
}

/// Trained input and context vectors for a vocabulary of term ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vocab: Vec<TermId>,
    rows: Vec<Option<usize>>,
    input: Vec<f64>,
    context: Vec<f64>,
    /// Human-readable description of the training corpus.
    pub trained_on: String,
    /// Mean pair loss of each epoch, in order.
    pub epoch_losses: Vec<f64>,
}

impl EmbeddingTable {
    /// Assemble a table from explicit vectors. `vocab` must be strictly increasing
    /// and every id must be `< num_terms`.
    pub fn from_parts(
        dim: usize,
        num_terms: usize,
        vocab: Vec<TermId>,
        input: Vec<f64>,
        context: Vec<f64>,
    ) -> Result<Self> {
        if input.len() != vocab.len() * dim || context.len() != vocab.len() * dim {
            return Err(EmbeddingError::Format(
                "vector storage does not match vocabulary size".into(),
            ));
        }
        if input.iter().chain(&context).any(|x| !x.is_finite()) {
            return Err(EmbeddingError::Format("non-finite component".into()));
        }
        let mut rows = vec![None; num_terms];
        for (row, &t) in vocab.iter().enumerate() {
            if t >= num_terms || rows[t].is_some() {
                return Err(EmbeddingError::Format(format!("bad or duplicate term id {t}")));
            }
            rows[t] = Some(row);
        }
        Ok(EmbeddingTable {
            dim,
            vocab,
            rows,
            input,
            context,
            trained_on: String::new(),
            epoch_losses: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    /// Term ids with vectors, ascending.
    pub fn vocab(&self) -> &[TermId] {
        &self.vocab
    }

    pub fn contains(&self, t: TermId) -> bool {
        self.row(t).is_some()
    }

    fn row(&self, t: TermId) -> Option<usize> {
        self.rows.get(t).copied().flatten()
    }

    pub fn vector(&self, t: TermId) -> Option<&[f64]> {
        self.row(t)
            .map(|r| &self.input[r * self.dim..(r + 1) * self.dim])
    }

    pub fn context_vector(&self, t: TermId) -> Option<&[f64]> {
        self.row(t)
            .map(|r| &self.context[r * self.dim..(r + 1) * self.dim])
    }

    /// The `k` terms with highest cosine to `query`, descending, query excluded.
    /// Ties are broken by ascending term id.
    pub fn nearest_terms(&self, query: TermId, k: usize) -> Result<Vec<(TermId, f64)>> {
        let q = self
            .vector(query)
            .ok_or_else(|| EmbeddingError::UnknownTerm(format!("id {query}")))?;
        let mut scored: Vec<(TermId, f64)> = self
            .vocab
            .iter()
            .filter(|&&t| t != query)
            .map(|&t| (t, cosine(q, self.vector(t).unwrap())))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(scored)
    }

    /// Text format: header `dim vocab_size`, then `term x1 .. xdim` per line.
    /// Only input vectors are written, at `f32` precision.
    pub fn write_text<W: Write>(&self, terms: &TermSet, out: W) -> Result<()> {
        let mut out = BufWriter::new(out);
        writeln!(out, "{} {}", self.dim, self.vocab.len())?;
        for &t in &self.vocab {
            write!(out, "{}", terms.term(t))?;
            for x in self.vector(t).unwrap() {
                write!(out, " {}", *x as f32)?;
            }
            writeln!(out)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Read the text format, mapping strings through `terms`. Context vectors are zero.
    pub fn read_text<R: Read>(terms: &TermSet, input: R) -> Result<Self> {
        let mut lines = BufReader::new(input).lines();
        let header = lines
            .next()
            .ok_or_else(|| EmbeddingError::Format("missing header".into()))??;
        let (dim, count) = parse_header(&header)?;
        let mut records: Vec<(TermId, Vec<f64>)> = Vec::with_capacity(count);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let word = fields.next().unwrap();
            let t = terms
                .id(word)
                .ok_or_else(|| EmbeddingError::UnknownTerm(word.to_string()))?;
            let vector = fields
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|e| EmbeddingError::Format(format!("{word}: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            if vector.len() != dim {
                return Err(EmbeddingError::Format(format!(
                    "{word}: expected {dim} components, found {}",
                    vector.len()
                )));
            }
            records.push((t, vector));
        }
        if records.len() != count {
            return Err(EmbeddingError::Format(format!(
                "header announces {count} records, found {}",
                records.len()
            )));
        }
        records.sort_by_key(|r| r.0);
        let vocab: Vec<TermId> = records.iter().map(|r| r.0).collect();
        let input: Vec<f64> = records.into_iter().flat_map(|r| r.1).collect();
        let context = vec![0.0; input.len()];
        Self::from_parts(dim, terms.len(), vocab, input, context)
    }

    /// Binary format, exact `f64`, both vector sets. Little endian:
    /// magic, `dim: u64`, `count: u64`, then per term `len: u32`, utf-8 bytes,
    /// `dim` input components and `dim` context components.
    pub fn write_binary<W: Write>(&self, terms: &TermSet, out: W) -> Result<()> {
        let mut out = BufWriter::new(out);
        out.write_all(BINARY_MAGIC)?;
        out.write_all(&(self.dim as u64).to_le_bytes())?;
        out.write_all(&(self.vocab.len() as u64).to_le_bytes())?;
        for &t in &self.vocab {
            let word = terms.term(t).as_bytes();
            out.write_all(&(word.len() as u32).to_le_bytes())?;
            out.write_all(word)?;
            for x in self.vector(t).unwrap().iter().chain(self.context_vector(t).unwrap()) {
                out.write_all(&x.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(terms: &TermSet, input: R) -> Result<Self> {
        let mut input = BufReader::new(input);
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(EmbeddingError::Format("bad magic".into()));
        }
        let dim = read_u64(&mut input)? as usize;
        let count = read_u64(&mut input)? as usize;
        let mut records: Vec<(TermId, Vec<f64>, Vec<f64>)> = Vec::with_capacity(count);
        for _ in 0..count {
            let mut len = [0u8; 4];
            input.read_exact(&mut len)?;
            let mut word = vec![0u8; u32::from_le_bytes(len) as usize];
            input.read_exact(&mut word)?;
            let word = String::from_utf8(word)
                .map_err(|_| EmbeddingError::Format("term is not utf-8".into()))?;
            let t = terms
                .id(&word)
                .ok_or_else(|| EmbeddingError::UnknownTerm(word.clone()))?;
            let mut values = Vec::with_capacity(2 * dim);
            for _ in 0..2 * dim {
                let mut b = [0u8; 8];
                input.read_exact(&mut b)?;
                values.push(f64::from_le_bytes(b));
            }
            let context = values.split_off(dim);
            records.push((t, values, context));
        }
        records.sort_by_key(|r| r.0);
        let vocab = records.iter().map(|r| r.0).collect();
        let mut input_vecs = Vec::with_capacity(count * dim);
        let mut context_vecs = Vec::with_capacity(count * dim);
        for (_, i, c) in records {
            input_vecs.extend(i);
            context_vecs.extend(c);
        }
        Self::from_parts(dim, terms.len(), vocab, input_vecs, context_vecs)
    }

    /// Load either format on its own, detecting the binary magic.
    pub fn load_standalone(path: &Path) -> Result<(TermSet, Self)> {
        let bytes = std::fs::read(path)?;
        if !bytes.starts_with(BINARY_MAGIC) {
            return Self::load_text_standalone(path);
        }
        let mut cursor = &bytes[BINARY_MAGIC.len()..];
        let dim = read_u64(&mut cursor)? as usize;
        let count = read_u64(&mut cursor)? as usize;
        let mut words = Vec::with_capacity(count);
        for _ in 0..count {
            let mut len = [0u8; 4];
            cursor.read_exact(&mut len)?;
            let len = u32::from_le_bytes(len) as usize;
            if cursor.len() < len + 16 * dim {
                return Err(EmbeddingError::Format("truncated binary file".into()));
            }
            words.push(String::from_utf8_lossy(&cursor[..len]).into_owned());
            cursor = &cursor[len + 16 * dim..];
        }
        let terms = TermSet::from_terms(&words);
        let table = Self::read_binary(&terms, bytes.as_slice())?;
        Ok((terms, table))
    }

    /// Re-key the table from `from` ids to `to` ids, dropping terms absent from `to`.
    pub fn reindex(&self, from: &TermSet, to: &TermSet) -> Self {
        let mut rows: Vec<(TermId, TermId)> = self
            .vocab
            .iter()
            .filter_map(|&t| to.id(from.term(t)).map(|n| (n, t)))
            .collect();
        rows.sort_unstable();
        let mut input = Vec::with_capacity(rows.len() * self.dim);
        let mut context = Vec::with_capacity(rows.len() * self.dim);
        for &(_, t) in &rows {
            input.extend_from_slice(self.vector(t).unwrap());
            context.extend_from_slice(self.context_vector(t).unwrap());
        }
        let vocab = rows.into_iter().map(|(n, _)| n).collect();
        let mut table = Self::from_parts(self.dim, to.len(), vocab, input, context)
            .expect("rows are unique and in range");
        table.trained_on = self.trained_on.clone();
        table.epoch_losses = self.epoch_losses.clone();
        table
    }

    pub fn save_text(&self, terms: &TermSet, path: &Path) -> Result<()> {
        self.write_text(terms, File::create(path)?)
    }

    pub fn save_binary(&self, terms: &TermSet, path: &Path) -> Result<()> {
        self.write_binary(terms, File::create(path)?)
    }

    pub fn load_binary(terms: &TermSet, path: &Path) -> Result<Self> {
        Self::read_binary(terms, File::open(path)?)
    }

    /// Load a text embedding file on its own, building the term set from its records.
    pub fn load_text_standalone(path: &Path) -> Result<(TermSet, Self)> {
        let text = std::fs::read_to_string(path)?;
        let terms = TermSet::from_terms(
            text.lines()
                .skip(1)
                .filter_map(|l| l.split_whitespace().next()),
        );
        let table = Self::read_text(&terms, text.as_bytes())?;
        Ok((terms, table))
    }
}

const BINARY_MAGIC: &[u8; 8] = b"TTEMB\x00\x01\x00";

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn parse_header(line: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    match parts.as_slice() {
        [dim, count] => {
            let dim = dim
                .parse()
                .map_err(|_| EmbeddingError::Format(format!("bad header: {line}")))?;
            let count = count
                .parse()
                .map_err(|_| EmbeddingError::Format(format!("bad header: {line}")))?;
            Ok((dim, count))
        }
        _ => Err(EmbeddingError::Format(format!("bad header: {line}"))),
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Loss of one (center, context) pair with explicit negatives, and its exact gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGradient {
    pub loss: f64,
    /// d loss / d v_t
    pub center: Vec<f64>,
    /// d loss / d v'_w
    pub context: Vec<f64>,
    /// d loss / d v'_neg, one per negative
    pub negatives: Vec<Vec<f64>>,
}

pub fn pair_loss_and_grad(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> PairGradient {
    let s = dot(center, context);
    let mut loss = softplus(-s);
    // d/ds softplus(-s) = -(1 - σ(s))
    let g_pos = -(1.0 - sigmoid(s));
    let mut d_center: Vec<f64> = context.iter().map(|w| g_pos * w).collect();
    let d_context: Vec<f64> = center.iter().map(|t| g_pos * t).collect();
    let mut d_negatives = Vec::with_capacity(negatives.len());
    for neg in negatives {
        let s = dot(center, neg);
        loss += softplus(s);
        let g = sigmoid(s);
        for (d, n) in d_center.iter_mut().zip(neg.iter()) {
            *d += g * n;
        }
        d_negatives.push(center.iter().map(|t| g * t).collect());
    }
    PairGradient {
        loss,
        center: d_center,
        context: d_context,
        negatives: d_negatives,
    }
}

/// One in-place SGD step for a pair. Context rows are updated immediately with
/// the pre-step center vector; the center row receives the accumulated update
/// last, so for distinct rows this equals a simultaneous gradient step.
/// Returns the pair loss evaluated before the update.
#[allow(clippy::too_many_arguments)]
fn sgd_pair(
    input: &mut [f64],
    context: &mut [f64],
    dim: usize,
    center: usize,
    target: usize,
    negatives: &[usize],
    lr: f64,
    center_delta: &mut [f64],
) -> f64 {
    center_delta.iter_mut().for_each(|x| *x = 0.0);
    let v_t = &input[center * dim..(center + 1) * dim];
    let mut loss = 0.0;
    for (k, &row) in std::iter::once(&target).chain(negatives).enumerate() {
        let label = if k == 0 { 1.0 } else { 0.0 };
        let v_c = &mut context[row * dim..(row + 1) * dim];
        let s = dot(v_t, v_c);
        loss += if k == 0 { softplus(-s) } else { softplus(s) };
        let g = lr * (label - sigmoid(s));
        for i in 0..dim {
            center_delta[i] += g * v_c[i];
            v_c[i] += g * v_t[i];
        }
    }
    for (x, d) in input[center * dim..(center + 1) * dim]
        .iter_mut()
        .zip(center_delta.iter())
    {
        *x += d;
    }
    loss
}

/// Train skip-gram embeddings over `docs`. Term ids are interpreted against a
/// vocabulary of `num_terms` ids; only terms occurring at least `min_count`
/// times in `docs` receive vectors.
pub fn train_skipgram(
    docs: &[&Document],
    num_terms: usize,
    config: &TrainConfig,
    trained_on: impl Into<String>,
) -> Result<EmbeddingTable> {
    config.validate()?;
    let mut counts = vec![0u64; num_terms];
    for doc in docs {
        for &t in &doc.tokens {
            counts[t] += 1;
        }
    }
    let vocab: Vec<TermId> = (0..num_terms)
        .filter(|&t| counts[t] >= config.min_count.max(1))
        .collect();
    if vocab.len() < 2 {
        return Err(EmbeddingError::VocabularyTooSmall(vocab.len()));
    }
    let mut rows = vec![None; num_terms];
    for (row, &t) in vocab.iter().enumerate() {
        rows[t] = Some(row);
    }
    let sequences: Vec<Vec<usize>> = docs
        .iter()
        .map(|d| d.tokens.iter().filter_map(|&t| rows[t]).collect::<Vec<_>>())
        .filter(|s: &Vec<usize>| s.len() > 1)
        .collect();

    let dim = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut input: Vec<f64> = (0..vocab.len() * dim)
        .map(|_| (rng.gen::<f64>() - 0.5) / dim as f64)
        .collect();
    let mut context = vec![0.0; vocab.len() * dim];
    let noise = WeightedIndex::new(vocab.iter().map(|&t| (counts[t] as f64).powf(0.75)))
        .expect("vocabulary counts are positive");

    let tokens_per_epoch: usize = sequences.iter().map(Vec::len).sum();
    let total = (tokens_per_epoch * config.epochs).max(1) as f64;
    let mut processed = 0usize;
    let mut negatives = vec![0usize; config.negatives];
    let mut delta = vec![0.0; dim];
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut loss_sum = 0.0;
        let mut pairs = 0usize;
        for seq in &sequences {
            for i in 0..seq.len() {
                let lr = config.initial_lr * (1.0 - 0.99 * processed as f64 / total);
                processed += 1;
                let lo = i.saturating_sub(config.window);
                let hi = (i + config.window).min(seq.len() - 1);
                for j in lo..=hi {
                    if j == i {
                        continue;
                    }
                    let target = seq[j];
                    for n in negatives.iter_mut() {
                        *n = loop {
                            let draw = noise.sample(&mut rng);
                            if draw != target {
                                break draw;
                            }
                        };
                    }
                    loss_sum += sgd_pair(
                        &mut input,
                        &mut context,
                        dim,
                        seq[i],
                        target,
                        &negatives,
                        lr,
                        &mut delta,
                    );
                    pairs += 1;
                }
            }
        }
        let mean = loss_sum / pairs.max(1) as f64;
        if !mean.is_finite() || input.iter().any(|x| !x.is_finite()) {
            return Err(EmbeddingError::Diverged { epoch });
        }
        log::debug!("epoch {epoch}: mean pair loss {mean:.5}");
        epoch_losses.push(mean);
    }

    let mut table = EmbeddingTable::from_parts(dim, num_terms, vocab, input, context)?;
    table.trained_on = trained_on.into();
    table.epoch_losses = epoch_losses;
    Ok(table)
}
