// SPDX-License-Identifier: MIT OR Apache-2.0

//! Masked language model interface and deterministic mock models.
//!
//! A backend receives a token sequence containing mask tokens and returns
//! one vocabulary distribution per requested masked position. Positions are
//! marginals from a single forward pass; no joint decoding is attempted.
//!
//! The mocks come in two families:
//!
//! * [`TableBackend`]: explicit `(context, position) → distribution` entries
//!   with a uniform or unigram fallback. A table with only a unigram
//!   fallback is context independent.
//! * [`BigramBackend`]: the distribution at a masked position depends only
//!   on the token immediately before it, or is uniform when that token is
//!   itself masked. Every affinity it induces has a closed form.
//!
//! Both can be described in a JSON fixture, see [`MockFixture`].

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prob::{ProbError, VocabDistribution};
use crate::tokenization::{TokenizerHandle, WordVocab};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("sequence of {len} tokens exceeds the maximum of {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("masked position {position} out of range for sequence of {len} tokens")]
    PositionOutOfRange { position: usize, len: usize },

    #[error("position {position} holds token {token}, not the mask token")]
    PositionNotMasked { position: usize, token: u32 },

    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },

    #[error("query {index} failed: {source}")]
    Batch {
        index: usize,
        #[source]
        source: Box<BackendError>,
    },

    #[error("invalid mock model: {0}")]
    InvalidMock(String),

    #[error("backend runtime failure: {0}")]
    Runtime(String),

    #[error(transparent)]
    Prob(#[from] ProbError),
}

pub type Result<T> = std::result::Result<T, BackendError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendInfo {
    pub vocab_size: usize,
    pub mask_token_id: u32,
    pub max_sequence_length: usize,
    pub model_id: String,
}

/// Token sequence plus the masked positions whose outputs are wanted.
///
/// The sequence may hold further mask tokens (for instance a masked
/// multi-token context word) whose outputs are not requested.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MaskedQuery {
    pub token_ids: Vec<u32>,
    pub masked_positions: Vec<usize>,
}

impl MaskedQuery {
    pub fn new(token_ids: Vec<u32>, masked_positions: Vec<usize>) -> Self {
        Self {
            token_ids,
            masked_positions,
        }
    }

    pub fn validate(&self, info: &BackendInfo) -> Result<()> {
        let len = self.token_ids.len();
        if len > info.max_sequence_length {
            return Err(BackendError::SequenceTooLong {
                len,
                max: info.max_sequence_length,
            });
        }
        if let Some(&id) = self.token_ids.iter().find(|&&id| id as usize >= info.vocab_size) {
            return Err(BackendError::TokenOutOfRange {
                id,
                vocab_size: info.vocab_size,
            });
        }
        for &position in &self.masked_positions {
            let token = *self
                .token_ids
                .get(position)
                .ok_or(BackendError::PositionOutOfRange { position, len })?;
            if token != info.mask_token_id {
                return Err(BackendError::PositionNotMasked { position, token });
            }
        }
        Ok(())
    }

    pub fn mask_count(&self, mask_id: u32) -> usize {
        self.token_ids.iter().filter(|&&t| t == mask_id).count()
    }
}

pub trait MaskedLm: Send + Sync {
    fn info(&self) -> &BackendInfo;

    /// One distribution per entry of `query.masked_positions`, in order.
    fn predict(&self, query: &MaskedQuery) -> Result<Vec<VocabDistribution>>;

    /// Order-preserving batch. Must agree with [`MaskedLm::predict`] within
    /// 1e-5 per probability.
    fn batch_predict(&self, queries: &[MaskedQuery]) -> Result<Vec<Vec<VocabDistribution>>> {
        queries
            .iter()
            .enumerate()
            .map(|(index, q)| {
                self.predict(q).map_err(|e| BackendError::Batch {
                    index,
                    source: Box::new(e),
                })
            })
            .collect()
    }
}

impl<T: MaskedLm + ?Sized> MaskedLm for std::sync::Arc<T> {
    fn info(&self) -> &BackendInfo {
        (**self).info()
    }

    fn predict(&self, query: &MaskedQuery) -> Result<Vec<VocabDistribution>> {
        (**self).predict(query)
    }

    fn batch_predict(&self, queries: &[MaskedQuery]) -> Result<Vec<Vec<VocabDistribution>>> {
        (**self).batch_predict(queries)
    }
}

#[derive(Debug, Clone)]
pub enum Fallback {
    Uniform,
    Unigram(VocabDistribution),
}

/// Explicit lookup table keyed by the exact masked token sequence.
#[derive(Debug, Clone)]
pub struct TableBackend {
    info: BackendInfo,
    entries: HashMap<(Vec<u32>, usize), VocabDistribution>,
    fallback: VocabDistribution,
}

impl TableBackend {
    pub fn new(info: BackendInfo, fallback: Fallback) -> Result<Self> {
        let fallback = match fallback {
            Fallback::Uniform => VocabDistribution::uniform(info.vocab_size)?,
            Fallback::Unigram(d) => {
                check_size(&d, info.vocab_size)?;
                d
            }
        };
        Ok(Self {
            info,
            entries: HashMap::new(),
            fallback,
        })
    }

    pub fn insert(&mut self, context: Vec<u32>, position: usize, dist: VocabDistribution) -> Result<()> {
        check_size(&dist, self.info.vocab_size)?;
        self.entries.insert((context, position), dist);
        Ok(())
    }
}

fn check_size(d: &VocabDistribution, vocab_size: usize) -> Result<()> {
    if d.vocab_size() != vocab_size {
        return Err(BackendError::InvalidMock(format!(
            "distribution has {} entries, vocabulary has {vocab_size}",
            d.vocab_size()
        )));
    }
    Ok(())
}

impl MaskedLm for TableBackend {
    fn info(&self) -> &BackendInfo {
        &self.info
    }

    fn predict(&self, query: &MaskedQuery) -> Result<Vec<VocabDistribution>> {
        query.validate(&self.info)?;
        Ok(query
            .masked_positions
            .iter()
            .map(|&p| {
                self.entries
                    .get(&(query.token_ids.clone(), p))
                    .unwrap_or(&self.fallback)
                    .clone()
            })
            .collect())
    }
}

/// Conditional distribution on the immediately preceding token.
///
/// When the preceding token is a mask, or there is no preceding token, or
/// the table has no row for it, the prediction is uniform.
#[derive(Debug, Clone)]
pub struct BigramBackend {
    info: BackendInfo,
    rows: HashMap<u32, VocabDistribution>,
    uniform: VocabDistribution,
}

impl BigramBackend {
    pub fn new(info: BackendInfo, rows: HashMap<u32, VocabDistribution>) -> Result<Self> {
        for d in rows.values() {
            check_size(d, info.vocab_size)?;
        }
        let uniform = VocabDistribution::uniform(info.vocab_size)?;
        Ok(Self { info, rows, uniform })
    }

    /// Builds a bigram model over a word vocabulary from sparse rows
    /// `previous word → {next word: probability}`. Rows must sum to 1.
    pub fn from_word_table(
        vocab: &WordVocab,
        table: &BTreeMap<String, BTreeMap<String, f64>>,
        model_id: &str,
    ) -> Result<Self> {
        let info = BackendInfo {
            vocab_size: vocab.vocab_size(),
            mask_token_id: WordVocab::MASK,
            max_sequence_length: 512,
            model_id: model_id.to_string(),
        };
        let mut rows = HashMap::new();
        for (prev, row) in table {
            let prev_id = word_id(vocab, prev)?;
            let dist = sparse_to_dense(vocab, row).map_err(|e| {
                BackendError::InvalidMock(format!("bigram row for {prev:?}: {e}"))
            })?;
            rows.insert(prev_id, dist);
        }
        Self::new(info, rows)
    }

    /// Exactly what this model predicts at `position` of `token_ids`.
    pub fn distribution_at(&self, token_ids: &[u32], position: usize) -> &VocabDistribution {
        if position == 0 {
            return &self.uniform;
        }
        let prev = token_ids[position - 1];
        if prev == self.info.mask_token_id {
            return &self.uniform;
        }
        self.rows.get(&prev).unwrap_or(&self.uniform)
    }
}

impl MaskedLm for BigramBackend {
    fn info(&self) -> &BackendInfo {
        &self.info
    }

    fn predict(&self, query: &MaskedQuery) -> Result<Vec<VocabDistribution>> {
        query.validate(&self.info)?;
        Ok(query
            .masked_positions
            .iter()
            .map(|&p| self.distribution_at(&query.token_ids, p).clone())
            .collect())
    }
}

fn word_id(vocab: &WordVocab, word: &str) -> Result<u32> {
    vocab
        .token_to_id(word)
        .ok_or_else(|| BackendError::InvalidMock(format!("word {word:?} is not in the vocabulary")))
}

fn sparse_to_dense(vocab: &WordVocab, row: &BTreeMap<String, f64>) -> Result<VocabDistribution> {
    let mut probs = vec![0.0; vocab.vocab_size()];
    for (w, &p) in row {
        probs[word_id(vocab, w)? as usize] += p;
    }
    Ok(VocabDistribution::new(probs)?)
}

/// Wraps a backend and counts the position predictions it serves, keyed by
/// how many mask tokens the query sequence held.
pub struct CountingBackend<B> {
    inner: B,
    forward_passes: AtomicUsize,
    by_mask_count: Mutex<BTreeMap<usize, usize>>,
}

impl<B: MaskedLm> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            forward_passes: AtomicUsize::new(0),
            by_mask_count: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn forward_passes(&self) -> usize {
        self.forward_passes.load(Ordering::SeqCst)
    }

    /// Position predictions served, keyed by number of mask tokens in the query.
    pub fn position_queries(&self) -> BTreeMap<usize, usize> {
        self.by_mask_count.lock().expect("counter poisoned").clone()
    }

    pub fn reset(&self) {
        self.forward_passes.store(0, Ordering::SeqCst);
        self.by_mask_count.lock().expect("counter poisoned").clear();
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    fn record(&self, q: &MaskedQuery) {
        self.forward_passes.fetch_add(1, Ordering::SeqCst);
        let masks = q.mask_count(self.inner.info().mask_token_id);
        *self
            .by_mask_count
            .lock()
            .expect("counter poisoned")
            .entry(masks)
            .or_default() += q.masked_positions.len();
    }
}

impl<B: MaskedLm> MaskedLm for CountingBackend<B> {
    fn info(&self) -> &BackendInfo {
        self.inner.info()
    }

    fn predict(&self, query: &MaskedQuery) -> Result<Vec<VocabDistribution>> {
        self.record(query);
        self.inner.predict(query)
    }

    fn batch_predict(&self, queries: &[MaskedQuery]) -> Result<Vec<Vec<VocabDistribution>>> {
        for q in queries {
            self.record(q);
        }
        self.inner.batch_predict(queries)
    }
}

/// JSON description of a mock model.
///
/// ```json
/// {
///   "model_id": "mock-bigram",
///   "vocab": ["the", "beans", "water", "spill"],
///   "kind": "bigram",
///   "bigram": { "the": { "beans": 0.9, "water": 0.1 } }
/// }
/// ```
///
/// or, for a lookup table,
///
/// ```json
/// {
///   "vocab": ["A", "B", "C"],
///   "kind": "table",
///   "entries": [
///     { "context": ["<s>", "A", "<mask>", "C", "</s>"], "position": 2, "probs": { "B": 1.0 } }
///   ],
///   "fallback": { "unigram": { "A": 0.5, "B": 0.25, "C": 0.25 } }
/// }
/// ```
///
/// `fallback` is `"uniform"` (the default) or `{"unigram": {...}}`. Positions
/// and contexts index the full token sequence, sentinels included.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockFixture {
    #[serde(default = "default_mock_id")]
    pub model_id: String,
    pub vocab: Vec<String>,
    #[serde(default = "default_max_len")]
    pub max_sequence_length: usize,
    #[serde(flatten)]
    pub model: MockModel,
}

fn default_mock_id() -> String {
    "mock".to_string()
}

fn default_max_len() -> usize {
    512
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MockModel {
    Bigram {
        bigram: BTreeMap<String, BTreeMap<String, f64>>,
    },
    Table {
        #[serde(default)]
        entries: Vec<MockEntry>,
        #[serde(default)]
        fallback: MockFallback,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockEntry {
    pub context: Vec<String>,
    pub position: usize,
    pub probs: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MockFallback {
    #[default]
    Uniform,
    Unigram(BTreeMap<String, f64>),
}

impl MockFixture {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| {
            BackendError::InvalidMock(format!("cannot read {}: {e}", path.display()))
        })?;
        serde_json::from_str(&raw)
            .map_err(|e| BackendError::InvalidMock(format!("{}: {e}", path.display())))
    }

    pub fn vocab(&self) -> WordVocab {
        WordVocab::new(self.vocab.iter().cloned())
    }

    /// Builds the tokenizer and backend described by the fixture.
    pub fn build(&self) -> Result<(WordVocab, Box<dyn MaskedLm>)> {
        let vocab = self.vocab();
        let info = BackendInfo {
            vocab_size: vocab.vocab_size(),
            mask_token_id: WordVocab::MASK,
            max_sequence_length: self.max_sequence_length,
            model_id: self.model_id.clone(),
        };
        let backend: Box<dyn MaskedLm> = match &self.model {
            MockModel::Bigram { bigram } => {
                let mut b = BigramBackend::from_word_table(&vocab, bigram, &self.model_id)?;
                b.info.max_sequence_length = self.max_sequence_length;
                Box::new(b)
            }
            MockModel::Table { entries, fallback } => {
                let fallback = match fallback {
                    MockFallback::Uniform => Fallback::Uniform,
                    MockFallback::Unigram(row) => Fallback::Unigram(
                        sparse_to_dense(&vocab, row)
                            .map_err(|e| BackendError::InvalidMock(format!("unigram fallback: {e}")))?,
                    ),
                };
                let mut t = TableBackend::new(info, fallback)?;
                for e in entries {
                    let context = e
                        .context
                        .iter()
                        .map(|w| word_id(&vocab, w))
                        .collect::<Result<Vec<_>>>()?;
                    let dist = sparse_to_dense(&vocab, &e.probs)?;
                    t.insert(context, e.position, dist)?;
                }
                Box::new(t)
            }
        };
        Ok((vocab, backend))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenization::align;

    fn bigram() -> (WordVocab, BigramBackend) {
        let vocab = WordVocab::new(["the", "beans", "water", "spill"]);
        let mut table = BTreeMap::new();
        table.insert(
            "the".to_string(),
            BTreeMap::from([("beans".to_string(), 0.9), ("water".to_string(), 0.1)]),
        );
        let b = BigramBackend::from_word_table(&vocab, &table, "bigram").unwrap();
        (vocab, b)
    }

    #[test]
    fn table_lookup_is_exact() {
        let vocab = WordVocab::new(["A", "B", "C"]);
        let info = BackendInfo {
            vocab_size: vocab.vocab_size(),
            mask_token_id: WordVocab::MASK,
            max_sequence_length: 16,
            model_id: "t".into(),
        };
        let mut t = TableBackend::new(info, Fallback::Uniform).unwrap();
        let a = vocab.token_to_id("A").unwrap();
        let c = vocab.token_to_id("C").unwrap();
        let mut probs = vec![0.0; vocab.vocab_size()];
        probs[vocab.token_to_id("B").unwrap() as usize] = 0.7;
        probs[a as usize] = 0.3;
        let stored = VocabDistribution::new(probs).unwrap();
        t.insert(vec![a, WordVocab::MASK, c], 1, stored.clone()).unwrap();

        let out = t
            .predict(&MaskedQuery::new(vec![a, WordVocab::MASK, c], vec![1]))
            .unwrap();
        assert_eq!(out, vec![stored]);

        let empty = t.predict(&MaskedQuery::new(vec![a, c], vec![])).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn query_validation() {
        let (_, b) = bigram();
        let err = b.predict(&MaskedQuery::new(vec![0, 5, 2], vec![1])).unwrap_err();
        assert!(matches!(err, BackendError::PositionNotMasked { position: 1, .. }));
        let err = b.predict(&MaskedQuery::new(vec![0, 4], vec![2])).unwrap_err();
        assert!(matches!(err, BackendError::PositionOutOfRange { .. }));
        let err = b.predict(&MaskedQuery::new(vec![4; 600], vec![0])).unwrap_err();
        assert!(matches!(err, BackendError::SequenceTooLong { len: 600, max: 512 }));
    }

    #[test]
    fn bigram_rows_and_fallback() {
        let (vocab, b) = bigram();
        let ts = align("spill the beans", &vocab).unwrap();
        let m = ts.mask_variant(&[2].into(), WordVocab::MASK).unwrap();
        let out = b.predict(&MaskedQuery::new(m.token_ids, vec![3])).unwrap();
        let beans = vocab.token_to_id("beans").unwrap() as usize;
        assert_eq!(out[0].probs()[beans], 0.9);

        let m = ts.mask_variant(&[1, 2].into(), WordVocab::MASK).unwrap();
        let out = b.predict(&MaskedQuery::new(m.token_ids, vec![3])).unwrap();
        assert_eq!(out[0], VocabDistribution::uniform(vocab.vocab_size()).unwrap());

        let total: f64 = out[0].probs().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bigram_rejects_unnormalized_rows() {
        let vocab = WordVocab::new(["a", "b"]);
        let table = BTreeMap::from([(
            "a".to_string(),
            BTreeMap::from([("b".to_string(), 0.5)]),
        )]);
        assert!(matches!(
            BigramBackend::from_word_table(&vocab, &table, "x"),
            Err(BackendError::InvalidMock(_))
        ));
    }

    #[test]
    fn batch_preserves_order_and_reports_index() {
        let (vocab, b) = bigram();
        let ts = align("spill the beans", &vocab).unwrap();
        let q1 = MaskedQuery::new(ts.mask_variant(&[2].into(), 4).unwrap().token_ids, vec![3]);
        let q2 = MaskedQuery::new(ts.mask_variant(&[1].into(), 4).unwrap().token_ids, vec![2]);
        let fwd = b.batch_predict(&[q1.clone(), q2.clone()]).unwrap();
        let rev = b.batch_predict(&[q2.clone(), q1.clone()]).unwrap();
        assert_eq!(fwd[0], rev[1]);
        assert_eq!(fwd[1], rev[0]);
        assert_eq!(fwd[0], b.predict(&q1).unwrap());

        let bad = MaskedQuery::new(vec![0, 1], vec![1]);
        match b.batch_predict(&[q1, bad]) {
            Err(BackendError::Batch { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn counting_backend_counts_positions() {
        let (vocab, b) = bigram();
        let counted = CountingBackend::new(b);
        let ts = align("spill the beans", &vocab).unwrap();
        let q = MaskedQuery::new(ts.mask_variant(&[0, 2].into(), 4).unwrap().token_ids, vec![1, 3]);
        counted.batch_predict(&[q.clone(), q]).unwrap();
        assert_eq!(counted.forward_passes(), 2);
        assert_eq!(counted.position_queries(), BTreeMap::from([(2, 4)]));
    }

    #[test]
    fn fixture_roundtrip() {
        let json = r#"{
            "model_id": "fx",
            "vocab": ["A", "B", "C"],
            "kind": "table",
            "entries": [{"context": ["<s>", "A", "<mask>", "C", "</s>"], "position": 2, "probs": {"B": 1.0}}],
            "fallback": {"unigram": {"A": 0.5, "B": 0.25, "C": 0.25}}
        }"#;
        let fx: MockFixture = serde_json::from_str(json).unwrap();
        let (vocab, backend) = fx.build().unwrap();
        assert_eq!(backend.info().model_id, "fx");
        let ts = align("A B C", &vocab).unwrap();
        let m = ts.mask_variant(&[1].into(), WordVocab::MASK).unwrap();
        let out = backend.predict(&MaskedQuery::new(m.token_ids, vec![2])).unwrap();
        let b = vocab.token_to_id("B").unwrap() as usize;
        assert_eq!(out[0].probs()[b], 1.0);

        let m = ts.mask_variant(&[0].into(), WordVocab::MASK).unwrap();
        let out = backend.predict(&MaskedQuery::new(m.token_ids, vec![1])).unwrap();
        assert_eq!(out[0].probs()[b], 0.25);
    }
}
