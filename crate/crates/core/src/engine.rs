// SPDX-License-Identifier: MIT OR Apache-2.0

//! Global and local affinity via masking interventions.
//!
//! * Global affinity of word `i`: the probability the model gives the
//!   original token at `i` when only `i` is masked.
//! * Local affinity `a[i][j]`: the JSD between the distribution at target
//!   `j` with only `j` masked and with both `i` and `j` masked. Rows are the
//!   masked context word, columns the target.
//!
//! The matrix routine issues one query per target column and one query per
//! unordered pair `{i, j}`; a pair query yields the marginals at both
//! positions, so the same forward pass serves `a[i][j]` and `a[j][i]`.
//! Column distributions are computed once and shared by every row.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, MaskedLm, MaskedQuery};
use crate::prob::{self, ProbError, VocabDistribution};
use crate::tokenization::{TokenizeError, TokenizedSentence};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("context and target are the same word ({0})")]
    SameWord(usize),

    #[error("target word {index} ({word:?}) is not single-token")]
    TargetNotSingleToken { index: usize, word: String },

    #[error("word index {index} out of range for sentence of {len} words")]
    WordOutOfRange { index: usize, len: usize },

    #[error(transparent)]
    Backend(#[from] BackendError),

    #[error(transparent)]
    Tokenize(#[from] TokenizeError),

    #[error(transparent)]
    Prob(#[from] ProbError),
}

pub type Result<T> = std::result::Result<T, EngineError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineOptions {
    /// Queries per `batch_predict` call.
    pub batch_size: usize,
    /// Run batches on the rayon pool.
    pub parallel: bool,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self {
            batch_size: 32,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalAffinityProfile {
    pub sentence: TokenizedSentence,
    /// `None` for multi-token words and for words masked as extra context.
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinityMatrix {
    pub sentence: TokenizedSentence,
    /// `values[i][j]`: effect of masking context `i` on target `j`.
    pub values: Vec<Vec<f64>>,
    /// False for columns whose target is multi-token (entries left at 0).
    pub computed_columns: Vec<bool>,
}

impl AffinityMatrix {
    pub fn get(&self, context: usize, target: usize) -> f64 {
        self.values[context][target]
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Sends queries in batches and returns results in query order.
pub fn run_queries(
    backend: &dyn MaskedLm,
    queries: &[MaskedQuery],
    opts: &EngineOptions,
) -> Result<Vec<Vec<VocabDistribution>>> {
    let size = opts.batch_size.max(1);
    let chunks: Vec<(usize, &[MaskedQuery])> = queries
        .chunks(size)
        .enumerate()
        .map(|(k, c)| (k * size, c))
        .collect();
    let run = |&(offset, chunk): &(usize, &[MaskedQuery])| {
        backend.batch_predict(chunk).map_err(|e| match e {
            BackendError::Batch { index, source } => BackendError::Batch {
                index: offset + index,
                source,
            },
            other => other,
        })
    };
    let results: std::result::Result<Vec<_>, BackendError> = if opts.parallel && chunks.len() > 1 {
        chunks.par_iter().map(run).collect()
    } else {
        chunks.iter().map(run).collect()
    };
    Ok(results?.into_iter().flatten().collect())
}

fn check_index(ts: &TokenizedSentence, index: usize) -> Result<()> {
    if index >= ts.len() {
        return Err(EngineError::WordOutOfRange {
            index,
            len: ts.len(),
        });
    }
    Ok(())
}

fn build_query(
    ts: &TokenizedSentence,
    mask: &BTreeSet<usize>,
    targets: &[usize],
    mask_id: u32,
) -> Result<MaskedQuery> {
    let seq = ts.mask_variant(mask, mask_id)?;
    let positions = targets
        .iter()
        .map(|&t| ts.word_to_tokens[t].start)
        .collect();
    Ok(MaskedQuery::new(seq.token_ids, positions))
}

/// Distribution at single-token word `target` with every word in `mask`
/// masked (`target` is added to the mask if absent).
pub fn masked_distribution(
    ts: &TokenizedSentence,
    mask: &BTreeSet<usize>,
    target: usize,
    backend: &dyn MaskedLm,
) -> Result<VocabDistribution> {
    check_index(ts, target)?;
    require_single(ts, target)?;
    let mut mask = mask.clone();
    mask.insert(target);
    for &m in &mask {
        check_index(ts, m)?;
    }
    let q = build_query(ts, &mask, &[target], backend.info().mask_token_id)?;
    let mut out = backend.predict(&q)?;
    Ok(out.remove(0))
}

fn require_single(ts: &TokenizedSentence, j: usize) -> Result<()> {
    if !ts.single_token[j] {
        return Err(EngineError::TargetNotSingleToken {
            index: j,
            word: ts.words[j].text.clone(),
        });
    }
    Ok(())
}

pub fn global_affinity(ts: &TokenizedSentence, backend: &dyn MaskedLm) -> Result<GlobalAffinityProfile> {
    global_affinity_with(ts, backend, &BTreeSet::new(), &EngineOptions::default())
}

/// Global affinity of every single-token word not in `extra_masks`, with the
/// words of `extra_masks` masked as additional context.
pub fn global_affinity_with(
    ts: &TokenizedSentence,
    backend: &dyn MaskedLm,
    extra_masks: &BTreeSet<usize>,
    opts: &EngineOptions,
) -> Result<GlobalAffinityProfile> {
    for &m in extra_masks {
        check_index(ts, m)?;
    }
    let targets: Vec<usize> = (0..ts.len())
        .filter(|&j| ts.single_token[j] && !extra_masks.contains(&j))
        .collect();
    if targets.is_empty() {
        log::warn!("no single-token words to score in {:?}", ts.text);
    }
    let columns = column_distributions(ts, backend, extra_masks, &targets, opts)?;
    let mut values = vec![None; ts.len()];
    for (j, dist) in targets.iter().zip(&columns) {
        let id = ts.single_token_id(*j).expect("target is single-token");
        values[*j] = Some(prob::prob_of(dist, id as usize)?);
    }
    Ok(GlobalAffinityProfile {
        sentence: ts.clone(),
        values,
    })
}

/// Global affinity of the listed words only; `None` for multi-token words.
pub fn global_affinity_at(
    ts: &TokenizedSentence,
    words: &[usize],
    backend: &dyn MaskedLm,
    opts: &EngineOptions,
) -> Result<Vec<Option<f64>>> {
    for &w in words {
        check_index(ts, w)?;
    }
    let targets: Vec<usize> = words.iter().copied().filter(|&w| ts.single_token[w]).collect();
    let columns = column_distributions(ts, backend, &BTreeSet::new(), &targets, opts)?;
    let by_word: HashMap<usize, &VocabDistribution> = targets.iter().copied().zip(&columns).collect();
    words
        .iter()
        .map(|w| match by_word.get(w) {
            Some(d) => Ok(Some(prob::prob_of(d, ts.single_token_id(*w).expect("single-token") as usize)?)),
            None => Ok(None),
        })
        .collect()
}

fn column_distributions(
    ts: &TokenizedSentence,
    backend: &dyn MaskedLm,
    base: &BTreeSet<usize>,
    targets: &[usize],
    opts: &EngineOptions,
) -> Result<Vec<VocabDistribution>> {
    let mask_id = backend.info().mask_token_id;
    let queries = targets
        .iter()
        .map(|&j| {
            let mut mask = base.clone();
            mask.insert(j);
            build_query(ts, &mask, &[j], mask_id)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(run_queries(backend, &queries, opts)?
        .into_iter()
        .map(|mut v| v.remove(0))
        .collect())
}

/// `a[i][j] = JSD(P_j | s∖{j}, P_j | s∖{i,j})`.
pub fn local_affinity(ts: &TokenizedSentence, i: usize, j: usize, backend: &dyn MaskedLm) -> Result<f64> {
    check_index(ts, i)?;
    check_index(ts, j)?;
    if i == j {
        return Err(EngineError::SameWord(i));
    }
    require_single(ts, j)?;
    let alone = masked_distribution(ts, &BTreeSet::new(), j, backend)?;
    let with_context = masked_distribution(ts, &BTreeSet::from([i]), j, backend)?;
    Ok(prob::jsd(&alone, &with_context)?)
}

/// Affinities restricted to a subset of word positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubMatrix {
    pub words: Vec<usize>,
    /// `values[a][b]` is the affinity of context `words[a]` on target `words[b]`.
    pub values: Vec<Vec<f64>>,
    /// Global affinity of each listed word, `None` when it is not a target.
    pub globals: Vec<Option<f64>>,
    pub computed: Vec<bool>,
}

/// Local affinities among `words` (distinct, in range), with the words of
/// `base` masked throughout. Words in `base` are never targets and their
/// rows are zero.
pub fn affinity_submatrix(
    ts: &TokenizedSentence,
    words: &[usize],
    base: &BTreeSet<usize>,
    backend: &dyn MaskedLm,
    opts: &EngineOptions,
) -> Result<SubMatrix> {
    for &w in words.iter().chain(base) {
        check_index(ts, w)?;
    }
    let k = words.len();
    let is_target: Vec<bool> = words
        .iter()
        .map(|&w| ts.single_token[w] && !base.contains(&w))
        .collect();
    let targets: Vec<usize> = words
        .iter()
        .zip(&is_target)
        .filter(|(_, &t)| t)
        .map(|(&w, _)| w)
        .collect();
    let columns = column_distributions(ts, backend, base, &targets, opts)?;
    let column_of: HashMap<usize, &VocabDistribution> = targets.iter().copied().zip(&columns).collect();

    let mask_id = backend.info().mask_token_id;
    let mut pairs: Vec<(usize, usize, Vec<usize>)> = Vec::new();
    let mut queries = Vec::new();
    for a in 0..k {
        for b in (a + 1)..k {
            let (wa, wb) = (words[a], words[b]);
            if base.contains(&wa) || base.contains(&wb) {
                continue;
            }
            let requested: Vec<usize> = [(a, wa), (b, wb)]
                .into_iter()
                .filter(|&(idx, _)| is_target[idx])
                .map(|(idx, _)| idx)
                .collect();
            if requested.is_empty() {
                continue;
            }
            let mut mask = base.clone();
            mask.insert(wa);
            mask.insert(wb);
            let target_words: Vec<usize> = requested.iter().map(|&idx| words[idx]).collect();
            queries.push(build_query(ts, &mask, &target_words, mask_id)?);
            pairs.push((a, b, requested));
        }
    }
    let results = run_queries(backend, &queries, opts)?;

    let mut values = vec![vec![0.0; k]; k];
    for ((a, b, requested), dists) in pairs.into_iter().zip(results) {
        for (idx, dist) in requested.into_iter().zip(dists) {
            let (context, target) = if idx == b { (a, b) } else { (b, a) };
            values[context][target] = prob::jsd(column_of[&words[target]], &dist)?;
        }
    }

    let mut globals = vec![None; k];
    for (idx, &w) in words.iter().enumerate() {
        if let Some(dist) = column_of.get(&w) {
            let id = ts.single_token_id(w).expect("target is single-token");
            globals[idx] = Some(prob::prob_of(dist, id as usize)?);
        }
    }
    Ok(SubMatrix {
        words: words.to_vec(),
        values,
        globals,
        computed: is_target,
    })
}

pub fn affinity_matrix(ts: &TokenizedSentence, backend: &dyn MaskedLm) -> Result<AffinityMatrix> {
    affinity_matrix_with(ts, backend, &BTreeSet::new(), &EngineOptions::default())
}

pub fn affinity_matrix_with(
    ts: &TokenizedSentence,
    backend: &dyn MaskedLm,
    base: &BTreeSet<usize>,
    opts: &EngineOptions,
) -> Result<AffinityMatrix> {
    let words: Vec<usize> = (0..ts.len()).collect();
    let sub = affinity_submatrix(ts, &words, base, backend, opts)?;
    Ok(AffinityMatrix {
        sentence: ts.clone(),
        values: sub.values,
        computed_columns: sub.computed,
    })
}

/// Serialized engine output shared by the CLI, the service and reports.
///
/// ```json
/// {
///   "model_id": "roberta-large",
///   "words": ["day", "by", "day"],
///   "global": [0.91, 0.42, 0.97],
///   "matrix": [[0.0, 0.1, 0.6], [0.0, 0.0, 0.2], [0.5, 0.1, 0.0]],
///   "flags": {
///     "single_token": [true, true, true],
///     "computed_columns": [true, true, true],
///     "masked": []
///   }
/// }
/// ```
///
/// `global[j]` is `null` for multi-token and extra-masked words; `matrix` is
/// `null` when not requested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinityReport {
    pub model_id: String,
    pub words: Vec<String>,
    pub global: Vec<Option<f64>>,
    pub matrix: Option<Vec<Vec<f64>>>,
    pub flags: ReportFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFlags {
    pub single_token: Vec<bool>,
    pub computed_columns: Option<Vec<bool>>,
    pub masked: Vec<usize>,
}

pub fn analyze(
    ts: &TokenizedSentence,
    backend: &dyn MaskedLm,
    compute_matrix: bool,
    extra_masks: &BTreeSet<usize>,
    opts: &EngineOptions,
) -> Result<AffinityReport> {
    let (global, matrix, computed) = if compute_matrix {
        let words: Vec<usize> = (0..ts.len()).collect();
        let sub = affinity_submatrix(ts, &words, extra_masks, backend, opts)?;
        (sub.globals, Some(sub.values), Some(sub.computed))
    } else {
        let profile = global_affinity_with(ts, backend, extra_masks, opts)?;
        (profile.values, None, None)
    };
    Ok(AffinityReport {
        model_id: backend.info().model_id.clone(),
        words: ts.word_texts(),
        global,
        matrix,
        flags: ReportFlags {
            single_token: ts.single_token.clone(),
            computed_columns: computed,
            masked: extra_masks.iter().copied().collect(),
        },
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::backend::{BigramBackend, CountingBackend, Fallback, TableBackend, BackendInfo};
    use crate::tokenization::{align, TokenizerHandle, WordVocab};

    fn bigram() -> (WordVocab, BigramBackend) {
        let vocab = WordVocab::new(["the", "beans", "water", "spill"]);
        let table = BTreeMap::from([(
            "the".to_string(),
            BTreeMap::from([("beans".to_string(), 0.9), ("water".to_string(), 0.1)]),
        )]);
        let b = BigramBackend::from_word_table(&vocab, &table, "bigram").unwrap();
        (vocab, b)
    }

    #[test]
    fn global_affinity_under_bigram() {
        let (vocab, b) = bigram();
        let ts = align("the beans", &vocab).unwrap();
        let g = global_affinity(&ts, &b).unwrap();
        assert_eq!(g.values[1], Some(0.9));
        // "the" follows <s>, which has no row: uniform over the vocabulary
        assert_eq!(g.values[0], Some(1.0 / vocab.vocab_size() as f64));
    }

    #[test]
    fn one_word_sentence() {
        let (vocab, b) = bigram();
        let ts = align("beans", &vocab).unwrap();
        let g = global_affinity(&ts, &b).unwrap();
        assert!(g.values[0].is_some());
        let m = affinity_matrix(&ts, &b).unwrap();
        assert_eq!(m.values, vec![vec![0.0]]);
    }

    #[test]
    fn multi_token_words_are_absent() {
        let (vocab, b) = bigram();
        let ts = align("spill the sauce", &vocab).unwrap();
        let g = global_affinity(&ts, &b).unwrap();
        assert!(g.values[2].is_none());
        let m = affinity_matrix(&ts, &b).unwrap();
        assert_eq!(m.computed_columns, vec![true, true, false]);
        assert!(m.values.iter().all(|row| row[2] == 0.0));
    }

    #[test]
    fn local_affinity_errors() {
        let (vocab, b) = bigram();
        let ts = align("spill the sauce", &vocab).unwrap();
        assert!(matches!(local_affinity(&ts, 1, 1, &b), Err(EngineError::SameWord(1))));
        assert!(matches!(
            local_affinity(&ts, 0, 2, &b),
            Err(EngineError::TargetNotSingleToken { index: 2, .. })
        ));
        assert!(matches!(
            local_affinity(&ts, 0, 7, &b),
            Err(EngineError::WordOutOfRange { .. })
        ));
    }

    #[test]
    fn bigram_locality() {
        let (vocab, b) = bigram();
        let ts = align("spill the beans", &vocab).unwrap();
        assert_eq!(local_affinity(&ts, 0, 2, &b).unwrap(), 0.0);
        let adjacent = local_affinity(&ts, 1, 2, &b).unwrap();
        let uniform = VocabDistribution::uniform(vocab.vocab_size()).unwrap();
        let mut row = vec![0.0; vocab.vocab_size()];
        row[vocab.token_to_id("beans").unwrap() as usize] = 0.9;
        row[vocab.token_to_id("water").unwrap() as usize] = 0.1;
        let expected = prob::jsd(&VocabDistribution::new(row).unwrap(), &uniform).unwrap();
        assert_eq!(adjacent, expected);
    }

    #[test]
    fn context_independent_mock_gives_zero_matrix() {
        let vocab = WordVocab::new(["a", "b", "c"]);
        let mut unigram = vec![0.0; vocab.vocab_size()];
        unigram[5] = 0.5;
        unigram[6] = 0.3;
        unigram[7] = 0.2;
        let info = BackendInfo {
            vocab_size: vocab.vocab_size(),
            mask_token_id: WordVocab::MASK,
            max_sequence_length: 64,
            model_id: "unigram".into(),
        };
        let t = TableBackend::new(info, Fallback::Unigram(VocabDistribution::new(unigram).unwrap())).unwrap();
        let ts = align("a b c a", &vocab).unwrap();
        let m = affinity_matrix(&ts, &t).unwrap();
        assert!(m.values.iter().flatten().all(|&v| v == 0.0));
        let g = global_affinity(&ts, &t).unwrap();
        assert_eq!(g.values, vec![Some(0.5), Some(0.3), Some(0.2), Some(0.5)]);
    }

    #[test]
    fn matrix_cost_accounting() {
        let (vocab, b) = bigram();
        let counted = CountingBackend::new(b);
        let ts = align("spill the beans the water", &vocab).unwrap();
        let n = ts.len();
        affinity_matrix(&ts, &counted).unwrap();
        assert_eq!(
            counted.position_queries(),
            BTreeMap::from([(1, n), (2, n * (n - 1))])
        );
        assert_eq!(counted.forward_passes(), n + n * (n - 1) / 2);
    }

    #[test]
    fn extra_masks_remove_targets() {
        let (vocab, b) = bigram();
        let ts = align("spill the beans", &vocab).unwrap();
        let g = global_affinity_with(&ts, &b, &BTreeSet::from([1]), &EngineOptions::default()).unwrap();
        assert_eq!(g.values[1], None);
        // "beans" now follows a mask: uniform
        assert_eq!(g.values[2], Some(1.0 / vocab.vocab_size() as f64));
    }

    #[test]
    fn report_schema() {
        let (vocab, b) = bigram();
        let ts = align("spill the beans", &vocab).unwrap();
        let r = analyze(&ts, &b, true, &BTreeSet::new(), &EngineOptions::default()).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["words"], serde_json::json!(["spill", "the", "beans"]));
        assert_eq!(v["global"][2], serde_json::json!(0.9));
        assert_eq!(v["matrix"].as_array().unwrap().len(), 3);
        assert_eq!(v["flags"]["single_token"], serde_json::json!([true, true, true]));
        assert_eq!(v["model_id"], "bigram");

        let r = analyze(&ts, &b, false, &BTreeSet::new(), &EngineOptions::default()).unwrap();
        assert!(r.matrix.is_none());
        assert!(r.flags.computed_columns.is_none());
    }
}
