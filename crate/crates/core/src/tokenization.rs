// SPDX-License-Identifier: MIT OR Apache-2.0

//! Word segmentation and word ↔ sub-token alignment.
//!
//! Words are the unit of intervention. A sentence is first split into words
//! by [`segment_words`]; the model tokenizer then encodes the whole text and
//! each token is assigned to the word whose character span contains it.
//!
//! Segmentation rules:
//!
//! 1. Split on Unicode whitespace.
//! 2. In each chunk, a leading run of punctuation and a trailing run of
//!    punctuation each become their own word. Punctuation is any character
//!    that is neither alphanumeric nor whitespace.
//! 3. Punctuation inside a chunk stays with it (`It's`, `well-known`).
//! 4. A chunk made only of punctuation is one word.
//!
//! Byte-level BPE pre-tokenizers never merge letters with a following
//! punctuation run, so these boundaries are also token boundaries for
//! RoBERTa-style vocabularies.

use std::collections::{BTreeSet, HashMap};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TokenizeError {
    #[error("text contains no words")]
    EmptyText,

    #[error("failed to load tokenizer from {path}: {message}")]
    Load { path: String, message: String },

    #[error("tokenizer has no mask token (tried {0})")]
    NoMaskToken(String),

    #[error("tokenizer failure: {0}")]
    Encode(String),

    #[error("cannot align token {token:?} at chars {start}..{end} to word {word:?}")]
    Alignment {
        word: String,
        token: String,
        start: usize,
        end: usize,
    },

    #[error("word {word:?} (index {index}) received no tokens")]
    UncoveredWord { word: String, index: usize },

    #[error("word index {index} out of range for sentence of {len} words")]
    WordOutOfRange { index: usize, len: usize },
}

pub type Result<T> = std::result::Result<T, TokenizeError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordSpan {
    pub text: String,
    /// Character (not byte) offsets into the source text, end exclusive.
    pub char_start: usize,
    pub char_end: usize,
    pub word_index: usize,
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

pub fn segment_words(text: &str) -> Vec<WordSpan> {
    let chars: Vec<char> = text.chars().collect();
    let mut words = Vec::new();
    let push = |start: usize, end: usize, words: &mut Vec<WordSpan>| {
        if start < end {
            words.push(WordSpan {
                text: chars[start..end].iter().collect(),
                char_start: start,
                char_end: end,
                word_index: words.len(),
            });
        }
    };

    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        let end = i;

        let mut core_start = start;
        while core_start < end && is_punct(chars[core_start]) {
            core_start += 1;
        }
        if core_start == end {
            push(start, end, &mut words);
            continue;
        }
        let mut core_end = end;
        while core_end > core_start && is_punct(chars[core_end - 1]) {
            core_end -= 1;
        }
        push(start, core_start, &mut words);
        push(core_start, core_end, &mut words);
        push(core_end, end, &mut words);
    }
    words
}

/// Output of a tokenizer over a whole text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoding {
    pub ids: Vec<u32>,
    /// Character offsets of each token; sentinels carry `(0, 0)`.
    pub offsets: Vec<(usize, usize)>,
    /// True for begin/end sentinels and other special tokens.
    pub special: Vec<bool>,
}

/// Read-only tokenizer interface shared by the engine and the backends.
pub trait TokenizerHandle: Send + Sync {
    fn encode(&self, text: &str) -> Result<Encoding>;
    fn vocab_size(&self) -> usize;
    fn mask_token_id(&self) -> u32;
    fn pad_token_id(&self) -> u32;
    fn token_to_id(&self, token: &str) -> Option<u32>;
    fn id_to_token(&self, id: u32) -> Option<String>;
    /// Surface string for a sequence of ids, with any word-boundary marker
    /// turned back into whitespace.
    fn decode(&self, ids: &[u32]) -> Result<String>;

    /// Surface form of a single token with surrounding whitespace removed.
    fn token_word(&self, id: u32) -> String {
        self.decode(&[id])
            .map(|s| s.trim().to_string())
            .unwrap_or_default()
    }
}

/// A Hugging Face `tokenizer.json` (BPE, WordPiece, ...).
pub struct HfTokenizer {
    inner: tokenizers::Tokenizer,
    mask_id: u32,
    pad_id: u32,
}

const MASK_CANDIDATES: [&str; 2] = ["<mask>", "[MASK]"];
const PAD_CANDIDATES: [&str; 2] = ["<pad>", "[PAD]"];

impl HfTokenizer {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let inner = tokenizers::Tokenizer::from_file(path).map_err(|e| TokenizeError::Load {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_tokenizer(inner)
    }

    pub fn from_tokenizer(inner: tokenizers::Tokenizer) -> Result<Self> {
        let mask_id = MASK_CANDIDATES
            .iter()
            .find_map(|t| inner.token_to_id(t))
            .ok_or_else(|| TokenizeError::NoMaskToken(MASK_CANDIDATES.join(", ")))?;
        let pad_id = PAD_CANDIDATES
            .iter()
            .find_map(|t| inner.token_to_id(t))
            .unwrap_or(mask_id);
        Ok(Self {
            inner,
            mask_id,
            pad_id,
        })
    }
}

impl TokenizerHandle for HfTokenizer {
    fn encode(&self, text: &str) -> Result<Encoding> {
        let enc = self
            .inner
            .encode_char_offsets(text, true)
            .map_err(|e| TokenizeError::Encode(e.to_string()))?;
        Ok(Encoding {
            ids: enc.get_ids().to_vec(),
            offsets: enc.get_offsets().to_vec(),
            special: enc.get_special_tokens_mask().iter().map(|&m| m == 1).collect(),
        })
    }

    fn vocab_size(&self) -> usize {
        self.inner.get_vocab_size(true)
    }

    fn mask_token_id(&self) -> u32 {
        self.mask_id
    }

    fn pad_token_id(&self) -> u32 {
        self.pad_id
    }

    fn token_to_id(&self, token: &str) -> Option<u32> {
        self.inner.token_to_id(token)
    }

    fn id_to_token(&self, id: u32) -> Option<String> {
        self.inner.id_to_token(id)
    }

    fn decode(&self, ids: &[u32]) -> Result<String> {
        self.inner
            .decode(ids, false)
            .map_err(|e| TokenizeError::Encode(e.to_string()))
    }
}

/// Word-level vocabulary used by the mock backends.
///
/// Ids 0–4 are `<s>`, `<pad>`, `</s>`, `<unk>`, `<mask>`. A word found in
/// the vocabulary is one token; any other word is spelled out one character
/// per token (unknown characters map to `<unk>`), which makes it multi-token
/// whenever it has more than one character.
#[derive(Debug, Clone)]
pub struct WordVocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl WordVocab {
    pub const BOS: u32 = 0;
    pub const PAD: u32 = 1;
    pub const EOS: u32 = 2;
    pub const UNK: u32 = 3;
    pub const MASK: u32 = 4;
    pub const SPECIALS: [&'static str; 5] = ["<s>", "<pad>", "</s>", "<unk>", "<mask>"];

    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = Self::SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, u32> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        for w in words {
            let w = w.into();
            if !index.contains_key(&w) {
                index.insert(w.clone(), tokens.len() as u32);
                tokens.push(w);
            }
        }
        Self { tokens, index }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl TokenizerHandle for WordVocab {
    fn encode(&self, text: &str) -> Result<Encoding> {
        let mut ids = vec![Self::BOS];
        let mut offsets = vec![(0, 0)];
        let mut special = vec![true];
        for w in segment_words(text) {
            if let Some(&id) = self.index.get(&w.text) {
                ids.push(id);
                offsets.push((w.char_start, w.char_end));
                special.push(false);
            } else {
                for (k, c) in w.text.chars().enumerate() {
                    let id = self.index.get(&c.to_string()).copied().unwrap_or(Self::UNK);
                    ids.push(id);
                    offsets.push((w.char_start + k, w.char_start + k + 1));
                    special.push(false);
                }
            }
        }
        ids.push(Self::EOS);
        offsets.push((0, 0));
        special.push(true);
        Ok(Encoding {
            ids,
            offsets,
            special,
        })
    }

    fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    fn mask_token_id(&self) -> u32 {
        Self::MASK
    }

    fn pad_token_id(&self) -> u32 {
        Self::PAD
    }

    fn token_to_id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    fn id_to_token(&self, id: u32) -> Option<String> {
        self.tokens.get(id as usize).cloned()
    }

    fn decode(&self, ids: &[u32]) -> Result<String> {
        let parts: Vec<&str> = ids
            .iter()
            .map(|&id| self.tokens.get(id as usize).map(String::as_str).unwrap_or("<unk>"))
            .collect();
        Ok(parts.join(" "))
    }
}

/// A sentence with its words and their token ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizedSentence {
    pub text: String,
    pub words: Vec<WordSpan>,
    /// Full model input including sentinels.
    pub token_ids: Vec<u32>,
    pub word_to_tokens: Vec<Range<usize>>,
    pub single_token: Vec<bool>,
}

/// A token sequence with some words replaced by mask tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedSequence {
    pub token_ids: Vec<u32>,
    /// `(word_index, token positions)` for every masked word, ascending by word.
    pub masked: Vec<(usize, Vec<usize>)>,
}

impl MaskedSequence {
    pub fn positions_of(&self, word: usize) -> Option<&[usize]> {
        self.masked
            .iter()
            .find(|(w, _)| *w == word)
            .map(|(_, p)| p.as_slice())
    }
}

impl TokenizedSentence {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn word_texts(&self) -> Vec<String> {
        self.words.iter().map(|w| w.text.clone()).collect()
    }

    /// Token id of a single-token word.
    pub fn single_token_id(&self, word: usize) -> Option<u32> {
        if *self.single_token.get(word)? {
            Some(self.token_ids[self.word_to_tokens[word].start])
        } else {
            None
        }
    }

    /// Index of the word whose span is exactly `char_start..char_end`.
    pub fn word_at_chars(&self, char_start: usize, char_end: usize) -> Option<usize> {
        self.words
            .iter()
            .position(|w| w.char_start == char_start && w.char_end == char_end)
    }

    fn check_word(&self, index: usize) -> Result<()> {
        if index >= self.words.len() {
            return Err(TokenizeError::WordOutOfRange {
                index,
                len: self.words.len(),
            });
        }
        Ok(())
    }

    /// Replaces every token of each listed word by `mask_id`, one mask per
    /// original token.
    pub fn mask_variant(&self, mask_words: &BTreeSet<usize>, mask_id: u32) -> Result<MaskedSequence> {
        let mut token_ids = self.token_ids.clone();
        let mut masked = Vec::with_capacity(mask_words.len());
        for &w in mask_words {
            self.check_word(w)?;
            let range = self.word_to_tokens[w].clone();
            for p in range.clone() {
                token_ids[p] = mask_id;
            }
            masked.push((w, range.collect()));
        }
        Ok(MaskedSequence { token_ids, masked })
    }
}

/// Encodes `text` and maps each word to the contiguous run of tokens inside
/// its character span.
///
/// Zero-width tokens (a bare space marker produced by repeated whitespace)
/// are attached to the following word.
pub fn align(text: &str, tokenizer: &dyn TokenizerHandle) -> Result<TokenizedSentence> {
    let words = segment_words(text);
    if words.is_empty() {
        return Err(TokenizeError::EmptyText);
    }
    let enc = tokenizer.encode(text)?;

    let mut ranges: Vec<Option<Range<usize>>> = vec![None; words.len()];
    let mut pending: Vec<usize> = Vec::new();
    let mut cursor = 0usize;

    let token_name = |pos: usize| {
        tokenizer
            .id_to_token(enc.ids[pos])
            .unwrap_or_else(|| enc.ids[pos].to_string())
    };

    for pos in 0..enc.ids.len() {
        if enc.special[pos] {
            continue;
        }
        let (start, end) = enc.offsets[pos];
        if start == end {
            pending.push(pos);
            continue;
        }
        while cursor < words.len() && words[cursor].char_end <= start {
            cursor += 1;
        }
        let word = words.get(cursor).ok_or_else(|| TokenizeError::Alignment {
            word: words.last().map(|w| w.text.clone()).unwrap_or_default(),
            token: token_name(pos),
            start,
            end,
        })?;
        if start < word.char_start || end > word.char_end {
            return Err(TokenizeError::Alignment {
                word: word.text.clone(),
                token: token_name(pos),
                start,
                end,
            });
        }
        let first = pending.first().copied().unwrap_or(pos);
        pending.clear();
        let r = ranges[cursor].get_or_insert(first..first);
        r.end = pos + 1;
    }

    let mut word_to_tokens = Vec::with_capacity(words.len());
    for (index, r) in ranges.into_iter().enumerate() {
        match r {
            Some(r) => word_to_tokens.push(r),
            None => {
                return Err(TokenizeError::UncoveredWord {
                    word: words[index].text.clone(),
                    index,
                })
            }
        }
    }
    let single_token = word_to_tokens.iter().map(|r| r.len() == 1).collect();
    Ok(TokenizedSentence {
        text: text.to_string(),
        words,
        token_ids: enc.ids,
        word_to_tokens,
        single_token,
    })
}
