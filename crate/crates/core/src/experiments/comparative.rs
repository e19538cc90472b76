// SPDX-License-Identifier: MIT OR Apache-2.0

//! Comparative adjective/adverb detection and the nucleus comparative score.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::MaskedLm;
use crate::engine::{self, EngineError};
use crate::prob;
use crate::tokenization::{TokenizedSentence, TokenizerHandle};

pub trait ComparativeDetector: Send + Sync {
    fn is_comparative(&self, word: &str) -> bool;
}

const IRREGULAR: &[&str] = &[
    "more", "less", "fewer", "better", "worse", "further", "farther", "later", "earlier", "lesser", "elder", "older",
    "rather", "sooner", "latter", "former", "inner", "outer", "upper", "lower",
];

const BUNDLED_BASES: &str = include_str!("../../data/comparative_bases.txt");

/// Irregular comparatives plus regular "-er" forms whose base is listed in a
/// lexicon of gradable adjectives and adverbs.
#[derive(Debug, Clone)]
pub struct RuleDetector {
    irregular: HashSet<String>,
    bases: HashSet<String>,
}

impl Default for RuleDetector {
    fn default() -> Self {
        Self::from_lexicon(BUNDLED_BASES)
    }
}

impl RuleDetector {
    /// Lexicon text: one base form per line, `#` comments.
    pub fn from_lexicon(text: &str) -> Self {
        Self {
            irregular: IRREGULAR.iter().map(|s| s.to_string()).collect(),
            bases: text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_lowercase)
                .collect(),
        }
    }

    pub fn from_path(path: impl AsRef<Path>) -> std::io::Result<Self> {
        Ok(Self::from_lexicon(&std::fs::read_to_string(path)?))
    }

    fn regular_bases(word: &str) -> Vec<String> {
        let Some(stem) = word.strip_suffix("er") else { return Vec::new() };
        let mut out = vec![stem.to_string(), format!("{stem}e")];
        if let Some(y) = stem.strip_suffix('i') {
            out.push(format!("{y}y"));
        }
        let cs: Vec<char> = stem.chars().collect();
        if cs.len() >= 2 && cs[cs.len() - 1] == cs[cs.len() - 2] {
            out.push(cs[..cs.len() - 1].iter().collect());
        }
        out
    }
}

impl ComparativeDetector for RuleDetector {
    fn is_comparative(&self, word: &str) -> bool {
        let w = word.trim().to_lowercase();
        if w.is_empty() || !w.chars().all(|c| c.is_alphabetic()) {
            return false;
        }
        if self.irregular.contains(&w) {
            return true;
        }
        w.chars().count() > 3 && Self::regular_bases(&w).iter().any(|b| self.bases.contains(b))
    }
}

pub fn is_comparative(word: &str, detector: &dyn ComparativeDetector) -> bool {
    detector.is_comparative(word)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NucleusFill {
    pub token_id: usize,
    pub text: String,
    pub prob: f64,
    pub comparative: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparativeScore {
    /// Fraction of distinct nucleus entries that are comparatives.
    pub set_score: f64,
    /// Nucleus probability mass on comparatives over total nucleus mass.
    pub mass_score: f64,
    pub nucleus_size: usize,
    pub fills: Vec<NucleusFill>,
}

/// Text of one token as a standalone word, or `None` for word-internal
/// pieces (no leading space marker in the decoded text).
fn fill_text(tokenizer: &dyn TokenizerHandle, id: u32) -> Option<String> {
    let raw = tokenizer.id_to_token(id)?;
    let decoded = tokenizer.decode(&[id]).unwrap_or_else(|_| raw.clone());
    Some(decoded.trim().to_string())
}

/// Masks `position`, takes the nucleus at `mass` and scores how much of it
/// consists of comparatives.
pub fn comparative_score(
    ts: &TokenizedSentence,
    position: usize,
    backend: &dyn MaskedLm,
    tokenizer: &dyn TokenizerHandle,
    mass: f64,
    detector: &dyn ComparativeDetector,
) -> Result<ComparativeScore, EngineError> {
    let dist = engine::masked_distribution(ts, &BTreeSet::new(), position, backend)?;
    let nucleus = prob::nucleus(&dist, mass)?;
    let mut fills = Vec::with_capacity(nucleus.len());
    let (mut hits, mut hit_mass) = (0usize, 0.0);
    for &(id, p) in &nucleus.entries {
        let text = fill_text(tokenizer, id as u32);
        let comparative = match &text {
            Some(t) if !t.is_empty() => detector.is_comparative(t),
            _ => {
                log::warn!("token {id} has no word form; counted as non-comparative");
                false
            }
        };
        if comparative {
            hits += 1;
            hit_mass += p;
        }
        fills.push(NucleusFill {
            token_id: id,
            text: text.unwrap_or_default(),
            prob: p,
            comparative,
        });
    }
    Ok(ComparativeScore {
        set_score: hits as f64 / nucleus.len() as f64,
        mass_score: hit_mass / nucleus.mass,
        nucleus_size: nucleus.len(),
        fills,
    })
}
