// SPDX-License-Identifier: MIT OR Apache-2.0

//! Numeric kernel for vocabulary-sized distributions.
//!
//! All math is done in `f64`, even when a backend emits `f32` logits: the
//! divergence between two nearly identical distributions is dominated by
//! cancellation, and single precision loses most of the signal.
//!
//! Divergences are reported in bits, so Jensen–Shannon divergence lies in
//! `[0, 1]`. The convention `0 · log(0 / x) = 0` is used throughout.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on the total mass of a [`VocabDistribution`].
pub const SUM_TOLERANCE: f64 = 1e-6;

/// Slack used when comparing cumulative mass against a nucleus threshold.
///
/// `0.9 + 0.08` is not exactly `0.98` in binary floating point; without slack
/// the nucleus of such a distribution would pick up one extra entry.
pub const NUCLEUS_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbError {
    #[error("empty input")]
    Empty,

    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("negative probability {value} at index {index}")]
    Negative { index: usize, value: f64 },

    #[error("probabilities sum to {sum}, expected 1")]
    NotNormalized { sum: f64 },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("undefined KL: p[{index}] = {p} > 0 where q[{index}] = 0")]
    UndefinedKl { index: usize, p: f64 },

    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: usize, vocab_size: usize },

    #[error("nucleus threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
}

pub type Result<T> = std::result::Result<T, ProbError>;

/// A normalized probability vector over the model vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct VocabDistribution {
    probs: Vec<f64>,
}

impl VocabDistribution {
    /// Validates and wraps an explicit probability vector.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(ProbError::Empty);
        }
        for (index, &value) in probs.iter().enumerate() {
            if !value.is_finite() {
                return Err(ProbError::NonFinite { index, value });
            }
            if value < 0.0 {
                return Err(ProbError::Negative { index, value });
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(ProbError::NotNormalized { sum });
        }
        Ok(Self { probs })
    }

    pub fn uniform(vocab_size: usize) -> Result<Self> {
        if vocab_size == 0 {
            return Err(ProbError::Empty);
        }
        Ok(Self {
            probs: vec![1.0 / vocab_size as f64; vocab_size],
        })
    }

    pub fn point_mass(vocab_size: usize, id: usize) -> Result<Self> {
        if id >= vocab_size {
            return Err(ProbError::TokenOutOfRange { id, vocab_size });
        }
        let mut probs = vec![0.0; vocab_size];
        probs[id] = 1.0;
        Ok(Self { probs })
    }

    pub fn vocab_size(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.probs
    }

    /// Token ids ordered by probability descending, ties by ascending id.
    pub fn ranked_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = (0..self.probs.len()).collect();
        ids.sort_by(|&a, &b| {
            self.probs[b]
                .partial_cmp(&self.probs[a])
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        });
        ids
    }

    /// The `k` most probable tokens, using the same ordering as [`Self::ranked_ids`].
    pub fn top_k(&self, k: usize) -> Vec<(usize, f64)> {
        self.ranked_ids()
            .into_iter()
            .take(k)
            .map(|id| (id, self.probs[id]))
            .collect()
    }
}

impl TryFrom<Vec<f64>> for VocabDistribution {
    type Error = ProbError;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<VocabDistribution> for Vec<f64> {
    fn from(value: VocabDistribution) -> Self {
        value.probs
    }
}

/// Softmax with max-subtraction.
pub fn normalize<T: Copy + Into<f64>>(logits: &[T]) -> Result<VocabDistribution> {
    if logits.is_empty() {
        return Err(ProbError::Empty);
    }
    let mut max = f64::NEG_INFINITY;
    for (index, &l) in logits.iter().enumerate() {
        let value: f64 = l.into();
        if !value.is_finite() {
            return Err(ProbError::NonFinite { index, value });
        }
        max = max.max(value);
    }
    let mut probs: Vec<f64> = logits.iter().map(|&l| (l.into() - max).exp()).collect();
    // the max entry contributes exp(0) = 1, so the sum is at least 1
    let sum: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= sum;
    }
    Ok(VocabDistribution { probs })
}

fn check_dims(p: &VocabDistribution, q: &VocabDistribution) -> Result<()> {
    if p.vocab_size() != q.vocab_size() {
        return Err(ProbError::DimensionMismatch {
            left: p.vocab_size(),
            right: q.vocab_size(),
        });
    }
    Ok(())
}

/// `KL(p ‖ q)` in bits.
pub fn kl_divergence(p: &VocabDistribution, q: &VocabDistribution) -> Result<f64> {
    check_dims(p, q)?;
    let mut total = 0.0;
    for (index, (&pi, &qi)) in p.probs.iter().zip(&q.probs).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(ProbError::UndefinedKl { index, p: pi });
        }
        total += pi * (pi / qi).log2();
    }
    Ok(total.max(0.0))
}

/// Jensen–Shannon divergence in bits, in `[0, 1]`.
///
/// Evaluated term by term against the mixture `m = (p + q) / 2`, which is
/// strictly positive wherever either input is, so no term can divide by zero.
pub fn jsd(p: &VocabDistribution, q: &VocabDistribution) -> Result<f64> {
    check_dims(p, q)?;
    let mut total = 0.0;
    for (&pi, &qi) in p.probs.iter().zip(&q.probs) {
        let m = 0.5 * (pi + qi);
        if pi > 0.0 {
            total += pi * (pi / m).log2();
        }
        if qi > 0.0 {
            total += qi * (qi / m).log2();
        }
    }
    Ok((0.5 * total).clamp(0.0, 1.0))
}

/// The smallest set of most probable tokens whose mass reaches a threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NucleusSet {
    /// `(token_id, probability)`, descending by probability, ties by ascending id.
    pub entries: Vec<(usize, f64)>,
    pub mass: f64,
}

impl NucleusSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn token_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|&(id, _)| id)
    }
}

/// Smallest prefix of the ranked distribution with cumulative mass ≥ `threshold`.
///
/// The rule is inclusive: an entry that brings the mass exactly to the
/// threshold (within [`NUCLEUS_EPS`]) ends the set.
pub fn nucleus(p: &VocabDistribution, threshold: f64) -> Result<NucleusSet> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(ProbError::InvalidThreshold(threshold));
    }
    let mut entries = Vec::new();
    let mut mass = 0.0;
    for id in p.ranked_ids() {
        let prob = p.probs[id];
        entries.push((id, prob));
        mass += prob;
        if mass >= threshold - NUCLEUS_EPS {
            break;
        }
    }
    Ok(NucleusSet { entries, mass })
}

pub fn prob_of(p: &VocabDistribution, token_id: usize) -> Result<f64> {
    p.probs
        .get(token_id)
        .copied()
        .ok_or(ProbError::TokenOutOfRange {
            id: token_id,
            vocab_size: p.vocab_size(),
        })
}
