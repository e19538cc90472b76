// SPDX-License-Identifier: MIT OR Apache-2.0

//! Masked-language-model affinity measures for construction analysis.

pub mod backend;
pub mod datasets;
pub mod engine;
pub mod experiments;
pub mod prob;
pub mod report;
pub mod stats;
pub mod tokenization;

pub use backend::{BackendError, BackendInfo, MaskedLm, MaskedQuery};
pub use engine::{
    affinity_matrix, global_affinity, local_affinity, AffinityMatrix, AffinityReport, EngineError,
    EngineOptions, GlobalAffinityProfile,
};
pub use prob::{jsd, kl_divergence, normalize, nucleus, ProbError, VocabDistribution};
pub use tokenization::{align, HfTokenizer, TokenizedSentence, TokenizerHandle, WordVocab};
