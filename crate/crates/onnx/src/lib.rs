// SPDX-License-Identifier: MIT OR Apache-2.0

//! Masked language model backend running an exported ONNX graph with tract.
//!
//! The graph takes `input_ids` and `attention_mask` (int64, `[batch, seq]`)
//! and returns `logits` (`[batch, seq, vocab]`). Queries in a batch are
//! right-padded with the pad token and a zero attention mask.
//!
//! tract needs concrete input shapes to optimise the graph, so one plan is
//! compiled per `(batch, width)` and cached; widths are rounded up to a
//! multiple of [`WIDTH_BUCKET`] to keep the number of plans small.
//!
//! A model directory holds `model.onnx` (or `onnx/model.onnx`),
//! `tokenizer.json` and optionally `config.json`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use cxaffinity::backend::{BackendError, BackendInfo, MaskedLm, MaskedQuery};
use cxaffinity::prob::{self, VocabDistribution};
use cxaffinity::tokenization::{HfTokenizer, TokenizeError, TokenizerHandle};
use serde::Deserialize;
use thiserror::Error;
use tract_onnx::prelude::*;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{0}: not found")]
    Missing(PathBuf),

    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("cannot load ONNX model {path}: {message}")]
    Model { path: PathBuf, message: String },

    #[error(transparent)]
    Tokenizer(#[from] TokenizeError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OnnxOptions {
    pub model_id: String,
    pub max_sequence_length: usize,
}

impl Default for OnnxOptions {
    fn default() -> Self {
        Self {
            model_id: "onnx".to_string(),
            max_sequence_length: 512,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
struct HfConfig {
    #[serde(rename = "_name_or_path")]
    name_or_path: Option<String>,
    model_type: Option<String>,
    max_position_embeddings: Option<usize>,
    pad_token_id: Option<usize>,
}

type Plan = TypedRunnableModel<TypedModel>;

pub const WIDTH_BUCKET: usize = 8;

pub struct OnnxBackend {
    info: BackendInfo,
    pad_id: u32,
    proto: InferenceModel,
    plans: Mutex<HashMap<(usize, usize), Arc<Plan>>>,
}

fn first_existing(candidates: &[PathBuf]) -> Option<PathBuf> {
    candidates.iter().find(|p| p.is_file()).cloned()
}

impl OnnxBackend {
    /// Loads the model and tokenizer from a model directory.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<(Self, HfTokenizer), LoadError> {
        let dir = dir.as_ref();
        let model = first_existing(&[dir.join("model.onnx"), dir.join("onnx/model.onnx")])
            .ok_or_else(|| LoadError::Missing(dir.join("model.onnx")))?;
        let tok_path = dir.join("tokenizer.json");
        if !tok_path.is_file() {
            return Err(LoadError::Missing(tok_path));
        }
        let tokenizer = HfTokenizer::from_file(&tok_path)?;

        let cfg_path = dir.join("config.json");
        let cfg: HfConfig = if cfg_path.is_file() {
            let text = std::fs::read_to_string(&cfg_path).map_err(|e| LoadError::Config {
                path: cfg_path.clone(),
                message: e.to_string(),
            })?;
            serde_json::from_str(&text).map_err(|e| LoadError::Config {
                path: cfg_path.clone(),
                message: e.to_string(),
            })?
        } else {
            HfConfig::default()
        };
        let mut opts = OnnxOptions {
            model_id: cfg
                .name_or_path
                .clone()
                .filter(|s| !s.is_empty())
                .or_else(|| dir.file_name().map(|s| s.to_string_lossy().into_owned()))
                .unwrap_or_else(|| "onnx".into()),
            ..Default::default()
        };
        if let Some(max_pos) = cfg.max_position_embeddings {
            // RoBERTa position ids start after the padding index.
            let offset = match cfg.model_type.as_deref() {
                Some("roberta") | Some("xlm-roberta") | Some("camembert") => cfg.pad_token_id.unwrap_or(1) + 1,
                _ => 0,
            };
            opts.max_sequence_length = max_pos.saturating_sub(offset).max(1);
        }
        let backend = Self::from_file(&model, &tokenizer, opts)?;
        Ok((backend, tokenizer))
    }

    pub fn from_file(model: &Path, tokenizer: &dyn TokenizerHandle, opts: OnnxOptions) -> Result<Self, LoadError> {
        let proto = tract_onnx::onnx().model_for_path(model).map_err(|e| LoadError::Model {
            path: model.to_path_buf(),
            message: format!("{e:#}"),
        })?;
        let backend = Self {
            info: BackendInfo {
                vocab_size: tokenizer.vocab_size(),
                mask_token_id: tokenizer.mask_token_id(),
                max_sequence_length: opts.max_sequence_length,
                model_id: opts.model_id,
            },
            pad_id: tokenizer.pad_token_id(),
            proto,
            plans: Mutex::new(HashMap::new()),
        };
        // Compile one shape now so a graph tract cannot run fails at load.
        backend
            .plan(1, WIDTH_BUCKET.min(backend.info.max_sequence_length))
            .map_err(|e| LoadError::Model {
                path: model.to_path_buf(),
                message: e.to_string(),
            })?;
        log::info!("loaded {} ({})", model.display(), backend.info.model_id);
        Ok(backend)
    }

    fn plan(&self, rows: usize, width: usize) -> Result<Arc<Plan>, BackendError> {
        if let Some(p) = self.plans.lock().unwrap().get(&(rows, width)) {
            return Ok(p.clone());
        }
        let fact = || InferenceFact::dt_shape(i64::datum_type(), tvec!(rows, width));
        let plan = self
            .proto
            .clone()
            .with_input_fact(0, fact())
            .and_then(|m| m.with_input_fact(1, fact()))
            .and_then(|m| m.into_optimized())
            .and_then(|m| m.into_runnable())
            .map_err(|e| BackendError::Runtime(format!("compiling for shape [{rows}, {width}]: {e:#}")))?;
        log::debug!("compiled plan for shape [{rows}, {width}]");
        let plan = Arc::new(plan);
        self.plans.lock().unwrap().insert((rows, width), plan.clone());
        Ok(plan)
    }

    fn run(&self, queries: &[&MaskedQuery]) -> Result<Vec<Vec<VocabDistribution>>, BackendError> {
        let rows = queries.len();
        let longest = queries.iter().map(|q| q.token_ids.len()).max().unwrap_or(0);
        let width = longest
            .div_ceil(WIDTH_BUCKET)
            .saturating_mul(WIDTH_BUCKET)
            .min(self.info.max_sequence_length)
            .max(longest);
        let mut ids = vec![self.pad_id as i64; rows * width];
        let mut mask = vec![0i64; rows * width];
        for (r, q) in queries.iter().enumerate() {
            for (c, &t) in q.token_ids.iter().enumerate() {
                ids[r * width + c] = t as i64;
                mask[r * width + c] = 1;
            }
        }
        let rt = |e: &dyn std::fmt::Display| BackendError::Runtime(e.to_string());
        let ids = tract_ndarray::Array2::from_shape_vec((rows, width), ids).map_err(|e| rt(&e))?;
        let mask = tract_ndarray::Array2::from_shape_vec((rows, width), mask).map_err(|e| rt(&e))?;
        let out = self
            .plan(rows, width)?
            .run(tvec!(Tensor::from(ids).into(), Tensor::from(mask).into()))
            .map_err(|e| BackendError::Runtime(format!("{e:#}")))?;
        let logits = out[0].to_array_view::<f32>().map_err(|e| BackendError::Runtime(format!("{e:#}")))?;
        let shape = logits.shape().to_vec();
        if shape.len() != 3 || shape[0] != rows || shape[1] != width {
            return Err(BackendError::Runtime(format!("unexpected logits shape {shape:?}")));
        }
        if shape[2] != self.info.vocab_size {
            return Err(BackendError::Runtime(format!(
                "model vocabulary {} differs from tokenizer vocabulary {}",
                shape[2], self.info.vocab_size
            )));
        }
        queries
            .iter()
            .enumerate()
            .map(|(r, q)| {
                q.masked_positions
                    .iter()
                    .map(|&p| {
                        let row: Vec<f64> = (0..shape[2]).map(|v| logits[[r, p, v]] as f64).collect();
                        prob::normalize(&row).map_err(BackendError::from)
                    })
                    .collect()
            })
            .collect()
    }
}

impl MaskedLm for OnnxBackend {
    fn info(&self) -> &BackendInfo {
        &self.info
    }

    fn predict(&self, query: &MaskedQuery) -> Result<Vec<VocabDistribution>, BackendError> {
        query.validate(&self.info)?;
        Ok(self.run(&[query])?.remove(0))
    }

    fn batch_predict(&self, queries: &[MaskedQuery]) -> Result<Vec<Vec<VocabDistribution>>, BackendError> {
        for (index, q) in queries.iter().enumerate() {
            q.validate(&self.info).map_err(|e| BackendError::Batch {
                index,
                source: Box::new(e),
            })?;
        }
        if queries.is_empty() {
            return Ok(Vec::new());
        }
        let refs: Vec<&MaskedQuery> = queries.iter().collect();
        self.run(&refs)
    }
}
