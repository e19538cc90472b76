// SPDX-License-Identifier: MIT OR Apache-2.0

//! Experiment pipelines: load a corpus, score each example with the engine,
//! summarise.
//!
//! Every pipeline produces JSON records (one per example) and a summary that
//! is a pure function of those records and the configuration, so a summary
//! can always be recomputed from `records.jsonl`.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::MaskedLm;
use crate::datasets::{self, CorpusReport, DatasetError, LabeledExample, LabelOverlay, Rejection};
use crate::engine::{self, EngineError, EngineOptions};
use crate::prob;
use crate::stats::{self, SlotMatrix, StatsError};
use crate::tokenization::{align, TokenizedSentence, TokenizerHandle};

pub mod comparative;

pub use comparative::{comparative_score, is_comparative, ComparativeDetector, ComparativeScore, RuleDetector};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),

    #[error(transparent)]
    Stats(#[from] StatsError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid record: {0}")]
    Record(String),

    #[error("configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Cec,
    Multithat,
    Eapaap,
    Cogs,
    Magpie,
    Npn,
    Cc,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::Cec,
        ExperimentKind::Multithat,
        ExperimentKind::Eapaap,
        ExperimentKind::Cogs,
        ExperimentKind::Magpie,
        ExperimentKind::Npn,
        ExperimentKind::Cc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Cec => "cec",
            ExperimentKind::Multithat => "multithat",
            ExperimentKind::Eapaap => "eapaap",
            ExperimentKind::Cogs => "cogs",
            ExperimentKind::Magpie => "magpie",
            ExperimentKind::Npn => "npn",
            ExperimentKind::Cc => "cc",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown experiment {s:?}"))
    }
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Pipeline parameters. Relative paths are resolved by the caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Corpus file for the pipeline.
    pub data: PathBuf,
    /// Label-correction overlay for the so-that corpus. `None` uses the
    /// bundled corrections unless `identity_overlay` is set.
    pub overlay: Option<PathBuf>,
    pub identity_overlay: bool,
    pub threshold: f64,
    pub sweep: Vec<f64>,
    pub histogram_bin_width: f64,
    pub top_k: usize,
    pub nucleus_mass: f64,
    pub comparative_lexicon: Option<PathBuf>,
    pub top_fills: usize,
    pub acceptability_min: f64,
    pub confidence_min: f64,
    pub min_sentence_words: usize,
    pub min_word_chars: usize,
    pub min_idiom_examples: usize,
    pub workers: usize,
    pub batch_size: usize,
    /// Reuse records streamed by an interrupted run in the output directory.
    pub resume: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::new(),
            overlay: None,
            identity_overlay: false,
            threshold: 0.78,
            sweep: vec![0.6, 0.65, 0.7, 0.75, 0.78, 0.8, 0.85, 0.9],
            histogram_bin_width: 0.05,
            top_k: 5,
            nucleus_mass: 0.98,
            comparative_lexicon: None,
            top_fills: 10,
            acceptability_min: 4.0,
            confidence_min: 0.99,
            min_sentence_words: 10,
            min_word_chars: 4,
            min_idiom_examples: 5,
            workers: 4,
            batch_size: 32,
            resume: true,
        }
    }
}

impl ExperimentConfig {
    pub fn overlay(&self) -> Result<LabelOverlay> {
        Ok(match (&self.overlay, self.identity_overlay) {
            (_, true) => LabelOverlay::identity(),
            (Some(p), false) => LabelOverlay::from_path(p)?,
            (None, false) => LabelOverlay::default_corrections(),
        })
    }

    pub fn detector(&self) -> Result<RuleDetector> {
        match &self.comparative_lexicon {
            Some(p) => RuleDetector::from_path(p).map_err(io_err(p)),
            None => Ok(RuleDetector::default()),
        }
    }

    fn engine_options(&self) -> EngineOptions {
        EngineOptions {
            batch_size: self.batch_size.max(1),
            parallel: true,
        }
    }
}

/// Shared inputs for a run.
#[derive(Clone)]
pub struct Context {
    pub tokenizer: Arc<dyn TokenizerHandle>,
    pub backend: Arc<dyn MaskedLm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub name: String,
    pub per_example: Vec<Value>,
    pub summary: BTreeMap<String, Value>,
    pub corpus_report: CorpusReport,
    pub config_fingerprint: String,
}

/// SHA-256 over the pipeline name, configuration, model id and the bytes of
/// every input file.
pub fn config_fingerprint(kind: ExperimentKind, cfg: &ExperimentConfig, model_id: &str) -> Result<String> {
    let mut h = Sha256::new();
    h.update(kind.name().as_bytes());
    h.update([0]);
    h.update(serde_json::to_vec(cfg).expect("config serializes"));
    h.update([0]);
    h.update(model_id.as_bytes());
    let mut files = vec![&cfg.data];
    files.extend(cfg.overlay.iter());
    files.extend(cfg.comparative_lexicon.iter());
    for f in files {
        h.update([0]);
        h.update(fs::read(f).map_err(io_err(f))?);
    }
    Ok(hex::encode(h.finalize()))
}

/// Streams records to `records.jsonl.partial` as they complete.
struct RecordSink {
    path: PathBuf,
    file: Mutex<File>,
}

impl RecordSink {
    fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join("records.jsonl.partial");
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        Ok(Self {
            path,
            file: Mutex::new(file),
        })
    }

    fn write(&self, record: &Value) -> Result<()> {
        let mut f = self.file.lock().unwrap();
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(f, "{line}").and_then(|_| f.flush()).map_err(io_err(&self.path))
    }
}

/// Records from an interrupted run whose fingerprint matches.
fn resumable(dir: &Path, fingerprint: &str) -> Result<HashMap<String, Value>> {
    let marker = dir.join("fingerprint.partial");
    let partial = dir.join("records.jsonl.partial");
    let matches = fs::read_to_string(&marker).map(|s| s.trim() == fingerprint).unwrap_or(false);
    if !matches {
        let _ = fs::remove_file(&partial);
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        fs::write(&marker, fingerprint).map_err(io_err(&marker))?;
        return Ok(HashMap::new());
    }
    let mut out = HashMap::new();
    if let Ok(f) = File::open(&partial) {
        for line in BufReader::new(f).lines() {
            let line = line.map_err(io_err(&partial))?;
            // a torn final line from a crash is skipped and recomputed
            if let Ok(v) = serde_json::from_str::<Value>(&line) {
                if let Some(id) = v.get("id").and_then(Value::as_str) {
                    out.insert(id.to_string(), v);
                }
            }
        }
    }
    Ok(out)
}

/// Removes the streaming artefacts after a completed run.
pub fn clear_partial(dir: &Path) {
    let _ = fs::remove_file(dir.join("records.jsonl.partial"));
    let _ = fs::remove_file(dir.join("fingerprint.partial"));
}

/// Runs `f` over examples on at most `workers` threads, streaming each
/// record, and returns records in input order plus per-example failures.
fn run_examples<R, F>(
    examples: &[LabeledExample],
    workers: usize,
    stream: Option<(&Path, &str, bool)>,
    f: F,
) -> Result<(Vec<Value>, Vec<Rejection>)>
where
    R: Serialize,
    F: Fn(&LabeledExample) -> std::result::Result<R, String> + Sync,
{
    let (sink, done) = match stream {
        Some((dir, fp, resume)) => {
            let done = if resume { resumable(dir, fp)? } else {
                let _ = fs::remove_file(dir.join("records.jsonl.partial"));
                fs::create_dir_all(dir).map_err(io_err(dir))?;
                let marker = dir.join("fingerprint.partial");
                fs::write(&marker, fp).map_err(io_err(&marker))?;
                HashMap::new()
            };
            (Some(RecordSink::open(dir)?), done)
        }
        None => (None, HashMap::new()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| ExperimentError::Config(e.to_string()))?;
    let outcomes: Vec<std::result::Result<std::result::Result<Value, String>, ExperimentError>> = pool.install(|| {
        examples
            .par_iter()
            .map(|ex| {
                if let Some(v) = done.get(&ex.id) {
                    return Ok(Ok(v.clone()));
                }
                match f(ex) {
                    Ok(r) => {
                        let mut v = serde_json::to_value(&r).expect("record serializes");
                        if let Value::Object(m) = &mut v {
                            m.insert("id".into(), Value::from(ex.id.clone()));
                        }
                        if let Some(s) = &sink {
                            s.write(&v)?;
                        }
                        Ok(Ok(v))
                    }
                    Err(reason) => Ok(Err(reason)),
                }
            })
            .collect()
    });
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (ex, outcome) in examples.iter().zip(outcomes) {
        match outcome? {
            Ok(v) => records.push(v),
            Err(reason) => {
                log::warn!("example {} failed: {reason}", ex.id);
                failures.push(Rejection {
                    id: ex.id.clone(),
                    reason,
                });
            }
        }
    }
    Ok((records, failures))
}

fn fail_report(report: &mut CorpusReport, failures: Vec<Rejection>) {
    report.accepted -= failures.len().min(report.accepted);
    report.rejected.extend(failures);
}

fn engine_err(e: EngineError) -> String {
    format!("engine: {e}")
}

fn tokenize(ctx: &Context, text: &str) -> std::result::Result<TokenizedSentence, String> {
    align(text, ctx.tokenizer.as_ref()).map_err(|e| format!("tokenization: {e}"))
}

fn typed<R: DeserializeOwned>(records: &[Value]) -> Result<Vec<R>> {
    records
        .iter()
        .map(|v| serde_json::from_value(v.clone()).map_err(|e| ExperimentError::Record(e.to_string())))
        .collect()
}

type Summary = BTreeMap<String, Value>;

/// Loads, scores and summarises one experiment. When `out_dir` is given,
/// records are streamed there while the run progresses.
pub fn run_experiment(
    kind: ExperimentKind,
    cfg: &ExperimentConfig,
    ctx: &Context,
    out_dir: Option<&Path>,
) -> Result<ExperimentResult> {
    let fingerprint = config_fingerprint(kind, cfg, &ctx.backend.info().model_id)?;
    let stream = out_dir.map(|d| (d, fingerprint.as_str(), cfg.resume));
    let (examples, mut report) = load_examples(kind, cfg, ctx)?;
    for ex in &examples {
        ex.verify().map_err(ExperimentError::Record)?;
    }
    let opts = cfg.engine_options();
    let (records, failures) = match kind {
        ExperimentKind::Cec => run_examples(&examples, cfg.workers, stream, |ex| cec_record(ex, ctx)),
        ExperimentKind::Multithat => run_examples(&examples, cfg.workers, stream, |ex| multithat_record(ex, ctx, &opts)),
        ExperimentKind::Eapaap => run_examples(&examples, cfg.workers, stream, |ex| eapaap_record(ex, ctx, &opts)),
        ExperimentKind::Cogs => run_examples(&examples, cfg.workers, stream, |ex| cogs_record(ex, ctx, cfg)),
        ExperimentKind::Magpie => run_examples(&examples, cfg.workers, stream, |ex| magpie_record(ex, ctx, &opts)),
        ExperimentKind::Npn => run_examples(&examples, cfg.workers, stream, |ex| npn_record(ex, ctx, &opts)),
        ExperimentKind::Cc => {
            let detector = cfg.detector()?;
            run_examples(&examples, cfg.workers, stream, |ex| cc_record(ex, ctx, cfg, &detector))
        }
    }?;
    fail_report(&mut report, failures);
    let summary = summarize(kind, &records, cfg)?;
    Ok(ExperimentResult {
        name: kind.name().to_string(),
        per_example: records,
        summary,
        corpus_report: report,
        config_fingerprint: fingerprint,
    })
}

fn load_examples(
    kind: ExperimentKind,
    cfg: &ExperimentConfig,
    ctx: &Context,
) -> Result<(Vec<LabeledExample>, CorpusReport)> {
    Ok(match kind {
        ExperimentKind::Cec => datasets::load_cec(&cfg.data, &cfg.overlay()?, Some(ctx.tokenizer.as_ref()))?,
        ExperimentKind::Eapaap => {
            let (all, mut report) = datasets::load_cec(&cfg.data, &cfg.overlay()?, None)?;
            let mut kept = Vec::new();
            for ex in all {
                if ex.label == datasets::CEC {
                    report.accepted -= 1;
                    report.rejected.push(Rejection {
                        id: ex.id,
                        reason: "class: CEC not analysed".into(),
                    });
                    continue;
                }
                match eapaap_slots(&ex, ctx) {
                    Ok(_) => kept.push(ex),
                    Err(reason) => {
                        report.accepted -= 1;
                        report.rejected.push(Rejection { id: ex.id, reason });
                    }
                }
            }
            (kept, report)
        }
        ExperimentKind::Multithat => datasets::load_multithat(&cfg.data)?,
        ExperimentKind::Cogs | ExperimentKind::Cc => {
            let (groups, report) = datasets::load_cogs(&cfg.data)?;
            let mut all: Vec<LabeledExample> = groups.into_values().flatten().collect();
            if kind == ExperimentKind::Cc {
                let mut report = report;
                all.retain(|e| e.label == datasets::COMPARATIVE_CORRELATIVE);
                report.total = all.len();
                report.accepted = all.len();
                report.rejected.retain(|r| r.reason.contains("the\""));
                report.total += report.rejected.len();
                return Ok((sorted_by_id(all), report));
            }
            (sorted_by_id(all), report)
        }
        ExperimentKind::Magpie => datasets::load_magpie(&cfg.data, cfg.confidence_min)?,
        ExperimentKind::Npn => datasets::load_npn(&cfg.data)?,
    })
}

/// Groups loaded by construction come back in input order by id.
fn sorted_by_id(mut v: Vec<LabeledExample>) -> Vec<LabeledExample> {
    v.sort_by(|a, b| natural_key(&a.id).cmp(&natural_key(&b.id)));
    v
}

fn natural_key(id: &str) -> (String, u64, String) {
    let digits_at = id.find(|c: char| c.is_ascii_digit()).unwrap_or(id.len());
    let prefix = id[..digits_at].to_string();
    let rest = &id[digits_at..];
    let end = rest.find(|c: char| !c.is_ascii_digit()).unwrap_or(rest.len());
    (prefix, rest[..end].parse().unwrap_or(0), rest[end..].to_string())
}

/// Recomputes a summary from records.
pub fn summarize(kind: ExperimentKind, records: &[Value], cfg: &ExperimentConfig) -> Result<Summary> {
    match kind {
        ExperimentKind::Cec => summarize_cec(&typed(records)?, cfg),
        ExperimentKind::Multithat => Ok(summarize_multithat(&typed(records)?)),
        ExperimentKind::Eapaap => summarize_eapaap(&typed(records)?, cfg),
        ExperimentKind::Cogs => summarize_cogs(&typed(records)?),
        ExperimentKind::Magpie => summarize_magpie(&typed(records)?, cfg),
        ExperimentKind::Npn => summarize_npn(&typed(records)?, cfg),
        ExperimentKind::Cc => Ok(summarize_cc(&typed(records)?)),
    }
}

fn key(t: f64) -> String {
    format!("{t:.2}")
}

// ---------------------------------------------------------------------------
// so-that global affinity

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CecRecord {
    pub id: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original_label: Option<String>,
    pub text: String,
    pub so_index: usize,
    pub affinity: f64,
}

fn cec_record(ex: &LabeledExample, ctx: &Context) -> std::result::Result<CecRecord, String> {
    let so = ex.slot_word("so").ok_or("slot: no so")?;
    let ts = tokenize(ctx, &ex.text)?;
    let g = engine::global_affinity_at(&ts, &[so], ctx.backend.as_ref(), &EngineOptions::default())
        .map_err(engine_err)?;
    Ok(CecRecord {
        id: ex.id.clone(),
        label: ex.label.clone(),
        original_label: ex.meta.get("original_label").and_then(Value::as_str).map(str::to_string),
        text: ex.text.clone(),
        so_index: so,
        affinity: g[0].ok_or("multi-token: so")?,
    })
}

fn summarize_cec(records: &[CecRecord], cfg: &ExperimentConfig) -> Result<Summary> {
    let mut s = Summary::new();
    s.insert("n".into(), json!(records.len()));
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        *counts.entry(&r.label).or_default() += 1;
    }
    s.insert("label_counts".into(), json!(counts));
    s.insert("threshold".into(), json!(cfg.threshold));
    if records.is_empty() {
        return Ok(s);
    }
    let scores: Vec<f64> = records.iter().map(|r| r.affinity).collect();
    let labels: Vec<String> = records.iter().map(|r| r.label.clone()).collect();
    let t = stats::threshold_classify(&scores, &labels, cfg.threshold, datasets::CEC)?;
    s.insert("correct".into(), json!(t.correct));
    s.insert("accuracy".into(), json!(t.accuracy));
    let per_class: BTreeMap<&String, Value> = t
        .per_class
        .iter()
        .map(|(k, (c, n))| (k, json!({"correct": c, "total": n})))
        .collect();
    s.insert("per_class".into(), json!(per_class));
    let (side_ok, side_n) = t
        .per_class
        .iter()
        .filter(|(k, _)| k.as_str() != datasets::CEC)
        .fold((0, 0), |(a, b), (_, (c, n))| (a + c, b + n));
    s.insert("eap_aap_correct".into(), json!(side_ok));
    s.insert("eap_aap_total".into(), json!(side_n));
    let crossers: Vec<&str> = records
        .iter()
        .filter(|r| (r.affinity >= cfg.threshold) != (r.label == datasets::CEC))
        .map(|r| r.id.as_str())
        .collect();
    s.insert("boundary_cases".into(), json!(crossers));
    let mut sweep = BTreeMap::new();
    for &th in &cfg.sweep {
        sweep.insert(key(th), json!(stats::threshold_classify(&scores, &labels, th, datasets::CEC)?.accuracy));
    }
    s.insert("threshold_sweep".into(), json!(sweep));
    let mut hist = BTreeMap::new();
    for (label, _) in &counts {
        let vals: Vec<f64> = records.iter().filter(|r| r.label == *label).map(|r| r.affinity).collect();
        let bins = stats::histogram(&vals, 0.0, 1.0, cfg.histogram_bin_width)?;
        let pct: Vec<f64> = bins.iter().map(|b| 100.0 * b.count as f64 / vals.len() as f64).collect();
        hist.insert(label.to_string(), json!(pct));
    }
    s.insert("histogram_bin_width".into(), json!(cfg.histogram_bin_width));
    s.insert("histogram_percent".into(), json!(hist));
    Ok(s)
}

// ---------------------------------------------------------------------------
// multi-that

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThatCandidate {
    pub that: usize,
    /// Effect of masking this "that" on the distribution at "so".
    pub that_to_so: f64,
    /// Effect of masking "so" on the distribution at this "that".
    pub so_to_that: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoPair {
    pub so: usize,
    pub gold: usize,
    pub candidates: Vec<ThatCandidate>,
    /// Argmax of `that_to_so`; `None` on a tie for the maximum.
    pub predicted: Option<usize>,
    pub predicted_reverse: Option<usize>,
    /// Gold value over the best other candidate.
    pub margin_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiThatRecord {
    pub id: String,
    pub text: String,
    pub pairs: Vec<SoPair>,
}

fn argmax_unique(items: &[(usize, f64)]) -> Option<usize> {
    let best = items.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
    let winners: Vec<usize> = items.iter().filter(|x| x.1 == best).map(|x| x.0).collect();
    (winners.len() == 1).then(|| winners[0])
}

fn multithat_record(
    ex: &LabeledExample,
    ctx: &Context,
    opts: &EngineOptions,
) -> std::result::Result<MultiThatRecord, String> {
    let sos: Vec<usize> = ex.slot_words_with_prefix("so_").into_iter().map(|x| x.1).collect();
    let thats: Vec<usize> = ex.slot_words_with_prefix("that_").into_iter().map(|x| x.1).collect();
    let ts = tokenize(ctx, &ex.text)?;
    let mut words = sos.clone();
    words.extend(&thats);
    let sub = engine::affinity_submatrix(&ts, &words, &BTreeSet::new(), ctx.backend.as_ref(), opts)
        .map_err(engine_err)?;
    let pos = |w: usize| words.iter().position(|&x| x == w).expect("listed");
    let mut pairs = Vec::new();
    for (so, gold) in datasets::gold_pairs(ex) {
        let s = pos(so);
        if !sub.computed[s] {
            return Err("multi-token: so".into());
        }
        let candidates: Vec<ThatCandidate> = thats
            .iter()
            .map(|&t| ThatCandidate {
                that: t,
                that_to_so: sub.values[pos(t)][s],
                so_to_that: sub.values[s][pos(t)],
            })
            .collect();
        let fwd: Vec<(usize, f64)> = candidates.iter().map(|c| (c.that, c.that_to_so)).collect();
        let rev: Vec<(usize, f64)> = candidates.iter().map(|c| (c.that, c.so_to_that)).collect();
        let gold_v = fwd.iter().find(|x| x.0 == gold).map(|x| x.1).unwrap_or(0.0);
        let other = fwd.iter().filter(|x| x.0 != gold).map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
        pairs.push(SoPair {
            so,
            gold,
            predicted: argmax_unique(&fwd),
            predicted_reverse: argmax_unique(&rev),
            margin_ratio: (other > 0.0).then(|| gold_v / other),
            candidates,
        });
    }
    Ok(MultiThatRecord {
        id: ex.id.clone(),
        text: ex.text.clone(),
        pairs,
    })
}

fn summarize_multithat(records: &[MultiThatRecord]) -> Summary {
    let pairs: Vec<&SoPair> = records.iter().flat_map(|r| &r.pairs).collect();
    let correct = pairs.iter().filter(|p| p.predicted == Some(p.gold)).count();
    let correct_rev = pairs.iter().filter(|p| p.predicted_reverse == Some(p.gold)).count();
    let ties = pairs.iter().filter(|p| p.predicted.is_none()).count();
    let sentences_ok = records
        .iter()
        .filter(|r| r.pairs.iter().all(|p| p.predicted == Some(p.gold)))
        .count();
    let mut s = Summary::new();
    s.insert("sentences".into(), json!(records.len()));
    s.insert("sentences_correct".into(), json!(sentences_ok));
    s.insert("pairs".into(), json!(pairs.len()));
    s.insert("pairs_correct".into(), json!(correct));
    s.insert("pairs_correct_reverse".into(), json!(correct_rev));
    s.insert("ties".into(), json!(ties));
    s.insert(
        "fraction_correct".into(),
        json!(if pairs.is_empty() { 0.0 } else { correct as f64 / pairs.len() as f64 }),
    );
    s.insert("direction".into(), json!("that_to_so"));
    s
}

// ---------------------------------------------------------------------------
// EAP vs AAP interaction signatures

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub id: String,
    pub label: String,
    pub roles: Vec<String>,
    pub words: Vec<usize>,
    pub matrix: Vec<Vec<f64>>,
    pub globals: Vec<f64>,
}

fn eapaap_slots(ex: &LabeledExample, ctx: &Context) -> std::result::Result<Vec<usize>, String> {
    let mut words = Vec::new();
    for role in datasets::SO_THAT_ROLES {
        words.push(ex.slot_word(role).ok_or_else(|| format!("slot: no {role}"))?);
    }
    if words.iter().collect::<HashSet<_>>().len() != words.len() {
        return Err("slot: roles share a word".into());
    }
    let ts = tokenize(ctx, &ex.text)?;
    let bad: Vec<&str> = datasets::SO_THAT_ROLES
        .iter()
        .zip(&words)
        .filter(|(_, &w)| !ts.single_token[w])
        .map(|(r, _)| *r)
        .collect();
    if !bad.is_empty() {
        return Err(format!("multi-token: {}", bad.join(",")));
    }
    Ok(words)
}

fn eapaap_record(ex: &LabeledExample, ctx: &Context, opts: &EngineOptions) -> std::result::Result<SlotRecord, String> {
    let words = eapaap_slots(ex, ctx)?;
    let ts = tokenize(ctx, &ex.text)?;
    let sub = engine::affinity_submatrix(&ts, &words, &BTreeSet::new(), ctx.backend.as_ref(), opts)
        .map_err(engine_err)?;
    Ok(SlotRecord {
        id: ex.id.clone(),
        label: ex.label.clone(),
        roles: datasets::SO_THAT_ROLES.iter().map(|s| s.to_string()).collect(),
        words,
        matrix: sub.values,
        globals: sub.globals.into_iter().map(|g| g.expect("single-token slots")).collect(),
    })
}

fn class_mean(records: &[&SlotRecord]) -> Result<SlotMatrix> {
    let mats = records
        .iter()
        .map(|r| SlotMatrix::new(r.roles.clone(), r.matrix.clone()))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let globals: Vec<Vec<f64>> = records.iter().map(|r| r.globals.clone()).collect();
    Ok(stats::class_mean_matrix(&mats, &globals)?)
}

fn summarize_eapaap(records: &[SlotRecord], cfg: &ExperimentConfig) -> Result<Summary> {
    let mut s = Summary::new();
    let eap: Vec<&SlotRecord> = records.iter().filter(|r| r.label == datasets::EAP).collect();
    let aap: Vec<&SlotRecord> = records.iter().filter(|r| r.label == datasets::AAP).collect();
    s.insert("eap".into(), json!(eap.len()));
    s.insert("aap".into(), json!(aap.len()));
    if eap.is_empty() || aap.is_empty() {
        return Ok(s);
    }
    let (me, ma) = (class_mean(&eap)?, class_mean(&aap)?);
    let k = cfg.top_k.min(me.dim() * me.dim());
    let top = stats::top_k_diff(&me, &ma, k)?;
    let features: Vec<Vec<f64>> = records
        .iter()
        .map(|r| {
            top.iter()
                .map(|c| {
                    if c.row_index == c.col_index {
                        r.globals[c.row_index]
                    } else {
                        r.matrix[c.row_index][c.col_index]
                    }
                })
                .collect()
        })
        .collect();
    let diff: Vec<Vec<f64>> = me
        .values
        .iter()
        .zip(&ma.values)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect())
        .collect();
    s.insert("roles".into(), json!(me.roles));
    s.insert("mean_eap".into(), json!(me.values));
    s.insert("mean_aap".into(), json!(ma.values));
    s.insert("abs_diff".into(), json!(diff));
    s.insert(
        "top_cells".into(),
        json!(top
            .iter()
            .map(|c| json!({"row": c.row, "col": c.col, "abs_diff": c.abs_diff}))
            .collect::<Vec<_>>()),
    );
    s.insert(
        "features".into(),
        json!(records
            .iter()
            .zip(&features)
            .map(|(r, f)| json!({"id": r.id, "label": r.label, "values": f}))
            .collect::<Vec<_>>()),
    );
    if features.len() >= 2 && k >= 2 {
        let p = stats::pca_project(&features, 2)?;
        s.insert("projection".into(), json!(p.coords));
        s.insert("explained_variance_ratio".into(), json!(p.explained_variance_ratio));
    }
    let labels: Vec<bool> = records.iter().map(|r| r.label == datasets::EAP).collect();
    let sep = stats::linear_separability(&features, &labels)?;
    s.insert("linear_separability".into(), json!(sep.accuracy));
    Ok(s)
}

// ---------------------------------------------------------------------------
// CoGS fixed words

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fill {
    pub text: String,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedWordScore {
    pub role: String,
    pub index: usize,
    pub word: String,
    pub affinity: Option<f64>,
    pub top_fills: Vec<Fill>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CogsRecord {
    pub id: String,
    pub construction: String,
    pub text: String,
    pub slots: Vec<FixedWordScore>,
}

fn top_fills(ctx: &Context, dist: &prob::VocabDistribution, k: usize) -> Vec<Fill> {
    dist.top_k(k)
        .into_iter()
        .map(|(id, p)| Fill {
            text: ctx
                .tokenizer
                .decode(&[id as u32])
                .map(|s| s.trim().to_string())
                .unwrap_or_default(),
            prob: p,
        })
        .collect()
}

fn cogs_record(ex: &LabeledExample, ctx: &Context, cfg: &ExperimentConfig) -> std::result::Result<CogsRecord, String> {
    let ts = tokenize(ctx, &ex.text)?;
    let mut slots = Vec::new();
    for (role, index) in datasets::fixed_word_roles(ex) {
        let (affinity, fills) = if ts.single_token[index] {
            let d = engine::masked_distribution(&ts, &BTreeSet::new(), index, ctx.backend.as_ref()).map_err(engine_err)?;
            let id = ts.single_token_id(index).expect("single-token") as usize;
            (Some(prob::prob_of(&d, id).map_err(|e| e.to_string())?), top_fills(ctx, &d, cfg.top_fills))
        } else {
            (None, Vec::new())
        };
        slots.push(FixedWordScore {
            role,
            index,
            word: ts.words[index].text.clone(),
            affinity,
            top_fills: fills,
        });
    }
    Ok(CogsRecord {
        id: ex.id.clone(),
        construction: ex.label.clone(),
        text: ex.text.clone(),
        slots,
    })
}

fn summarize_cogs(records: &[CogsRecord]) -> Result<Summary> {
    let mut by: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut multi: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        for sl in &r.slots {
            match sl.affinity {
                Some(a) => by.entry(&r.construction).or_default().push(a),
                None => *multi.entry(&r.construction).or_default() += 1,
            }
        }
    }
    let mut per = BTreeMap::new();
    let mut lowest: Option<(&str, f64)> = None;
    for (c, vals) in &by {
        let b = stats::box_stats(vals)?;
        if lowest.map_or(true, |(_, m)| b.median < m) {
            lowest = Some((c, b.median));
        }
        per.insert(
            c.to_string(),
            json!({"slots": vals.len(), "multi_token": multi.get(c).copied().unwrap_or(0), "box": b}),
        );
    }
    let mut s = Summary::new();
    s.insert("examples".into(), json!(records.len()));
    s.insert("constructions".into(), json!(per));
    s.insert("lowest_median".into(), json!(lowest.map(|l| l.0)));
    Ok(s)
}

// ---------------------------------------------------------------------------
// MAGPIE figurative vs literal

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PieWord {
    pub index: usize,
    pub word: String,
    pub chars: usize,
    pub affinity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagpieRecord {
    pub id: String,
    pub label: String,
    pub idiom: Option<String>,
    pub sentence_words: usize,
    pub words: Vec<PieWord>,
}

fn magpie_record(ex: &LabeledExample, ctx: &Context, opts: &EngineOptions) -> std::result::Result<MagpieRecord, String> {
    let ts = tokenize(ctx, &ex.text)?;
    let idx: Vec<usize> = ex.slot_words_with_prefix("pie_word_").into_iter().map(|x| x.1).collect();
    let g = engine::global_affinity_at(&ts, &idx, ctx.backend.as_ref(), opts).map_err(engine_err)?;
    let sentence_words = ts.words.iter().filter(|w| w.text.chars().any(char::is_alphanumeric)).count();
    Ok(MagpieRecord {
        id: ex.id.clone(),
        label: ex.label.clone(),
        idiom: ex.meta.get("idiom").and_then(Value::as_str).map(str::to_string),
        sentence_words,
        words: idx
            .iter()
            .zip(g)
            .map(|(&i, a)| PieWord {
                index: i,
                word: ts.words[i].text.clone(),
                chars: ts.words[i].text.chars().count(),
                affinity: a,
            })
            .collect(),
    })
}

fn summarize_magpie(records: &[MagpieRecord], cfg: &ExperimentConfig) -> Result<Summary> {
    let mut s = Summary::new();
    let spans: usize = records.iter().map(|r| r.words.len()).sum();
    let scored: Vec<(&MagpieRecord, &PieWord, f64)> = records
        .iter()
        .flat_map(|r| r.words.iter().filter_map(move |w| w.affinity.map(|a| (r, w, a))))
        .collect();
    let mut by_label: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in records {
        let e = by_label.entry(&r.label).or_default();
        e.0 += 1;
        e.1 += r.words.len();
    }
    s.insert("sentences".into(), json!(records.len()));
    s.insert("spans".into(), json!(spans));
    s.insert("single_token_words".into(), json!(scored.len()));
    s.insert("multi_token_words".into(), json!(spans - scored.len()));
    s.insert(
        "by_label".into(),
        json!(by_label
            .iter()
            .map(|(k, (n, sp))| (k.to_string(), json!({"sentences": n, "spans": sp})))
            .collect::<BTreeMap<_, _>>()),
    );
    let auc_of = |items: &[&(&MagpieRecord, &PieWord, f64)]| -> Option<Value> {
        let scores: Vec<f64> = items.iter().map(|x| x.2).collect();
        let labels: Vec<bool> = items.iter().map(|x| x.0.label == datasets::FIGURATIVE).collect();
        stats::roc_auc(&scores, &labels)
            .ok()
            .map(|r| json!({"auc": r.auc, "n": items.len(), "points": r.points}))
    };
    let all: Vec<&_> = scored.iter().collect();
    let filtered: Vec<&_> = scored
        .iter()
        .filter(|x| x.0.sentence_words >= cfg.min_sentence_words && x.1.chars >= cfg.min_word_chars)
        .collect();
    s.insert("roc_unfiltered".into(), json!(auc_of(&all)));
    s.insert("roc_filtered".into(), json!(auc_of(&filtered)));
    s.insert(
        "filters".into(),
        json!({"min_sentence_words": cfg.min_sentence_words, "min_word_chars": cfg.min_word_chars}),
    );

    // per-idiom means over span affinities, idioms with enough sentences of both labels
    let mut idioms: BTreeMap<&str, [(usize, Vec<f64>); 2]> = BTreeMap::new();
    for r in records {
        let Some(idiom) = r.idiom.as_deref() else { continue };
        let slot = usize::from(r.label == datasets::LITERAL);
        let e = idioms.entry(idiom).or_default();
        e[slot].0 += 1;
        e[slot].1.extend(r.words.iter().filter_map(|w| w.affinity));
    }
    let per: BTreeMap<&str, Value> = idioms
        .iter()
        .filter(|(_, v)| v[0].0 >= cfg.min_idiom_examples && v[1].0 >= cfg.min_idiom_examples)
        .map(|(k, v)| {
            (
                *k,
                json!({"figurative": stats::mean(&v[0].1), "literal": stats::mean(&v[1].1),
                       "figurative_sentences": v[0].0, "literal_sentences": v[1].0}),
            )
        })
        .collect();
    s.insert("per_idiom".into(), json!(per));
    Ok(s)
}

// ---------------------------------------------------------------------------
// NPN

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpnRecord {
    pub id: String,
    pub prep: String,
    pub set: String,
    pub acceptability: f64,
    pub noun: String,
    pub affinities: [Option<f64>; 2],
}

fn npn_record(ex: &LabeledExample, ctx: &Context, opts: &EngineOptions) -> std::result::Result<NpnRecord, String> {
    let ts = tokenize(ctx, &ex.text)?;
    let n1 = ex.slot_word("noun_1").ok_or("slot: noun_1")?;
    let n2 = ex.slot_word("noun_2").ok_or("slot: noun_2")?;
    let g = engine::global_affinity_at(&ts, &[n1, n2], ctx.backend.as_ref(), opts).map_err(engine_err)?;
    Ok(NpnRecord {
        id: ex.id.clone(),
        prep: ex.label.clone(),
        set: ex.meta.get("set").and_then(Value::as_str).unwrap_or("standard").to_string(),
        acceptability: datasets::acceptability(ex).unwrap_or(0.0),
        noun: ex.meta.get("noun").and_then(Value::as_str).unwrap_or_default().to_string(),
        affinities: [g[0], g[1]],
    })
}

fn summarize_npn(records: &[NpnRecord], cfg: &ExperimentConfig) -> Result<Summary> {
    let mut out = BTreeMap::new();
    let sets: BTreeSet<&str> = records.iter().map(|r| r.set.as_str()).collect();
    for set in sets {
        let mut views = BTreeMap::new();
        for (view, min) in [("all", f64::NEG_INFINITY), ("acceptable", cfg.acceptability_min)] {
            let mut preps = BTreeMap::new();
            let chosen: Vec<&NpnRecord> = records
                .iter()
                .filter(|r| r.set == set && r.acceptability >= min)
                .collect();
            for prep in datasets::NPN_PREPOSITIONS {
                let rs: Vec<&&NpnRecord> = chosen.iter().filter(|r| r.prep == prep).collect();
                let vals: Vec<f64> = rs.iter().flat_map(|r| r.affinities.iter().flatten().copied()).collect();
                preps.insert(
                    prep,
                    json!({"sentences": rs.len(), "noun_slots": vals.len(),
                           "box": if vals.is_empty() { None } else { Some(stats::box_stats(&vals)?) }}),
                );
            }
            views.insert(view, json!({"sentences": chosen.len(), "by_prep": preps}));
        }
        out.insert(set.to_string(), json!(views));
    }
    let mut s = Summary::new();
    s.insert("acceptability_min".into(), json!(cfg.acceptability_min));
    s.insert("sets".into(), json!(out));
    Ok(s)
}

// ---------------------------------------------------------------------------
// comparative correlative slot constraint

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcSlot {
    pub role: String,
    pub index: usize,
    pub word: String,
    pub word_is_comparative: bool,
    pub set_score: f64,
    pub mass_score: f64,
    pub nucleus_size: usize,
    pub top_fills: Vec<Fill>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcRecord {
    pub id: String,
    pub text: String,
    pub slots: Vec<CcSlot>,
    /// Comparative slots skipped because they are multi-token.
    pub multi_token: Vec<String>,
}

fn cc_record(
    ex: &LabeledExample,
    ctx: &Context,
    cfg: &ExperimentConfig,
    detector: &RuleDetector,
) -> std::result::Result<CcRecord, String> {
    let ts = tokenize(ctx, &ex.text)?;
    let mut slots = Vec::new();
    let mut multi_token = Vec::new();
    for (role, index) in ex.slot_words_with_prefix("comp_") {
        if !ts.single_token[index] {
            multi_token.push(role);
            continue;
        }
        let sc = comparative_score(
            &ts,
            index,
            ctx.backend.as_ref(),
            ctx.tokenizer.as_ref(),
            cfg.nucleus_mass,
            detector,
        )
        .map_err(engine_err)?;
        slots.push(CcSlot {
            role,
            index,
            word: ts.words[index].text.clone(),
            word_is_comparative: detector.is_comparative(&ts.words[index].text),
            set_score: sc.set_score,
            mass_score: sc.mass_score,
            nucleus_size: sc.nucleus_size,
            top_fills: sc
                .fills
                .iter()
                .take(cfg.top_fills)
                .map(|f| Fill {
                    text: f.text.clone(),
                    prob: f.prob,
                })
                .collect(),
        });
    }
    Ok(CcRecord {
        id: ex.id.clone(),
        text: ex.text.clone(),
        slots,
        multi_token,
    })
}

fn summarize_cc(records: &[CcRecord]) -> Summary {
    let scored: Vec<&CcSlot> = records
        .iter()
        .flat_map(|r| &r.slots)
        .filter(|s| s.word_is_comparative)
        .collect();
    let set: Vec<f64> = scored.iter().map(|s| s.set_score).collect();
    let mass: Vec<f64> = scored.iter().map(|s| s.mass_score).collect();
    let mut s = Summary::new();
    s.insert("sentences".into(), json!(records.len()));
    s.insert("comparative_slots".into(), json!(scored.len()));
    s.insert(
        "non_comparative_slots".into(),
        json!(records.iter().flat_map(|r| &r.slots).filter(|s| !s.word_is_comparative).count()),
    );
    s.insert(
        "multi_token_slots".into(),
        json!(records.iter().map(|r| r.multi_token.len()).sum::<usize>()),
    );
    s.insert("score_100".into(), json!(set.iter().filter(|&&x| x >= 1.0).count()));
    s.insert("score_ge_99".into(), json!(set.iter().filter(|&&x| x >= 0.99).count()));
    s.insert("mean_set_score".into(), json!(stats::mean(&set)));
    s.insert("mean_mass_score".into(), json!(stats::mean(&mass)));
    s.insert(
        "min_set_score".into(),
        json!(set.iter().copied().reduce(f64::min)),
    );
    s
}
