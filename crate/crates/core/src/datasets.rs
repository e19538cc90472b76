// SPDX-License-Identifier: MIT OR Apache-2.0

//! Corpus loaders with slot identification, filtering and rejection reports.
//!
//! Every loader returns the accepted examples together with a
//! [`CorpusReport`]; malformed rows are reported, never fatal. Slot indices
//! refer to words as produced by [`segment_words`].

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::tokenization::{align, segment_words, TokenizerHandle, WordSpan};

pub mod counts;

pub use counts::{filter_unattested, ngram_count, CountError, CountService, CountServiceClient, CountServiceConfig, FixtureCounts};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, DatasetError>;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// A slot: either a word index or a character span, with the surface form
/// it must resolve to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Slot {
    Word { index: usize, surface: String },
    Span { start: usize, end: usize, surface: String },
}

impl Slot {
    fn word(words: &[WordSpan], index: usize) -> Self {
        Slot::Word {
            index,
            surface: words[index].text.clone(),
        }
    }

    pub fn word_index(&self) -> Option<usize> {
        match self {
            Slot::Word { index, .. } => Some(*index),
            Slot::Span { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    pub text: String,
    pub label: String,
    pub slots: BTreeMap<String, Slot>,
    pub meta: BTreeMap<String, Value>,
}

impl LabeledExample {
    pub fn slot_word(&self, role: &str) -> Option<usize> {
        self.slots.get(role).and_then(Slot::word_index)
    }

    /// Word-index slots whose role starts with `prefix`, in role order.
    pub fn slot_words_with_prefix(&self, prefix: &str) -> Vec<(String, usize)> {
        self.slots
            .iter()
            .filter(|(role, _)| role.starts_with(prefix))
            .filter_map(|(role, s)| s.word_index().map(|i| (role.clone(), i)))
            .collect()
    }

    /// Checks every slot against the text.
    pub fn verify(&self) -> std::result::Result<(), String> {
        let words = segment_words(&self.text);
        let chars: Vec<char> = self.text.chars().collect();
        for (role, slot) in &self.slots {
            match slot {
                Slot::Word { index, surface } => match words.get(*index) {
                    Some(w) if &w.text == surface => {}
                    Some(w) => return Err(format!("slot {role}: word {index} is {:?}, expected {surface:?}", w.text)),
                    None => return Err(format!("slot {role}: word {index} out of range")),
                },
                Slot::Span { start, end, surface } => {
                    if start >= end || *end > chars.len() {
                        return Err(format!("slot {role}: span {start}..{end} out of range"));
                    }
                    let got: String = chars[*start..*end].iter().collect();
                    if &got != surface {
                        return Err(format!("slot {role}: span reads {got:?}, expected {surface:?}"));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub total: usize,
    pub accepted: usize,
    pub rejected: Vec<Rejection>,
}

impl CorpusReport {
    fn accept(&mut self) {
        self.total += 1;
        self.accepted += 1;
    }

    fn reject(&mut self, id: impl Into<String>, reason: impl Into<String>) {
        self.total += 1;
        self.rejected.push(Rejection {
            id: id.into(),
            reason: reason.into(),
        });
    }

    /// Rejection counts grouped by the reason's leading tag (text before ':').
    pub fn reasons(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for r in &self.rejected {
            let key = r.reason.split(':').next().unwrap_or("").trim().to_string();
            *out.entry(key).or_insert(0) += 1;
        }
        out
    }

    pub fn merge(&mut self, other: &CorpusReport) {
        self.total += other.total;
        self.accepted += other.accepted;
        self.rejected.extend(other.rejected.iter().cloned());
    }
}

fn lower(s: &str) -> String {
    s.to_lowercase()
}

fn is_punct_word(w: &str) -> bool {
    w.chars().all(|c| !c.is_alphanumeric())
}

fn normalize_space(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn single_token_failures(
    text: &str,
    indices: &[(String, usize)],
    tokenizer: Option<&dyn TokenizerHandle>,
) -> std::result::Result<(), String> {
    let Some(tok) = tokenizer else { return Ok(()) };
    let ts = align(text, tok).map_err(|e| format!("tokenization: {e}"))?;
    let bad: Vec<&str> = indices
        .iter()
        .filter(|(_, i)| !ts.single_token[*i])
        .map(|(role, _)| role.as_str())
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(format!("multi-token: {}", bad.join(",")))
    }
}

/// CSV header lookup tolerant of case and a few aliases.
struct Columns {
    names: Vec<String>,
}

impl Columns {
    fn new(headers: &csv::StringRecord) -> Self {
        Self {
            names: headers.iter().map(|h| h.trim().to_lowercase()).collect(),
        }
    }

    fn find(&self, aliases: &[&str]) -> Option<usize> {
        aliases
            .iter()
            .find_map(|a| self.names.iter().position(|n| n == a))
    }
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::Headers)
        .from_reader(text.as_bytes())
}

// ---------------------------------------------------------------------------
// CEC / EAP / AAP

pub const CEC: &str = "CEC";
pub const EAP: &str = "EAP";
pub const AAP: &str = "AAP";

/// Slot roles of the so-adjective-that pattern, in matrix order.
pub const SO_THAT_ROLES: [&str; 7] = ["subj1", "verb1", "so", "adj", "that", "subj2", "verb2"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum CorrectionAction {
    Relabel { to: String },
    Omit,
}

/// One correction, matched by example id or by sentence text
/// (whitespace-normalized).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Correction {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentence: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<String>,
    #[serde(flatten)]
    pub action: CorrectionAction,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelOverlay {
    pub corrections: Vec<Correction>,
}

const DEFAULT_OVERLAY: &str = include_str!("../data/cec_overlay.json");

impl LabelOverlay {
    /// No corrections.
    pub fn identity() -> Self {
        Self::default()
    }

    /// The shipped corrections: three relabels, three omissions.
    pub fn default_corrections() -> Self {
        serde_json::from_str(DEFAULT_OVERLAY).expect("bundled overlay parses")
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        serde_json::from_str(&read(path)?).map_err(|e| DatasetError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    fn lookup(&self, id: &str, sentence: &str) -> Option<&Correction> {
        let norm = normalize_space(sentence);
        self.corrections.iter().find(|c| {
            c.id.as_deref() == Some(id) || c.sentence.as_deref().map(normalize_space).as_deref() == Some(norm.as_str())
        })
    }
}

const ADVERBS: &[&str] = &[
    "also", "really", "still", "just", "even", "then", "only", "once", "never", "not", "always", "now", "already",
    "certainly", "actually", "truly", "simply", "ever", "often",
];

const DETERMINERS: &[&str] = &[
    "the", "a", "an", "his", "her", "their", "its", "my", "our", "your", "this", "these", "those", "some", "any",
    "no", "every", "each", "all",
];

/// Locates the seven roles of the so-adjective-that pattern.
///
/// `so` is the rightmost "so" that has a later "that"; `that` is the nearest
/// such "that"; `adj` follows `so`. The clause roles use closed-class word
/// lists: `verb1` is the nearest non-adverb before `so`, `subj1` the nearest
/// non-adverb before `verb1`; `subj2` is the first non-determiner after
/// `that` and `verb2` the next non-adverb. Roles that cannot be placed are
/// left out.
pub fn so_that_slots(words: &[WordSpan]) -> std::result::Result<BTreeMap<&'static str, usize>, String> {
    let lw: Vec<String> = words.iter().map(|w| lower(&w.text)).collect();
    let thats: Vec<usize> = (0..lw.len()).filter(|&i| lw[i] == "that").collect();
    let so = (0..lw.len())
        .rev()
        .find(|&i| lw[i] == "so" && thats.iter().any(|&t| t > i + 1))
        .ok_or_else(|| {
            if lw.iter().any(|w| w == "so") {
                "no-that: no \"that\" after \"so\"".to_string()
            } else {
                "no-so: sentence lacks \"so\"".to_string()
            }
        })?;
    let that = *thats.iter().find(|&&t| t > so + 1).expect("checked above");
    let adj = so + 1;
    if is_punct_word(&lw[adj]) {
        return Err("no-adj: punctuation after \"so\"".into());
    }
    let mut slots = BTreeMap::from([("so", so), ("adj", adj), ("that", that)]);

    let usable = |i: usize| !is_punct_word(&lw[i]) && !ADVERBS.contains(&lw[i].as_str());
    let verb1 = (0..so).rev().find(|&i| usable(i));
    if let Some(v) = verb1 {
        slots.insert("verb1", v);
        if let Some(s) = (0..v).rev().find(|&i| usable(i)) {
            slots.insert("subj1", s);
        }
    }
    let subj2 = ((that + 1)..lw.len()).find(|&i| !is_punct_word(&lw[i]) && !DETERMINERS.contains(&lw[i].as_str()));
    if let Some(s) = subj2 {
        slots.insert("subj2", s);
        if let Some(v) = ((s + 1)..lw.len()).find(|&i| usable(i)) {
            slots.insert("verb2", v);
        }
    }
    Ok(slots)
}

/// Loads the so-that corpus (CSV with `id`, `sentence`, `label`).
///
/// Optional integer columns named after the roles in [`SO_THAT_ROLES`]
/// override the heuristic slot finder. Rejects rows without a usable
/// so/adjective/that triple or, when a tokenizer is given, whose "so" is not
/// a single token.
pub fn load_cec(
    path: impl AsRef<Path>,
    overlay: &LabelOverlay,
    tokenizer: Option<&dyn TokenizerHandle>,
) -> Result<(Vec<LabeledExample>, CorpusReport)> {
    let path = path.as_ref();
    let text = read(path)?;
    let mut rdr = csv_reader(&text);
    let headers = rdr.headers().map_err(|e| format_err(path, e))?.clone();
    let cols = Columns::new(&headers);
    let sentence_col = cols
        .find(&["sentence", "text"])
        .ok_or_else(|| format_msg(path, "missing sentence column"))?;
    let label_col = cols
        .find(&["label", "type", "construction"])
        .ok_or_else(|| format_msg(path, "missing label column"))?;
    let id_col = cols.find(&["id"]);
    let role_cols: Vec<(&str, usize)> = SO_THAT_ROLES
        .iter()
        .filter_map(|r| cols.find(&[r]).map(|c| (*r, c)))
        .collect();

    let mut out = Vec::new();
    let mut report = CorpusReport::default();
    for (row, rec) in rdr.records().enumerate() {
        let fallback_id = format!("row{}", row + 1);
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                report.reject(fallback_id, format!("malformed: {e}"));
                continue;
            }
        };
        let id = id_col
            .and_then(|c| rec.get(c))
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .unwrap_or(fallback_id);
        let (Some(sentence), Some(raw_label)) = (rec.get(sentence_col), rec.get(label_col)) else {
            report.reject(id, "malformed: missing fields");
            continue;
        };
        let sentence = sentence.trim().to_string();
        let mut label = raw_label.trim().to_uppercase();
        if ![CEC, EAP, AAP].contains(&label.as_str()) {
            report.reject(id, format!("label: unknown label {raw_label:?}"));
            continue;
        }
        let original = label.clone();
        if let Some(c) = overlay.lookup(&id, &sentence) {
            if c.from.as_deref().is_some_and(|f| !f.eq_ignore_ascii_case(&label)) {
                log::warn!("overlay for {id} expects label {:?}, found {label}", c.from);
            }
            match &c.action {
                CorrectionAction::Omit => {
                    report.reject(id, "overlay: omitted");
                    continue;
                }
                CorrectionAction::Relabel { to } => label = to.to_uppercase(),
            }
        }
        let words = segment_words(&sentence);
        let mut slots = match so_that_slots(&words) {
            Ok(s) => s,
            Err(reason) => {
                report.reject(id, reason);
                continue;
            }
        };
        let mut bad_override = None;
        for (role, col) in &role_cols {
            if let Some(v) = rec.get(*col).map(str::trim).filter(|v| !v.is_empty()) {
                match v.parse::<usize>() {
                    Ok(i) if i < words.len() => {
                        slots.insert(role, i);
                    }
                    _ => bad_override = Some(format!("slot: bad {role} index {v:?}")),
                }
            }
        }
        if let Some(reason) = bad_override {
            report.reject(id, reason);
            continue;
        }
        if let Err(reason) = single_token_failures(&sentence, &[("so".to_string(), slots["so"])], tokenizer) {
            report.reject(id, reason);
            continue;
        }
        let mut meta = BTreeMap::new();
        if original != label {
            meta.insert("original_label".to_string(), Value::from(original));
        }
        out.push(LabeledExample {
            id,
            text: sentence,
            label,
            slots: slots
                .into_iter()
                .map(|(role, i)| (role.to_string(), Slot::word(&words, i)))
                .collect(),
            meta,
        });
        report.accept();
    }
    Ok((out, report))
}

fn format_err(path: &Path, e: impl std::fmt::Display) -> DatasetError {
    DatasetError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn format_msg(path: &Path, msg: &str) -> DatasetError {
    format_err(path, msg)
}

/// Label counts of a loaded corpus.
pub fn label_counts(examples: &[LabeledExample]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for e in examples {
        *out.entry(e.label.clone()).or_insert(0) += 1;
    }
    out
}

// ---------------------------------------------------------------------------
// multi-that

#[derive(Debug, Deserialize)]
struct MultiThatRow {
    #[serde(default)]
    id: Option<String>,
    sentence: String,
    so: Vec<usize>,
    that: Vec<usize>,
    /// `(so, that)` word-index pairs.
    gold: Vec<(usize, usize)>,
}

/// Loads the multi-that corpus (JSON lines with `sentence`, `so`, `that`,
/// `gold`). Slots are `so_<k>` and `that_<k>`; `meta.gold` holds the
/// `(so, that)` pairs.
pub fn load_multithat(path: impl AsRef<Path>) -> Result<(Vec<LabeledExample>, CorpusReport)> {
    let path = path.as_ref();
    let text = read(path)?;
    let mut out = Vec::new();
    let mut report = CorpusReport::default();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fallback = format!("line{}", n + 1);
        let row: MultiThatRow = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                report.reject(fallback, format!("malformed: {e}"));
                continue;
            }
        };
        let id = row.id.clone().unwrap_or(fallback);
        match multithat_example(&id, row) {
            Ok(ex) => {
                out.push(ex);
                report.accept();
            }
            Err(reason) => report.reject(id, reason),
        }
    }
    Ok((out, report))
}

fn multithat_example(id: &str, row: MultiThatRow) -> std::result::Result<LabeledExample, String> {
    let words = segment_words(&row.sentence);
    let check = |i: usize, want: &str| -> std::result::Result<(), String> {
        match words.get(i) {
            Some(w) if lower(&w.text) == want => Ok(()),
            Some(w) => Err(format!("slot: word {i} is {:?}, not {want:?}", w.text)),
            None => Err(format!("slot: word {i} out of range")),
        }
    };
    for &s in &row.so {
        check(s, "so")?;
    }
    for &t in &row.that {
        check(t, "that")?;
    }
    if row.that.len() < 2 {
        return Err("candidates: fewer than two \"that\" words".into());
    }
    let thats: BTreeSet<usize> = row.that.iter().copied().collect();
    for &(s, t) in &row.gold {
        if !row.so.contains(&s) {
            return Err(format!("gold: {s} is not a listed \"so\""));
        }
        if !thats.contains(&t) {
            return Err(format!("gold: \"that\" {t} not among candidates"));
        }
    }
    for &s in &row.so {
        let n = row.gold.iter().filter(|(gs, _)| *gs == s).count();
        if n != 1 {
            return Err(format!("gold: \"so\" {s} has {n} gold pairs"));
        }
    }
    let mut slots = BTreeMap::new();
    for (k, &s) in row.so.iter().enumerate() {
        slots.insert(format!("so_{}", k + 1), Slot::word(&words, s));
    }
    for (k, &t) in row.that.iter().enumerate() {
        slots.insert(format!("that_{}", k + 1), Slot::word(&words, t));
    }
    let gold: Vec<Value> = row.gold.iter().map(|&(s, t)| serde_json::json!([s, t])).collect();
    Ok(LabeledExample {
        id: id.to_string(),
        text: row.sentence,
        label: CEC.to_string(),
        slots,
        meta: BTreeMap::from([("gold".to_string(), Value::Array(gold))]),
    })
}

/// `(so, that)` gold pairs stored by [`load_multithat`].
pub fn gold_pairs(example: &LabeledExample) -> Vec<(usize, usize)> {
    example
        .meta
        .get("gold")
        .and_then(Value::as_array)
        .map(|pairs| {
            pairs
                .iter()
                .filter_map(|p| Some((p.get(0)?.as_u64()? as usize, p.get(1)?.as_u64()? as usize)))
                .collect()
        })
        .unwrap_or_default()
}

// ---------------------------------------------------------------------------
// CoGS

pub const CAUSATIVE_WITH: &str = "causative-with";
pub const COMPARATIVE_CORRELATIVE: &str = "comparative-correlative";
pub const CONATIVE: &str = "conative";
pub const LET_ALONE: &str = "let-alone";
pub const MUCH_LESS: &str = "much-less";
pub const WAY_MANNER: &str = "way-manner";

/// The partially substantive constructions and their fixed words.
pub const COGS_CONSTRUCTIONS: [(&str, &[&str]); 6] = [
    (CAUSATIVE_WITH, &["with"]),
    (COMPARATIVE_CORRELATIVE, &["the", "the"]),
    (CONATIVE, &["at"]),
    (LET_ALONE, &["let", "alone"]),
    (MUCH_LESS, &["much", "less"]),
    (WAY_MANNER, &["way"]),
];

fn canonical_construction(raw: &str) -> Option<&'static str> {
    let key: String = raw
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { '-' })
        .collect();
    let key = key.trim_matches('-');
    let aliases: [(&str, &str); 12] = [
        ("causative-with", CAUSATIVE_WITH),
        ("cw", CAUSATIVE_WITH),
        ("comparative-correlative", COMPARATIVE_CORRELATIVE),
        ("comp-correlative", COMPARATIVE_CORRELATIVE),
        ("cc", COMPARATIVE_CORRELATIVE),
        ("conative", CONATIVE),
        ("let-alone", LET_ALONE),
        ("much-less", MUCH_LESS),
        ("way-manner", WAY_MANNER),
        ("way", WAY_MANNER),
        ("la", LET_ALONE),
        ("ml", MUCH_LESS),
    ];
    aliases.iter().find(|(a, _)| *a == key).map(|(_, c)| *c)
}

/// Finds the fixed-word slots of a construction. Returns `(role, word)`.
///
/// Multi-word fixed phrases are matched as adjacent words. The comparative
/// correlative yields `the_1`, `the_2` and the words after them as `comp_1`,
/// `comp_2`.
pub fn cogs_fixed_slots(construction: &str, words: &[WordSpan]) -> std::result::Result<Vec<(String, usize)>, String> {
    let lw: Vec<String> = words.iter().map(|w| lower(&w.text)).collect();
    let find = |w: &str| lw.iter().position(|x| x == w);
    match construction {
        CAUSATIVE_WITH | CONATIVE | WAY_MANNER => {
            let fixed = match construction {
                CAUSATIVE_WITH => "with",
                CONATIVE => "at",
                _ => "way",
            };
            find(fixed)
                .map(|i| vec![(fixed.to_string(), i)])
                .ok_or_else(|| format!("fixed: no {fixed:?}"))
        }
        LET_ALONE | MUCH_LESS => {
            let (a, b) = if construction == LET_ALONE { ("let", "alone") } else { ("much", "less") };
            (0..lw.len().saturating_sub(1))
                .find(|&i| lw[i] == a && lw[i + 1] == b)
                .map(|i| vec![(a.to_string(), i), (b.to_string(), i + 1)])
                .ok_or_else(|| format!("fixed: no \"{a} {b}\""))
        }
        COMPARATIVE_CORRELATIVE => {
            let thes: Vec<usize> = (0..lw.len())
                .filter(|&i| lw[i] == "the" && i + 1 < lw.len() && !is_punct_word(&lw[i + 1]))
                .collect();
            if thes.len() < 2 {
                return Err("fixed: fewer than two \"the\"".into());
            }
            // The second "the" opens the second clause: prefer one after a comma.
            let first = thes[0];
            let second = thes[1..]
                .iter()
                .copied()
                .find(|&i| i > 0 && lw[..i].iter().skip(first).any(|w| w == ","))
                .unwrap_or(thes[1]);
            Ok(vec![
                ("the_1".to_string(), first),
                ("the_2".to_string(), second),
                ("comp_1".to_string(), first + 1),
                ("comp_2".to_string(), second + 1),
            ])
        }
        other => Err(format!("construction: unsupported {other:?}")),
    }
}

/// Loads CoGS rows (CSV with `construction` and `sentence`; optional `id`).
/// Constructions without fixed words are reported as rejected.
pub fn load_cogs(path: impl AsRef<Path>) -> Result<(BTreeMap<String, Vec<LabeledExample>>, CorpusReport)> {
    let path = path.as_ref();
    let text = read(path)?;
    let mut rdr = csv_reader(&text);
    let headers = rdr.headers().map_err(|e| format_err(path, e))?.clone();
    let cols = Columns::new(&headers);
    let sentence_col = cols
        .find(&["sentence", "text", "example"])
        .ok_or_else(|| format_msg(path, "missing sentence column"))?;
    let cxn_col = cols
        .find(&["construction", "cxn", "label", "type"])
        .ok_or_else(|| format_msg(path, "missing construction column"))?;
    let id_col = cols.find(&["id"]);

    let mut out: BTreeMap<String, Vec<LabeledExample>> = BTreeMap::new();
    let mut report = CorpusReport::default();
    for (row, rec) in rdr.records().enumerate() {
        let fallback = format!("row{}", row + 1);
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                report.reject(fallback, format!("malformed: {e}"));
                continue;
            }
        };
        let id = id_col
            .and_then(|c| rec.get(c))
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .unwrap_or(fallback);
        let (Some(sentence), Some(raw)) = (rec.get(sentence_col), rec.get(cxn_col)) else {
            report.reject(id, "malformed: missing fields");
            continue;
        };
        let Some(cxn) = canonical_construction(raw) else {
            report.reject(id, format!("construction: no fixed words for {raw:?}"));
            continue;
        };
        let sentence = sentence.trim().to_string();
        let words = segment_words(&sentence);
        match cogs_fixed_slots(cxn, &words) {
            Ok(slots) => {
                out.entry(cxn.to_string()).or_default().push(LabeledExample {
                    id,
                    text: sentence,
                    label: cxn.to_string(),
                    slots: slots
                        .into_iter()
                        .map(|(role, i)| (role, Slot::word(&words, i)))
                        .collect(),
                    meta: BTreeMap::new(),
                });
                report.accept();
            }
            Err(reason) => report.reject(id, reason),
        }
    }
    Ok((out, report))
}

/// Roles holding the construction's fixed words (excludes CC comparatives).
pub fn fixed_word_roles(example: &LabeledExample) -> Vec<(String, usize)> {
    example
        .slots
        .iter()
        .filter(|(role, _)| !role.starts_with("comp_"))
        .filter_map(|(role, s)| s.word_index().map(|i| (role.clone(), i)))
        .collect()
}

// ---------------------------------------------------------------------------
// MAGPIE

pub const FIGURATIVE: &str = "figurative";
pub const LITERAL: &str = "literal";

#[derive(Debug, Deserialize)]
struct MagpieRow {
    #[serde(default)]
    id: Option<Value>,
    context: Value,
    label: String,
    confidence: f64,
    offsets: Vec<(usize, usize)>,
    #[serde(default)]
    idiom: Option<String>,
    /// Optional expected surface form of each span.
    #[serde(default)]
    words: Option<Vec<String>>,
}

/// Loads MAGPIE JSON lines.
///
/// `context` is either the sentence or a list of sentences whose middle
/// element is the one annotated. Labels `i`/`figurative` and `l`/`literal`
/// are accepted. A sentence is rejected when its confidence is below
/// `confidence_min` or when any span is invalid: out of range, not exactly
/// one word, or not matching the expected surface form when one is given.
/// Accepted spans become slots `pie_<k>` (character spans) and
/// `pie_word_<k>` (word indices).
pub fn load_magpie(path: impl AsRef<Path>, confidence_min: f64) -> Result<(Vec<LabeledExample>, CorpusReport)> {
    let path = path.as_ref();
    let text = read(path)?;
    let mut out = Vec::new();
    let mut report = CorpusReport::default();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fallback = format!("line{}", n + 1);
        let row: MagpieRow = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                report.reject(fallback, format!("malformed: {e}"));
                continue;
            }
        };
        let id = match &row.id {
            Some(Value::String(s)) => s.clone(),
            Some(v) if !v.is_null() => v.to_string(),
            _ => fallback,
        };
        match magpie_example(&id, row, confidence_min) {
            Ok(ex) => {
                out.push(ex);
                report.accept();
            }
            Err(reason) => report.reject(id, reason),
        }
    }
    Ok((out, report))
}

fn magpie_example(id: &str, row: MagpieRow, confidence_min: f64) -> std::result::Result<LabeledExample, String> {
    let sentence = match &row.context {
        Value::String(s) => s.clone(),
        Value::Array(items) if !items.is_empty() => items[items.len() / 2]
            .as_str()
            .ok_or("malformed: non-string context")?
            .to_string(),
        _ => return Err("malformed: context must be a string or list".into()),
    };
    let label = match row.label.to_lowercase().as_str() {
        "i" | "idiomatic" | "figurative" => FIGURATIVE,
        "l" | "literal" => LITERAL,
        other => return Err(format!("label: unknown {other:?}")),
    };
    if !(row.confidence >= confidence_min) {
        return Err(format!("confidence: {} < {confidence_min}", row.confidence));
    }
    if row.offsets.is_empty() {
        return Err("offsets: no spans".into());
    }
    let chars: Vec<char> = sentence.chars().collect();
    let words = segment_words(&sentence);
    let mut slots = BTreeMap::new();
    for (k, &(start, end)) in row.offsets.iter().enumerate() {
        if start >= end || end > chars.len() {
            return Err(format!("offsets: span {start}..{end} out of range"));
        }
        let surface: String = chars[start..end].iter().collect();
        if let Some(expected) = row.words.as_ref().and_then(|w| w.get(k)) {
            if &surface != expected {
                return Err(format!("offsets: span {start}..{end} reads {surface:?}, expected {expected:?}"));
            }
        }
        let Some(w) = words.iter().position(|w| w.char_start == start && w.char_end == end) else {
            return Err(format!("offsets: span {start}..{end} ({surface:?}) is not a whole word"));
        };
        slots.insert(format!("pie_{k}"), Slot::Span { start, end, surface });
        slots.insert(format!("pie_word_{k}"), Slot::word(&words, w));
    }
    let mut meta = BTreeMap::from([("confidence".to_string(), Value::from(row.confidence))]);
    if let Some(idiom) = row.idiom {
        meta.insert("idiom".to_string(), Value::from(idiom));
    }
    Ok(LabeledExample {
        id: id.to_string(),
        text: sentence,
        label: label.to_string(),
        slots,
        meta,
    })
}

/// Number of PIE spans in an example.
pub fn pie_span_count(example: &LabeledExample) -> usize {
    example.slots.keys().filter(|k| k.starts_with("pie_word_")).count()
}

// ---------------------------------------------------------------------------
// NPN

pub const NPN_PREPOSITIONS: [&str; 4] = ["after", "by", "to", "upon"];

#[derive(Debug, Deserialize)]
struct NpnRow {
    #[serde(default)]
    id: Option<String>,
    sentence: String,
    prep: String,
    noun: String,
    acceptability: f64,
    #[serde(default)]
    set: Option<String>,
}

/// Loads NPN JSON lines (`sentence`, `prep`, `noun`, `acceptability`,
/// optional `set`). The sentence must contain "noun prep noun" as three
/// consecutive words (case-insensitive). Slots: `noun_1`, `prep`, `noun_2`.
pub fn load_npn(path: impl AsRef<Path>) -> Result<(Vec<LabeledExample>, CorpusReport)> {
    let path = path.as_ref();
    let text = read(path)?;
    let mut out = Vec::new();
    let mut report = CorpusReport::default();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fallback = format!("line{}", n + 1);
        let row: NpnRow = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                report.reject(fallback, format!("malformed: {e}"));
                continue;
            }
        };
        let id = row.id.clone().unwrap_or(fallback);
        match npn_example(&id, row) {
            Ok(ex) => {
                out.push(ex);
                report.accept();
            }
            Err(reason) => report.reject(id, reason),
        }
    }
    Ok((out, report))
}

fn npn_example(id: &str, row: NpnRow) -> std::result::Result<LabeledExample, String> {
    let prep = lower(row.prep.trim());
    let noun = lower(row.noun.trim());
    if !NPN_PREPOSITIONS.contains(&prep.as_str()) {
        return Err(format!("form: unsupported preposition {prep:?}"));
    }
    if noun.is_empty() || noun.split_whitespace().count() != 1 {
        return Err(format!("form: noun {noun:?} is not one word"));
    }
    if !(1.0..=5.0).contains(&row.acceptability) {
        return Err(format!("acceptability: {} outside 1-5", row.acceptability));
    }
    let words = segment_words(&row.sentence);
    let lw: Vec<String> = words.iter().map(|w| lower(&w.text)).collect();
    let start = (0..lw.len().saturating_sub(2))
        .find(|&i| lw[i] == noun && lw[i + 1] == prep && lw[i + 2] == noun)
        .ok_or_else(|| format!("form: no \"{noun} {prep} {noun}\""))?;
    let mut meta = BTreeMap::from([
        ("acceptability".to_string(), Value::from(row.acceptability)),
        ("noun".to_string(), Value::from(noun)),
    ]);
    meta.insert(
        "set".to_string(),
        Value::from(row.set.unwrap_or_else(|| "standard".to_string())),
    );
    Ok(LabeledExample {
        id: id.to_string(),
        text: row.sentence,
        label: prep,
        slots: BTreeMap::from([
            ("noun_1".to_string(), Slot::word(&words, start)),
            ("prep".to_string(), Slot::word(&words, start + 1)),
            ("noun_2".to_string(), Slot::word(&words, start + 2)),
        ]),
        meta,
    })
}

pub fn acceptability(example: &LabeledExample) -> Option<f64> {
    example.meta.get("acceptability").and_then(Value::as_f64)
}
