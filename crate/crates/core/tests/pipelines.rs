// SPDX-License-Identifier: MIT OR Apache-2.0

//! Experiment pipelines on the miniature corpora in `tests/fixtures/mini`.
//!
//! Expected values are worked out from the bigram table in `mock.json`:
//! P(w | context) is the row of the previous word, or uniform when that word
//! has no row.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use cxaffinity::backend::{BackendInfo, MaskedLm, MaskedQuery, MockFixture};
use cxaffinity::experiments::{self, Context, ExperimentConfig, ExperimentKind, ExperimentResult};
use cxaffinity::prob::VocabDistribution;
use cxaffinity::report;
use cxaffinity::tokenization::{segment_words, TokenizerHandle, WordVocab};
use serde_json::Value;

fn mini(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mini").join(name)
}

struct Oracle {
    table: BTreeMap<String, BTreeMap<String, f64>>,
    vocab_size: usize,
}

impl Oracle {
    fn load() -> Self {
        let raw: Value = serde_json::from_str(&std::fs::read_to_string(mini("mock.json")).unwrap()).unwrap();
        let table = serde_json::from_value(raw["bigram"].clone()).unwrap();
        let vocab_size = raw["vocab"].as_array().unwrap().len() + 5;
        Self { table, vocab_size }
    }

    fn uniform(&self) -> f64 {
        1.0 / self.vocab_size as f64
    }

    fn p(&self, prev: Option<&str>, next: &str) -> f64 {
        match prev.and_then(|p| self.table.get(p)) {
            Some(row) => row.get(next).copied().unwrap_or(0.0),
            None => self.uniform(),
        }
    }

    /// Global affinity of word `i` of `text`.
    fn global(&self, text: &str, i: usize) -> f64 {
        let w = segment_words(text);
        self.p(if i == 0 { None } else { Some(&w[i - 1].text) }, &w[i].text)
    }

    fn jsd_from_uniform(&self, prev: &str) -> f64 {
        let u = self.uniform();
        let Some(row) = self.table.get(prev) else { return 0.0 };
        let zeros = self.vocab_size - row.len();
        let mut s = 0.5 * zeros as f64 * u * (u / (0.5 * u)).log2();
        for &p in row.values() {
            let m = 0.5 * (p + u);
            s += 0.5 * p * (p / m).log2() + 0.5 * u * (u / m).log2();
        }
        s
    }
}

fn mock_context() -> Context {
    let (vocab, backend) = MockFixture::from_path(mini("mock.json")).unwrap().build().unwrap();
    Context {
        tokenizer: Arc::new(vocab),
        backend: Arc::from(backend),
    }
}

/// Position p is predicted confidently unless a token `distance` away is
/// masked, in which case it falls back to uniform.
struct DistanceBackend {
    info: BackendInfo,
    distance: usize,
}

impl MaskedLm for DistanceBackend {
    fn info(&self) -> &BackendInfo {
        &self.info
    }

    fn predict(&self, q: &MaskedQuery) -> Result<Vec<VocabDistribution>, cxaffinity::BackendError> {
        q.validate(&self.info)?;
        let v = self.info.vocab_size;
        let masked = |p: Option<usize>| p.and_then(|p| q.token_ids.get(p)) == Some(&self.info.mask_token_id);
        Ok(q.masked_positions
            .iter()
            .map(|&p| {
                if masked(p.checked_sub(self.distance)) || masked(Some(p + self.distance)) {
                    VocabDistribution::uniform(v).unwrap()
                } else {
                    let mut probs = vec![0.5 / (v - 1) as f64; v];
                    probs[p % v] = 0.5;
                    VocabDistribution::new(probs).unwrap()
                }
            })
            .collect())
    }
}

fn distance_context() -> Context {
    let vocab = MockFixture::from_path(mini("mock.json")).unwrap().vocab();
    let info = BackendInfo {
        vocab_size: vocab.vocab_size(),
        mask_token_id: WordVocab::MASK,
        max_sequence_length: 512,
        model_id: "distance-2".into(),
    };
    Context {
        tokenizer: Arc::new(vocab),
        backend: Arc::new(DistanceBackend { info, distance: 2 }),
    }
}

fn config(data: &str) -> ExperimentConfig {
    ExperimentConfig {
        data: mini(data),
        identity_overlay: true,
        min_sentence_words: 5,
        min_idiom_examples: 1,
        ..Default::default()
    }
}

fn data_file(kind: ExperimentKind) -> &'static str {
    match kind {
        ExperimentKind::Cec | ExperimentKind::Eapaap => "cec.csv",
        ExperimentKind::Multithat => "multithat.jsonl",
        ExperimentKind::Cogs | ExperimentKind::Cc => "cogs.csv",
        ExperimentKind::Magpie => "magpie.jsonl",
        ExperimentKind::Npn => "npn.jsonl",
    }
}

fn context_for(kind: ExperimentKind) -> Context {
    if kind == ExperimentKind::Multithat {
        distance_context()
    } else {
        mock_context()
    }
}

fn run(kind: ExperimentKind) -> ExperimentResult {
    experiments::run_experiment(kind, &config(data_file(kind)), &context_for(kind), None).unwrap()
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap_or_else(|| panic!("not a number: {v}"))
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-9
}

// Mann-Whitney AUC with ties as one half.
fn auc_pairs(pos: &[f64], neg: &[f64]) -> f64 {
    let mut s = 0.0;
    for a in pos {
        for b in neg {
            s += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
        }
    }
    s / (pos.len() * neg.len()) as f64
}

#[test]
fn every_pipeline_accounts_for_every_row() {
    for kind in ExperimentKind::ALL {
        let r = run(kind);
        let rep = &r.corpus_report;
        assert_eq!(rep.accepted + rep.rejected.len(), rep.total, "{kind}");
        assert_eq!(r.per_example.len(), rep.accepted, "{kind}");
        for rec in &r.per_example {
            assert!(rec.get("id").and_then(Value::as_str).is_some(), "{kind}");
        }
    }
}

#[test]
fn pipelines_are_deterministic_and_recomputable() {
    for kind in ExperimentKind::ALL {
        let ctx = context_for(kind);
        let mut a_cfg = config(data_file(kind));
        a_cfg.workers = 1;
        a_cfg.batch_size = 1;
        let mut b_cfg = a_cfg.clone();
        b_cfg.workers = 4;
        b_cfg.batch_size = 64;
        let a = experiments::run_experiment(kind, &a_cfg, &ctx, None).unwrap();
        let b = experiments::run_experiment(kind, &b_cfg, &ctx, None).unwrap();
        assert_eq!(report::records_jsonl(&a), report::records_jsonl(&b), "{kind}");
        assert_eq!(a.summary, b.summary, "{kind}");
        let again = experiments::run_experiment(kind, &a_cfg, &ctx, None).unwrap();
        assert_eq!(report::summary_json(&a), report::summary_json(&again), "{kind}");

        let recomputed = experiments::summarize(kind, &a.per_example, &a_cfg).unwrap();
        assert_eq!(recomputed, a.summary, "{kind}");
    }
}

#[test]
fn result_files_round_trip() {
    for kind in ExperimentKind::ALL {
        let r = run(kind);
        let dir = tempfile::tempdir().unwrap();
        report::write_result(&r, dir.path()).unwrap();
        assert!(dir.path().join("summary.json").is_file());
        assert!(dir.path().join("records.jsonl").is_file());
        assert!(dir.path().join("tables/rejections.csv").is_file());
        let back = report::load_result(dir.path()).unwrap();
        assert_eq!(back.per_example, r.per_example, "{kind}");
        assert_eq!(back.corpus_report, r.corpus_report, "{kind}");
        let resummed = experiments::summarize(kind, &back.per_example, &config(data_file(kind))).unwrap();
        assert_eq!(resummed, back.summary, "{kind}");
    }
}

#[test]
fn cec_threshold_classification() {
    let o = Oracle::load();
    let r = run(ExperimentKind::Cec);
    let s = &r.summary;
    assert_eq!(s["n"], 8);
    assert_eq!(r.corpus_report.rejected.len(), 1);
    assert!(r.corpus_report.rejected[0].reason.starts_with("no-so"));

    let rows = [
        ("1", "was", "CEC"),
        ("2", "was", "CEC"),
        ("3", "was", "CEC"),
        ("4", "felt", "EAP"),
        ("5", "seemed", "AAP"),
        ("6", "felt", "EAP"),
        ("7", "seemed", "AAP"),
        ("8", "was", "EAP"),
    ];
    for (rec, (id, verb, label)) in r.per_example.iter().zip(rows) {
        assert_eq!(rec["id"], id);
        assert_eq!(rec["label"], label);
        assert!(close(f(&rec["affinity"]), o.p(Some(verb), "so")));
    }
    let accuracy = |t: f64| {
        rows.iter()
            .filter(|(_, verb, label)| (o.p(Some(verb), "so") >= t) == (*label == "CEC"))
            .count() as f64
            / rows.len() as f64
    };
    assert!(close(f(&s["accuracy"]), accuracy(0.78)));
    assert_eq!(s["correct"], 7);
    assert_eq!(s["eap_aap_correct"], 4);
    assert_eq!(s["eap_aap_total"], 5);
    assert_eq!(s["boundary_cases"], serde_json::json!(["8"]));
    for (k, v) in s["threshold_sweep"].as_object().unwrap() {
        assert!(close(f(v), accuracy(k.parse().unwrap())), "sweep {k}");
    }
    let hist = &s["histogram_percent"]["CEC"];
    assert_eq!(hist.as_array().unwrap().len(), 20);
    assert!(close(f(&hist[18]), 100.0));
}

#[test]
fn eapaap_class_means() {
    let o = Oracle::load();
    let r = run(ExperimentKind::Eapaap);
    let s = &r.summary;
    assert_eq!((s["eap"].as_u64(), s["aap"].as_u64()), (Some(3), Some(2)));
    let (verb1, so) = (1, 2);
    let eap_verbs = ["felt", "felt", "was"];
    let aap_verbs = ["seemed", "seemed"];
    let mean = |vs: &[&str], g: &dyn Fn(&str) -> f64| vs.iter().map(|v| g(v)).sum::<f64>() / vs.len() as f64;
    let eap_link = mean(&eap_verbs, &|v| o.jsd_from_uniform(v));
    let aap_link = mean(&aap_verbs, &|v| o.jsd_from_uniform(v));
    assert!(close(f(&s["mean_eap"][verb1][so]), eap_link));
    assert!(close(f(&s["mean_aap"][verb1][so]), aap_link));
    assert!(close(f(&s["mean_eap"][so][so]), mean(&eap_verbs, &|v| o.p(Some(v), "so"))));
    assert!(close(f(&s["abs_diff"][verb1][so]), (eap_link - aap_link).abs()));
    // every other off-diagonal cell is zero under a bigram model
    for i in 0..7 {
        for j in 0..7 {
            if i != j && (i, j) != (verb1, so) {
                assert_eq!(f(&s["mean_eap"][i][j]), 0.0);
            }
        }
    }
    assert_eq!(s["features"].as_array().unwrap().len(), 5);
    assert!(s["projection"].is_array());
}

#[test]
fn multithat_pairs_follow_dependencies() {
    let r = run(ExperimentKind::Multithat);
    let s = &r.summary;
    assert_eq!(s["sentences"], 3);
    assert_eq!(s["pairs"], 4);
    assert_eq!(s["pairs_correct"], 3);
    assert_eq!(s["pairs_correct_reverse"], 3);
    assert_eq!(s["ties"], 1);
    assert_eq!(s["sentences_correct"], 2);
    assert_eq!(r.corpus_report.rejected.len(), 1);
    let m3 = &r.per_example[2]["pairs"][0];
    assert!(m3["predicted"].is_null());
}

#[test]
fn cogs_fixed_word_affinities() {
    let o = Oracle::load();
    let r = run(ExperimentKind::Cogs);
    assert_eq!(r.corpus_report.rejected.len(), 2);
    let by_id: BTreeMap<&str, &Value> = r.per_example.iter().map(|v| (v["id"].as_str().unwrap(), v)).collect();
    let expect = [
        ("c1", "at", o.p(Some("kicked"), "at")),
        ("c11", "at", o.p(Some("shot"), "at")),
        ("c2", "with", o.p(Some("truck"), "with")),
        ("c3", "way", o.p(Some("our"), "way")),
    ];
    for (id, role, want) in expect {
        let slot = &by_id[id]["slots"][0];
        assert_eq!(slot["role"], role);
        assert!(close(f(&slot["affinity"]), want), "{id}");
    }
    let role = |id: &str, role: &str| -> f64 {
        let slots = by_id[id]["slots"].as_array().unwrap();
        f(&slots.iter().find(|s| s["role"] == role).unwrap()["affinity"])
    };
    assert!(close(role("c5", "let"), o.p(Some("walk"), "let")));
    assert!(close(role("c5", "alone"), o.p(Some("let"), "alone")));
    assert!(close(role("c6", "much"), o.p(Some("walk"), "much")));
    assert!(close(role("c6", "less"), o.p(Some("much"), "less")));
    let cc = &by_id["c4"]["slots"];
    assert_eq!(cc.as_array().unwrap().len(), 2);
    assert!(close(f(&cc[0]["affinity"]), o.uniform()));
    assert_eq!(cc[0]["top_fills"].as_array().unwrap().len(), 10);

    let cons = &r.summary["constructions"];
    assert!(close(f(&cons["conative"]["box"]["median"]), 0.55));
    assert_eq!(r.summary["lowest_median"], "comparative-correlative");
}

#[test]
fn cc_comparative_slots() {
    let r = run(ExperimentKind::Cc);
    let s = &r.summary;
    assert_eq!(s["sentences"], 3);
    assert_eq!(s["comparative_slots"], 5);
    assert_eq!(s["multi_token_slots"], 1);
    assert_eq!(s["score_100"], 5);
    assert!(close(f(&s["mean_set_score"]), 1.0));
    assert!(close(f(&s["mean_mass_score"]), 1.0));
    let c4 = r.per_example.iter().find(|v| v["id"] == "c4").unwrap();
    assert_eq!(c4["slots"][0]["nucleus_size"], 3);
}

#[test]
fn npn_noun_affinities() {
    let o = Oracle::load();
    let r = run(ExperimentKind::Npn);
    assert_eq!(r.corpus_report.rejected.len(), 1);
    for rec in &r.per_example {
        let noun = rec["noun"].as_str().unwrap();
        let prep = rec["prep"].as_str().unwrap();
        assert!(close(f(&rec["affinities"][1]), o.p(Some(prep), noun)));
    }
    let sets = &r.summary["sets"];
    assert_eq!(sets["standard"]["all"]["sentences"], 4);
    assert_eq!(sets["standard"]["acceptable"]["sentences"], 3);
    assert_eq!(sets["unattested"]["all"]["sentences"], 1);
    let after = &sets["standard"]["all"]["by_prep"]["after"];
    assert_eq!(after["noun_slots"], 2);
    assert!(close(f(&after["box"]["max"]), o.p(Some("after"), "day")));
    assert!(sets["standard"]["acceptable"]["by_prep"]["by"]["box"].is_null());
}

#[test]
fn magpie_roc() {
    let o = Oracle::load();
    let r = run(ExperimentKind::Magpie);
    let s = &r.summary;
    assert_eq!(r.corpus_report.rejected.len(), 2);
    assert_eq!(s["sentences"], 5);
    assert_eq!(s["spans"], 15);

    let (mut pos, mut neg, mut pos_f, mut neg_f) = (vec![], vec![], vec![], vec![]);
    for rec in &r.per_example {
        let text = match rec["id"].as_str().unwrap() {
            "g1" => "He will spill the beans .",
            "g2" => "Do not spill the beans now , please .",
            "g3" => "They saw him spill the beans on the floor today .",
            "g4" => "The old man kicked the bucket .",
            _ => "She kicked the bucket over by the door of the barn .",
        };
        let fig = rec["label"] == "figurative";
        let n_words = segment_words(text).iter().filter(|w| w.text.chars().any(char::is_alphanumeric)).count();
        for w in rec["words"].as_array().unwrap() {
            let idx = w["index"].as_u64().unwrap() as usize;
            let a = o.global(text, idx);
            assert!(close(f(&w["affinity"]), a));
            let keep = n_words >= 5 && w["word"].as_str().unwrap().chars().count() >= 4;
            if fig { pos.push(a) } else { neg.push(a) }
            if keep {
                if fig { pos_f.push(a) } else { neg_f.push(a) }
            }
        }
    }
    assert!(close(f(&s["roc_unfiltered"]["auc"]), auc_pairs(&pos, &neg)));
    assert!(close(f(&s["roc_filtered"]["auc"]), auc_pairs(&pos_f, &neg_f)));
    assert_eq!(s["roc_filtered"]["n"], pos_f.len() + neg_f.len());
    assert!(s["per_idiom"]["spill the beans"].is_object());
}

#[test]
fn resume_reuses_matching_partial_records() {
    let kind = ExperimentKind::Npn;
    let cfg = config(data_file(kind));
    let ctx = mock_context();
    let dir = tempfile::tempdir().unwrap();
    let full = experiments::run_experiment(kind, &cfg, &ctx, Some(dir.path())).unwrap();
    let partial = dir.path().join("records.jsonl.partial");
    assert_eq!(std::fs::read_to_string(&partial).unwrap().lines().count(), 5);

    // Keep one record, doctored so reuse is observable, plus a torn line.
    let mut first = full.per_example[0].clone();
    first["noun"] = Value::from("resumed");
    std::fs::write(&partial, format!("{first}\n{{\"id\": \"n2\", \"pre")).unwrap();
    let resumed = experiments::run_experiment(kind, &cfg, &ctx, Some(dir.path())).unwrap();
    assert_eq!(resumed.per_example[0]["noun"], "resumed");
    assert_eq!(resumed.per_example[1..], full.per_example[1..]);

    // A different configuration discards the partial records.
    let mut other = cfg.clone();
    other.acceptability_min = 3.0;
    std::fs::write(&partial, format!("{first}\n")).unwrap();
    let fresh = experiments::run_experiment(kind, &other, &ctx, Some(dir.path())).unwrap();
    assert_eq!(fresh.per_example, full.per_example);

    // Resume disabled also starts over.
    let mut no_resume = other.clone();
    no_resume.resume = false;
    std::fs::write(&partial, format!("{first}\n")).unwrap();
    let fresh = experiments::run_experiment(kind, &no_resume, &ctx, Some(dir.path())).unwrap();
    assert_eq!(fresh.per_example, full.per_example);

    experiments::clear_partial(dir.path());
    assert!(!partial.exists());
}

#[test]
fn fingerprint_tracks_inputs() {
    let cfg = config("npn.jsonl");
    let a = experiments::config_fingerprint(ExperimentKind::Npn, &cfg, "m").unwrap();
    assert_eq!(a, experiments::config_fingerprint(ExperimentKind::Npn, &cfg, "m").unwrap());
    assert_ne!(a, experiments::config_fingerprint(ExperimentKind::Npn, &cfg, "other").unwrap());
    assert_ne!(a, experiments::config_fingerprint(ExperimentKind::Cec, &cfg, "m").unwrap());
    let mut c2 = cfg.clone();
    c2.threshold = 0.5;
    assert_ne!(a, experiments::config_fingerprint(ExperimentKind::Npn, &c2, "m").unwrap());
}

#[test]
fn missing_data_file_is_an_error() {
    let mut cfg = config("npn.jsonl");
    cfg.data = Path::new("/nonexistent/npn.jsonl").to_path_buf();
    assert!(experiments::run_experiment(ExperimentKind::Npn, &cfg, &mock_context(), None).is_err());
}

#[test]
fn cc_table_lists_fills() {
    let r = run(ExperimentKind::Cc);
    let dir = tempfile::tempdir().unwrap();
    report::write_result(&r, dir.path()).unwrap();
    let mut rd = csv::Reader::from_path(dir.path().join("tables/slots.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 5);
    assert_eq!(&rows[0][7], "better|more|bigger");
    assert!(dir.path().join("figures/scores.svg").is_file());
    let _ = MockFixture::from_path(mini("mock.json")).unwrap().vocab().token_to_id("so");
}
