// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

fn manifest() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn mini(name: &str) -> String {
    manifest()
        .join("../core/tests/fixtures/mini")
        .join(name)
        .display()
        .to_string()
}

fn mock_backend() -> String {
    format!("--backend=mock:{}", mini("mock.json"))
}

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["cxaff"];
    argv.extend_from_slice(args);
    let code = cxaff_cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

#[test]
fn matrix_json_on_stdout() {
    let b = mock_backend();
    let (code, out, err) = run(&["affinity", "matrix", "day after day", &b, "--json"]);
    assert_eq!(code, 0, "{err}");
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["model_id"], "mini-bigram");
    assert_eq!(v["words"], serde_json::json!(["day", "after", "day"]));
    let m = v["matrix"].as_array().unwrap();
    for (i, row) in m.iter().enumerate() {
        for (j, x) in row.as_array().unwrap().iter().enumerate() {
            let x = x.as_f64().unwrap();
            // a bigram model only links each word to its predecessor; "day"
            // has no row of its own, so only after -> day is non-zero
            if (i, j) == (1, 2) {
                assert!(x > 0.5, "({i}, {j}) = {x}");
            } else {
                assert_eq!(x, 0.0, "({i}, {j})");
            }
        }
    }
}

#[test]
fn global_text_output_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let svg = dir.path().join("strip.svg");
    let b = mock_backend();
    let (code, out, _) = run(&["affinity", "global", "day after day", &b, "--svg", svg.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(out.starts_with("model: mini-bigram\n"));
    assert_eq!(out.lines().count(), 4);
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));

    let heat = dir.path().join("m.svg");
    let (code, _, _) = run(&["affinity", "matrix", "day after day", &b, "--svg", heat.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(std::fs::read_to_string(&heat).unwrap().contains("<rect"));
}

#[test]
fn usage_errors_exit_1() {
    let b = mock_backend();
    let (code, _, err) = run(&["affinity", "global", "", &b]);
    assert_eq!(code, 1);
    assert!(err.contains("empty"));

    let (code, _, err) = run(&["affinity", "global", "x", &b, "--frobnicate"]);
    assert_eq!(code, 1);
    assert!(err.contains("Usage"));

    let (code, _, _) = run(&["affinity", "global", "day"]);
    assert_eq!(code, 1, "missing backend");

    let (code, _, _) = run(&["affinity", "global", "day", "--backend", "gpu:/x"]);
    assert_eq!(code, 1);

    let (code, _, _) = run(&["exp", "vision", "--config", "c.toml", &b]);
    assert_eq!(code, 1);

    let (code, _, _) = run(&["affinity", "global", "day after", &b, "--mask", "5"]);
    assert_eq!(code, 1);

    let (code, out, _) = run(&["--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("affinity"));
}

#[test]
fn runtime_errors_exit_2() {
    let b = mock_backend();
    let (code, _, err) = run(&["exp", "cec", "--config", "missing.toml", &b]);
    assert_eq!(code, 2);
    assert!(err.contains("missing.toml"), "{err}");

    let (code, _, err) = run(&["affinity", "global", "day", "--backend", "mock:/no/such/fixture.json"]);
    assert_eq!(code, 2);
    assert!(err.contains("/no/such/fixture.json"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "data = \"cec.csv\"\nthreshhold = 0.5\n").unwrap();
    let (code, _, err) = run(&["exp", "cec", "--config", cfg.to_str().unwrap(), &b]);
    assert_eq!(code, 2);
    assert!(err.contains("threshhold"), "{err}");

    let (code, _, _) = run(&["render", dir.path().join("nothing").to_str().unwrap()]);
    assert_eq!(code, 2);
}

fn write_config(dir: &Path, kind: &str, data: &str) -> PathBuf {
    let p = dir.join(format!("{kind}.toml"));
    std::fs::write(&p, format!("data = {:?}\nworkers = 3\nbatch_size = 4\n", mini(data))).unwrap();
    p
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn experiment_output_layout_is_reproducible() {
    let b = mock_backend();
    for (kind, data) in [("cec", "cec.csv"), ("cogs", "cogs.csv"), ("npn", "npn.jsonl")] {
        let work = tempfile::tempdir().unwrap();
        let cfg = write_config(work.path(), kind, data);
        let mut trees = Vec::new();
        for round in 0..2 {
            let root = work.path().join(format!("results{round}"));
            let (code, out, err) = run(&["exp", kind, "--config", cfg.to_str().unwrap(), "--out", root.to_str().unwrap(), &b]);
            assert_eq!(code, 0, "{kind}: {err}");
            assert!(out.contains("wrote"));
            let dir = root.join(kind);
            for f in ["summary.json", "records.jsonl"] {
                assert!(dir.join(f).is_file(), "{kind}/{f}");
            }
            assert!(dir.join("tables/rejections.csv").is_file());
            assert!(!dir.join("records.jsonl.partial").exists());
            assert!(!dir.join("fingerprint.partial").exists());
            trees.push(read_tree(&dir));
        }
        assert_eq!(trees[0], trees[1], "{kind}");

        // render rebuilds the same tables and figures from the saved records
        let dir = work.path().join("results0").join(kind);
        std::fs::remove_dir_all(dir.join("tables")).unwrap();
        let _ = std::fs::remove_dir_all(dir.join("figures"));
        let (code, _, err) = run(&["render", dir.to_str().unwrap()]);
        assert_eq!(code, 0, "{err}");
        assert_eq!(read_tree(&dir), trees[0], "{kind} render");
    }
}

#[test]
fn experiment_json_summary() {
    let work = tempfile::tempdir().unwrap();
    let cfg = write_config(work.path(), "cec", "cec.csv");
    let b = mock_backend();
    let root = work.path().join("r");
    let (code, out, _) = run(&["exp", "cec", "--config", cfg.to_str().unwrap(), "--out", root.to_str().unwrap(), &b, "--json"]);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["name"], "cec");
    assert_eq!(v["summary"]["correct"], 7);
}

#[test]
fn binary_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_cxaff");
    let b = mock_backend();
    let ok = Command::new(exe).args(["affinity", "global", "day after day", &b, "--json"]).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(v["words"].as_array().unwrap().len(), 3);

    let usage = Command::new(exe).args(["affinity", "global", "", &b]).output().unwrap();
    assert_eq!(usage.status.code(), Some(1));

    let rt = Command::new(exe).args(["exp", "cec", "--config", "missing.toml", &b]).output().unwrap();
    assert_eq!(rt.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&rt.stderr).contains("missing.toml"));
}
