// SPDX-License-Identifier: MIT OR Apache-2.0

//! Deterministic SVG figures and CSV/JSON tables for experiment results.
//!
//! Output layout for one experiment:
//!
//! ```text
//! <dir>/summary.json     name, fingerprint, corpus report, summary
//! <dir>/records.jsonl    one record per example
//! <dir>/tables/*.csv
//! <dir>/figures/*.svg
//! ```
//!
//! Colour scale shared with the explorer: grey levels from white at 0 to
//! black at `vmax` (default 1), `level = round(255 * (1 - v / vmax))`,
//! clamped. Absent values are drawn with a diagonal hatch.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::datasets::CorpusReport;
use crate::experiments::{ExperimentKind, ExperimentResult};
use crate::stats::{self, BoxStats};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid figure input: {0}")]
    Invalid(String),

    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, ReportError>;

fn io(path: &Path) -> impl Fn(&dyn std::fmt::Display) -> ReportError + '_ {
    move |e| ReportError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Grey level for `v` on a `[0, vmax]` scale: 255 (white) at 0, 0 (black)
/// at `vmax`.
pub fn grey_level(v: f64, vmax: f64) -> u8 {
    let t = if vmax > 0.0 { (v / vmax).clamp(0.0, 1.0) } else { 0.0 };
    (255.0 * (1.0 - t)).round() as u8
}

fn fill(v: f64, vmax: f64) -> String {
    let g = grey_level(v, vmax);
    format!("#{g:02x}{g:02x}{g:02x}")
}

fn esc(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn header(out: &mut String, w: f64, h: f64) {
    let _ = writeln!(
        out,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}" font-family="DejaVu Sans, sans-serif" font-size="11">"##
    );
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n");
}

const HATCH_DEF: &str = "<defs><pattern id=\"hatch\" width=\"6\" height=\"6\" patternUnits=\"userSpaceOnUse\" patternTransform=\"rotate(45)\"><line x1=\"0\" y1=\"0\" x2=\"0\" y2=\"6\" stroke=\"#888888\" stroke-width=\"2\"/></pattern></defs>\n";

fn title(out: &mut String, t: &Option<String>, x: f64) {
    if let Some(t) = t {
        let _ = writeln!(out, r##"<text x="{x:.1}" y="16" font-size="13" text-anchor="middle">{}</text>"##, esc(t));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSpec {
    pub labels: Vec<String>,
    /// `values[row][col]`; rows are masked context words, columns targets.
    pub values: Vec<Vec<f64>>,
    pub vmax: f64,
    /// Cells outlined for emphasis.
    pub highlights: Vec<(usize, usize)>,
    pub title: Option<String>,
}

impl HeatmapSpec {
    pub fn new(labels: Vec<String>, values: Vec<Vec<f64>>) -> Self {
        Self {
            labels,
            values,
            vmax: 1.0,
            highlights: Vec::new(),
            title: None,
        }
    }
}

const CELL: f64 = 28.0;

pub fn render_heatmap(spec: &HeatmapSpec) -> Result<String> {
    let n = spec.labels.len();
    if spec.values.len() != n || spec.values.iter().any(|r| r.len() != n) {
        return Err(ReportError::Dimension(format!(
            "{n} labels for a {}-row matrix",
            spec.values.len()
        )));
    }
    if let Some(v) = spec.values.iter().flatten().find(|v| !v.is_finite()) {
        return Err(ReportError::Invalid(format!("non-finite value {v}")));
    }
    let longest = spec.labels.iter().map(|l| l.chars().count()).max().unwrap_or(0) as f64;
    let margin = 12.0 + 6.5 * longest.min(24.0);
    let top = margin + if spec.title.is_some() { 24.0 } else { 8.0 };
    let (w, h) = (margin + CELL * n as f64 + 70.0, top + CELL * n as f64 + 12.0);
    let mut out = String::new();
    header(&mut out, w, h);
    title(&mut out, &spec.title, w / 2.0);
    for (i, label) in spec.labels.iter().enumerate() {
        let y = top + CELL * (i as f64 + 0.5) + 4.0;
        let x = margin + CELL * (i as f64 + 0.5);
        let _ = writeln!(out, r##"<text x="{:.1}" y="{y:.1}" text-anchor="end">{}</text>"##, margin - 4.0, esc(label));
        let _ = writeln!(
            out,
            r##"<text x="{x:.1}" y="{:.1}" transform="rotate(-90 {x:.1} {:.1})" text-anchor="start" dominant-baseline="middle">{}</text>"##,
            top - 4.0,
            top - 4.0,
            esc(label)
        );
    }
    for (i, row) in spec.values.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let _ = writeln!(
                out,
                r##"<rect x="{:.1}" y="{:.1}" width="{CELL:.1}" height="{CELL:.1}" fill="{}" stroke="#cccccc" stroke-width="0.5"><title>{} / {}: {v:.4}</title></rect>"##,
                margin + CELL * j as f64,
                top + CELL * i as f64,
                fill(v, spec.vmax),
                esc(&spec.labels[i]),
                esc(&spec.labels[j]),
            );
        }
    }
    for &(i, j) in &spec.highlights {
        if i < n && j < n {
            let _ = writeln!(
                out,
                r##"<rect x="{:.1}" y="{:.1}" width="{CELL:.1}" height="{CELL:.1}" fill="none" stroke="#d62728" stroke-width="2"/>"##,
                margin + CELL * j as f64,
                top + CELL * i as f64
            );
        }
    }
    colorbar(&mut out, margin + CELL * n as f64 + 16.0, top, (CELL * n as f64).max(60.0), spec.vmax);
    out.push_str("</svg>\n");
    Ok(out)
}

fn colorbar(out: &mut String, x: f64, y: f64, height: f64, vmax: f64) {
    let steps = 10;
    let step_h = height / steps as f64;
    for k in 0..steps {
        let v = vmax * (steps - k) as f64 / steps as f64;
        let _ = writeln!(
            out,
            r##"<rect x="{x:.1}" y="{:.1}" width="12" height="{step_h:.1}" fill="{}"/>"##,
            y + step_h * k as f64,
            fill(v, vmax)
        );
    }
    let _ = writeln!(out, r##"<rect x="{x:.1}" y="{y:.1}" width="12" height="{height:.1}" fill="none" stroke="#000000" stroke-width="0.5"/>"##);
    let _ = writeln!(out, r##"<text x="{:.1}" y="{:.1}">{vmax:.2}</text>"##, x + 16.0, y + 8.0);
    let _ = writeln!(out, r##"<text x="{:.1}" y="{:.1}">0</text>"##, x + 16.0, y + height);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripSpec {
    pub labels: Vec<String>,
    /// `None` marks an absent value (e.g. a multi-token word).
    pub values: Vec<Option<f64>>,
    pub title: Option<String>,
}

pub fn render_strip(spec: &StripSpec) -> Result<String> {
    if spec.labels.len() != spec.values.len() {
        return Err(ReportError::Dimension(format!(
            "{} labels, {} values",
            spec.labels.len(),
            spec.values.len()
        )));
    }
    let widths: Vec<f64> = spec
        .labels
        .iter()
        .map(|l| (7.0 * l.chars().count() as f64 + 12.0).max(CELL))
        .collect();
    let top = if spec.title.is_some() { 26.0 } else { 6.0 };
    let w = widths.iter().sum::<f64>() + 12.0;
    let h = top + CELL + 24.0;
    let mut out = String::new();
    header(&mut out, w, h);
    out.push_str(HATCH_DEF);
    title(&mut out, &spec.title, w / 2.0);
    let mut x = 6.0;
    for ((label, v), cw) in spec.labels.iter().zip(&spec.values).zip(&widths) {
        let (paint, tip) = match v {
            Some(v) => (fill(*v, 1.0), format!("{v:.4}")),
            None => ("url(#hatch)".to_string(), "n/a".to_string()),
        };
        let _ = writeln!(
            out,
            r##"<rect x="{x:.1}" y="{top:.1}" width="{cw:.1}" height="{CELL:.1}" fill="{paint}" stroke="#999999" stroke-width="0.5"><title>{}: {tip}</title></rect>"##,
            esc(label)
        );
        let _ = writeln!(
            out,
            r##"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"##,
            x + cw / 2.0,
            top + CELL + 15.0,
            esc(label)
        );
        x += cw;
    }
    out.push_str("</svg>\n");
    Ok(out)
}

const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub groups: Vec<(String, Vec<f64>)>,
    pub lo: f64,
    pub hi: f64,
    pub bin_width: f64,
    pub title: Option<String>,
    pub x_label: Option<String>,
}

/// Per-group percentage of values in each bin.
pub fn histogram_percentages(spec: &HistogramSpec) -> Result<Vec<Vec<f64>>> {
    spec.groups
        .iter()
        .map(|(_, vals)| {
            let bins = stats::histogram(vals, spec.lo, spec.hi, spec.bin_width)
                .map_err(|e| ReportError::Invalid(e.to_string()))?;
            Ok(bins
                .iter()
                .map(|b| if vals.is_empty() { 0.0 } else { 100.0 * b.count as f64 / vals.len() as f64 })
                .collect())
        })
        .collect()
}

const PLOT_W: f64 = 480.0;
const PLOT_H: f64 = 240.0;
const LEFT: f64 = 48.0;

fn axes(out: &mut String, top: f64, y_max: f64, y_label: &str) {
    let _ = writeln!(
        out,
        r##"<line x1="{LEFT:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#000000"/>"##,
        top + PLOT_H,
        LEFT + PLOT_W,
        top + PLOT_H
    );
    let _ = writeln!(out, r##"<line x1="{LEFT:.1}" y1="{top:.1}" x2="{LEFT:.1}" y2="{:.1}" stroke="#000000"/>"##, top + PLOT_H);
    for k in 0..=4 {
        let v = y_max * k as f64 / 4.0;
        let y = top + PLOT_H - PLOT_H * k as f64 / 4.0;
        let _ = writeln!(out, r##"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"##, LEFT - 4.0, y + 4.0);
    }
    let _ = writeln!(
        out,
        r##"<text x="12" y="{:.1}" transform="rotate(-90 12 {:.1})" text-anchor="middle">{}</text>"##,
        top + PLOT_H / 2.0,
        top + PLOT_H / 2.0,
        esc(y_label)
    );
}

fn legend(out: &mut String, names: &[&str], x: f64, y: f64) {
    for (k, name) in names.iter().enumerate() {
        let yy = y + 16.0 * k as f64;
        let _ = writeln!(out, r##"<rect x="{x:.1}" y="{yy:.1}" width="10" height="10" fill="{}"/>"##, PALETTE[k % PALETTE.len()]);
        let _ = writeln!(out, r##"<text x="{:.1}" y="{:.1}">{}</text>"##, x + 14.0, yy + 9.0, esc(name));
    }
}

pub fn render_histogram(spec: &HistogramSpec) -> Result<String> {
    if spec.groups.is_empty() {
        return Err(ReportError::Invalid("no groups".into()));
    }
    let pct = histogram_percentages(spec)?;
    let nbins = pct[0].len();
    let y_max = pct.iter().flatten().copied().fold(0.0, f64::max).max(1.0);
    let top = if spec.title.is_some() { 30.0 } else { 10.0 };
    let (w, h) = (LEFT + PLOT_W + 140.0, top + PLOT_H + 40.0);
    let mut out = String::new();
    header(&mut out, w, h);
    title(&mut out, &spec.title, w / 2.0);
    axes(&mut out, top, y_max, "percent");
    let bin_w = PLOT_W / nbins as f64;
    let bar_w = bin_w / spec.groups.len() as f64;
    for (g, bars) in pct.iter().enumerate() {
        for (b, &p) in bars.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let bh = PLOT_H * p / y_max;
            let _ = writeln!(
                out,
                r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{bh:.2}" fill="{}"><title>{}: {p:.1}%</title></rect>"##,
                LEFT + bin_w * b as f64 + bar_w * g as f64,
                top + PLOT_H - bh,
                bar_w,
                PALETTE[g % PALETTE.len()],
                esc(&spec.groups[g].0)
            );
        }
    }
    for k in 0..=4 {
        let v = spec.lo + (spec.hi - spec.lo) * k as f64 / 4.0;
        let x = LEFT + PLOT_W * k as f64 / 4.0;
        let _ = writeln!(out, r##"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{v:.2}</text>"##, top + PLOT_H + 14.0);
    }
    if let Some(xl) = &spec.x_label {
        let _ = writeln!(out, r##"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"##, LEFT + PLOT_W / 2.0, top + PLOT_H + 32.0, esc(xl));
    }
    let names: Vec<&str> = spec.groups.iter().map(|g| g.0.as_str()).collect();
    legend(&mut out, &names, LEFT + PLOT_W + 16.0, top);
    out.push_str("</svg>\n");
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxPlotSpec {
    pub groups: Vec<(String, BoxStats)>,
    pub title: Option<String>,
}

/// Tukey box plots on a [0, 1] axis, one per group.
pub fn render_boxplot(spec: &BoxPlotSpec) -> Result<String> {
    if spec.groups.is_empty() {
        return Err(ReportError::Invalid("no groups".into()));
    }
    let top = if spec.title.is_some() { 30.0 } else { 10.0 };
    let (w, h) = (LEFT + PLOT_W + 20.0, top + PLOT_H + 40.0);
    let y = |v: f64| top + PLOT_H * (1.0 - v.clamp(0.0, 1.0));
    let mut out = String::new();
    header(&mut out, w, h);
    title(&mut out, &spec.title, w / 2.0);
    axes(&mut out, top, 1.0, "global affinity");
    let slot = PLOT_W / spec.groups.len() as f64;
    for (k, (name, b)) in spec.groups.iter().enumerate() {
        let cx = LEFT + slot * (k as f64 + 0.5);
        let bw = (slot * 0.5).min(60.0);
        let color = PALETTE[k % PALETTE.len()];
        let _ = writeln!(
            out,
            r##"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="#000000"/>"##,
            y(b.whisker_low),
            y(b.whisker_high)
        );
        for wv in [b.whisker_low, b.whisker_high] {
            let _ = writeln!(
                out,
                r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#000000"/>"##,
                cx - bw / 4.0,
                y(wv),
                cx + bw / 4.0,
                y(wv)
            );
        }
        let _ = writeln!(
            out,
            r##"<rect x="{:.2}" y="{:.2}" width="{bw:.2}" height="{:.2}" fill="{color}" fill-opacity="0.6" stroke="#000000"><title>{}: n={} median={:.3}</title></rect>"##,
            cx - bw / 2.0,
            y(b.q3),
            (y(b.q1) - y(b.q3)).max(0.5),
            esc(name),
            b.n,
            b.median
        );
        let _ = writeln!(
            out,
            r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#000000" stroke-width="2"/>"##,
            cx - bw / 2.0,
            y(b.median),
            cx + bw / 2.0,
            y(b.median)
        );
        for &o in &b.outliers {
            let _ = writeln!(out, r##"<circle cx="{cx:.2}" cy="{:.2}" r="2" fill="none" stroke="#000000"/>"##, y(o));
        }
        let _ = writeln!(out, r##"<text x="{cx:.2}" y="{:.1}" text-anchor="middle">{}</text>"##, top + PLOT_H + 14.0, esc(name));
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// ROC curve(s) with the chance diagonal.
pub fn render_roc(curves: &[(String, Vec<(f64, f64)>)], title_text: Option<String>) -> Result<String> {
    let top = if title_text.is_some() { 30.0 } else { 10.0 };
    let side = PLOT_H;
    let (w, h) = (LEFT + side + 160.0, top + side + 40.0);
    let mut out = String::new();
    header(&mut out, w, h);
    title(&mut out, &title_text, w / 2.0);
    let px = |x: f64| LEFT + side * x;
    let py = |y: f64| top + side * (1.0 - y);
    let _ = writeln!(
        out,
        r##"<rect x="{LEFT:.1}" y="{top:.1}" width="{side:.1}" height="{side:.1}" fill="none" stroke="#000000"/>"##
    );
    let _ = writeln!(
        out,
        r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#999999" stroke-dasharray="4 3"/>"##,
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );
    for (k, (_, pts)) in curves.iter().enumerate() {
        let mut d = String::new();
        for (i, (x, y)) in pts.iter().enumerate() {
            let _ = write!(d, "{}{:.2},{:.2} ", if i == 0 { "M" } else { "L" }, px(*x), py(*y));
        }
        let _ = writeln!(
            out,
            r##"<path d="{}" fill="none" stroke="{}" stroke-width="1.5"/>"##,
            d.trim_end(),
            PALETTE[k % PALETTE.len()]
        );
    }
    let _ = writeln!(out, r##"<text x="{:.1}" y="{:.1}" text-anchor="middle">false positive rate</text>"##, px(0.5), top + side + 28.0);
    let names: Vec<&str> = curves.iter().map(|c| c.0.as_str()).collect();
    legend(&mut out, &names, LEFT + side + 16.0, top);
    out.push_str("</svg>\n");
    Ok(out)
}

// ---------------------------------------------------------------------------
// result files

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    pub name: String,
    pub config_fingerprint: String,
    pub corpus_report: CorpusReport,
    pub summary: BTreeMap<String, Value>,
}

/// Serialized summary; byte-stable for identical results.
pub fn summary_json(result: &ExperimentResult) -> String {
    let file = SummaryFile {
        name: result.name.clone(),
        config_fingerprint: result.config_fingerprint.clone(),
        corpus_report: result.corpus_report.clone(),
        summary: result.summary.clone(),
    };
    serde_json::to_string_pretty(&file).expect("summary serializes") + "\n"
}

pub fn records_jsonl(result: &ExperimentResult) -> String {
    let mut out = String::new();
    for r in &result.per_example {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Writes summary, records, tables and figures under `dir`.
pub fn write_result(result: &ExperimentResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io(dir)(&e))?;
    let p = dir.join("summary.json");
    fs::write(&p, summary_json(result)).map_err(|e| io(&p)(&e))?;
    let p = dir.join("records.jsonl");
    fs::write(&p, records_jsonl(result)).map_err(|e| io(&p)(&e))?;
    emit_tables(result, &dir.join("tables"))?;
    emit_figures(result, &dir.join("figures"))?;
    Ok(())
}

pub fn load_result(dir: &Path) -> Result<ExperimentResult> {
    let p = dir.join("summary.json");
    let text = fs::read_to_string(&p).map_err(|e| io(&p)(&e))?;
    let s: SummaryFile = serde_json::from_str(&text).map_err(|e| io(&p)(&e))?;
    let p = dir.join("records.jsonl");
    let f = fs::File::open(&p).map_err(|e| io(&p)(&e))?;
    let mut per_example = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| io(&p)(&e))?;
        if !line.trim().is_empty() {
            per_example.push(serde_json::from_str(&line).map_err(|e| io(&p)(&e))?);
        }
    }
    Ok(ExperimentResult {
        name: s.name,
        per_example,
        summary: s.summary,
        corpus_report: s.corpus_report,
        config_fingerprint: s.config_fingerprint,
    })
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| io(path)(&e))?;
        w.write_record(&self.header).map_err(|e| io(path)(&e))?;
        for r in &self.rows {
            w.write_record(r).map_err(|e| io(path)(&e))?;
        }
        w.flush().map_err(|e| io(path)(&e))
    }
}

fn s(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn field(v: &Value, k: &str) -> String {
    v.get(k).map(s).unwrap_or_default()
}

fn matrix_table(roles: &[String], m: &Value) -> Table {
    let mut header = vec!["row"];
    header.extend(roles.iter().map(String::as_str));
    let mut t = Table::new(&header);
    if let Some(rows) = m.as_array() {
        for (role, row) in roles.iter().zip(rows) {
            let mut r = vec![role.clone()];
            r.extend(row.as_array().into_iter().flatten().map(s));
            t.push(r);
        }
    }
    t
}

/// Writes the CSV tables for a result. Every table has a header row even
/// when empty.
pub fn emit_tables(result: &ExperimentResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io(dir)(&e))?;
    let mut tables: Vec<(&str, Table)> = Vec::new();
    let mut rej = Table::new(&["id", "reason"]);
    for r in &result.corpus_report.rejected {
        rej.push(vec![r.id.clone(), r.reason.clone()]);
    }
    tables.push(("rejections", rej));
    let recs = &result.per_example;
    let sum = &result.summary;
    match result.name.parse::<ExperimentKind>() {
        Ok(ExperimentKind::Cec) => {
            let mut t = Table::new(&["id", "label", "original_label", "so_index", "affinity", "text"]);
            for r in recs {
                t.push(["id", "label", "original_label", "so_index", "affinity", "text"].map(|k| field(r, k)).to_vec());
            }
            tables.push(("scores", t));
            let mut t = Table::new(&["threshold", "accuracy"]);
            if let Some(Value::Object(m)) = sum.get("threshold_sweep") {
                for (k, v) in m {
                    t.push(vec![k.clone(), s(v)]);
                }
            }
            tables.push(("threshold_sweep", t));
        }
        Ok(ExperimentKind::Multithat) => {
            let mut t = Table::new(&["id", "so", "gold", "that", "that_to_so", "so_to_that", "predicted"]);
            for r in recs {
                for p in r.get("pairs").and_then(Value::as_array).into_iter().flatten() {
                    for c in p.get("candidates").and_then(Value::as_array).into_iter().flatten() {
                        t.push(vec![
                            field(r, "id"),
                            field(p, "so"),
                            field(p, "gold"),
                            field(c, "that"),
                            field(c, "that_to_so"),
                            field(c, "so_to_that"),
                            field(p, "predicted"),
                        ]);
                    }
                }
            }
            tables.push(("candidates", t));
        }
        Ok(ExperimentKind::Eapaap) => {
            let roles: Vec<String> = sum
                .get("roles")
                .and_then(|v| serde_json::from_value(v.clone()).ok())
                .unwrap_or_default();
            for key in ["mean_eap", "mean_aap", "abs_diff"] {
                tables.push((key, matrix_table(&roles, sum.get(key).unwrap_or(&Value::Null))));
            }
            let mut t = Table::new(&["id", "label", "features", "pc1", "pc2"]);
            let proj = sum.get("projection").and_then(Value::as_array);
            for (k, f) in sum.get("features").and_then(Value::as_array).into_iter().flatten().enumerate() {
                let xy = proj.and_then(|p| p.get(k));
                t.push(vec![
                    field(f, "id"),
                    field(f, "label"),
                    field(f, "values"),
                    xy.and_then(|p| p.get(0)).map(s).unwrap_or_default(),
                    xy.and_then(|p| p.get(1)).map(s).unwrap_or_default(),
                ]);
            }
            tables.push(("features", t));
        }
        Ok(ExperimentKind::Cogs) => {
            let mut t = Table::new(&["id", "construction", "role", "word", "affinity", "top_fills"]);
            for r in recs {
                for sl in r.get("slots").and_then(Value::as_array).into_iter().flatten() {
                    t.push(vec![
                        field(r, "id"),
                        field(r, "construction"),
                        field(sl, "role"),
                        field(sl, "word"),
                        field(sl, "affinity"),
                        fills(sl),
                    ]);
                }
            }
            tables.push(("fixed_words", t));
        }
        Ok(ExperimentKind::Magpie) => {
            let mut t = Table::new(&["id", "label", "idiom", "sentence_words", "word", "chars", "affinity"]);
            for r in recs {
                for w in r.get("words").and_then(Value::as_array).into_iter().flatten() {
                    t.push(vec![
                        field(r, "id"),
                        field(r, "label"),
                        field(r, "idiom"),
                        field(r, "sentence_words"),
                        field(w, "word"),
                        field(w, "chars"),
                        field(w, "affinity"),
                    ]);
                }
            }
            tables.push(("spans", t));
            for key in ["roc_filtered", "roc_unfiltered"] {
                let mut t = Table::new(&["fpr", "tpr"]);
                for p in sum.get(key).and_then(|v| v.get("points")).and_then(Value::as_array).into_iter().flatten() {
                    t.push(vec![p.get(0).map(s).unwrap_or_default(), p.get(1).map(s).unwrap_or_default()]);
                }
                tables.push((key, t));
            }
            let mut t = Table::new(&["idiom", "figurative", "literal", "figurative_sentences", "literal_sentences"]);
            if let Some(Value::Object(m)) = sum.get("per_idiom") {
                for (k, v) in m {
                    t.push(vec![
                        k.clone(),
                        field(v, "figurative"),
                        field(v, "literal"),
                        field(v, "figurative_sentences"),
                        field(v, "literal_sentences"),
                    ]);
                }
            }
            tables.push(("per_idiom", t));
        }
        Ok(ExperimentKind::Npn) => {
            let mut t = Table::new(&["id", "set", "prep", "acceptability", "noun", "slot", "affinity"]);
            for r in recs {
                for (k, a) in r.get("affinities").and_then(Value::as_array).into_iter().flatten().enumerate() {
                    t.push(vec![
                        field(r, "id"),
                        field(r, "set"),
                        field(r, "prep"),
                        field(r, "acceptability"),
                        field(r, "noun"),
                        (k + 1).to_string(),
                        s(a),
                    ]);
                }
            }
            tables.push(("nouns", t));
        }
        Ok(ExperimentKind::Cc) => {
            let mut t = Table::new(&[
                "id",
                "role",
                "word",
                "word_is_comparative",
                "set_score",
                "mass_score",
                "nucleus_size",
                "top_fills",
            ]);
            for r in recs {
                for sl in r.get("slots").and_then(Value::as_array).into_iter().flatten() {
                    t.push(vec![
                        field(r, "id"),
                        field(sl, "role"),
                        field(sl, "word"),
                        field(sl, "word_is_comparative"),
                        field(sl, "set_score"),
                        field(sl, "mass_score"),
                        field(sl, "nucleus_size"),
                        fills(sl),
                    ]);
                }
            }
            tables.push(("slots", t));
        }
        Err(_) => {}
    }
    for (name, t) in tables {
        t.write(&dir.join(format!("{name}.csv")))?;
    }
    Ok(())
}

fn fills(slot: &Value) -> String {
    slot.get("top_fills")
        .and_then(Value::as_array)
        .into_iter()
        .flatten()
        .map(|f| field(f, "text"))
        .collect::<Vec<_>>()
        .join("|")
}

fn box_groups(v: Option<&Value>, path: &[&str]) -> Vec<(String, BoxStats)> {
    let Some(Value::Object(m)) = v else { return Vec::new() };
    m.iter()
        .filter_map(|(k, v)| {
            let mut cur = v;
            for p in path {
                cur = cur.get(*p)?;
            }
            serde_json::from_value(cur.clone()).ok().map(|b| (k.clone(), b))
        })
        .collect()
}

/// Renders the figures for a result into `dir`.
pub fn emit_figures(result: &ExperimentResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io(dir)(&e))?;
    let mut figs: Vec<(String, String)> = Vec::new();
    let sum = &result.summary;
    let bin_width = sum.get("histogram_bin_width").and_then(Value::as_f64).unwrap_or(0.05);
    match result.name.parse::<ExperimentKind>() {
        Ok(ExperimentKind::Cec) => {
            let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for r in &result.per_example {
                if let (Some(l), Some(a)) = (r.get("label").and_then(Value::as_str), r.get("affinity").and_then(Value::as_f64)) {
                    groups.entry(l.to_string()).or_default().push(a);
                }
            }
            if !groups.is_empty() {
                figs.push((
                    "histogram".into(),
                    render_histogram(&HistogramSpec {
                        groups: groups.into_iter().collect(),
                        lo: 0.0,
                        hi: 1.0,
                        bin_width,
                        title: Some("global affinity of so".into()),
                        x_label: Some("P(so)".into()),
                    })?,
                ));
            }
        }
        Ok(ExperimentKind::Eapaap) => {
            let roles: Vec<String> = sum
                .get("roles")
                .and_then(|v| serde_json::from_value(v.clone()).ok())
                .unwrap_or_default();
            let highlights: Vec<(usize, usize)> = sum
                .get("top_cells")
                .and_then(Value::as_array)
                .into_iter()
                .flatten()
                .filter_map(|c| {
                    let r = roles.iter().position(|x| Some(x.as_str()) == c.get("row").and_then(Value::as_str))?;
                    let k = roles.iter().position(|x| Some(x.as_str()) == c.get("col").and_then(Value::as_str))?;
                    Some((r, k))
                })
                .collect();
            for key in ["mean_eap", "mean_aap", "abs_diff"] {
                if let Some(m) = sum.get(key).and_then(|v| serde_json::from_value::<Vec<Vec<f64>>>(v.clone()).ok()) {
                    let vmax = if key == "abs_diff" {
                        m.iter().flatten().copied().fold(0.0, f64::max).max(1e-12)
                    } else {
                        1.0
                    };
                    let mut spec = HeatmapSpec::new(roles.clone(), m);
                    spec.vmax = vmax;
                    spec.title = Some(key.replace('_', " "));
                    if key == "abs_diff" {
                        spec.highlights = highlights.clone();
                    }
                    figs.push((key.to_string(), render_heatmap(&spec)?));
                }
            }
        }
        Ok(ExperimentKind::Cogs) => {
            let groups = box_groups(sum.get("constructions"), &["box"]);
            if !groups.is_empty() {
                figs.push((
                    "boxplot".into(),
                    render_boxplot(&BoxPlotSpec {
                        groups,
                        title: Some("fixed-word global affinity".into()),
                    })?,
                ));
            }
        }
        Ok(ExperimentKind::Npn) => {
            if let Some(Value::Object(sets)) = sum.get("sets") {
                for (set, views) in sets {
                    for view in ["all", "acceptable"] {
                        let groups = box_groups(views.get(view).and_then(|v| v.get("by_prep")), &["box"]);
                        if !groups.is_empty() {
                            figs.push((
                                format!("{set}_{view}"),
                                render_boxplot(&BoxPlotSpec {
                                    groups,
                                    title: Some(format!("noun global affinity ({set}, {view})")),
                                })?,
                            ));
                        }
                    }
                }
            }
        }
        Ok(ExperimentKind::Magpie) => {
            let curves: Vec<(String, Vec<(f64, f64)>)> = ["roc_filtered", "roc_unfiltered"]
                .iter()
                .filter_map(|k| {
                    let v = sum.get(*k)?;
                    let pts = serde_json::from_value(v.get("points")?.clone()).ok()?;
                    let auc = v.get("auc")?.as_f64()?;
                    Some((format!("{} (AUC {auc:.3})", k.trim_start_matches("roc_")), pts))
                })
                .collect();
            if !curves.is_empty() {
                figs.push(("roc".into(), render_roc(&curves, Some("figurative vs literal".into()))?));
            }
        }
        Ok(ExperimentKind::Cc) => {
            let scores: Vec<f64> = result
                .per_example
                .iter()
                .flat_map(|r| r.get("slots").and_then(Value::as_array).cloned().unwrap_or_default())
                .filter(|s| s.get("word_is_comparative").and_then(Value::as_bool) == Some(true))
                .filter_map(|s| s.get("set_score").and_then(Value::as_f64))
                .collect();
            if !scores.is_empty() {
                figs.push((
                    "scores".into(),
                    render_histogram(&HistogramSpec {
                        groups: vec![("comparative slots".into(), scores)],
                        lo: 0.0,
                        hi: 1.0,
                        bin_width,
                        title: Some("comparative score".into()),
                        x_label: None,
                    })?,
                ));
            }
        }
        Ok(ExperimentKind::Multithat) | Err(_) => {}
    }
    for (name, svg) in figs {
        let p = dir.join(format!("{name}.svg"));
        fs::write(&p, svg).map_err(|e| io(&p)(&e))?;
    }
    Ok(())
}
