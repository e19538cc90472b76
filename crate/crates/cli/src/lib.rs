// SPDX-License-Identifier: MIT OR Apache-2.0

//! The `cxaff` command line and HTTP service.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error.

pub mod backend;
pub mod service;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use cxaffinity::datasets::{self, CountServiceClient, CountServiceConfig};
use cxaffinity::engine::{AffinityReport, EngineOptions};
use cxaffinity::experiments::{self, Context, ExperimentConfig, ExperimentKind};
use cxaffinity::report::{self, HeatmapSpec, StripSpec};
use thiserror::Error;

use crate::backend::{BackendSpec, Loaded};
use crate::service::ServeConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "cxaff", version, about = "Affinity measures over masked language models")]
pub struct Cli {
    /// mock:<fixture.json> or model:<dir>
    #[arg(long, global = true, env = "CXAFF_BACKEND")]
    pub backend: Option<BackendSpec>,

    /// Print JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Affinity of a single sentence.
    #[command(subcommand)]
    Affinity(AffinityCommand),
    /// Run an experiment pipeline.
    Exp(ExpArgs),
    /// Re-render tables and figures of a result directory.
    Render {
        dir: PathBuf,
    },
    /// Start the HTTP service.
    Serve(ServeArgs),
    /// Print nouns whose N-P-N strings are unattested in a count service.
    Challenge(ChallengeArgs),
}

#[derive(Debug, Subcommand)]
pub enum AffinityCommand {
    /// Global affinity of every word.
    Global(SentenceArgs),
    /// Local affinity matrix (rows: masked context, columns: target).
    Matrix(SentenceArgs),
}

#[derive(Debug, Args)]
pub struct SentenceArgs {
    pub sentence: String,
    /// Word index to keep masked throughout (repeatable).
    #[arg(long = "mask", value_name = "INDEX")]
    pub masks: Vec<usize>,
    /// Also write the figure as SVG.
    #[arg(long, value_name = "FILE")]
    pub svg: Option<PathBuf>,
    /// Top of the heatmap colour scale.
    #[arg(long, default_value_t = 1.0)]
    pub vmax: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
}

#[derive(Debug, Args)]
pub struct ExpArgs {
    #[arg(value_parser = parse_kind)]
    pub kind: ExperimentKind,
    /// TOML file with the pipeline parameters.
    #[arg(long)]
    pub config: PathBuf,
    /// Results root; output goes to <out>/<experiment>.
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
    /// Ignore records left by an interrupted run.
    #[arg(long)]
    pub fresh: bool,
}

fn parse_kind(s: &str) -> Result<ExperimentKind, String> {
    s.parse()
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// TOML service configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
}

#[derive(Debug, Args)]
pub struct ChallengeArgs {
    /// One noun per line.
    #[arg(long)]
    pub nouns: PathBuf,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub corpus: Option<String>,
    /// JSON file caching counts between runs.
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

/// Parses `argv` and runs the command; returns the exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(argv, out, err, |_| {})
}

/// As [`run`], calling `on_parsed` before the command starts (the binary
/// sets up logging there).
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write, on_parsed: impl FnOnce(&Cli)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                1
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    on_parsed(&cli);
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn need_backend(cli: &Cli) -> Result<&BackendSpec, CliError> {
    cli.backend
        .as_ref()
        .ok_or_else(|| CliError::Usage("a backend is required (--backend mock:<fixture>|model:<dir>)".into()))
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Affinity(cmd) => {
            let (args, matrix) = match cmd {
                AffinityCommand::Global(a) => (a, false),
                AffinityCommand::Matrix(a) => (a, true),
            };
            if args.sentence.trim().is_empty() {
                return Err(CliError::Usage("sentence is empty".into()));
            }
            let loaded = need_backend(&cli)?.load()?;
            affinity(&loaded, args, matrix, cli.json, out)
        }
        Command::Exp(args) => {
            let spec = need_backend(&cli)?;
            let cfg = load_experiment_config(&args.config, args.fresh)?;
            let loaded = spec.load()?;
            experiment(&loaded, args, &cfg, cli.json, out)
        }
        Command::Render { dir } => {
            let result = report::load_result(dir).map_err(runtime)?;
            report::write_result(&result, dir).map_err(runtime)?;
            writeln!(out, "rendered {}", dir.display()).map_err(runtime)
        }
        Command::Serve(args) => {
            let mut cfg = match &args.config {
                Some(p) => ServeConfig::from_toml_file(p)?,
                None => ServeConfig::default(),
            };
            cfg.apply_env(|k| std::env::var(k).ok())?;
            if let Some(b) = &cli.backend {
                cfg.backend = Some(b.clone());
            }
            if let Some(h) = &args.host {
                cfg.host = h.clone();
            }
            if let Some(p) = args.port {
                cfg.port = p;
            }
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(runtime)?;
            rt.block_on(service::serve(cfg))
        }
        Command::Challenge(args) => challenge(args, out),
    }
}

fn affinity(loaded: &Loaded, args: &SentenceArgs, matrix: bool, json: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let opts = EngineOptions {
        batch_size: args.batch_size.max(1),
        parallel: true,
    };
    let masks = (!args.masks.is_empty()).then(|| args.masks.clone());
    let n = cxaffinity::tokenization::segment_words(&args.sentence).len();
    if let Some(bad) = args.masks.iter().find(|&&i| i >= n) {
        return Err(CliError::Usage(format!("--mask {bad} out of range for {n} words")));
    }
    let resp = service::analyze_sentence(loaded, &opts, &args.sentence, matrix, &masks).map_err(|e| runtime(e.message))?;
    let r = &resp.report;
    if let Some(path) = &args.svg {
        let svg = match &r.matrix {
            Some(m) => {
                let mut spec = HeatmapSpec::new(r.words.clone(), m.clone());
                spec.vmax = args.vmax;
                report::render_heatmap(&spec)
            }
            None => report::render_strip(&StripSpec {
                labels: r.words.clone(),
                values: r.global.clone(),
                title: None,
            }),
        }
        .map_err(runtime)?;
        std::fs::write(path, svg).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    }
    if json {
        let text = serde_json::to_string_pretty(r).map_err(runtime)?;
        writeln!(out, "{text}").map_err(runtime)
    } else {
        write_text_report(r, out).map_err(runtime)
    }
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
}

fn write_text_report(r: &AffinityReport, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "model: {}", r.model_id)?;
    match &r.matrix {
        None => {
            let w = r.words.iter().map(|w| w.chars().count()).max().unwrap_or(0);
            for (i, (word, g)) in r.words.iter().zip(&r.global).enumerate() {
                writeln!(out, "{i:>3}  {word:<w$}  {}", fmt_cell(*g))?;
            }
        }
        Some(m) => {
            let w = r.words.iter().map(|w| w.chars().count()).max().unwrap_or(0).max(6);
            let computed = r.flags.computed_columns.clone().unwrap_or_else(|| vec![true; m.len()]);
            write!(out, "{:<w$}", "")?;
            for word in &r.words {
                write!(out, "  {word:>w$}")?;
            }
            writeln!(out)?;
            for (word, row) in r.words.iter().zip(m) {
                write!(out, "{word:<w$}")?;
                for (v, ok) in row.iter().zip(&computed) {
                    let cell = if *ok { format!("{v:.4}") } else { "-".into() };
                    write!(out, "  {cell:>w$}")?;
                }
                writeln!(out)?;
            }
            write!(out, "{:<w$}", "global")?;
            for g in &r.global {
                write!(out, "  {:>w$}", fmt_cell(*g))?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

/// Reads an experiment TOML file; relative paths in it are taken relative
/// to the file.
pub fn load_experiment_config(path: &Path, fresh: bool) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| runtime(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    if cfg.data.as_os_str().is_empty() {
        return Err(runtime(format!("{}: `data` is not set", path.display())));
    }
    resolve(&mut cfg.data);
    cfg.overlay.iter_mut().for_each(resolve);
    cfg.comparative_lexicon.iter_mut().for_each(resolve);
    if fresh {
        cfg.resume = false;
    }
    Ok(cfg)
}

fn experiment(
    loaded: &Loaded,
    args: &ExpArgs,
    cfg: &ExperimentConfig,
    json: bool,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let dir = args.out.join(args.kind.name());
    let ctx = Context {
        tokenizer: Arc::clone(&loaded.tokenizer),
        backend: Arc::clone(&loaded.backend),
    };
    log::info!("running {} on {}", args.kind, cfg.data.display());
    let result = experiments::run_experiment(args.kind, cfg, &ctx, Some(&dir)).map_err(runtime)?;
    report::write_result(&result, &dir).map_err(runtime)?;
    experiments::clear_partial(&dir);
    if json {
        writeln!(out, "{}", report::summary_json(&result)).map_err(runtime)?;
    } else {
        let r = &result.corpus_report;
        writeln!(
            out,
            "{}: {} examples, {} accepted, {} rejected",
            result.name,
            r.total,
            r.accepted,
            r.rejected.len()
        )
        .map_err(runtime)?;
        for (k, v) in &result.summary {
            if !(v.is_object() || v.is_array()) {
                writeln!(out, "  {k}: {v}").map_err(runtime)?;
            }
        }
        writeln!(out, "wrote {}", dir.display()).map_err(runtime)?;
    }
    Ok(())
}

fn challenge(args: &ChallengeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.nouns)
        .map_err(|e| runtime(format!("cannot read {}: {e}", args.nouns.display())))?;
    let nouns: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect();
    let mut config = CountServiceConfig::default();
    if let Some(e) = &args.endpoint {
        config.endpoint = e.clone();
    }
    if let Some(c) = &args.corpus {
        config.corpus = c.clone();
    }
    config.cache_path = args.cache.clone();
    let client = CountServiceClient::new(config).map_err(runtime)?;
    let kept = datasets::filter_unattested(&nouns, &datasets::NPN_PREPOSITIONS, &client).map_err(runtime)?;
    for n in kept {
        writeln!(out, "{n}").map_err(runtime)?;
    }
    Ok(())
}
