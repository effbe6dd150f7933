//! Command-line front end for the bookcoref toolkit.
//!
//! Every subcommand prints a plain-text summary (or JSON with `--json`) and
//! writes a JSON report to the output directory. Settings come from flags,
//! then from the `--config` file, then from defaults; the resolved settings
//! and their SHA-256 are embedded in every report.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context};
use bookcoref_core::formats::{read_path, write_path};
use bookcoref_core::harness::{evaluate, summary_table, write_run, Setting, SettingKind};
use bookcoref_core::memsim::{self, cluster_stream, sweep_violations, Policy};
use bookcoref_core::metrics::{corpus_stats, linking_prf, pct, render_stats_table, Prf, ScoreOptions};
use bookcoref_core::pipeline::service::{
    CachedTransport, HttpTransport, ServiceExpander, ServiceJudge, ServiceLinker, Transport,
};
use bookcoref_core::pipeline::{
    run as run_pipeline, Components, ConstJudge, GoldIndex, IdentityExpander, LinkerChoice, OracleExpander,
    OracleJudge, OracleLinker, PatternLinker, PipelineConfig, StageFlags, ABLATION_ROWS,
};
use bookcoref_core::synth::{synth_corpus, SynthConfig};
use bookcoref_core::windowing::{split_corpus, BoundaryRule, DEFAULT_GROUP_SIZE, DEFAULT_WINDOW_LEN};
use bookcoref_core::{validate, CorpusFile, Entry, Stage};
use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub const CACHE_ENV: &str = "BOOKCOREF_CACHE_DIR";
pub const DEFAULT_OUT_DIR: &str = "bookcoref-out";

#[derive(Debug, Parser)]
#[command(
    name = "bookcoref",
    version,
    about = "Book-scale coreference: data tools, scoring, annotation pipeline and memory simulation"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Worker threads for scoring and concurrent service calls
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    /// JSON config file; flags given on the command line take precedence
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for randomized behavior (synthetic data)
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Directory for JSON reports and run artifacts [default: bookcoref-out]
    #[arg(long, global = true, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Print the JSON report on stdout instead of the text summary
    #[arg(long, global = true)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert between JSONL and CoNLL (format chosen by file extension)
    Convert(ConvertArgs),
    /// Check a corpus file against the data contract
    Validate(InputArgs),
    /// Corpus statistics
    Stats(InputArgs),
    /// Cut every document into window documents
    Split(SplitArgs),
    /// Score a response corpus against a key corpus
    Score(ScoreArgs),
    /// Character-linking precision and recall of a response corpus
    ScoreLinking(PairArgs),
    /// Annotation pipeline
    #[command(subcommand)]
    Pipeline(PipelineCommand),
    /// Replay gold chains through a bounded entity memory
    Simulate(SimulateArgs),
    /// Generate a seeded synthetic corpus
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Corpus file (.jsonl or .conll)
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// Source file (.jsonl or .conll)
    pub input: PathBuf,
    /// Destination file (.jsonl or .conll)
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct PairArgs {
    /// Key corpus
    pub key: PathBuf,
    /// Response corpus
    pub response: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Corpus file
    pub input: PathBuf,
    /// Maximum window length in tokens [default: 1500]
    #[arg(long, value_name = "N")]
    pub window_len: Option<usize>,
    /// Output corpus [default: <out-dir>/split.jsonl]
    #[arg(long, short, value_name = "FILE")]
    pub output: Option<PathBuf>,
}

fn setting_parser() -> impl TypedValueParser<Value = SettingKind> {
    PossibleValuesParser::new(["full", "split", "gold+window"]).map(|s| s.parse::<SettingKind>().expect("listed value"))
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub files: PairArgs,
    /// Evaluation setting [default: full]
    #[arg(long, value_parser = setting_parser())]
    pub setting: Option<SettingKind>,
    /// Window length for the split and gold+window settings [default: 1500]
    #[arg(long, value_name = "N")]
    pub window_len: Option<usize>,
    /// Keep single-mention clusters instead of dropping them
    #[arg(long)]
    pub keep_singletons: bool,
}

#[derive(Debug, Subcommand)]
pub enum PipelineCommand {
    /// Run the pipeline over every document of a corpus
    Run(PipelineRunArgs),
    /// List the ablation rows accepted by `pipeline run --row`
    Rows,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkerKind {
    /// Exact matching of character names
    Pattern,
    /// Gold explicit mentions (needs gold clusters)
    Oracle,
    /// Remote linking service
    Service,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JudgeKind {
    /// Keep every link
    Accept,
    /// Drop every link
    Reject,
    /// Keep links found in gold
    Oracle,
    /// Remote judge service
    Service,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpanderKind {
    /// Return the seeds unchanged
    Identity,
    /// Complete clusters from gold
    Oracle,
    /// Remote expansion service
    Service,
}

#[derive(Debug, Args)]
pub struct PipelineRunArgs {
    /// Input corpus; existing clusters are ignored except as oracle gold
    pub input: PathBuf,
    /// Comma list drawn from init,refine,window,group [default: all]
    #[arg(long, value_name = "LIST")]
    pub stages: Option<String>,
    /// Ablation row 1-7 (see `pipeline rows`); sets the stages
    #[arg(long, value_name = "N", value_parser = clap::value_parser!(u8).range(1..=7))]
    pub row: Option<u8>,
    /// Linker [default: pattern]
    #[arg(long, value_enum)]
    pub linker: Option<LinkerKind>,
    /// Link judge [default: accept]
    #[arg(long, value_enum)]
    pub judge: Option<JudgeKind>,
    /// Cluster expander [default: identity]
    #[arg(long, value_enum)]
    pub expander: Option<ExpanderKind>,
    /// Gold corpus for oracle components [default: the input]
    #[arg(long, value_name = "FILE")]
    pub gold: Option<PathBuf>,
    /// Base URL of the model service
    #[arg(long, value_name = "URL")]
    pub service_url: Option<String>,
    /// Service response cache directory [env: BOOKCOREF_CACHE_DIR]
    #[arg(long, value_name = "DIR")]
    pub cache_dir: Option<PathBuf>,
    /// Answer service calls from the cache only
    #[arg(long)]
    pub replay: bool,
    /// Service request timeout in seconds [default: 120]
    #[arg(long, value_name = "SECS")]
    pub timeout: Option<u64>,
    /// Window length in tokens [default: 1500]
    #[arg(long, value_name = "N")]
    pub window_len: Option<usize>,
    /// Windows per group [default: 10]
    #[arg(long, value_name = "N")]
    pub group_size: Option<usize>,
    /// Window boundary rule [default: mention-safe]
    #[arg(long, value_parser = PossibleValuesParser::new(["strict", "mention-safe"]).map(|s| s.parse::<BoundaryRule>().expect("listed value")))]
    pub boundary: Option<BoundaryRule>,
    /// Output corpus of final clusters [default: <out-dir>/predictions.jsonl]
    #[arg(long, short, value_name = "FILE")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Unbounded,
    Lru,
    Dual,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Gold corpus
    pub input: PathBuf,
    /// Memory policy [default: dual]
    #[arg(long, value_enum)]
    pub policy: Option<PolicyKind>,
    /// Capacity: one value for lru, two (L G) for dual
    #[arg(long, num_args = 1..=2, value_name = "K")]
    pub capacity: Option<Vec<usize>>,
    /// Capacity sweep A..B (inclusive); dual sweeps use L = G = k
    #[arg(long, value_name = "A..B", conflicts_with = "capacity")]
    pub sweep: Option<String>,
    /// Include the per-step event log in the JSON report
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of documents [default: 3]
    #[arg(long, value_name = "N")]
    pub docs: Option<usize>,
    /// Tokens per document [default: 76419]
    #[arg(long, value_name = "N")]
    pub tokens: Option<usize>,
    /// Characters per document [default: 22]
    #[arg(long, value_name = "N")]
    pub characters: Option<usize>,
    /// Mentions per document [default: 7844]
    #[arg(long, value_name = "N")]
    pub mentions: Option<usize>,
    /// Output corpus [default: <out-dir>/synth.jsonl]
    #[arg(long, short, value_name = "FILE")]
    pub output: Option<PathBuf>,
}

/// Settings accepted in a `--config` file. Any key may be omitted.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub window_len: Option<usize>,
    pub group_size: Option<usize>,
    pub boundary_rule: Option<BoundaryRule>,
    pub setting: Option<String>,
    pub keep_singletons: Option<bool>,
    pub stages: Option<String>,
    pub row: Option<u8>,
    pub linker: Option<LinkerKind>,
    pub judge: Option<JudgeKind>,
    pub expander: Option<ExpanderKind>,
    pub service_url: Option<String>,
    pub cache_dir: Option<PathBuf>,
    pub timeout: Option<u64>,
    pub retries: Option<u32>,
    pub judge_context_words: Option<usize>,
    pub policy: Option<PolicyKind>,
    pub capacity: Option<Vec<usize>>,
    pub sweep: Option<String>,
    pub synth: Option<SynthConfig>,
}

/// Marker for a run that finished but found the input unacceptable.
#[derive(Debug)]
struct Rejected(String);

impl std::fmt::Display for Rejected {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Rejected {}

/// 2 for filesystem failures, 1 for everything else.
pub fn exit_code(e: &anyhow::Error) -> i32 {
    for cause in e.chain() {
        if let Some(ce) = cause.downcast_ref::<bookcoref_core::Error>() {
            return if ce.is_io() { 2 } else { 1 };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

/// Full `--help` text of the program and every subcommand, for snapshots.
pub fn help_text() -> String {
    fn walk(cmd: &mut clap::Command, path: &str, out: &mut String) {
        out.push_str(&format!("==> {path} --help\n"));
        out.push_str(&cmd.render_long_help().to_string());
        out.push('\n');
        let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
        for name in names {
            if name == "help" {
                continue;
            }
            let sub = cmd.find_subcommand_mut(&name).expect("listed subcommand");
            walk(sub, &format!("{path} {name}"), out);
        }
    }
    let mut cmd = Cli::command();
    cmd.build();
    let mut out = String::new();
    walk(&mut cmd, "bookcoref", &mut out);
    out
}

struct Ctx {
    file: FileConfig,
    jobs: Option<usize>,
    seed: u64,
    out_dir: PathBuf,
    json: bool,
}

impl Ctx {
    fn out_path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn ensure_out_dir(&self) -> anyhow::Result<()> {
        std::fs::create_dir_all(&self.out_dir).with_context(|| format!("creating {}", self.out_dir.display()))
    }

    /// Print the summary and write `<out-dir>/<name>.json`.
    fn emit(&self, name: &str, config: Value, result: Value, text: &str) -> anyhow::Result<()> {
        let report = json!({
            "command": name,
            "config_hash": config_hash(&config),
            "config": config,
            "result": result,
        });
        self.ensure_out_dir()?;
        let path = self.out_path(&format!("{name}.json"));
        std::fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        let mut stdout = std::io::stdout().lock();
        if self.json {
            writeln!(stdout, "{}", serde_json::to_string_pretty(&report)?)?;
        } else {
            write!(stdout, "{text}")?;
        }
        Ok(())
    }
}

/// SHA-256 of the compact JSON form.
pub fn config_hash(config: &Value) -> String {
    hex::encode(Sha256::digest(config.to_string().as_bytes()))
}

fn load_config(path: &Path) -> anyhow::Result<FileConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| anyhow!(Rejected(format!("config {}: {e}", path.display()))))
}

fn read(path: &Path, stage: Stage) -> anyhow::Result<CorpusFile> {
    Ok(read_path(path, stage)?)
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let g = cli.global;
    let file = match &g.config {
        Some(p) => load_config(p)?,
        None => FileConfig::default(),
    };
    let jobs = g.jobs.or(file.jobs);
    if jobs == Some(0) {
        bail!(Rejected("--jobs must be positive".into()));
    }
    if let Some(n) = jobs {
        // Fails only if a pool already exists, as in repeated in-process calls.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let ctx = Ctx {
        jobs,
        seed: g.seed.or(file.seed).unwrap_or(0),
        out_dir: g
            .out_dir
            .or(file.out_dir.clone())
            .unwrap_or_else(|| DEFAULT_OUT_DIR.into()),
        json: g.json,
        file,
    };
    match cli.command {
        Command::Convert(a) => convert(&ctx, a),
        Command::Validate(a) => validate_cmd(&ctx, a),
        Command::Stats(a) => stats(&ctx, a),
        Command::Split(a) => split(&ctx, a),
        Command::Score(a) => score(&ctx, a),
        Command::ScoreLinking(a) => score_linking(&ctx, a),
        Command::Pipeline(PipelineCommand::Run(a)) => pipeline_run(&ctx, a),
        Command::Pipeline(PipelineCommand::Rows) => pipeline_rows(&ctx),
        Command::Simulate(a) => simulate(&ctx, a),
        Command::Synth(a) => synth(&ctx, a),
    }
}

fn convert(ctx: &Ctx, a: ConvertArgs) -> anyhow::Result<()> {
    let corpus = read(&a.input, Stage::Gold)?;
    write_path(&corpus, &a.output)?;
    let mentions: usize = corpus.entries.iter().map(|e| e.clusters.mention_count()).sum();
    let text = format!(
        "wrote {} documents ({mentions} mentions) to {}\n",
        corpus.len(),
        a.output.display()
    );
    ctx.emit(
        "convert",
        json!({"input": a.input, "output": a.output}),
        json!({"documents": corpus.len(), "mentions": mentions}),
        &text,
    )
}

fn validate_cmd(ctx: &Ctx, a: InputArgs) -> anyhow::Result<()> {
    let corpus = read(&a.input, Stage::Gold)?;
    let mut per_doc = Vec::new();
    let mut text = String::new();
    let mut errors = 0;
    let mut seen = std::collections::BTreeSet::new();
    for e in &corpus.entries {
        let mut r = validate(&e.document, &e.clusters);
        if !seen.insert(e.document.doc_id.clone()) {
            r.errors.push(bookcoref_core::model::Finding {
                code: "duplicate_doc_id".into(),
                location: format!("doc {}", e.document.doc_id),
                message: "document id appears more than once".into(),
            });
        }
        errors += r.errors.len();
        for (level, fs) in [("error", &r.errors), ("warning", &r.warnings)] {
            for f in fs {
                text.push_str(&format!("{level}: {}: {} ({})\n", f.location, f.message, f.code));
            }
        }
        per_doc.push(json!({"doc_id": e.document.doc_id, "report": r}));
    }
    text.push_str(&format!(
        "{}: {} documents, {errors} errors\n",
        if errors == 0 { "ok" } else { "invalid" },
        corpus.len()
    ));
    ctx.emit(
        "validate",
        json!({"input": a.input}),
        json!({"ok": errors == 0, "documents": per_doc}),
        &text,
    )?;
    if errors > 0 {
        bail!(Rejected(format!(
            "{} failed validation with {errors} errors",
            a.input.display()
        )));
    }
    Ok(())
}

fn stats(ctx: &Ctx, a: InputArgs) -> anyhow::Result<()> {
    let corpus = read(&a.input, Stage::Gold)?;
    let total = corpus_stats(&corpus);
    let per_doc: Vec<Value> = corpus
        .entries
        .iter()
        .map(|e| json!({"doc_id": e.document.doc_id, "stats": corpus_stats(&CorpusFile::new(vec![e.clone()]))}))
        .collect();
    let name = a
        .input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    ctx.emit(
        "stats",
        json!({"input": a.input}),
        json!({"total": total, "documents": per_doc}),
        &render_stats_table(&name, &total),
    )
}

fn split(ctx: &Ctx, a: SplitArgs) -> anyhow::Result<()> {
    let window_len = a.window_len.or(ctx.file.window_len).unwrap_or(DEFAULT_WINDOW_LEN);
    let corpus = read(&a.input, Stage::Gold)?;
    let (windows, report) = split_corpus(&corpus, window_len)?;
    let output = match a.output {
        Some(p) => p,
        None => {
            ctx.ensure_out_dir()?;
            ctx.out_path("split.jsonl")
        }
    };
    write_path(&windows, &output)?;
    let text = format!(
        "{} windows; kept {} of {} mentions ({} cross a boundary); wrote {}\n",
        report.windows,
        report.kept_mentions,
        report.original_mentions,
        report.crossings.len(),
        output.display()
    );
    ctx.emit(
        "split",
        json!({"input": a.input, "window_len": window_len, "output": output}),
        serde_json::to_value(&report)?,
        &text,
    )
}

fn score(ctx: &Ctx, a: ScoreArgs) -> anyhow::Result<()> {
    let kind = match (a.setting, &ctx.file.setting) {
        (Some(k), _) => k,
        (None, Some(s)) => s
            .parse()
            .map_err(|e| anyhow!(Rejected(format!("config setting: {e}"))))?,
        (None, None) => SettingKind::FullBook,
    };
    let window_len = a.window_len.or(ctx.file.window_len).unwrap_or(DEFAULT_WINDOW_LEN);
    let setting = Setting { kind, window_len };
    let opts = ScoreOptions {
        keep_singletons: a.keep_singletons || ctx.file.keep_singletons.unwrap_or(false),
    };
    let key = read(&a.files.key, Stage::Gold)?;
    let response = read(&a.files.response, Stage::Prediction)?;
    let run = evaluate(setting, &key, &response, opts)?;
    let config = json!({
        "key": a.files.key,
        "response": a.files.response,
        "setting": setting,
        "options": opts,
        "jobs": ctx.jobs,
    });
    ctx.ensure_out_dir()?;
    write_run(
        &run,
        &json!({"hash": config_hash(&config), "settings": config}),
        &ctx.out_dir,
    )?;
    let mut text = summary_table(&run);
    text.push_str(&format!("CoNLL-F1 {:.1}\n", pct(run.pooled.conll_f1)));
    ctx.emit("score", config, serde_json::to_value(&run)?, &text)
}

fn score_linking(ctx: &Ctx, a: PairArgs) -> anyhow::Result<()> {
    let key = read(&a.key, Stage::Gold)?;
    let response = read(&a.response, Stage::Prediction)?;
    let mut rows = Vec::new();
    let mut missing = Vec::new();
    for e in &key.entries {
        let id = &e.document.doc_id;
        let resp = match response.get(id) {
            Some(r) => r.clusters.clone(),
            None => {
                missing.push(id.clone());
                bookcoref_core::ClusterSet::new(id.clone(), Stage::Prediction)
            }
        };
        rows.push((id.clone(), linking_prf(&e.clusters, &resp)?));
    }
    let prfs: Vec<Prf> = rows.iter().map(|(_, p)| *p).collect();
    let pooled = Prf::pooled(&prfs);
    let macro_mean = Prf::macro_mean(&prfs);
    let w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6);
    let mut text = format!("{:<w$}  {:>6} {:>6} {:>6}\n", "doc", "P", "R", "F1");
    for (name, p) in rows
        .iter()
        .map(|(n, p)| (n.as_str(), p))
        .chain([("pooled", &pooled), ("macro", &macro_mean)])
    {
        text.push_str(&format!(
            "{name:<w$}  {:>6.1} {:>6.1} {:>6.1}\n",
            pct(p.precision),
            pct(p.recall),
            pct(p.f1)
        ));
    }
    let docs: Vec<Value> = rows.iter().map(|(n, p)| json!({"doc_id": n, "linking": p})).collect();
    ctx.emit(
        "score-linking",
        json!({"key": a.key, "response": a.response}),
        json!({"documents": docs, "pooled": pooled, "macro": macro_mean, "missing": missing}),
        &text,
    )
}

#[derive(Debug, Serialize)]
struct PipelineSettings {
    input: PathBuf,
    gold: Option<PathBuf>,
    row: Option<u8>,
    linker: LinkerKind,
    judge: JudgeKind,
    expander: ExpanderKind,
    service_url: Option<String>,
    cache_dir: Option<PathBuf>,
    replay: bool,
    timeout: u64,
    pipeline: PipelineConfig,
}

fn resolve_pipeline(ctx: &Ctx, a: &PipelineRunArgs) -> anyhow::Result<PipelineSettings> {
    let f = &ctx.file;
    let reject = |m: String| anyhow!(Rejected(m));
    let row = a.row.or(f.row);
    let mut linker = a.linker.or(f.linker).unwrap_or(LinkerKind::Pattern);
    let mut stages = match a.stages.as_deref().or(f.stages.as_deref()) {
        Some(s) => StageFlags::parse(s)?,
        None => StageFlags::default(),
    };
    if let Some(n) = row {
        let r = ABLATION_ROWS
            .get(usize::from(n).wrapping_sub(1))
            .ok_or_else(|| reject(format!("no ablation row {n}")))?;
        if a.stages.is_some() {
            bail!(reject("--row and --stages are mutually exclusive".into()));
        }
        stages = r.stages;
        match r.linker {
            LinkerChoice::PatternMatching => linker = LinkerKind::Pattern,
            LinkerChoice::CharacterLinking if linker == LinkerKind::Pattern => {
                bail!(reject(format!(
                    "row {n} needs a character linker (--linker oracle or service)"
                )))
            }
            LinkerChoice::CharacterLinking => {}
        }
    }
    let defaults = PipelineConfig::default();
    let pipeline = PipelineConfig {
        window_len: a.window_len.or(f.window_len).unwrap_or(DEFAULT_WINDOW_LEN),
        group_size: a.group_size.or(f.group_size).unwrap_or(DEFAULT_GROUP_SIZE),
        judge_context_words: f.judge_context_words.unwrap_or(defaults.judge_context_words),
        boundary_rule: a.boundary.or(f.boundary_rule).unwrap_or_default(),
        stages,
        retries: f.retries.unwrap_or(defaults.retries),
        retry_backoff_ms: defaults.retry_backoff_ms,
        max_in_flight: ctx.jobs.unwrap_or(defaults.max_in_flight),
    };
    pipeline.validate()?;
    let cache_dir = a
        .cache_dir
        .clone()
        .or(f.cache_dir.clone())
        .or_else(|| std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(PathBuf::from));
    Ok(PipelineSettings {
        input: a.input.clone(),
        gold: a.gold.clone(),
        row,
        linker,
        judge: a.judge.or(f.judge).unwrap_or(JudgeKind::Accept),
        expander: a.expander.or(f.expander).unwrap_or(ExpanderKind::Identity),
        service_url: a.service_url.clone().or(f.service_url.clone()),
        cache_dir,
        replay: a.replay,
        timeout: a.timeout.or(f.timeout).unwrap_or(120),
        pipeline,
    })
}

fn build_components(s: &PipelineSettings, input: &CorpusFile) -> anyhow::Result<Components> {
    let uses = |oracle: bool, service: bool| (oracle, service);
    let (o1, s1) = uses(s.linker == LinkerKind::Oracle, s.linker == LinkerKind::Service);
    let (o2, s2) = uses(s.judge == JudgeKind::Oracle, s.judge == JudgeKind::Service);
    let (o3, s3) = uses(s.expander == ExpanderKind::Oracle, s.expander == ExpanderKind::Service);

    let gold = if o1 || o2 || o3 {
        Some(match &s.gold {
            Some(p) => GoldIndex::from_corpus(&read(p, Stage::Gold)?),
            None => GoldIndex::from_corpus(input),
        })
    } else {
        None
    };
    let transport: Option<Arc<dyn Transport>> = if s1 || s2 || s3 {
        Some(match (&s.service_url, &s.cache_dir, s.replay) {
            (_, Some(dir), true) => Arc::new(CachedTransport::replay(dir.clone())),
            (_, None, true) => bail!(Rejected("--replay needs a cache directory".into())),
            (Some(url), dir, false) => {
                let http: Arc<dyn Transport> = Arc::new(
                    HttpTransport::new(url.clone(), Duration::from_secs(s.timeout))
                        .map_err(bookcoref_core::Error::from)?,
                );
                Arc::new(CachedTransport::new(http, dir.clone()))
            }
            (None, _, false) => bail!(Rejected("service components need --service-url".into())),
        })
    } else {
        None
    };
    let gold = || gold.clone().expect("gold loaded for oracle components");
    let transport = || transport.clone().expect("transport built for service components");
    Ok(Components {
        linker: match s.linker {
            LinkerKind::Pattern => Arc::new(PatternLinker),
            LinkerKind::Oracle => Arc::new(OracleLinker(gold())),
            LinkerKind::Service => Arc::new(ServiceLinker(transport())),
        },
        judge: match s.judge {
            JudgeKind::Accept => Arc::new(ConstJudge(true)),
            JudgeKind::Reject => Arc::new(ConstJudge(false)),
            JudgeKind::Oracle => Arc::new(OracleJudge(gold())),
            JudgeKind::Service => Arc::new(ServiceJudge::new(transport())),
        },
        expander: match s.expander {
            ExpanderKind::Identity => Arc::new(IdentityExpander),
            ExpanderKind::Oracle => Arc::new(OracleExpander::new(gold())),
            ExpanderKind::Service => Arc::new(ServiceExpander(transport())),
        },
    })
}

fn pipeline_run(ctx: &Ctx, a: PipelineRunArgs) -> anyhow::Result<()> {
    let settings = resolve_pipeline(ctx, &a)?;
    let input = read(&a.input, Stage::Gold)?;
    let components = build_components(&settings, &input)?;
    ctx.ensure_out_dir()?;

    let mut entries = Vec::new();
    let mut traces = String::new();
    let mut docs = Vec::new();
    let mut text = String::new();
    for e in &input.entries {
        let id = &e.document.doc_id;
        let (out, trace) =
            run_pipeline(&e.document, &settings.pipeline, &components).with_context(|| format!("document {id}"))?;
        let summary = json!({
            "doc_id": id,
            "initialized_mentions": trace.initialized.mention_count(),
            "refined_mentions": trace.refined.mention_count(),
            "window_expanded_mentions": trace.window_expanded.mention_count(),
            "final_mentions": out.mention_count(),
            "rejected_links": trace.verdicts.iter().filter(|v| !v.accepted).count(),
            "windows": trace.windows.len(),
            "groups": trace.groups.len(),
            "warnings": trace.warnings.len(),
            "seconds": trace.timings.total,
        });
        text.push_str(&format!(
            "{id}: {} linked, {} after refine, {} after windows, {} final\n",
            trace.initialized.mention_count(),
            trace.refined.mention_count(),
            trace.window_expanded.mention_count(),
            out.mention_count()
        ));
        traces.push_str(&serde_json::to_string(&trace)?);
        traces.push('\n');
        docs.push(summary);
        entries.push(Entry::new(e.document.clone(), out));
    }
    let output = a.output.clone().unwrap_or_else(|| ctx.out_path("predictions.jsonl"));
    write_path(&CorpusFile::new(entries), &output)?;
    let trace_path = ctx.out_path("traces.jsonl");
    std::fs::write(&trace_path, traces).with_context(|| format!("writing {}", trace_path.display()))?;
    text.push_str(&format!(
        "stages {}; wrote {}\n",
        settings.pipeline.stages,
        output.display()
    ));
    ctx.emit(
        "pipeline",
        serde_json::to_value(&settings)?,
        json!({
            "components": components.ids(),
            "pipeline_config_hash": settings.pipeline.hash(),
            "documents": docs,
            "output": output,
            "traces": trace_path,
        }),
        &text,
    )
}

fn pipeline_rows(ctx: &Ctx) -> anyhow::Result<()> {
    let mut text = String::new();
    for (i, r) in ABLATION_ROWS.iter().enumerate() {
        text.push_str(&format!("{}  {:<28} {}\n", i + 1, r.stages.to_string(), r.label));
    }
    let rows: Vec<Value> = ABLATION_ROWS
        .iter()
        .enumerate()
        .map(|(i, r)| json!({"row": i + 1, "label": r.label, "linker": r.linker, "stages": r.stages.to_string()}))
        .collect();
    ctx.emit("pipeline-rows", json!({}), Value::Array(rows), &text)
}

/// `A..B` or `A..=B`, both inclusive.
pub fn parse_sweep(s: &str) -> Result<std::ops::RangeInclusive<usize>, String> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| format!("sweep {s:?} is not of the form A..B"))?;
    let b = b.strip_prefix('=').unwrap_or(b);
    let lo: usize = a.trim().parse().map_err(|_| format!("bad sweep start in {s:?}"))?;
    let hi: usize = b.trim().parse().map_err(|_| format!("bad sweep end in {s:?}"))?;
    if lo == 0 || lo > hi {
        return Err(format!("sweep {s:?} must satisfy 1 <= A <= B"));
    }
    Ok(lo..=hi)
}

fn simulate(ctx: &Ctx, a: SimulateArgs) -> anyhow::Result<()> {
    let f = &ctx.file;
    let reject = |m: String| anyhow!(Rejected(m));
    let kind = a.policy.or(f.policy).unwrap_or(PolicyKind::Dual);
    let name = match kind {
        PolicyKind::Unbounded => "unbounded",
        PolicyKind::Lru => "lru",
        PolicyKind::Dual => "dual",
    };
    let sweep = a
        .sweep
        .clone()
        .or(if a.capacity.is_some() { None } else { f.sweep.clone() });
    let policies: Vec<Policy> = match sweep.as_deref() {
        Some(s) => {
            let range = parse_sweep(s).map_err(reject)?;
            match kind {
                PolicyKind::Unbounded => bail!(reject("unbounded has no capacity to sweep".into())),
                PolicyKind::Lru => range.map(|k| Policy::Lru { capacity: k }).collect(),
                PolicyKind::Dual => range.map(|k| Policy::Dual { l: k, g: k }).collect(),
            }
        }
        None => {
            let caps = a.capacity.clone().or(f.capacity.clone()).unwrap_or_default();
            vec![Policy::from_parts(name, &caps)?]
        }
    };
    let corpus = read(&a.input, Stage::Gold)?;

    let mut reports = Vec::new();
    for p in &policies {
        for e in &corpus.entries {
            reports.push(memsim::simulate(&e.clusters, *p, a.trace));
        }
    }
    let mut violations = Vec::new();
    if policies.len() > 1 {
        for e in &corpus.entries {
            for v in sweep_violations(&cluster_stream(&e.clusters), &policies) {
                violations.push(json!({
                    "doc_id": e.document.doc_id,
                    "smaller": v.smaller.to_string(),
                    "larger": v.larger.to_string(),
                    "forced_smaller": v.forced_smaller,
                    "forced_larger": v.forced_larger,
                }));
            }
        }
    }

    let mut text = format!(
        "{:<14} {:>9} {:>9} {:>9} {:>8}\n",
        "policy", "mentions", "evictions", "forced", "rate"
    );
    let mut summary = Vec::new();
    for p in &policies {
        let rs: Vec<_> = reports.iter().filter(|r| r.policy == *p).cloned().collect();
        let total: usize = rs.iter().map(|r| r.total_mentions).sum();
        let evictions: usize = rs.iter().map(|r| r.evictions).sum();
        let forced: usize = rs.iter().map(|r| r.forced_errors).sum();
        let rate = memsim::pooled_rate(&rs);
        text.push_str(&format!(
            "{:<14} {total:>9} {evictions:>9} {forced:>9} {rate:>8.4}\n",
            p.to_string()
        ));
        summary.push(json!({"policy": p.to_string(), "mentions": total, "evictions": evictions, "forced_errors": forced, "forced_error_rate": rate}));
    }
    if policies.len() > 1 {
        text.push_str(&format!(
            "capacity steps that raise forced errors: {}\n",
            violations.len()
        ));
    }
    ctx.ensure_out_dir()?;
    let csv_path = ctx.out_path("simulate.csv");
    std::fs::write(&csv_path, memsim::to_csv(&reports)?).with_context(|| format!("writing {}", csv_path.display()))?;

    let config = json!({
        "input": a.input,
        "policies": policies.iter().map(|p| p.to_string()).collect::<Vec<_>>(),
        "trace": a.trace,
    });
    ctx.emit(
        "simulate",
        config,
        json!({"summary": summary, "reports": reports, "monotonicity_violations": violations, "csv": csv_path}),
        &text,
    )
}

fn synth(ctx: &Ctx, a: SynthArgs) -> anyhow::Result<()> {
    let base = ctx.file.synth.clone().unwrap_or_default();
    let cfg = SynthConfig {
        seed: ctx.seed,
        docs: a.docs.unwrap_or(base.docs),
        tokens_per_doc: a.tokens.unwrap_or(base.tokens_per_doc),
        characters_per_doc: a.characters.unwrap_or(base.characters_per_doc),
        mentions_per_doc: a.mentions.unwrap_or(base.mentions_per_doc),
        ..base
    };
    if cfg.tokens_per_doc == 0 || cfg.characters_per_doc == 0 {
        bail!(Rejected("synthetic documents need tokens and characters".into()));
    }
    let corpus = synth_corpus(&cfg);
    let output = match a.output {
        Some(p) => p,
        None => {
            ctx.ensure_out_dir()?;
            ctx.out_path("synth.jsonl")
        }
    };
    write_path(&corpus, &output)?;
    let s = corpus_stats(&corpus);
    let text = format!(
        "wrote {} documents, {} tokens, {} mentions to {}\n",
        s.docs,
        s.tokens,
        s.mentions,
        output.display()
    );
    ctx.emit(
        "synth",
        serde_json::to_value(&cfg)?,
        json!({"output": output, "stats": s}),
        &text,
    )
}
