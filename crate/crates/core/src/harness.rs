//! Corpus-level evaluation under the full-book, split, and gold+window
//! settings, with timing and run artifacts.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::CorpusFile;
use crate::metrics::{conll, corpus_stats, render_score_table, CorpusStats, ScoreOptions, ScoreReport};
use crate::model::{ClusterSet, Stage};
use crate::windowing::{localize, plan_spans, window_doc_id, BoundaryRule, Range, DEFAULT_WINDOW_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SettingKind {
    FullBook,
    Split,
    GoldPlusWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Setting {
    pub kind: SettingKind,
    /// Unused by `FullBook`.
    pub window_len: usize,
}

impl Setting {
    pub fn full_book() -> Self {
        Self {
            kind: SettingKind::FullBook,
            window_len: DEFAULT_WINDOW_LEN,
        }
    }

    pub fn split(window_len: usize) -> Self {
        Self {
            kind: SettingKind::Split,
            window_len,
        }
    }

    pub fn gold_plus_window(window_len: usize) -> Self {
        Self {
            kind: SettingKind::GoldPlusWindow,
            window_len,
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            SettingKind::FullBook => write!(f, "full"),
            SettingKind::Split => write!(f, "split({})", self.window_len),
            SettingKind::GoldPlusWindow => write!(f, "gold+window({})", self.window_len),
        }
    }
}

impl FromStr for SettingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" | "full_book" | "full-book" => Ok(SettingKind::FullBook),
            "split" => Ok(SettingKind::Split),
            "gold+window" | "gold_plus_window" | "gold-plus-window" => Ok(SettingKind::GoldPlusWindow),
            other => Err(Error::Config(format!(
                "unknown setting {other:?} (full, split, gold+window)"
            ))),
        }
    }
}

/// One scored unit: a whole book, or one window of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitScore {
    pub unit_id: String,
    pub doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<Range>,
    /// No response was found; scored against an empty response.
    pub missing_response: bool,
    pub report: ScoreReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub setting: Setting,
    pub options: ScoreOptions,
    pub units: Vec<UnitScore>,
    pub pooled: ScoreReport,
    #[serde(rename = "macro")]
    pub macro_mean: ScoreReport,
    /// Key units without a response.
    pub missing: Vec<String>,
    /// Response documents that matched no key document.
    pub unmatched_responses: Vec<String>,
    pub seconds: f64,
    /// Peak resident set size of this process in kB, where the OS reports it.
    #[serde(default)]
    pub peak_rss_kb: Option<u64>,
}

struct Job<'a> {
    unit_id: String,
    doc_id: String,
    range: Option<Range>,
    key: ClusterSet,
    response: Option<std::borrow::Cow<'a, ClusterSet>>,
}

/// Score `response` against `key` under `setting`.
///
/// Split looks responses up by window id (`doc@w0000`); a full-book response
/// with the key's id is cut with the key's windows instead. Gold+window
/// always cuts full-book responses. Windows use the strict rule so split
/// and gold+window see identical boundaries.
pub fn evaluate(setting: Setting, key: &CorpusFile, response: &CorpusFile, opts: ScoreOptions) -> Result<EvalRun> {
    if setting.kind != SettingKind::FullBook && setting.window_len == 0 {
        return Err(Error::Config("window_len must be positive".into()));
    }
    let started = Instant::now();
    let by_id: HashMap<&str, &ClusterSet> = response
        .entries
        .iter()
        .map(|e| (e.document.doc_id.as_str(), &e.clusters))
        .collect();

    let mut jobs: Vec<Job<'_>> = Vec::new();
    let mut used: std::collections::HashSet<&str> = std::collections::HashSet::new();
    for entry in &key.entries {
        let doc = &entry.document;
        let full = by_id.get(doc.doc_id.as_str()).copied();
        if full.is_some() {
            used.insert(doc.doc_id.as_str());
        }
        if setting.kind == SettingKind::FullBook {
            jobs.push(Job {
                unit_id: doc.doc_id.clone(),
                doc_id: doc.doc_id.clone(),
                range: None,
                key: entry.clusters.clone(),
                response: full.map(std::borrow::Cow::Borrowed),
            });
            continue;
        }
        let plan = plan_spans(&doc.doc_id, doc.len(), setting.window_len, BoundaryRule::Strict, &[])?;
        for (i, w) in plan.windows.iter().enumerate() {
            let id = window_doc_id(&doc.doc_id, i);
            let local = match setting.kind {
                SettingKind::Split => by_id.get_key_value(id.as_str()).map(|(k, cs)| {
                    used.insert(k);
                    std::borrow::Cow::Borrowed(*cs)
                }),
                _ => None,
            };
            let response = local.or_else(|| full.map(|cs| std::borrow::Cow::Owned(localize(cs, *w, &id))));
            jobs.push(Job {
                key: localize(&entry.clusters, *w, &id),
                unit_id: id,
                doc_id: doc.doc_id.clone(),
                range: Some(*w),
                response,
            });
        }
    }

    let units: Vec<UnitScore> = jobs
        .par_iter()
        .map(|j| {
            let empty;
            let resp = match &j.response {
                Some(r) => r.as_ref(),
                None => {
                    empty = ClusterSet::new(j.unit_id.clone(), Stage::Prediction);
                    &empty
                }
            };
            UnitScore {
                unit_id: j.unit_id.clone(),
                doc_id: j.doc_id.clone(),
                range: j.range,
                missing_response: j.response.is_none(),
                report: conll(&j.key, resp, opts),
            }
        })
        .collect();

    let reports: Vec<ScoreReport> = units.iter().map(|u| u.report).collect();
    let missing = units
        .iter()
        .filter(|u| u.missing_response)
        .map(|u| u.unit_id.clone())
        .collect();
    for id in &missing {
        log::warn!("no response for {id}; scored as empty");
    }
    let unmatched_responses = response
        .entries
        .iter()
        .map(|e| e.document.doc_id.clone())
        .filter(|id| !used.contains(id.as_str()))
        .collect();
    Ok(EvalRun {
        setting,
        options: opts,
        pooled: ScoreReport::pooled(&reports),
        macro_mean: ScoreReport::macro_mean(&reports),
        units,
        missing,
        unmatched_responses,
        seconds: started.elapsed().as_secs_f64(),
        peak_rss_kb: peak_rss_kb(),
    })
}

pub fn stats(corpus: &CorpusFile) -> CorpusStats {
    corpus_stats(corpus)
}

/// `VmHWM` from `/proc/self/status`, in kB.
pub fn peak_rss_kb() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    status
        .lines()
        .find_map(|l| l.strip_prefix("VmHWM:"))
        .and_then(|v| v.trim().trim_end_matches("kB").trim().parse().ok())
}

/// Summary table: one row per unit, then the pooled and macro rows.
pub fn summary_table(run: &EvalRun) -> String {
    let mut rows: Vec<(String, ScoreReport)> = run.units.iter().map(|u| (u.unit_id.clone(), u.report)).collect();
    rows.push(("pooled".into(), run.pooled));
    rows.push(("macro".into(), run.macro_mean));
    let mut out = format!("setting: {}\n", run.setting);
    out.push_str(&render_score_table(&rows));
    if !run.missing.is_empty() {
        out.push_str(&format!("missing responses: {}\n", run.missing.join(", ")));
    }
    out
}

/// Write `run.json`, `units.jsonl` and `summary.txt` under `dir`.
pub fn write_run(run: &EvalRun, config: &serde_json::Value, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    let head = serde_json::json!({
        "config": config,
        "setting": run.setting,
        "options": run.options,
        "pooled": run.pooled,
        "macro": run.macro_mean,
        "units": run.units.len(),
        "missing": run.missing,
        "unmatched_responses": run.unmatched_responses,
        "seconds": run.seconds,
        "peak_rss_kb": run.peak_rss_kb,
    });
    write("run.json", serde_json::to_string_pretty(&head)? + "\n")?;
    let mut lines = String::new();
    for u in &run.units {
        lines.push_str(&serde_json::to_string(u)?);
        lines.push('\n');
    }
    write("units.jsonl", lines)?;
    write("summary.txt", summary_table(run))
}
