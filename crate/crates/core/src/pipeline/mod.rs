//! Character-seeded annotation pipeline.
//!
//! Four steps per document: link explicit character mentions, filter the
//! links with a yes/no judge, expand the surviving clusters window by
//! window, then expand again over groups of consecutive windows. Each step
//! is a pure function of its inputs and the component answers, so a run
//! recorded through a response cache replays exactly.

pub mod components;
pub mod prompt;
pub mod service;

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use components::{
    explicit_mentions, is_pronoun_span, pattern_match, ConstJudge, ExpandRequest, Expander, GoldIndex,
    IdentityExpander, Judge, JudgeQuery, Linker, OracleExpander, OracleJudge, OracleLinker, PatternLinker,
};
pub use prompt::build_prompt;

use crate::error::{ComponentError, Error, Result};
use crate::model::{union, ClusterKey, ClusterSet, Document, Finding, Mention, Stage};
use crate::windowing::{
    plan_groups, plan_spans, BoundaryRule, GroupedWindowPlan, Range, WindowPlan, DEFAULT_GROUP_SIZE, DEFAULT_WINDOW_LEN,
};

pub const PRONOUN_LINK: &str = "pronoun_link";

/// Which optional steps run; linking always does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageFlags {
    pub refine: bool,
    pub window: bool,
    pub group: bool,
}

impl Default for StageFlags {
    fn default() -> Self {
        Self {
            refine: true,
            window: true,
            group: true,
        }
    }
}

impl StageFlags {
    pub const INIT_ONLY: StageFlags = StageFlags {
        refine: false,
        window: false,
        group: false,
    };

    /// Parse a comma list such as `init,refine,window,group`.
    pub fn parse(list: &str) -> Result<Self> {
        let mut flags = Self::INIT_ONLY;
        for part in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match part {
                "init" => {}
                "refine" => flags.refine = true,
                "window" => flags.window = true,
                "group" => flags.group = true,
                other => return Err(Error::Config(format!("unknown stage {other:?}"))),
            }
        }
        Ok(flags)
    }
}

impl std::fmt::Display for StageFlags {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut parts = vec!["init"];
        if self.refine {
            parts.push("refine");
        }
        if self.window {
            parts.push("window");
        }
        if self.group {
            parts.push("group");
        }
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub window_len: usize,
    pub group_size: usize,
    pub judge_context_words: usize,
    pub boundary_rule: BoundaryRule,
    pub stages: StageFlags,
    /// Extra attempts after a transport failure of any component call.
    pub retries: u32,
    pub retry_backoff_ms: u64,
    /// Concurrent judge and expander calls.
    pub max_in_flight: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window_len: DEFAULT_WINDOW_LEN,
            group_size: DEFAULT_GROUP_SIZE,
            judge_context_words: prompt::DEFAULT_CONTEXT_WORDS,
            boundary_rule: BoundaryRule::MentionSafe,
            stages: StageFlags::default(),
            retries: 2,
            retry_backoff_ms: 200,
            max_in_flight: 4,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 || self.group_size == 0 || self.judge_context_words == 0 || self.max_in_flight == 0 {
            return Err(Error::Config(
                "window_len, group_size, judge_context_words and max_in_flight must be positive".into(),
            ));
        }
        if self.stages.group && !self.stages.window {
            return Err(Error::Config("the group stage needs the window stage".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.max_in_flight)
            .build()
            .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))
    }
}

#[derive(Clone)]
pub struct Components {
    pub linker: Arc<dyn Linker>,
    pub judge: Arc<dyn Judge>,
    pub expander: Arc<dyn Expander>,
}

impl Components {
    /// Pattern matching, accept-all judge, identity expander.
    pub fn reference() -> Self {
        Self {
            linker: Arc::new(PatternLinker),
            judge: Arc::new(ConstJudge(true)),
            expander: Arc::new(IdentityExpander),
        }
    }

    pub fn oracle(gold: Arc<GoldIndex>) -> Self {
        Self {
            linker: Arc::new(OracleLinker(gold.clone())),
            judge: Arc::new(OracleJudge(gold.clone())),
            expander: Arc::new(OracleExpander::new(gold)),
        }
    }

    pub fn ids(&self) -> ComponentIds {
        ComponentIds {
            linker: self.linker.name(),
            judge: self.judge.name(),
            expander: self.expander.name(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentIds {
    pub linker: String,
    pub judge: String,
    pub expander: String,
}

fn with_retry<T>(
    cfg: &PipelineConfig,
    mut call: impl FnMut() -> std::result::Result<T, ComponentError>,
) -> std::result::Result<T, ComponentError> {
    let mut attempt = 0u32;
    loop {
        match call() {
            Err(e) if e.is_retryable() && attempt < cfg.retries => {
                let wait = cfg.retry_backoff_ms.saturating_mul(1 << attempt.min(10));
                log::warn!(
                    "component call failed ({e}); retry {} of {} in {wait} ms",
                    attempt + 1,
                    cfg.retries
                );
                std::thread::sleep(Duration::from_millis(wait));
                attempt += 1;
            }
            r => return r,
        }
    }
}

/// Link explicit mentions and check the linker's output. Every character
/// of the document gets a cluster entry, empty if nothing was linked.
pub fn initialize(doc: &Document, linker: &dyn Linker, cfg: &PipelineConfig) -> Result<(ClusterSet, Vec<Finding>)> {
    let linked = with_retry(cfg, || linker.link(doc))?;
    let mut out = ClusterSet::new(doc.doc_id.clone(), Stage::Initialized);
    for c in &doc.characters {
        out.ensure_key(ClusterKey::name(c));
    }
    let mut warnings = Vec::new();
    let mut owner: HashMap<Mention, &ClusterKey> = HashMap::new();
    for (key, ms) in linked.iter() {
        let name = match key {
            ClusterKey::Name(n) if doc.has_character(n) => n,
            _ => {
                return Err(Error::Contract(format!(
                    "linker returned unknown character {key:?} for {}",
                    doc.doc_id
                )))
            }
        };
        for m in ms {
            if m.start > m.end || m.end >= doc.len() {
                return Err(Error::Contract(format!(
                    "linker returned out-of-bounds span {m} for {name}"
                )));
            }
            if let Some(other) = owner.insert(*m, key) {
                if other != key {
                    return Err(Error::Contract(format!("linker put {m} under both {other} and {name}")));
                }
            }
            if is_pronoun_span(doc, *m) {
                warnings.push(Finding {
                    code: PRONOUN_LINK.into(),
                    location: format!("doc {} cluster {} mention {}", doc.doc_id, name, m),
                    message: format!("pronoun {:?} linked as an explicit mention", doc.tokens[m.start]),
                });
            }
            out.insert(key.clone(), *m);
        }
    }
    Ok((out, warnings))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub character: String,
    pub mention: Mention,
    pub accepted: bool,
}

/// Keep each linked mention iff the judge accepts its prompt.
pub fn refine(
    doc: &Document,
    cs: &ClusterSet,
    judge: &dyn Judge,
    cfg: &PipelineConfig,
) -> Result<(ClusterSet, Vec<Verdict>)> {
    if cs.stage != Stage::Initialized {
        return Err(Error::Stage(format!(
            "refine expects an initialized cluster set, got {}",
            cs.stage
        )));
    }
    let items: Vec<(Mention, &ClusterKey)> = cs.mentions_in_order();
    let ask = |&(m, key): &(Mention, &ClusterKey)| -> Result<Verdict> {
        let name = key
            .as_name()
            .ok_or_else(|| Error::Contract(format!("refine needs named clusters, found {key}")))?;
        let query = JudgeQuery {
            doc_id: &doc.doc_id,
            mention: m,
            character: name,
            prompt: build_prompt(doc, m, name, cfg.judge_context_words),
        };
        let accepted = with_retry(cfg, || judge.judge(&query))
            .map_err(|e| Error::Stage(format!("judge failed on mention {m} of {name}: {e}")))?;
        Ok(Verdict {
            character: name.to_string(),
            mention: m,
            accepted,
        })
    };
    let verdicts: Vec<Verdict> = cfg
        .pool()?
        .install(|| items.par_iter().map(ask).collect::<Vec<_>>())
        .into_iter()
        .collect::<Result<_>>()?;

    let mut out = ClusterSet::new(cs.doc_id.clone(), Stage::Refined);
    for k in cs.keys() {
        out.ensure_key(k.clone());
    }
    for v in verdicts.iter().filter(|v| v.accepted) {
        out.insert(ClusterKey::name(&v.character), v.mention);
    }
    Ok((out, verdicts))
}

/// Ranges for one expansion pass.
#[derive(Debug, Clone, Copy)]
pub enum PassPlan<'a> {
    Windows(&'a WindowPlan),
    Groups(&'a GroupedWindowPlan),
}

impl PassPlan<'_> {
    fn ranges(&self) -> &[Range] {
        match self {
            PassPlan::Windows(p) => &p.windows,
            PassPlan::Groups(g) => &g.groups,
        }
    }

    fn stages(&self) -> (Stage, Stage) {
        match self {
            PassPlan::Windows(_) => (Stage::Refined, Stage::WindowExpanded),
            PassPlan::Groups(_) => (Stage::WindowExpanded, Stage::Final),
        }
    }
}

/// One expander call as recorded in the trace; `output` is in global offsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassRecord {
    pub index: usize,
    pub range: Range,
    pub seed_mentions: usize,
    pub output_mentions: usize,
    pub output: ClusterSet,
}

fn check_expansion(seeds: &ClusterSet, out: &ClusterSet, len: usize, index: usize, range: Range) -> Result<()> {
    let at = |m: &Mention| {
        format!(
            "window {index} [{}, {}) mention {}",
            range.lo,
            range.hi,
            m.shifted_up(range.lo)
        )
    };
    let mut owner: HashMap<Mention, &ClusterKey> = HashMap::new();
    for (key, ms) in out.iter() {
        if seeds.get(key).is_none() {
            return Err(Error::Contract(format!(
                "expander returned cluster {key} in window {index}, which is not among the seed keys"
            )));
        }
        for m in ms {
            if m.start > m.end || m.end >= len {
                return Err(Error::Contract(format!(
                    "expander emitted out-of-window span {m} (window-local) in window {index} of length {len}"
                )));
            }
            if let Some(other) = owner.insert(*m, key) {
                if other != key {
                    return Err(Error::Contract(format!(
                        "expander put {} under both {other} and {key}",
                        at(m)
                    )));
                }
            }
        }
    }
    for (key, ms) in seeds.iter() {
        for m in ms {
            if !out.contains(key, m) {
                return Err(Error::Contract(format!("expander dropped seed {} of {key}", at(m))));
            }
        }
    }
    Ok(())
}

/// Expand over each range of the plan and union the results. Seeds that no
/// range fully contains (possible only under strict planning) are carried
/// over unchanged.
pub fn expand_pass(
    doc: &Document,
    cs: &ClusterSet,
    plan: PassPlan<'_>,
    expander: &dyn Expander,
    cfg: &PipelineConfig,
) -> Result<(ClusterSet, Vec<PassRecord>)> {
    let (from, to) = plan.stages();
    if cs.stage != from {
        return Err(Error::Stage(format!(
            "this pass expects a {from} cluster set, got {}",
            cs.stage
        )));
    }
    let ranges = plan.ranges();
    let call = |(index, range): (usize, &Range)| -> Result<PassRecord> {
        let seeds = cs.restrict(range.lo, range.hi)?.to_local(range.lo);
        let req = ExpandRequest {
            doc_id: &doc.doc_id,
            offset: range.lo,
            tokens: &doc.tokens[range.lo..range.hi],
            seeds: &seeds,
        };
        let out = with_retry(cfg, || expander.expand(&req))
            .map_err(|e| Error::Stage(format!("expander failed on window {index}: {e}")))?;
        check_expansion(&seeds, &out, range.len(), index, *range)?;
        let mut global = out.to_global(range.lo).with_stage(to);
        global.doc_id = doc.doc_id.clone();
        Ok(PassRecord {
            index,
            range: *range,
            seed_mentions: seeds.mention_count(),
            output_mentions: global.mention_count(),
            output: global,
        })
    };
    let records: Vec<PassRecord> = cfg
        .pool()?
        .install(|| ranges.par_iter().enumerate().map(call).collect::<Vec<_>>())
        .into_iter()
        .collect::<Result<_>>()?;

    let mut parts: Vec<ClusterSet> = records.iter().map(|r| r.output.clone()).collect();
    let mut carried = ClusterSet::new(cs.doc_id.clone(), to);
    for (key, ms) in cs.iter() {
        carried.ensure_key(key.clone());
        for m in ms.iter().filter(|m| !ranges.iter().any(|r| r.contains(m))) {
            carried.insert(key.clone(), *m);
        }
    }
    parts.push(carried);
    Ok((union(&parts)?, records))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub initialize: f64,
    pub refine: f64,
    pub window: f64,
    pub group: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub doc_id: String,
    pub config: PipelineConfig,
    pub config_hash: String,
    pub components: ComponentIds,
    pub initialized: ClusterSet,
    pub warnings: Vec<Finding>,
    pub verdicts: Vec<Verdict>,
    pub refined: ClusterSet,
    pub window_plan: Option<WindowPlan>,
    pub windows: Vec<PassRecord>,
    pub window_expanded: ClusterSet,
    pub group_plan: Option<GroupedWindowPlan>,
    pub groups: Vec<PassRecord>,
    pub final_clusters: ClusterSet,
    pub timings: StageTimings,
}

impl PipelineTrace {
    /// The trace with wall-clock fields zeroed, for replay comparison.
    pub fn without_timings(&self) -> Self {
        Self {
            timings: StageTimings::default(),
            ..self.clone()
        }
    }
}

/// Run every enabled stage on one document.
pub fn run(doc: &Document, cfg: &PipelineConfig, components: &Components) -> Result<(ClusterSet, PipelineTrace)> {
    cfg.validate()?;
    let t_total = Instant::now();
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let (initialized, warnings) =
        initialize(doc, components.linker.as_ref(), cfg).map_err(|e| Error::in_stage("initialize", e))?;
    timings.initialize = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let (refined, verdicts) = if cfg.stages.refine {
        refine(doc, &initialized, components.judge.as_ref(), cfg).map_err(|e| Error::in_stage("refine", e))?
    } else {
        (initialized.clone().advance(Stage::Refined)?, Vec::new())
    };
    timings.refine = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let (window_plan, windows, window_expanded) = if cfg.stages.window {
        let mut guard: Vec<Mention> = refined.iter().flat_map(|(_, ms)| ms.iter().copied()).collect();
        if cfg.boundary_rule == BoundaryRule::MentionSafe {
            guard.extend(components.expander.boundary_hints(doc).unwrap_or_default());
        }
        let plan = plan_spans(&doc.doc_id, doc.len(), cfg.window_len, cfg.boundary_rule, &guard)
            .map_err(|e| Error::in_stage("window", e))?;
        let (m, recs) = expand_pass(
            doc,
            &refined,
            PassPlan::Windows(&plan),
            components.expander.as_ref(),
            cfg,
        )
        .map_err(|e| Error::in_stage("window", e))?;
        (Some(plan), recs, m)
    } else {
        (None, Vec::new(), refined.clone().advance(Stage::WindowExpanded)?)
    };
    timings.window = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let (group_plan, groups, final_clusters) = match (&window_plan, cfg.stages.group) {
        (Some(plan), true) => {
            let grouped = plan_groups(plan, cfg.group_size).map_err(|e| Error::in_stage("group", e))?;
            let (f, recs) = expand_pass(
                doc,
                &window_expanded,
                PassPlan::Groups(&grouped),
                components.expander.as_ref(),
                cfg,
            )
            .map_err(|e| Error::in_stage("group", e))?;
            (Some(grouped), recs, f)
        }
        _ => (None, Vec::new(), window_expanded.clone().advance(Stage::Final)?),
    };
    timings.group = t.elapsed().as_secs_f64();
    timings.total = t_total.elapsed().as_secs_f64();

    let trace = PipelineTrace {
        doc_id: doc.doc_id.clone(),
        config: cfg.clone(),
        config_hash: cfg.hash(),
        components: components.ids(),
        initialized,
        warnings,
        verdicts,
        refined,
        window_plan,
        windows,
        window_expanded,
        group_plan,
        groups,
        final_clusters: final_clusters.clone(),
        timings,
    };
    Ok((final_clusters, trace))
}

/// Linker family used by an ablation row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkerChoice {
    PatternMatching,
    CharacterLinking,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AblationRow {
    pub label: &'static str,
    pub linker: LinkerChoice,
    pub stages: StageFlags,
}

const fn flags(refine: bool, window: bool, group: bool) -> StageFlags {
    StageFlags { refine, window, group }
}

/// The seven step combinations of the pipeline ablation.
pub const ABLATION_ROWS: [AblationRow; 7] = [
    AblationRow {
        label: "Pattern matching",
        linker: LinkerChoice::PatternMatching,
        stages: flags(false, false, false),
    },
    AblationRow {
        label: "Character Linking (CL)",
        linker: LinkerChoice::CharacterLinking,
        stages: flags(false, false, false),
    },
    AblationRow {
        label: "CL + LLM filtering",
        linker: LinkerChoice::CharacterLinking,
        stages: flags(true, false, false),
    },
    AblationRow {
        label: "CL + Window Coreference",
        linker: LinkerChoice::CharacterLinking,
        stages: flags(false, true, false),
    },
    AblationRow {
        label: "CL + Window Coreference + Grouping step",
        linker: LinkerChoice::CharacterLinking,
        stages: flags(false, true, true),
    },
    AblationRow {
        label: "CL + LLM filtering + Window Coreference",
        linker: LinkerChoice::CharacterLinking,
        stages: flags(true, true, false),
    },
    AblationRow {
        label: "CL + LLM filtering + Window Coreference + Grouping step",
        linker: LinkerChoice::CharacterLinking,
        stages: flags(true, true, true),
    },
];
