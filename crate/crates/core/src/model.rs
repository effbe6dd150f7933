//! Documents, mentions, and stage-tagged cluster sets.
//!
//! Token offsets are 0-based and end-inclusive, the same convention the
//! CoNLL-2012 coreference column uses. All operations here are pure: they
//! take cluster sets by reference and return new ones.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A token span `[start, end]`, both ends inclusive. Serialized as `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct Mention {
    pub start: usize,
    pub end: usize,
}

impl Mention {
    pub const fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    /// Number of tokens covered.
    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start) + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// True when both endpoints fall inside the half-open range `[lo, hi)`.
    pub fn within(&self, lo: usize, hi: usize) -> bool {
        lo <= self.start && self.end < hi
    }

    /// True when a window boundary placed before token `pos` would cut this span.
    pub fn straddles(&self, pos: usize) -> bool {
        self.start < pos && pos <= self.end
    }

    pub fn shifted_down(&self, offset: usize) -> Self {
        Self::new(self.start - offset, self.end - offset)
    }

    pub fn shifted_up(&self, offset: usize) -> Self {
        Self::new(self.start + offset, self.end + offset)
    }
}

impl From<(usize, usize)> for Mention {
    fn from((start, end): (usize, usize)) -> Self {
        Self { start, end }
    }
}

impl From<Mention> for (usize, usize) {
    fn from(m: Mention) -> Self {
        (m.start, m.end)
    }
}

impl fmt::Display for Mention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.start, self.end)
    }
}

/// Optional bibliographic metadata carried alongside a document.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceInfo {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub author: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_count: Option<usize>,
}

/// A tokenized book together with its character index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub tokens: Vec<String>,
    pub characters: Vec<String>,
    pub source: Option<SourceInfo>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, tokens: Vec<String>, characters: Vec<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            tokens,
            characters,
            source: None,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn has_character(&self, name: &str) -> bool {
        self.characters.iter().any(|c| c == name)
    }

    /// Surface text of a span, tokens joined by single spaces.
    pub fn span_text(&self, m: Mention) -> String {
        self.tokens[m.start..=m.end].join(" ")
    }
}

/// Cluster identity: a character name, or an anonymous integer id for
/// system output that carries no names (e.g. anything read from CoNLL).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterKey {
    Name(String),
    Anon(u64),
}

impl ClusterKey {
    pub fn name(s: impl Into<String>) -> Self {
        Self::Name(s.into())
    }

    pub fn as_name(&self) -> Option<&str> {
        match self {
            Self::Name(s) => Some(s),
            Self::Anon(_) => None,
        }
    }
}

impl fmt::Display for ClusterKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Name(s) => f.write_str(s),
            Self::Anon(i) => write!(f, "{i}"),
        }
    }
}

impl From<&str> for ClusterKey {
    fn from(s: &str) -> Self {
        Self::Name(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Initialized,
    Refined,
    WindowExpanded,
    Final,
    Gold,
    Prediction,
}

impl Stage {
    /// The pipeline successor, if this stage has one.
    pub fn next(self) -> Option<Stage> {
        match self {
            Stage::Initialized => Some(Stage::Refined),
            Stage::Refined => Some(Stage::WindowExpanded),
            Stage::WindowExpanded => Some(Stage::Final),
            _ => None,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Initialized => "initialized",
            Stage::Refined => "refined",
            Stage::WindowExpanded => "window_expanded",
            Stage::Final => "final",
            Stage::Gold => "gold",
            Stage::Prediction => "prediction",
        };
        f.write_str(s)
    }
}

/// Mapping from cluster key to its mentions, tagged with the owning
/// document and the pipeline stage that produced it.
///
/// Each cluster is kept as a sorted list. Construction through
/// [`ClusterSet::from_raw`] keeps exact duplicates so that [`validate`] can
/// report them; every other operation yields duplicate-free clusters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "ClusterSetRepr", into = "ClusterSetRepr")]
pub struct ClusterSet {
    pub doc_id: String,
    pub stage: Stage,
    clusters: BTreeMap<ClusterKey, Vec<Mention>>,
}

#[derive(Serialize, Deserialize)]
struct ClusterRepr {
    key: ClusterKey,
    mentions: Vec<Mention>,
}

#[derive(Serialize, Deserialize)]
struct ClusterSetRepr {
    doc_id: String,
    stage: Stage,
    clusters: Vec<ClusterRepr>,
}

impl From<ClusterSetRepr> for ClusterSet {
    fn from(r: ClusterSetRepr) -> Self {
        ClusterSet::from_raw(r.doc_id, r.stage, r.clusters.into_iter().map(|c| (c.key, c.mentions)))
    }
}

impl From<ClusterSet> for ClusterSetRepr {
    fn from(cs: ClusterSet) -> Self {
        ClusterSetRepr {
            doc_id: cs.doc_id,
            stage: cs.stage,
            clusters: cs
                .clusters
                .into_iter()
                .map(|(key, mentions)| ClusterRepr { key, mentions })
                .collect(),
        }
    }
}

impl ClusterSet {
    pub fn new(doc_id: impl Into<String>, stage: Stage) -> Self {
        Self {
            doc_id: doc_id.into(),
            stage,
            clusters: BTreeMap::new(),
        }
    }

    /// Build from unchecked input; duplicates survive so validation can see them.
    pub fn from_raw<I, M>(doc_id: impl Into<String>, stage: Stage, clusters: I) -> Self
    where
        I: IntoIterator<Item = (ClusterKey, M)>,
        M: IntoIterator<Item = Mention>,
    {
        let mut out = Self::new(doc_id, stage);
        for (k, ms) in clusters {
            let entry = out.clusters.entry(k).or_default();
            entry.extend(ms);
            entry.sort_unstable();
        }
        out
    }

    /// Build and drop exact duplicates within each cluster.
    pub fn from_clusters<I, M>(doc_id: impl Into<String>, stage: Stage, clusters: I) -> Self
    where
        I: IntoIterator<Item = (ClusterKey, M)>,
        M: IntoIterator<Item = Mention>,
    {
        let mut out = Self::from_raw(doc_id, stage, clusters);
        for ms in out.clusters.values_mut() {
            ms.dedup();
        }
        out
    }

    /// Ensure a (possibly empty) cluster exists for `key`.
    pub fn ensure_key(&mut self, key: ClusterKey) {
        self.clusters.entry(key).or_default();
    }

    /// Add a mention, keeping the cluster sorted and duplicate-free.
    pub fn insert(&mut self, key: ClusterKey, m: Mention) -> bool {
        let ms = self.clusters.entry(key).or_default();
        match ms.binary_search(&m) {
            Ok(_) => false,
            Err(pos) => {
                ms.insert(pos, m);
                true
            }
        }
    }

    /// Remove one mention; the (possibly emptied) cluster entry stays.
    pub fn remove(&mut self, key: &ClusterKey, m: &Mention) -> bool {
        match self.clusters.get_mut(key).map(|ms| (ms.binary_search(m), ms)) {
            Some((Ok(pos), ms)) => {
                ms.remove(pos);
                true
            }
            _ => false,
        }
    }

    pub fn get(&self, key: &ClusterKey) -> Option<&[Mention]> {
        self.clusters.get(key).map(Vec::as_slice)
    }

    pub fn contains(&self, key: &ClusterKey, m: &Mention) -> bool {
        self.clusters.get(key).is_some_and(|ms| ms.binary_search(m).is_ok())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ClusterKey, &[Mention])> {
        self.clusters.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn keys(&self) -> impl Iterator<Item = &ClusterKey> {
        self.clusters.keys()
    }

    /// Number of cluster entries, empty ones included.
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn mention_count(&self) -> usize {
        self.clusters.values().map(Vec::len).sum()
    }

    /// Every (key, mention) pair ordered by mention, then key.
    pub fn mentions_in_order(&self) -> Vec<(Mention, &ClusterKey)> {
        let mut out: Vec<_> = self
            .clusters
            .iter()
            .flat_map(|(k, ms)| ms.iter().map(move |m| (*m, k)))
            .collect();
        out.sort();
        out
    }

    pub fn with_stage(mut self, stage: Stage) -> Self {
        self.stage = stage;
        self
    }

    /// Move to the next pipeline stage.
    pub fn advance(self, to: Stage) -> Result<Self> {
        if self.stage.next() != Some(to) {
            return Err(Error::Stage(format!(
                "illegal stage transition {} -> {}",
                self.stage, to
            )));
        }
        Ok(self.with_stage(to))
    }

    /// Drop clusters that have no mentions.
    pub fn without_empty(mut self) -> Self {
        self.clusters.retain(|_, ms| !ms.is_empty());
        self
    }

    /// Keep the mentions fully contained in `[lo, hi)`. Offsets stay global
    /// and emptied clusters are retained so their keys survive a later union.
    pub fn restrict(&self, lo: usize, hi: usize) -> Result<Self> {
        if lo > hi {
            return Err(Error::Range { lo, hi });
        }
        let clusters = self
            .clusters
            .iter()
            .map(|(k, ms)| {
                let kept: Vec<Mention> = ms.iter().copied().filter(|m| m.within(lo, hi)).collect();
                (k.clone(), kept)
            })
            .collect();
        Ok(Self {
            doc_id: self.doc_id.clone(),
            stage: self.stage,
            clusters,
        })
    }

    /// Shift every mention by `-offset`. Callers restrict to a range starting
    /// at `offset` first.
    pub fn to_local(&self, offset: usize) -> Self {
        self.map_mentions(|m| m.shifted_down(offset))
    }

    pub fn to_global(&self, offset: usize) -> Self {
        self.map_mentions(|m| m.shifted_up(offset))
    }

    fn map_mentions(&self, f: impl Fn(Mention) -> Mention) -> Self {
        let clusters = self
            .clusters
            .iter()
            .map(|(k, ms)| (k.clone(), ms.iter().map(|m| f(*m)).collect()))
            .collect();
        Self {
            doc_id: self.doc_id.clone(),
            stage: self.stage,
            clusters,
        }
    }

    /// Non-empty clusters as plain mention lists, for scoring.
    pub fn partition(&self) -> Vec<Vec<Mention>> {
        self.clusters
            .values()
            .filter(|ms| !ms.is_empty())
            .map(|ms| {
                let mut v = ms.clone();
                v.dedup();
                v
            })
            .collect()
    }

    /// Distinct mentions across all clusters.
    pub fn mention_universe(&self) -> BTreeSet<Mention> {
        self.clusters.values().flatten().copied().collect()
    }
}

/// Per-key set union across parts that share one document and one stage.
pub fn union(parts: &[ClusterSet]) -> Result<ClusterSet> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Composition("union of zero cluster sets".into()))?;
    let mut acc: BTreeMap<ClusterKey, BTreeSet<Mention>> = BTreeMap::new();
    for p in parts {
        if p.doc_id != first.doc_id {
            return Err(Error::Composition(format!(
                "cannot union cluster sets of documents {:?} and {:?}",
                first.doc_id, p.doc_id
            )));
        }
        if p.stage != first.stage {
            return Err(Error::Composition(format!(
                "cannot union cluster sets at stages {} and {}",
                first.stage, p.stage
            )));
        }
        for (k, ms) in &p.clusters {
            acc.entry(k.clone()).or_default().extend(ms.iter().copied());
        }
    }
    Ok(ClusterSet {
        doc_id: first.doc_id.clone(),
        stage: first.stage,
        clusters: acc.into_iter().map(|(k, s)| (k, s.into_iter().collect())).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub code: String,
    pub location: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<Finding>,
    pub warnings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn merge(&mut self, other: ValidationReport) {
        self.errors.extend(other.errors);
        self.warnings.extend(other.warnings);
    }

    fn error(&mut self, code: &str, location: String, message: String) {
        self.errors.push(Finding {
            code: code.into(),
            location,
            message,
        });
    }

    fn warn(&mut self, code: &str, location: String, message: String) {
        self.warnings.push(Finding {
            code: code.into(),
            location,
            message,
        });
    }
}

pub mod codes {
    pub const EMPTY_DOCUMENT: &str = "empty_document";
    pub const DUPLICATE_CHARACTER: &str = "duplicate_character";
    pub const SPAN_OUT_OF_BOUNDS: &str = "span_out_of_bounds";
    pub const INVERTED_SPAN: &str = "inverted_span";
    pub const DUPLICATE_MENTION: &str = "duplicate_mention";
    pub const MENTION_IN_TWO_CLUSTERS: &str = "mention_in_two_clusters";
    pub const UNKNOWN_CHARACTER: &str = "unknown_character";
    pub const DOC_MISMATCH: &str = "doc_mismatch";
    pub const EMPTY_CLUSTER: &str = "empty_cluster";
    pub const SINGLETON_CLUSTER: &str = "singleton_cluster";
    pub const NESTED_SAME_CLUSTER: &str = "nested_same_cluster";
}

/// Check a cluster set against its document. Errors make the input
/// unacceptable; warnings flag annotation-guideline oddities only.
pub fn validate(doc: &Document, cs: &ClusterSet) -> ValidationReport {
    let mut r = ValidationReport::default();
    let doc_loc = format!("doc {}", doc.doc_id);

    if doc.tokens.is_empty() {
        r.error(codes::EMPTY_DOCUMENT, doc_loc.clone(), "document has no tokens".into());
    }
    let mut seen_chars = BTreeSet::new();
    for c in &doc.characters {
        if !seen_chars.insert(c.as_str()) {
            r.error(
                codes::DUPLICATE_CHARACTER,
                doc_loc.clone(),
                format!("character {c:?} listed more than once"),
            );
        }
    }
    if cs.doc_id != doc.doc_id {
        r.error(
            codes::DOC_MISMATCH,
            doc_loc.clone(),
            format!("cluster set belongs to {:?}", cs.doc_id),
        );
    }

    let n = doc.tokens.len();
    let mut owner: HashMap<Mention, &ClusterKey> = HashMap::new();
    for (key, ms) in &cs.clusters {
        let loc = |m: Option<Mention>| match m {
            Some(m) => format!("doc {} cluster {} mention {}", doc.doc_id, key, m),
            None => format!("doc {} cluster {}", doc.doc_id, key),
        };
        match key {
            ClusterKey::Name(name) if !doc.has_character(name) => r.error(
                codes::UNKNOWN_CHARACTER,
                loc(None),
                format!("character {name:?} is not in the document's character list"),
            ),
            ClusterKey::Anon(_) if !matches!(cs.stage, Stage::Prediction | Stage::Gold) => r.error(
                codes::UNKNOWN_CHARACTER,
                loc(None),
                format!("anonymous cluster key in a {} cluster set", cs.stage),
            ),
            _ => {}
        }
        if ms.is_empty() {
            r.warn(codes::EMPTY_CLUSTER, loc(None), "cluster has no mentions".into());
        } else if ms.len() == 1 && cs.stage == Stage::Gold {
            r.warn(
                codes::SINGLETON_CLUSTER,
                loc(None),
                "gold cluster with a single mention".into(),
            );
        }
        for (i, m) in ms.iter().enumerate() {
            if m.start > m.end {
                r.error(codes::INVERTED_SPAN, loc(Some(*m)), "span start after end".into());
            }
            if m.end >= n {
                r.error(
                    codes::SPAN_OUT_OF_BOUNDS,
                    loc(Some(*m)),
                    format!("span out of bounds for a document of {n} tokens"),
                );
            }
            if i > 0 && ms[i - 1] == *m {
                r.error(
                    codes::DUPLICATE_MENTION,
                    loc(Some(*m)),
                    "duplicate mention within cluster".into(),
                );
                continue;
            }
            if let Some(other) = owner.get(m) {
                r.error(
                    codes::MENTION_IN_TWO_CLUSTERS,
                    loc(Some(*m)),
                    format!("mention in two clusters: also under {other}"),
                );
            } else {
                owner.insert(*m, key);
            }
        }
        for w in ms.windows(2) {
            if w[0] != w[1] && w[1].start <= w[0].end && w[1].end <= w[0].end {
                r.warn(
                    codes::NESTED_SAME_CLUSTER,
                    loc(Some(w[1])),
                    format!("nested inside {} of the same cluster", w[0]),
                );
            }
        }
    }
    r.errors
        .sort_by(|a, b| (&a.location, &a.code).cmp(&(&b.location, &b.code)));
    r.warnings
        .sort_by(|a, b| (&a.location, &a.code).cmp(&(&b.location, &b.code)));
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(n: usize, chars: &[&str]) -> Document {
        Document::new(
            "d",
            (0..n).map(|i| format!("t{i}")).collect(),
            chars.iter().map(|s| s.to_string()).collect(),
        )
    }

    fn cs(stage: Stage, items: &[(&str, &[(usize, usize)])]) -> ClusterSet {
        ClusterSet::from_raw(
            "d",
            stage,
            items.iter().map(|(k, ms)| {
                (
                    ClusterKey::name(*k),
                    ms.iter().map(|&(s, e)| Mention::new(s, e)).collect::<Vec<_>>(),
                )
            }),
        )
    }

    #[test]
    fn out_of_bounds_span_is_one_error() {
        let r = validate(&doc(10, &["A"]), &cs(Stage::Gold, &[("A", &[(0, 1), (3, 12)])]));
        assert_eq!(r.errors.len(), 1);
        assert_eq!(r.errors[0].code, codes::SPAN_OUT_OF_BOUNDS);
    }

    #[test]
    fn valid_gold_has_no_errors() {
        let r = validate(
            &doc(10, &["Darcy", "Jane"]),
            &cs(
                Stage::Gold,
                &[("Darcy", &[(0, 1), (4, 4)]), ("Jane", &[(6, 6), (8, 9)])],
            ),
        );
        assert!(r.is_ok(), "{r:?}");
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn shared_mention_is_reported_once() {
        let r = validate(
            &doc(10, &["Darcy", "Bingley"]),
            &cs(
                Stage::Gold,
                &[("Darcy", &[(2, 3), (5, 5)]), ("Bingley", &[(2, 3), (7, 7)])],
            ),
        );
        assert_eq!(r.errors.len(), 1);
        assert_eq!(r.errors[0].code, codes::MENTION_IN_TWO_CLUSTERS);
    }

    #[test]
    fn duplicates_and_unknown_keys() {
        let r = validate(
            &doc(10, &["A"]),
            &cs(Stage::Gold, &[("A", &[(1, 1), (1, 1)]), ("Z", &[(4, 4)])]),
        );
        let codes_seen: Vec<_> = r.errors.iter().map(|f| f.code.as_str()).collect();
        assert!(codes_seen.contains(&codes::DUPLICATE_MENTION));
        assert!(codes_seen.contains(&codes::UNKNOWN_CHARACTER));
        assert_eq!(r.errors.len(), 2);
    }

    #[test]
    fn nesting_in_one_cluster_is_only_a_warning() {
        let r = validate(&doc(10, &["A"]), &cs(Stage::Gold, &[("A", &[(0, 3), (1, 1)])]));
        assert!(r.is_ok());
        assert_eq!(r.warnings[0].code, codes::NESTED_SAME_CLUSTER);
    }

    #[test]
    fn restrict_requires_full_containment() {
        let c = cs(Stage::Refined, &[("Darcy", &[(5, 6), (80, 80)]), ("Jane", &[(48, 52)])]);
        let r = c.restrict(0, 50).unwrap();
        assert_eq!(r.get(&"Darcy".into()).unwrap(), &[Mention::new(5, 6)]);
        assert_eq!(r.get(&"Jane".into()).unwrap(), &[] as &[Mention]);
        assert_eq!(r.stage, Stage::Refined);
        assert_eq!(c.restrict(0, 100).unwrap(), c);
        assert!(matches!(c.restrict(5, 4), Err(Error::Range { .. })));
    }

    #[test]
    fn union_merges_per_key() {
        let a = cs(Stage::Prediction, &[("Darcy", &[(1, 1)])]);
        let b = cs(Stage::Prediction, &[("Darcy", &[(9, 9)]), ("Jane", &[(4, 5)])]);
        let u = union(&[a.clone(), b]).unwrap();
        assert_eq!(
            u,
            cs(Stage::Prediction, &[("Darcy", &[(1, 1), (9, 9)]), ("Jane", &[(4, 5)])])
        );
        assert_eq!(union(std::slice::from_ref(&a)).unwrap(), a);
    }

    #[test]
    fn union_rejects_mixed_inputs() {
        let a = cs(Stage::Prediction, &[("A", &[(1, 1)])]);
        let mut b = a.clone();
        b.doc_id = "other".into();
        assert!(matches!(union(&[a.clone(), b]), Err(Error::Composition(_))));
        let c = a.clone().with_stage(Stage::Gold);
        assert!(matches!(union(&[a, c]), Err(Error::Composition(_))));
        assert!(union(&[]).is_err());
    }

    #[test]
    fn stage_transitions_are_linear() {
        let c = ClusterSet::new("d", Stage::Initialized);
        let c = c.advance(Stage::Refined).unwrap();
        assert!(c.clone().advance(Stage::Final).is_err());
        let c = c.advance(Stage::WindowExpanded).unwrap();
        assert_eq!(c.advance(Stage::Final).unwrap().stage, Stage::Final);
        assert!(ClusterSet::new("d", Stage::Gold).advance(Stage::Refined).is_err());
    }

    #[test]
    fn local_global_round_trip() {
        let c = cs(Stage::Refined, &[("A", &[(10, 12), (15, 15)])]);
        let local = c.restrict(10, 20).unwrap().to_local(10);
        assert_eq!(
            local.get(&"A".into()).unwrap(),
            &[Mention::new(0, 2), Mention::new(5, 5)]
        );
        assert_eq!(local.to_global(10), c);
    }
}
