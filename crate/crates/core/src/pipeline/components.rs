//! Annotator interfaces and the deterministic implementations shipped with
//! the toolkit: the pattern-matching linker, constant judges, the identity
//! expander, and gold-backed oracles used for closure tests.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::ComponentError;
use crate::formats::CorpusFile;
use crate::model::{ClusterKey, ClusterSet, Document, Mention, Stage};

pub type ComponentResult<T> = std::result::Result<T, ComponentError>;

/// Links explicit character mentions to names from the document's character list.
pub trait Linker: Send + Sync {
    fn name(&self) -> String;
    fn link(&self, doc: &Document) -> ComponentResult<ClusterSet>;
}

/// One yes/no question about a linked mention.
#[derive(Debug, Clone)]
pub struct JudgeQuery<'a> {
    pub doc_id: &'a str,
    pub mention: Mention,
    pub character: &'a str,
    pub prompt: String,
}

/// Accepts or rejects a (mention, character) link given its prompt.
/// Implementations must answer identically for identical queries.
pub trait Judge: Send + Sync {
    fn name(&self) -> String;
    fn judge(&self, query: &JudgeQuery<'_>) -> ComponentResult<bool>;
}

/// One expansion call over a window or grouped window.
#[derive(Debug, Clone)]
pub struct ExpandRequest<'a> {
    pub doc_id: &'a str,
    /// Global offset of `tokens[0]`; seeds and output are local to it.
    pub offset: usize,
    pub tokens: &'a [String],
    pub seeds: &'a ClusterSet,
}

/// Completes partial character clusters inside a window. Output must
/// contain every seed and use only seed keys.
pub trait Expander: Send + Sync {
    fn name(&self) -> String;
    fn expand(&self, req: &ExpandRequest<'_>) -> ComponentResult<ClusterSet>;

    /// Spans this expander may emit that window boundaries must not cut.
    fn boundary_hints(&self, _doc: &Document) -> Option<Vec<Mention>> {
        None
    }
}

pub const PRONOUNS: &[&str] = &[
    "i",
    "me",
    "my",
    "mine",
    "myself",
    "you",
    "your",
    "yours",
    "yourself",
    "yourselves",
    "he",
    "him",
    "his",
    "himself",
    "she",
    "her",
    "hers",
    "herself",
    "it",
    "its",
    "itself",
    "we",
    "us",
    "our",
    "ours",
    "ourselves",
    "they",
    "them",
    "their",
    "theirs",
    "themselves",
    "thou",
    "thee",
    "thy",
    "thine",
    "thyself",
    "ye",
    "one",
    "oneself",
    "who",
    "whom",
    "whose",
];

pub fn is_pronoun(token: &str) -> bool {
    let lower = token.to_lowercase();
    PRONOUNS.contains(&lower.as_str())
}

/// Single-token pronoun spans, which explicit-mention linking should not produce.
pub fn is_pronoun_span(doc: &Document, m: Mention) -> bool {
    m.start == m.end && m.end < doc.len() && is_pronoun(&doc.tokens[m.start])
}

/// Case-sensitive exact match of each full character name.
pub fn pattern_match(doc: &Document) -> ClusterSet {
    let mut cs = ClusterSet::new(doc.doc_id.clone(), Stage::Initialized);
    for name in &doc.characters {
        cs.ensure_key(ClusterKey::name(name));
        let pattern: Vec<&str> = name.split_whitespace().collect();
        if pattern.is_empty() || pattern.len() > doc.len() {
            continue;
        }
        let mut next_free = 0;
        for start in 0..=doc.len() - pattern.len() {
            // Same-name matches may not overlap; the leftmost wins.
            if start < next_free {
                continue;
            }
            if doc.tokens[start..start + pattern.len()]
                .iter()
                .zip(&pattern)
                .all(|(t, p)| t == p)
            {
                cs.insert(ClusterKey::name(name), Mention::new(start, start + pattern.len() - 1));
                next_free = start + pattern.len();
            }
        }
    }
    cs
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PatternLinker;

impl Linker for PatternLinker {
    fn name(&self) -> String {
        "pattern".into()
    }

    fn link(&self, doc: &Document) -> ComponentResult<ClusterSet> {
        Ok(pattern_match(doc))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstJudge(pub bool);

impl Judge for ConstJudge {
    fn name(&self) -> String {
        if self.0 { "always-accept" } else { "always-reject" }.into()
    }

    fn judge(&self, _q: &JudgeQuery<'_>) -> ComponentResult<bool> {
        Ok(self.0)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityExpander;

impl Expander for IdentityExpander {
    fn name(&self) -> String {
        "identity".into()
    }

    fn expand(&self, req: &ExpandRequest<'_>) -> ComponentResult<ClusterSet> {
        Ok(req.seeds.clone())
    }
}

/// Gold clusters by document id, shared by the oracle components.
#[derive(Debug, Clone, Default)]
pub struct GoldIndex {
    docs: HashMap<String, ClusterSet>,
}

impl GoldIndex {
    pub fn from_corpus(corpus: &CorpusFile) -> Arc<Self> {
        Arc::new(Self {
            docs: corpus
                .entries
                .iter()
                .map(|e| (e.document.doc_id.clone(), e.clusters.clone()))
                .collect(),
        })
    }

    fn get(&self, doc_id: &str) -> ComponentResult<&ClusterSet> {
        self.docs
            .get(doc_id)
            .ok_or_else(|| ComponentError::BadResponse(format!("oracle has no gold for {doc_id}")))
    }
}

/// Gold mentions minus single-token pronouns.
pub fn explicit_mentions(doc: &Document, gold: &ClusterSet) -> ClusterSet {
    let mut cs = ClusterSet::new(doc.doc_id.clone(), Stage::Initialized);
    for (k, ms) in gold.iter() {
        cs.ensure_key(k.clone());
        for m in ms {
            if !is_pronoun_span(doc, *m) {
                cs.insert(k.clone(), *m);
            }
        }
    }
    cs
}

pub struct OracleLinker(pub Arc<GoldIndex>);

impl Linker for OracleLinker {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn link(&self, doc: &Document) -> ComponentResult<ClusterSet> {
        Ok(explicit_mentions(doc, self.0.get(&doc.doc_id)?))
    }
}

/// Accepts exactly the links present in gold.
pub struct OracleJudge(pub Arc<GoldIndex>);

impl Judge for OracleJudge {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn judge(&self, q: &JudgeQuery<'_>) -> ComponentResult<bool> {
        Ok(self
            .0
            .get(q.doc_id)?
            .contains(&ClusterKey::name(q.character), &q.mention))
    }
}

/// Returns gold restricted to the requested range for every seed key.
/// With `require_seed`, a character with no seed in the range gets
/// nothing, the way a real cluster-completion model behaves.
pub struct OracleExpander {
    pub gold: Arc<GoldIndex>,
    pub require_seed: bool,
}

impl OracleExpander {
    pub fn new(gold: Arc<GoldIndex>) -> Self {
        Self {
            gold,
            require_seed: false,
        }
    }

    pub fn seeded(gold: Arc<GoldIndex>) -> Self {
        Self {
            gold,
            require_seed: true,
        }
    }
}

impl Expander for OracleExpander {
    fn name(&self) -> String {
        if self.require_seed { "oracle-seeded" } else { "oracle" }.into()
    }

    fn expand(&self, req: &ExpandRequest<'_>) -> ComponentResult<ClusterSet> {
        let gold = self.gold.get(req.doc_id)?;
        let (lo, hi) = (req.offset, req.offset + req.tokens.len());
        let mut out = req.seeds.clone();
        for (key, seeds) in req.seeds.iter() {
            if self.require_seed && seeds.is_empty() {
                continue;
            }
            for m in gold.get(key).unwrap_or_default() {
                if m.within(lo, hi) {
                    out.insert(key.clone(), m.shifted_down(lo));
                }
            }
        }
        Ok(out)
    }

    fn boundary_hints(&self, doc: &Document) -> Option<Vec<Mention>> {
        self.gold
            .docs
            .get(&doc.doc_id)
            .map(|g| g.iter().flat_map(|(_, ms)| ms.iter().copied()).collect())
    }
}
