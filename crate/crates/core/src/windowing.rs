//! Window and group planning over a document's token range.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{CorpusFile, Entry};
use crate::model::{ClusterSet, Document, Mention};

pub const DEFAULT_WINDOW_LEN: usize = 1500;
pub const DEFAULT_GROUP_SIZE: usize = 10;

/// Half-open token range `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Range {
    pub lo: usize,
    pub hi: usize,
}

impl Range {
    pub fn new(lo: usize, hi: usize) -> Self {
        Self { lo, hi }
    }

    pub fn len(&self) -> usize {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.hi == self.lo
    }

    pub fn contains(&self, m: &Mention) -> bool {
        m.within(self.lo, self.hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryRule {
    /// Fixed-size chunks; mentions across a boundary are cut.
    Strict,
    /// Boundaries move left so that no guard mention is cut.
    #[default]
    MentionSafe,
}

impl std::str::FromStr for BoundaryRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(Self::Strict),
            "mention_safe" | "mention-safe" => Ok(Self::MentionSafe),
            _ => Err(Error::Config(format!("unknown boundary rule {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub doc_id: String,
    pub windows: Vec<Range>,
    pub max_len: usize,
    pub boundary_rule: BoundaryRule,
}

impl WindowPlan {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupedWindowPlan {
    pub plan: WindowPlan,
    pub group_size: usize,
    pub groups: Vec<Range>,
}

/// Partition `[0, |tokens|)` into consecutive windows of at most `max_len`
/// tokens. Under [`BoundaryRule::MentionSafe`] each boundary slides left to
/// the closest position that cuts no guard mention.
pub fn plan_windows(
    doc: &Document,
    max_len: usize,
    rule: BoundaryRule,
    guard: Option<&ClusterSet>,
) -> Result<WindowPlan> {
    let spans: Vec<Mention> = match (rule, guard) {
        (BoundaryRule::MentionSafe, None) => {
            return Err(Error::Planning(
                "mention_safe planning needs a guard cluster set".into(),
            ))
        }
        (_, Some(g)) => g.iter().flat_map(|(_, ms)| ms.iter().copied()).collect(),
        (BoundaryRule::Strict, None) => Vec::new(),
    };
    plan_spans(&doc.doc_id, doc.len(), max_len, rule, &spans)
}

/// Plan `n` tokens with a plain list of guard spans (ignored when strict).
pub fn plan_spans(doc_id: &str, n: usize, max_len: usize, rule: BoundaryRule, guard: &[Mention]) -> Result<WindowPlan> {
    if max_len == 0 {
        return Err(Error::Planning("max_len must be at least 1".into()));
    }
    let blocked = match rule {
        BoundaryRule::Strict => None,
        BoundaryRule::MentionSafe => Some(blocked_positions(n, max_len, guard)?),
    };

    let mut windows = Vec::with_capacity(n / max_len + 1);
    let mut lo = 0;
    while lo < n {
        let mut hi = (lo + max_len).min(n);
        if let Some(blocked) = &blocked {
            while hi < n && blocked[hi] {
                hi -= 1;
                if hi == lo {
                    return Err(Error::Planning(format!(
                        "no boundary in ({lo}, {}] avoids cutting a guard mention",
                        lo + max_len
                    )));
                }
            }
        }
        windows.push(Range::new(lo, hi));
        lo = hi;
    }
    Ok(WindowPlan {
        doc_id: doc_id.to_string(),
        windows,
        max_len,
        boundary_rule: rule,
    })
}

/// `blocked[p]` is true when a boundary before token `p` would cut a guard mention.
fn blocked_positions(n: usize, max_len: usize, guard: &[Mention]) -> Result<Vec<bool>> {
    let mut delta = vec![0i64; n + 2];
    for m in guard {
        if m.len() > max_len {
            return Err(Error::Planning(format!(
                "guard mention {m} spans {} tokens, longer than the window length {max_len}",
                m.len()
            )));
        }
        if m.start > m.end || m.end >= n {
            return Err(Error::Planning(format!("guard mention {m} is out of bounds")));
        }
        if m.end > m.start {
            delta[m.start + 1] += 1;
            delta[m.end + 1] -= 1;
        }
    }
    let mut blocked = vec![false; n + 1];
    let mut depth = 0i64;
    for (p, b) in blocked.iter_mut().enumerate() {
        depth += delta[p];
        *b = depth > 0;
    }
    Ok(blocked)
}

/// Group consecutive windows `G` at a time; group `j` (1-based) covers
/// windows `G(j-1)+1 ..= min(Gj, N)`.
pub fn plan_groups(plan: &WindowPlan, group_size: usize) -> Result<GroupedWindowPlan> {
    if group_size == 0 {
        return Err(Error::Planning("group size must be at least 1".into()));
    }
    let groups = plan
        .windows
        .chunks(group_size)
        .map(|ws| Range::new(ws[0].lo, ws[ws.len() - 1].hi))
        .collect();
    Ok(GroupedWindowPlan {
        plan: plan.clone(),
        group_size,
        groups,
    })
}

/// Window-document id for window `index` of `doc_id`.
pub fn window_doc_id(doc_id: &str, index: usize) -> String {
    format!("{doc_id}@w{index:04}")
}

/// Cluster set restricted to `range`, re-based to window-local offsets,
/// with empty clusters dropped.
pub fn localize(cs: &ClusterSet, range: Range, doc_id: &str) -> ClusterSet {
    let mut local = cs
        .restrict(range.lo, range.hi)
        .expect("plan ranges are ordered")
        .to_local(range.lo)
        .without_empty();
    local.doc_id = doc_id.to_string();
    local
}

/// A mention dropped by a strict split because it crosses a window boundary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Crossing {
    pub doc_id: String,
    pub cluster: String,
    pub mention: Mention,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub windows: usize,
    pub original_mentions: usize,
    pub kept_mentions: usize,
    pub crossings: Vec<Crossing>,
}

/// Turn every document into independent window-documents.
pub fn split_corpus(corpus: &CorpusFile, max_len: usize) -> Result<(CorpusFile, SplitReport)> {
    let mut out = Vec::new();
    let mut report = SplitReport::default();
    for entry in &corpus.entries {
        let doc = &entry.document;
        let plan = plan_windows(doc, max_len, BoundaryRule::Strict, None)?;
        report.original_mentions += entry.clusters.mention_count();
        for (key, ms) in entry.clusters.iter() {
            for m in ms {
                if m.start / max_len != m.end / max_len {
                    report.crossings.push(Crossing {
                        doc_id: doc.doc_id.clone(),
                        cluster: key.to_string(),
                        mention: *m,
                    });
                }
            }
        }
        for (i, w) in plan.windows.iter().enumerate() {
            let id = window_doc_id(&doc.doc_id, i);
            let clusters = localize(&entry.clusters, *w, &id);
            report.kept_mentions += clusters.mention_count();
            let document = Document {
                doc_id: id,
                tokens: doc.tokens[w.lo..w.hi].to_vec(),
                characters: doc.characters.clone(),
                source: doc.source.clone(),
            };
            out.push(Entry {
                document,
                clusters,
                extra: entry.extra.clone(),
            });
        }
        report.windows += plan.windows.len();
    }
    Ok((CorpusFile::new(out), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ClusterKey, Stage};

    fn doc(n: usize) -> Document {
        Document::new("d", vec!["x".to_string(); n], vec!["A".into()])
    }

    fn guard(ms: &[(usize, usize)]) -> ClusterSet {
        ClusterSet::from_clusters(
            "d",
            Stage::Refined,
            [(
                ClusterKey::name("A"),
                ms.iter().map(|&(s, e)| Mention::new(s, e)).collect::<Vec<_>>(),
            )],
        )
    }

    fn ranges(p: &WindowPlan) -> Vec<(usize, usize)> {
        p.windows.iter().map(|r| (r.lo, r.hi)).collect()
    }

    #[test]
    fn strict_chunks() {
        let p = plan_windows(&doc(3200), 1500, BoundaryRule::Strict, None).unwrap();
        assert_eq!(ranges(&p), vec![(0, 1500), (1500, 3000), (3000, 3200)]);
    }

    #[test]
    fn mention_safe_moves_boundary_left() {
        let g = guard(&[(1498, 1502)]);
        let p = plan_windows(&doc(3200), 1500, BoundaryRule::MentionSafe, Some(&g)).unwrap();
        assert_eq!(ranges(&p), vec![(0, 1498), (1498, 2998), (2998, 3200)]);
    }

    #[test]
    fn short_document_is_one_window() {
        let p = plan_windows(&doc(1499), 1500, BoundaryRule::Strict, None).unwrap();
        assert_eq!(ranges(&p), vec![(0, 1499)]);
    }

    #[test]
    fn oversized_guard_mention_is_rejected() {
        let g = guard(&[(10, 30)]);
        let err = plan_windows(&doc(100), 20, BoundaryRule::MentionSafe, Some(&g)).unwrap_err();
        assert!(err.to_string().contains("(10,30)"), "{err}");
    }

    #[test]
    fn mention_safe_without_guard_is_an_error() {
        assert!(plan_windows(&doc(10), 5, BoundaryRule::MentionSafe, None).is_err());
    }

    #[test]
    fn chained_overlaps_can_leave_no_boundary() {
        let g = ClusterSet::from_clusters(
            "d",
            Stage::Refined,
            [
                (ClusterKey::name("A"), vec![Mention::new(0, 6)]),
                (ClusterKey::name("B"), vec![Mention::new(5, 11)]),
            ],
        );
        assert!(plan_windows(&doc(20), 8, BoundaryRule::MentionSafe, Some(&g)).is_err());
    }

    #[test]
    fn grouping() {
        let p = plan_spans("d", 23 * 10, 10, BoundaryRule::Strict, &[]).unwrap();
        let g = plan_groups(&p, 10).unwrap();
        assert_eq!(
            g.groups,
            vec![Range::new(0, 100), Range::new(100, 200), Range::new(200, 230)]
        );
        assert_eq!(plan_groups(&p, 1).unwrap().groups, p.windows);
        let p10 = plan_spans("d", 100, 10, BoundaryRule::Strict, &[]).unwrap();
        assert_eq!(plan_groups(&p10, 10).unwrap().groups, vec![Range::new(0, 100)]);
        assert!(plan_groups(&p, 0).is_err());
    }

    #[test]
    fn split_documents() {
        let d = doc(3000);
        let cs = ClusterSet::from_clusters(
            "d",
            Stage::Gold,
            [
                (ClusterKey::name("A"), vec![Mention::new(3, 3), Mention::new(20, 21)]),
                (
                    ClusterKey::name("B"),
                    vec![Mention::new(1499, 1500), Mention::new(1600, 1600)],
                ),
            ],
        );
        let corpus = CorpusFile::new(vec![Entry::new(d, cs)]);
        let (split, report) = split_corpus(&corpus, 1500).unwrap();
        assert_eq!(split.len(), 2);
        assert!(split.entries.iter().all(|e| e.document.len() == 1500));
        let w1 = &split.entries[1].clusters;
        assert!(w1.get(&"A".into()).is_none());
        assert_eq!(w1.get(&"B".into()).unwrap(), &[Mention::new(100, 100)]);
        assert_eq!(report.crossings.len(), 1);
        assert_eq!(report.kept_mentions + report.crossings.len(), report.original_mentions);
    }
}
