//! Replay of gold mention streams through bounded entity memories.
//!
//! An incremental coreference model keeps a bounded set of entity
//! representations. When a mention arrives whose entity was seen earlier
//! but has since been evicted, the model cannot link it correctly; those
//! arrivals are counted as forced errors.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::CorpusFile;
use crate::model::ClusterSet;

pub const DEFAULT_DUAL: (usize, usize) = (25, 25);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    Unbounded,
    Lru {
        capacity: usize,
    },
    /// Recency cache `l` backed by a frequency cache `g`.
    Dual {
        l: usize,
        g: usize,
    },
}

impl Policy {
    pub fn dual_default() -> Self {
        Policy::Dual {
            l: DEFAULT_DUAL.0,
            g: DEFAULT_DUAL.1,
        }
    }

    pub fn check(&self) -> Result<()> {
        match *self {
            Policy::Lru { capacity: 0 } => Err(Error::Config("lru capacity must be positive".into())),
            Policy::Dual { l: 0, .. } => Err(Error::Config("dual L capacity must be positive".into())),
            _ => Ok(()),
        }
    }

    /// Build from a policy name and a list of capacities as given on the command line.
    pub fn from_parts(kind: &str, capacity: &[usize]) -> Result<Self> {
        let p = match (kind, capacity) {
            ("unbounded", []) => Policy::Unbounded,
            ("lru", [k]) => Policy::Lru { capacity: *k },
            ("dual", []) => Policy::dual_default(),
            ("dual", [l, g]) => Policy::Dual { l: *l, g: *g },
            ("unbounded" | "lru" | "dual", _) => {
                return Err(Error::Config(format!(
                    "wrong number of capacities for {kind}: {capacity:?}"
                )))
            }
            _ => return Err(Error::Config(format!("unknown policy {kind:?}"))),
        };
        p.check()?;
        Ok(p)
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Unbounded => write!(f, "unbounded"),
            Policy::Lru { capacity } => write!(f, "lru({capacity})"),
            Policy::Dual { l, g } => write!(f, "dual({l},{g})"),
        }
    }
}

/// Accepts `unbounded`, `lru(k)`, `lru:k`, `dual`, `dual(l,g)`, `dual:l,g`.
impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (kind, args) = match s.find(['(', ':']) {
            Some(i) => (&s[..i], s[i + 1..].trim_end_matches(')')),
            None => (s, ""),
        };
        let caps = args
            .split(',')
            .map(str::trim)
            .filter(|a| !a.is_empty())
            .map(|a| {
                a.parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad capacity {a:?} in {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Policy::from_parts(kind, &caps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Hit,
    First,
    Forced,
    /// Moved from the recency cache to the frequency cache.
    Demote,
    Evict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    /// Position in the mention stream that triggered the event.
    pub step: usize,
    pub kind: EventKind,
    pub cluster: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub doc_id: String,
    pub policy: Policy,
    pub total_mentions: usize,
    pub evictions: usize,
    pub forced_errors: usize,
    pub forced_error_rate: f64,
    pub per_cluster_evictions: BTreeMap<String, usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub events: Option<Vec<Event>>,
}

/// Replay a stream of cluster ids. Returns per-event trace when `trace` is set.
pub fn replay(stream: &[usize], policy: Policy, trace: bool) -> Replay {
    let mut r = Replay::new(trace);
    match policy {
        Policy::Unbounded => {
            for (t, &c) in stream.iter().enumerate() {
                let resident = r.seen.contains(&c);
                r.arrive(t, c, resident);
            }
        }
        Policy::Lru { capacity } => replay_lru(&mut r, stream, capacity),
        Policy::Dual { l, g } => replay_dual(&mut r, stream, l, g),
    }
    r
}

/// Raw replay counters over integer cluster ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Replay {
    pub total: usize,
    pub evictions: usize,
    pub forced: usize,
    pub per_cluster_evictions: BTreeMap<usize, usize>,
    pub events: Option<Vec<(usize, EventKind, usize)>>,
    seen: HashSet<usize>,
}

impl Replay {
    fn new(trace: bool) -> Self {
        Self {
            events: trace.then(Vec::new),
            ..Default::default()
        }
    }

    fn log(&mut self, step: usize, kind: EventKind, c: usize) {
        if let Some(ev) = &mut self.events {
            ev.push((step, kind, c));
        }
    }

    /// Records an arrival; `resident` false means a miss.
    fn arrive(&mut self, step: usize, c: usize, resident: bool) {
        self.total += 1;
        let kind = if resident {
            EventKind::Hit
        } else if self.seen.contains(&c) {
            self.forced += 1;
            EventKind::Forced
        } else {
            EventKind::First
        };
        self.seen.insert(c);
        self.log(step, kind, c);
    }

    fn evict(&mut self, step: usize, c: usize) {
        self.evictions += 1;
        *self.per_cluster_evictions.entry(c).or_default() += 1;
        self.log(step, EventKind::Evict, c);
    }

    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.forced as f64 / self.total as f64
        }
    }
}

fn replay_lru(r: &mut Replay, stream: &[usize], capacity: usize) {
    let mut last: HashMap<usize, usize> = HashMap::new();
    let mut order: BTreeSet<(usize, usize)> = BTreeSet::new();
    for (t, &c) in stream.iter().enumerate() {
        let resident = match last.get(&c) {
            Some(&prev) => {
                order.remove(&(prev, c));
                true
            }
            None => false,
        };
        r.arrive(t, c, resident);
        last.insert(c, t);
        order.insert((t, c));
        if order.len() > capacity {
            let (_, victim) = order.pop_first().expect("non-empty");
            last.remove(&victim);
            r.evict(t, victim);
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    in_l: bool,
    freq: usize,
    last: usize,
}

fn replay_dual(r: &mut Replay, stream: &[usize], l_cap: usize, g_cap: usize) {
    let mut slots: HashMap<usize, Slot> = HashMap::new();
    // L ordered by recency; G by (frequency, recency).
    let mut l_set: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut g_set: BTreeSet<(usize, usize, usize)> = BTreeSet::new();

    for (t, &c) in stream.iter().enumerate() {
        let slot = match slots.get(&c).copied() {
            Some(s) => {
                if s.in_l {
                    l_set.remove(&(s.last, c));
                } else {
                    g_set.remove(&(s.freq, s.last, c));
                }
                r.arrive(t, c, true);
                Slot {
                    in_l: true,
                    freq: s.freq + 1,
                    last: t,
                }
            }
            None => {
                r.arrive(t, c, false);
                Slot {
                    in_l: true,
                    freq: 1,
                    last: t,
                }
            }
        };
        slots.insert(c, slot);
        l_set.insert((t, c));

        if l_set.len() > l_cap {
            let (_, d) = l_set.pop_first().expect("non-empty");
            let mut ds = slots[&d];
            ds.in_l = false;
            // Pick the G victim among current G members and the demoted entry,
            // so an entry that would be demoted and dropped at once is logged
            // as a single eviction.
            let candidate = (ds.freq, ds.last, d);
            let victim = if g_set.len() + 1 > g_cap {
                Some(match g_set.first() {
                    Some(&first) if first < candidate => first,
                    _ => candidate,
                })
            } else {
                None
            };
            if victim == Some(candidate) {
                slots.remove(&d);
                r.evict(t, d);
            } else {
                slots.insert(d, ds);
                g_set.insert(candidate);
                r.log(t, EventKind::Demote, d);
                if let Some(v) = victim {
                    g_set.remove(&v);
                    slots.remove(&v.2);
                    r.evict(t, v.2);
                }
            }
        }
    }
}

/// Replay one document's gold clusters in mention order.
pub fn simulate(gold: &ClusterSet, policy: Policy, trace: bool) -> SimReport {
    let ordered = gold.mentions_in_order();
    let mut ids: HashMap<&crate::model::ClusterKey, usize> = HashMap::new();
    let mut names: Vec<String> = Vec::new();
    let stream: Vec<usize> = ordered
        .iter()
        .map(|(_, k)| {
            *ids.entry(*k).or_insert_with(|| {
                names.push(k.to_string());
                names.len() - 1
            })
        })
        .collect();
    let r = replay(&stream, policy, trace);
    SimReport {
        doc_id: gold.doc_id.clone(),
        policy,
        total_mentions: r.total,
        evictions: r.evictions,
        forced_errors: r.forced,
        forced_error_rate: r.rate(),
        per_cluster_evictions: r
            .per_cluster_evictions
            .iter()
            .map(|(c, n)| (names[*c].clone(), *n))
            .collect(),
        events: r.events.map(|ev| {
            ev.into_iter()
                .map(|(step, kind, c)| Event {
                    step,
                    kind,
                    cluster: names[c].clone(),
                })
                .collect()
        }),
    }
}

/// Every document under every policy, documents outermost.
pub fn sweep(corpus: &CorpusFile, policies: &[Policy]) -> Vec<SimReport> {
    corpus
        .entries
        .iter()
        .flat_map(|e| policies.iter().map(|p| simulate(&e.clusters, *p, false)))
        .collect()
}

/// Pooled forced-error rate over several reports.
pub fn pooled_rate(reports: &[SimReport]) -> f64 {
    let total: usize = reports.iter().map(|r| r.total_mentions).sum();
    let forced: usize = reports.iter().map(|r| r.forced_errors).sum();
    if total == 0 {
        0.0
    } else {
        forced as f64 / total as f64
    }
}

pub fn to_csv(reports: &[SimReport]) -> Result<String> {
    #[derive(Serialize)]
    struct Row<'a> {
        doc_id: &'a str,
        policy: String,
        total_mentions: usize,
        evictions: usize,
        forced_errors: usize,
        forced_error_rate: f64,
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports {
        w.serialize(Row {
            doc_id: &r.doc_id,
            policy: r.policy.to_string(),
            total_mentions: r.total_mentions,
            evictions: r.evictions,
            forced_errors: r.forced_errors,
            forced_error_rate: r.forced_error_rate,
        })
        .map_err(|e| Error::Contract(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Contract(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// A capacity step that raised the forced-error count.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityViolation {
    pub smaller: Policy,
    pub larger: Policy,
    pub forced_smaller: usize,
    pub forced_larger: usize,
}

/// Check that growing any single capacity by one never increases forced
/// errors on `stream`, over `lru(1..=max)` and `dual(1..=max, 0..=max)`.
pub fn monotonicity_violations(stream: &[usize], max: usize) -> Vec<MonotonicityViolation> {
    let mut out = Vec::new();
    let lru: Vec<usize> = (1..=max)
        .map(|k| replay(stream, Policy::Lru { capacity: k }, false).forced)
        .collect();
    for k in 1..max {
        if lru[k] > lru[k - 1] {
            out.push(MonotonicityViolation {
                smaller: Policy::Lru { capacity: k },
                larger: Policy::Lru { capacity: k + 1 },
                forced_smaller: lru[k - 1],
                forced_larger: lru[k],
            });
        }
    }
    let grid: Vec<Vec<usize>> = (1..=max)
        .map(|l| {
            (0..=max)
                .map(|g| replay(stream, Policy::Dual { l, g }, false).forced)
                .collect()
        })
        .collect();
    for l in 1..=max {
        for g in 0..=max {
            let here = grid[l - 1][g];
            let mut check = |other: Policy, f: usize| {
                if f > here {
                    out.push(MonotonicityViolation {
                        smaller: Policy::Dual { l, g },
                        larger: other,
                        forced_smaller: here,
                        forced_larger: f,
                    });
                }
            };
            if l < max {
                check(Policy::Dual { l: l + 1, g }, grid[l][g]);
            }
            if g < max {
                check(Policy::Dual { l, g: g + 1 }, grid[l - 1][g + 1]);
            }
        }
    }
    out
}

/// Consecutive pairs of `policies` (ordered by growing capacity) where the
/// forced-error count went up.
pub fn sweep_violations(stream: &[usize], policies: &[Policy]) -> Vec<MonotonicityViolation> {
    let forced: Vec<usize> = policies.iter().map(|p| replay(stream, *p, false).forced).collect();
    (1..policies.len())
        .filter(|&i| forced[i] > forced[i - 1])
        .map(|i| MonotonicityViolation {
            smaller: policies[i - 1],
            larger: policies[i],
            forced_smaller: forced[i - 1],
            forced_larger: forced[i],
        })
        .collect()
}

/// Integer cluster-id stream of a document, in mention order.
pub fn cluster_stream(gold: &ClusterSet) -> Vec<usize> {
    let mut ids: HashMap<&crate::model::ClusterKey, usize> = HashMap::new();
    gold.mentions_in_order()
        .iter()
        .map(|(_, k)| {
            let n = ids.len();
            *ids.entry(*k).or_insert(n)
        })
        .collect()
}
