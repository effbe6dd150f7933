//! MUC, B³, CEAF-φ4 and their CoNLL average.
//!
//! Partitions are lists of clusters over any hashable mention type. A
//! mention that appears on only one side is treated the way the CoNLL
//! reference scorer treats it: it counts toward that side's totals and
//! overlaps nothing on the other side.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use super::assignment::max_weight_assignment;
use crate::model::{ClusterSet, Mention};

/// Precision, recall and F1 together with the counts they came from, so
/// that documents can be pooled by summing numerators and denominators.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub p_num: f64,
    pub p_den: f64,
    pub r_num: f64,
    pub r_den: f64,
}

impl Prf {
    pub fn from_counts(p_num: f64, p_den: f64, r_num: f64, r_den: f64) -> Self {
        let precision = if p_den > 0.0 { p_num / p_den } else { 0.0 };
        let recall = if r_den > 0.0 { r_num / r_den } else { 0.0 };
        Self {
            precision,
            recall,
            f1: f1(precision, recall),
            p_num,
            p_den,
            r_num,
            r_den,
        }
    }

    /// Sum counts across units, then divide.
    pub fn pooled<'a>(items: impl IntoIterator<Item = &'a Prf>) -> Self {
        let (mut pn, mut pd, mut rn, mut rd) = (0.0, 0.0, 0.0, 0.0);
        for p in items {
            pn += p.p_num;
            pd += p.p_den;
            rn += p.r_num;
            rd += p.r_den;
        }
        Self::from_counts(pn, pd, rn, rd)
    }

    /// Unweighted mean of P, R and F1 across units; counts are summed.
    pub fn macro_mean<'a>(items: impl IntoIterator<Item = &'a Prf>) -> Self {
        let items: Vec<&Prf> = items.into_iter().collect();
        if items.is_empty() {
            return Self::default();
        }
        let n = items.len() as f64;
        let pooled = Self::pooled(items.iter().copied());
        Self {
            precision: items.iter().map(|p| p.precision).sum::<f64>() / n,
            recall: items.iter().map(|p| p.recall).sum::<f64>() / n,
            f1: items.iter().map(|p| p.f1).sum::<f64>() / n,
            ..pooled
        }
    }
}

pub fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Cluster index of every mention; later duplicates are ignored.
fn index<T: Hash + Eq + Copy>(clusters: &[Vec<T>]) -> HashMap<T, usize> {
    let mut idx = HashMap::with_capacity(clusters.iter().map(Vec::len).sum());
    for (i, c) in clusters.iter().enumerate() {
        for m in c {
            idx.entry(*m).or_insert(i);
        }
    }
    idx
}

/// Sparse overlap counts `|K_i ∩ R_j|` for every pair that shares a mention.
fn overlaps<T: Hash + Eq + Copy>(key: &[Vec<T>], response: &[Vec<T>]) -> HashMap<(usize, usize), usize> {
    let kidx = index(key);
    let mut out = HashMap::new();
    for (j, r) in response.iter().enumerate() {
        for m in r {
            if let Some(&i) = kidx.get(m) {
                *out.entry((i, j)).or_insert(0) += 1;
            }
        }
    }
    out
}

/// Link-based counts for one direction: Σ(|S| − |p(S)|) and Σ(|S| − 1).
fn muc_counts<T: Hash + Eq + Copy>(chains: &[Vec<T>], other: &[Vec<T>]) -> (f64, f64) {
    let oidx = index(other);
    let (mut num, mut den) = (0usize, 0usize);
    let mut seen = Vec::new();
    for s in chains {
        if s.is_empty() {
            continue;
        }
        seen.clear();
        let mut unaligned = 0usize;
        for m in s {
            match oidx.get(m) {
                Some(&j) => seen.push(j),
                None => unaligned += 1,
            }
        }
        seen.sort_unstable();
        seen.dedup();
        let parts = seen.len() + unaligned;
        num += s.len() - parts;
        den += s.len() - 1;
    }
    (num as f64, den as f64)
}

pub fn muc<T: Hash + Eq + Copy>(key: &[Vec<T>], response: &[Vec<T>]) -> Prf {
    let (r_num, r_den) = muc_counts(key, response);
    let (p_num, p_den) = muc_counts(response, key);
    Prf::from_counts(p_num, p_den, r_num, r_den)
}

pub fn b_cubed<T: Hash + Eq + Copy>(key: &[Vec<T>], response: &[Vec<T>]) -> Prf {
    let ov = overlaps(key, response);
    // Accumulate Σ_R |K∩R|² per cluster, then divide once per cluster.
    let mut k_sq = vec![0usize; key.len()];
    let mut r_sq = vec![0usize; response.len()];
    for (&(i, j), &c) in &ov {
        k_sq[i] += c * c;
        r_sq[j] += c * c;
    }
    let r_num: f64 = key
        .iter()
        .zip(&k_sq)
        .filter(|(k, _)| !k.is_empty())
        .map(|(k, &sq)| sq as f64 / k.len() as f64)
        .sum();
    let p_num: f64 = response
        .iter()
        .zip(&r_sq)
        .filter(|(r, _)| !r.is_empty())
        .map(|(r, &sq)| sq as f64 / r.len() as f64)
        .sum();
    let r_den = key.iter().map(Vec::len).sum::<usize>() as f64;
    let p_den = response.iter().map(Vec::len).sum::<usize>() as f64;
    Prf::from_counts(p_num, p_den, r_num, r_den)
}

pub fn phi4(overlap: usize, key_len: usize, response_len: usize) -> f64 {
    if key_len + response_len == 0 {
        return 0.0;
    }
    2.0 * overlap as f64 / (key_len + response_len) as f64
}

/// Entity-based CEAF with φ4 similarity under the optimal one-to-one
/// alignment. Only clusters that overlap something enter the solver, and
/// each connected block of the overlap graph is solved on its own.
pub fn ceaf_phi4<T: Hash + Eq + Copy>(key: &[Vec<T>], response: &[Vec<T>]) -> Prf {
    let n_key = key.iter().filter(|c| !c.is_empty()).count() as f64;
    let n_resp = response.iter().filter(|c| !c.is_empty()).count() as f64;
    if n_key == 0.0 || n_resp == 0.0 {
        return Prf::from_counts(0.0, n_resp, 0.0, n_key);
    }
    let ov = overlaps(key, response);
    let sim: f64 = components(&ov)
        .into_iter()
        .map(|(rows, cols)| {
            let w: Vec<Vec<f64>> = rows
                .iter()
                .map(|&i| {
                    cols.iter()
                        .map(|&j| {
                            ov.get(&(i, j))
                                .map_or(0.0, |&c| phi4(c, key[i].len(), response[j].len()))
                        })
                        .collect()
                })
                .collect();
            max_weight_assignment(&w)
                .into_iter()
                .enumerate()
                .filter_map(|(r, c)| c.map(|c| w[r][c]))
                .sum::<f64>()
        })
        .sum();
    Prf::from_counts(sim, n_resp, sim, n_key)
}

/// Connected components of the bipartite overlap graph, as (key rows, response cols).
fn components(ov: &HashMap<(usize, usize), usize>) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut adj_k: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut adj_r: HashMap<usize, Vec<usize>> = HashMap::new();
    for &(i, j) in ov.keys() {
        adj_k.entry(i).or_default().push(j);
        adj_r.entry(j).or_default().push(i);
    }
    let mut roots: Vec<usize> = adj_k.keys().copied().collect();
    roots.sort_unstable();
    let mut seen_k = std::collections::HashSet::new();
    let mut seen_r = std::collections::HashSet::new();
    let mut out = Vec::new();
    for root in roots {
        if !seen_k.insert(root) {
            continue;
        }
        let (mut rows, mut cols) = (vec![root], Vec::new());
        let mut stack = vec![(true, root)];
        while let Some((is_key, x)) = stack.pop() {
            let (adj, seen, acc) = if is_key {
                (&adj_k, &mut seen_r, &mut cols)
            } else {
                (&adj_r, &mut seen_k, &mut rows)
            };
            for &y in &adj[&x] {
                if seen.insert(y) {
                    acc.push(y);
                    stack.push((!is_key, y));
                }
            }
        }
        rows.sort_unstable();
        cols.sort_unstable();
        out.push((rows, cols));
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreOptions {
    /// Keep single-mention clusters on both sides.
    pub keep_singletons: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub muc: Prf,
    pub b3: Prf,
    pub ceaf: Prf,
    pub conll_f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linking: Option<Prf>,
}

impl ScoreReport {
    pub fn new(muc: Prf, b3: Prf, ceaf: Prf) -> Self {
        Self {
            muc,
            b3,
            ceaf,
            conll_f1: (muc.f1 + b3.f1 + ceaf.f1) / 3.0,
            linking: None,
        }
    }

    /// Corpus report from summed counts.
    pub fn pooled(reports: &[ScoreReport]) -> Self {
        let mut out = Self::new(
            Prf::pooled(reports.iter().map(|r| &r.muc)),
            Prf::pooled(reports.iter().map(|r| &r.b3)),
            Prf::pooled(reports.iter().map(|r| &r.ceaf)),
        );
        let links: Vec<&Prf> = reports.iter().filter_map(|r| r.linking.as_ref()).collect();
        if !links.is_empty() {
            out.linking = Some(Prf::pooled(links));
        }
        out
    }

    /// Corpus report from per-unit means.
    pub fn macro_mean(reports: &[ScoreReport]) -> Self {
        let mut out = Self::new(
            Prf::macro_mean(reports.iter().map(|r| &r.muc)),
            Prf::macro_mean(reports.iter().map(|r| &r.b3)),
            Prf::macro_mean(reports.iter().map(|r| &r.ceaf)),
        );
        let links: Vec<&Prf> = reports.iter().filter_map(|r| r.linking.as_ref()).collect();
        if !links.is_empty() {
            out.linking = Some(Prf::macro_mean(links));
        }
        out
    }
}

/// Drop empty clusters, and singletons unless asked to keep them.
pub fn prepare(cs: &ClusterSet, opts: ScoreOptions) -> Vec<Vec<Mention>> {
    cs.partition()
        .into_iter()
        .filter(|c| opts.keep_singletons || c.len() > 1)
        .collect()
}

pub fn score_partitions<T: Hash + Eq + Copy>(key: &[Vec<T>], response: &[Vec<T>]) -> ScoreReport {
    ScoreReport::new(muc(key, response), b_cubed(key, response), ceaf_phi4(key, response))
}

/// All three coreference metrics for one document.
pub fn conll(key: &ClusterSet, response: &ClusterSet, opts: ScoreOptions) -> ScoreReport {
    score_partitions(&prepare(key, opts), &prepare(response, opts))
}
