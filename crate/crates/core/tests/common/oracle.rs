//! Exact-arithmetic metric definitions used as test oracles.

use std::collections::{BTreeSet, HashMap};

use bookcoref_core::metrics::Prf;
use bookcoref_core::model::{ClusterKey, ClusterSet, Mention, Stage};
use num_rational::Ratio;
use proptest::prelude::*;

pub type Q = Ratio<i64>;

pub fn q(n: usize, d: usize) -> Q {
    Q::new(n as i64, d as i64)
}

pub fn to_f(x: Q) -> f64 {
    *x.numer() as f64 / *x.denom() as f64
}

pub fn owner(p: &[Vec<u32>]) -> HashMap<u32, usize> {
    p.iter()
        .enumerate()
        .flat_map(|(i, c)| c.iter().map(move |m| (*m, i)))
        .collect()
}

/// Links needed to connect each chain minus the links lost when the other
/// side splits it (unmatched mentions are their own part).
pub fn muc_oracle(key: &[Vec<u32>], resp: &[Vec<u32>]) -> (Q, Q) {
    let dir = |a: &[Vec<u32>], b: &[Vec<u32>]| {
        let ob = owner(b);
        let mut num = 0;
        let mut den = 0;
        for s in a {
            let mut parts: BTreeSet<(bool, u32)> = BTreeSet::new();
            for m in s {
                match ob.get(m) {
                    Some(&j) => parts.insert((true, j as u32)),
                    None => parts.insert((false, *m)),
                };
            }
            num += s.len() - parts.len();
            den += s.len() - 1;
        }
        (num, den)
    };
    let (rn, rd) = dir(key, resp);
    let (pn, pd) = dir(resp, key);
    (
        if pd == 0 { Q::from(0) } else { q(pn, pd) },
        if rd == 0 { Q::from(0) } else { q(rn, rd) },
    )
}

/// Per-mention average of |K(m) ∩ R(m)| / |K(m)| (recall) and the mirror.
pub fn b3_oracle(key: &[Vec<u32>], resp: &[Vec<u32>]) -> (Q, Q) {
    let dir = |a: &[Vec<u32>], b: &[Vec<u32>]| {
        let ob = owner(b);
        let total: usize = a.iter().map(Vec::len).sum();
        if total == 0 {
            return Q::from(0);
        }
        let mut acc = Q::from(0);
        for s in a {
            for m in s {
                let shared = match ob.get(m) {
                    Some(&j) => s.iter().filter(|x| b[j].contains(x)).count(),
                    None => 0,
                };
                acc += q(shared, s.len());
            }
        }
        acc / Q::from(total as i64)
    };
    (dir(resp, key), dir(key, resp))
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut v = p.clone();
            v.insert(i, n - 1);
            out.push(v);
        }
    }
    out
}

/// Best one-to-one alignment found by trying every permutation.
pub fn ceaf_oracle(key: &[Vec<u32>], resp: &[Vec<u32>]) -> (Q, Q) {
    if key.is_empty() || resp.is_empty() {
        return (Q::from(0), Q::from(0));
    }
    let n = key.len().max(resp.len());
    let phi = |i: usize, j: usize| -> Q {
        if i >= key.len() || j >= resp.len() {
            return Q::from(0);
        }
        let common = key[i].iter().filter(|m| resp[j].contains(m)).count();
        q(2 * common, key[i].len() + resp[j].len())
    };
    let best = permutations(n)
        .into_iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| phi(i, j)).sum::<Q>())
        .max()
        .unwrap();
    (best / Q::from(resp.len() as i64), best / Q::from(key.len() as i64))
}

/// Each of `n` mention ids gets a cluster in `0..k` or is left out.
pub fn partition(n: u32, k: usize) -> impl Strategy<Value = Vec<Vec<u32>>> {
    prop::collection::vec(prop::option::of(0..k), n as usize).prop_map(move |assign| {
        let mut cs = vec![Vec::new(); k];
        for (m, c) in assign.into_iter().enumerate() {
            if let Some(c) = c {
                cs[c].push(m as u32);
            }
        }
        cs.retain(|c| !c.is_empty());
        cs
    })
}

pub fn close(a: f64, b: Q) -> bool {
    (a - to_f(b)).abs() < 1e-12
}

pub fn check(name: &str, got: &Prf, (p, r): (Q, Q)) -> Result<(), TestCaseError> {
    prop_assert!(close(got.precision, p), "{} precision {} vs {}", name, got.precision, p);
    prop_assert!(close(got.recall, r), "{} recall {} vs {}", name, got.recall, r);
    Ok(())
}

pub fn to_cluster_set(p: &[Vec<u32>], stage: Stage) -> ClusterSet {
    ClusterSet::from_clusters(
        "d",
        stage,
        p.iter().enumerate().map(|(i, c)| {
            (
                ClusterKey::Anon(i as u64),
                c.iter()
                    .map(|&m| Mention::new(m as usize * 2, m as usize * 2))
                    .collect::<Vec<_>>(),
            )
        }),
    )
}
