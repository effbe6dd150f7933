use bookcoref_core::model::{union, ClusterKey, ClusterSet, Mention, Stage};
use bookcoref_core::windowing::{plan_groups, plan_spans, BoundaryRule, Range};
use proptest::prelude::*;

const KEYS: [&str; 4] = ["A", "B", "C", "D"];

fn mention(n: usize) -> impl Strategy<Value = Mention> {
    (0..n)
        .prop_flat_map(move |s| (Just(s), s..(s + 4).min(n)))
        .prop_map(|(s, e)| Mention::new(s, e))
}

/// Small cluster sets over a document of `n` tokens.
fn cluster_set(n: usize) -> impl Strategy<Value = ClusterSet> {
    prop::collection::vec((0..KEYS.len(), prop::collection::vec(mention(n), 0..6)), 0..5).prop_map(|cs| {
        ClusterSet::from_clusters(
            "d",
            Stage::Refined,
            cs.into_iter().map(|(k, ms)| (ClusterKey::name(KEYS[k]), ms)),
        )
    })
}

/// Non-empty clusters only, the form union produces equality against.
fn canonical(cs: ClusterSet) -> ClusterSet {
    cs.without_empty()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn restrict_to_whole_document_is_identity(cs in cluster_set(30)) {
        prop_assert_eq!(cs.restrict(0, 30).unwrap(), cs);
    }

    #[test]
    fn union_is_commutative_associative_idempotent(
        a in cluster_set(20), b in cluster_set(20), c in cluster_set(20)
    ) {
        let ab = union(&[a.clone(), b.clone()]).unwrap();
        prop_assert_eq!(&ab, &union(&[b.clone(), a.clone()]).unwrap());
        let ab_c = union(&[ab.clone(), c.clone()]).unwrap();
        let a_bc = union(&[a.clone(), union(&[b.clone(), c.clone()]).unwrap()]).unwrap();
        prop_assert_eq!(ab_c, a_bc);
        prop_assert_eq!(union(&[a.clone(), a.clone()]).unwrap(), union(&[a]).unwrap());
    }

    #[test]
    fn split_and_reassemble(cs in cluster_set(30), k in 0usize..=30) {
        prop_assume!(cs.iter().all(|(_, ms)| ms.iter().all(|m| !m.straddles(k))));
        let left = cs.restrict(0, k).unwrap();
        let right = cs.restrict(k, 30).unwrap();
        prop_assert_eq!(canonical(union(&[left, right]).unwrap()), canonical(cs));
    }

    #[test]
    fn local_round_trip(cs in cluster_set(40), lo in 0usize..40, len in 0usize..40) {
        let hi = (lo + len).min(40);
        let r = cs.restrict(lo, hi).unwrap();
        prop_assert_eq!(r.to_local(lo).to_global(lo), r.clone());
        for (_, ms) in r.to_local(lo).iter() {
            for m in ms {
                prop_assert!(m.end < hi - lo);
            }
        }
    }

    #[test]
    fn windows_partition_the_document(
        n in 1usize..400,
        max_len in 1usize..60,
        guard in prop::collection::vec((0usize..400, 0usize..8), 0..30),
        strict in any::<bool>(),
    ) {
        let guard: Vec<Mention> = guard
            .into_iter()
            .filter(|(s, _)| *s < n)
            .map(|(s, l)| Mention::new(s, (s + l.min(max_len - 1)).min(n - 1)))
            .collect();
        let rule = if strict { BoundaryRule::Strict } else { BoundaryRule::MentionSafe };
        let plan = match plan_spans("d", n, max_len, rule, &guard) {
            Ok(p) => p,
            // Dense guards can leave no safe cut; that is a reported error, not a bad plan.
            Err(_) => { prop_assert!(!strict); return Ok(()); }
        };
        let mut at = 0;
        for w in &plan.windows {
            prop_assert_eq!(w.lo, at);
            prop_assert!(w.hi > w.lo && w.len() <= max_len);
            at = w.hi;
        }
        prop_assert_eq!(at, n);
        if !strict {
            for m in &guard {
                prop_assert!(plan.windows.iter().any(|w| w.contains(m)), "{} cut", m);
            }
        }
        let again = plan_spans("d", n, max_len, rule, &guard).unwrap();
        prop_assert_eq!(&again, &plan);

        let g = 1 + n % 7;
        let groups = plan_groups(&plan, g).unwrap();
        prop_assert_eq!(groups.groups.len(), plan.windows.len().div_ceil(g));
        prop_assert_eq!(groups.groups.first().map(|r| r.lo), Some(0));
        prop_assert_eq!(groups.groups.last().map(|r| r.hi), Some(n));
        for pair in groups.groups.windows(2) {
            prop_assert_eq!(pair[0].hi, pair[1].lo);
        }
        prop_assert_eq!(plan_groups(&plan, g).unwrap(), groups);
    }
}

#[test]
fn range_containment_is_end_inclusive_against_half_open() {
    let r = Range::new(10, 20);
    assert!(r.contains(&Mention::new(10, 19)));
    assert!(!r.contains(&Mention::new(19, 20)));
    assert!(!r.contains(&Mention::new(9, 10)));
}
