use std::collections::BTreeSet;
use std::io::Cursor;

use bookcoref_core::formats::{parse_conll, parse_jsonl, to_conll_string, to_jsonl_string, CorpusFile, Entry};
use bookcoref_core::model::{ClusterKey, ClusterSet, Document, Mention, Stage};
use proptest::prelude::*;

const VOCAB: &[&str] = &[
    "the",
    "Darcy",
    "naïve",
    "\"quoted\"",
    "a\\b",
    "—",
    "Mr.",
    ",",
    "ß",
    "{x}",
];
const NAMES: &[&str] = &["Elizabeth Bennet", "Mr. Darcy", "Jane", "Ünïcode"];

/// A document with mentions owned by at most one cluster each, and
/// same-cluster spans nested or disjoint (what bracket notation can encode).
fn entry() -> impl Strategy<Value = Entry> {
    (1usize..60)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(0..VOCAB.len(), n),
                prop::collection::vec((0..n, 0usize..4, 0usize..6), 0..25),
                prop::collection::vec(any::<bool>(), NAMES.len()),
            )
        })
        .prop_map(|(toks, raw, listed)| {
            let n = toks.len();
            let characters: Vec<String> = NAMES
                .iter()
                .zip(&listed)
                .filter(|(_, l)| **l)
                .map(|(s, _)| s.to_string())
                .collect();
            let key = |c: usize| {
                if c < characters.len() {
                    ClusterKey::name(&characters[c])
                } else {
                    ClusterKey::Anon(c as u64)
                }
            };
            let mut cs = ClusterSet::new("doc-1", Stage::Gold);
            let mut owned: BTreeSet<Mention> = BTreeSet::new();
            for (s, len, c) in raw {
                let m = Mention::new(s, (s + len).min(n - 1));
                let k = key(c);
                let crosses = cs.get(&k).unwrap_or_default().iter().any(|o| {
                    (o.start < m.start && m.start <= o.end && o.end < m.end)
                        || (m.start < o.start && o.start <= m.end && m.end < o.end)
                });
                if crosses || !owned.insert(m) {
                    continue;
                }
                cs.insert(k, m);
            }
            for c in &characters {
                cs.ensure_key(ClusterKey::name(c));
            }
            let doc = Document::new(
                "doc-1",
                toks.iter().map(|i| VOCAB[*i].to_string()).collect(),
                characters,
            );
            Entry::new(doc, cs)
        })
}

fn partition(cs: &ClusterSet) -> BTreeSet<Vec<Mention>> {
    cs.partition().into_iter().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn jsonl_round_trip_is_exact(e in entry()) {
        let corpus = CorpusFile::new(vec![e]);
        let text = to_jsonl_string(&corpus);
        let back = parse_jsonl(Cursor::new(text.as_bytes()), "mem", Stage::Gold).unwrap();
        prop_assert_eq!(&back, &corpus);
        prop_assert_eq!(to_jsonl_string(&back), text);
    }

    #[test]
    fn conll_round_trip_keeps_mentions_and_partition(e in entry()) {
        prop_assume!(!e.document.tokens.iter().any(|t| t.chars().any(char::is_whitespace)));
        let corpus = CorpusFile::new(vec![e.clone()]);
        let text = to_conll_string(&corpus).unwrap();
        let back = parse_conll(&text, "mem", Stage::Gold).unwrap();
        let b = &back.entries[0];
        prop_assert_eq!(&b.document.tokens, &e.document.tokens);
        prop_assert_eq!(&b.document.doc_id, &e.document.doc_id);
        prop_assert_eq!(partition(&b.clusters), partition(&e.clusters));
        let mut m1: Vec<Mention> = e.clusters.iter().flat_map(|(_, ms)| ms.to_vec()).collect();
        let mut m2: Vec<Mention> = b.clusters.iter().flat_map(|(_, ms)| ms.to_vec()).collect();
        m1.sort();
        m2.sort();
        prop_assert_eq!(m1, m2);
    }
}
