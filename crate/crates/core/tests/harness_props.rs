use bookcoref_core::formats::{CorpusFile, Entry};
use bookcoref_core::harness::{evaluate, Setting};
use bookcoref_core::metrics::{ScoreOptions, ScoreReport};
use bookcoref_core::model::{ClusterKey, ClusterSet, Document, Mention, Stage};
use proptest::prelude::*;

fn clusters(doc_id: &str, n: usize, stage: Stage, raw: &[(usize, usize, usize)]) -> ClusterSet {
    let mut cs = ClusterSet::new(doc_id, stage);
    let mut used = std::collections::HashSet::new();
    for &(s, len, c) in raw {
        let m = Mention::new(s % n, (s % n + len).min(n - 1));
        if used.insert(m) {
            cs.insert(ClusterKey::Anon(c as u64), m);
        }
    }
    cs
}

type Raw = Vec<(usize, usize, usize)>;

/// Key and response corpora over the same documents.
fn corpora(max_len: usize) -> impl Strategy<Value = (CorpusFile, CorpusFile)> {
    let doc = (1..max_len).prop_flat_map(|n| {
        let raw = || prop::collection::vec((0..n, 0usize..3, 0usize..4), 0..20);
        (Just(n), raw(), raw())
    });
    prop::collection::vec(doc, 1..4).prop_map(|docs: Vec<(usize, Raw, Raw)>| {
        let mut key = Vec::new();
        let mut resp = Vec::new();
        for (i, (n, k, r)) in docs.into_iter().enumerate() {
            let id = format!("b{i}");
            let d = Document::new(id.clone(), vec!["w".into(); n], vec![]);
            key.push(Entry::new(d.clone(), clusters(&id, n, Stage::Gold, &k)));
            resp.push(Entry::new(d, clusters(&id, n, Stage::Prediction, &r)));
        }
        (CorpusFile::new(key), CorpusFile::new(resp))
    })
}

fn same(a: &ScoreReport, b: &ScoreReport) -> bool {
    let eq = |x: f64, y: f64| (x - y).abs() < 1e-12;
    [(a.muc, b.muc), (a.b3, b.b3), (a.ceaf, b.ceaf)]
        .iter()
        .all(|(p, q)| eq(p.p_num, q.p_num) && eq(p.p_den, q.p_den) && eq(p.r_num, q.r_num) && eq(p.r_den, q.r_den))
        && eq(a.conll_f1, b.conll_f1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn single_window_documents_score_alike_in_every_setting((key, resp) in corpora(30)) {
        let opts = ScoreOptions::default();
        let full = evaluate(Setting::full_book(), &key, &resp, opts).unwrap();
        let split = evaluate(Setting::split(30), &key, &resp, opts).unwrap();
        let gw = evaluate(Setting::gold_plus_window(64), &key, &resp, opts).unwrap();
        prop_assert_eq!(full.units.len(), split.units.len());
        for ((f, s), g) in full.units.iter().zip(&split.units).zip(&gw.units) {
            prop_assert!(same(&f.report, &s.report));
            prop_assert!(same(&f.report, &g.report));
        }
        prop_assert!(same(&full.pooled, &split.pooled));
        prop_assert!(same(&full.pooled, &gw.pooled));
    }

    #[test]
    fn pooling_ignores_document_order((key, resp) in corpora(50), w in 5usize..20) {
        let opts = ScoreOptions::default();
        let rev = |c: &CorpusFile| CorpusFile::new(c.entries.iter().rev().cloned().collect());
        for s in [Setting::full_book(), Setting::split(w), Setting::gold_plus_window(w)] {
            let a = evaluate(s, &key, &resp, opts).unwrap();
            let b = evaluate(s, &rev(&key), &rev(&resp), opts).unwrap();
            prop_assert!((a.pooled.conll_f1 - b.pooled.conll_f1).abs() < 1e-12);
        }
    }
}

fn book(n: usize, stage: Stage, chains: &[&[(usize, usize)]]) -> CorpusFile {
    let cs = ClusterSet::from_clusters(
        "b",
        stage,
        chains.iter().enumerate().map(|(i, ms)| {
            (
                ClusterKey::Anon(i as u64),
                ms.iter().map(|&(s, e)| Mention::new(s, e)).collect::<Vec<_>>(),
            )
        }),
    );
    CorpusFile::new(vec![Entry::new(Document::new("b", vec!["w".into(); n], vec![]), cs)])
}

#[test]
fn global_fusion_is_hidden_by_windowed_gold() {
    // Two chains, one per window; the response merges them into one.
    let key = book(
        20,
        Stage::Gold,
        &[&[(1, 1), (4, 5), (8, 8)], &[(11, 11), (14, 14), (18, 19)]],
    );
    let resp = book(
        20,
        Stage::Prediction,
        &[&[(1, 1), (4, 5), (8, 8), (11, 11), (14, 14), (18, 19)]],
    );
    let opts = ScoreOptions::default();
    let full = evaluate(Setting::full_book(), &key, &resp, opts).unwrap();
    let windowed = evaluate(Setting::gold_plus_window(10), &key, &resp, opts).unwrap();
    assert!((windowed.pooled.conll_f1 - 1.0).abs() < 1e-12);
    assert!(full.pooled.conll_f1 < 0.8, "{}", full.pooled.conll_f1);
    assert!(windowed.pooled.conll_f1 > full.pooled.conll_f1);
}

#[test]
fn split_drops_mentions_that_cross_windows() {
    let key = book(20, Stage::Gold, &[&[(2, 2), (9, 10), (15, 15)]]);
    let run = evaluate(Setting::split(10), &key, &key, ScoreOptions::default()).unwrap();
    // (9,10) crosses the boundary; window 0 keeps a singleton, which is dropped.
    assert_eq!(run.units.len(), 2);
    assert_eq!(run.pooled.muc.r_den, 0.0);
}
