//! Corpus statistics: sizes, chain shapes, and mention distances.

use serde::{Deserialize, Serialize};

use crate::formats::CorpusFile;

/// Pair count and summed pairwise distance of sorted positions, in O(k).
///
/// Uses `Σ_{i<j} (p_j − p_i) = Σ_i p_i · (2i − k + 1)`.
pub fn chain_distance(positions: &[usize]) -> (u64, u128) {
    let k = positions.len();
    if k < 2 {
        return (0, 0);
    }
    debug_assert!(positions.windows(2).all(|w| w[0] <= w[1]), "positions must be sorted");
    let k_i = k as i128;
    let sum: i128 = positions
        .iter()
        .enumerate()
        .map(|(i, &p)| p as i128 * (2 * i as i128 - k_i + 1))
        .sum();
    let pairs = (k as u64) * (k as u64 - 1) / 2;
    (pairs, sum as u128)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub docs: usize,
    pub tokens: usize,
    pub mentions: usize,
    pub chains: usize,
    pub tokens_per_doc: f64,
    pub mentions_per_doc: f64,
    pub chains_per_doc: f64,
    /// Micro-average: total mentions over total chains.
    pub mentions_per_chain: f64,
    /// Micro-average pairwise distance in tokens between mention starts of
    /// the same chain, pooled over every chain of every document.
    pub mention_distance: f64,
    pub distance_pairs: u64,
    pub distance_sum: u128,
}

pub fn corpus_stats(corpus: &CorpusFile) -> CorpusStats {
    let mut s = CorpusStats {
        docs: corpus.len(),
        ..Default::default()
    };
    let mut starts = Vec::new();
    for e in &corpus.entries {
        s.tokens += e.document.len();
        for (_, ms) in e.clusters.iter() {
            starts.clear();
            let mut prev = None;
            for m in ms {
                if prev == Some(*m) {
                    continue;
                }
                prev = Some(*m);
                starts.push(m.start);
            }
            if starts.is_empty() {
                continue;
            }
            s.chains += 1;
            s.mentions += starts.len();
            starts.sort_unstable();
            let (pairs, sum) = chain_distance(&starts);
            s.distance_pairs += pairs;
            s.distance_sum += sum;
        }
    }
    if s.docs > 0 {
        let d = s.docs as f64;
        s.tokens_per_doc = s.tokens as f64 / d;
        s.mentions_per_doc = s.mentions as f64 / d;
        s.chains_per_doc = s.chains as f64 / d;
    }
    if s.chains > 0 {
        s.mentions_per_chain = s.mentions as f64 / s.chains as f64;
    }
    if s.distance_pairs > 0 {
        s.mention_distance = s.distance_sum as f64 / s.distance_pairs as f64;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::Entry;
    use crate::model::{ClusterKey, ClusterSet, Document, Mention, Stage};

    #[test]
    fn three_positions() {
        let (pairs, sum) = chain_distance(&[0, 10, 20]);
        assert_eq!((pairs, sum), (3, 40));
        assert!((sum as f64 / pairs as f64 - 13.333).abs() < 1e-3);
        assert_eq!(chain_distance(&[5]), (0, 0));
        assert_eq!(chain_distance(&[]), (0, 0));
    }

    #[test]
    fn one_chain_document() {
        let doc = Document::new("d", vec!["x".into(); 100], vec!["A".into()]);
        let cs = ClusterSet::from_clusters(
            "d",
            Stage::Gold,
            [(ClusterKey::name("A"), vec![Mention::new(0, 0), Mention::new(50, 51)])],
        );
        let s = corpus_stats(&CorpusFile::new(vec![Entry::new(doc, cs)]));
        assert_eq!(s.mention_distance, 50.0);
        assert_eq!(s.mentions_per_chain, 2.0);
        assert_eq!((s.docs, s.tokens, s.mentions, s.chains), (1, 100, 2, 1));
    }

    #[test]
    fn empty_corpus_is_zero() {
        assert_eq!(corpus_stats(&CorpusFile::default()), CorpusStats::default());
    }
}
