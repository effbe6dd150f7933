//! Seeded synthetic books with gold character clusters.
//!
//! Text is filler vocabulary interleaved with character mentions of four
//! kinds: full names, surnames, pronouns, and short descriptive noun
//! phrases. Character frequencies follow a Zipf-like law so a few chains
//! dominate, as in real novels.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::formats::{CorpusFile, Entry};
use crate::model::{ClusterKey, ClusterSet, Document, Mention, SourceInfo, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub docs: usize,
    pub tokens_per_doc: usize,
    pub characters_per_doc: usize,
    /// Target mentions per document.
    pub mentions_per_doc: usize,
    /// Share of mentions that are full names, surnames, pronouns; the rest are noun phrases.
    pub full_name_share: f64,
    pub surname_share: f64,
    pub pronoun_share: f64,
    /// Zipf exponent for character frequency.
    pub zipf: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        // Shaped like a three-book gold benchmark: ~76k tokens, ~7.8k
        // mentions and ~22 chains per book.
        Self {
            seed: 0,
            docs: 3,
            tokens_per_doc: 76_419,
            characters_per_doc: 22,
            mentions_per_doc: 7_844,
            full_name_share: 0.20,
            surname_share: 0.20,
            pronoun_share: 0.45,
            zipf: 1.1,
        }
    }
}

const GIVEN: &[&str] = &[
    "Elinor",
    "Marianne",
    "Edward",
    "Charlotte",
    "Frederick",
    "Harriet",
    "Thomas",
    "Catherine",
    "Henry",
    "Louisa",
    "William",
    "Anne",
    "George",
    "Emma",
    "Robert",
    "Fanny",
    "Walter",
    "Lydia",
    "Arthur",
    "Jane",
    "Philip",
    "Isabel",
    "Edmund",
    "Maria",
    "Oliver",
    "Julia",
    "Lucas",
    "Clara",
    "Martin",
    "Sophia",
];
const FAMILY: &[&str] = &[
    "Ashford",
    "Bellamy",
    "Crowther",
    "Dashwood",
    "Everett",
    "Fairfax",
    "Granger",
    "Holloway",
    "Ingram",
    "Jennings",
    "Kingsley",
    "Lockwood",
    "Morland",
    "Norris",
    "Osborne",
    "Pemberton",
    "Quincy",
    "Rushworth",
    "Sinclair",
    "Thornton",
    "Underwood",
    "Vernon",
    "Whitmore",
    "Yates",
];
const FILLER: &[&str] = &[
    "the", "of", "and", "a", "to", "in", "was", "that", "it", "with", "for", "as", "had", "at", "on", "be", "not",
    "by", "all", "so", "there", "from", "would", "very", "said", "could", "house", "morning", "letter", "garden",
    "time", "day", "evening", "little", "room", "great", "road", "walked", "looked", "felt", "thought", "door",
    "window", "long", "old", "town", "silence", "answer", "country", ",", ".", ";",
];
const MALE_PRONOUNS: &[&str] = &["he", "him", "his", "himself"];
const FEMALE_PRONOUNS: &[&str] = &["she", "her", "hers", "herself"];
const MALE_NPS: &[&[&str]] = &[
    &["the", "gentleman"],
    &["the", "young", "man"],
    &["her", "brother"],
    &["the", "old", "man"],
];
const FEMALE_NPS: &[&[&str]] = &[
    &["the", "lady"],
    &["the", "young", "woman"],
    &["his", "sister"],
    &["the", "old", "woman"],
];
const MALE_GIVEN: &[&str] = &[
    "Edward",
    "Frederick",
    "Thomas",
    "Henry",
    "William",
    "George",
    "Robert",
    "Walter",
    "Arthur",
    "Philip",
    "Edmund",
    "Oliver",
    "Lucas",
    "Martin",
];

struct Character {
    name: Vec<String>,
    surname: String,
    male: bool,
}

fn characters(rng: &mut ChaCha8Rng, n: usize) -> Vec<Character> {
    let mut used = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let given = GIVEN[rng.gen_range(0..GIVEN.len())];
        let family = FAMILY[rng.gen_range(0..FAMILY.len())];
        // Surnames must be unique so a surname mention is unambiguous.
        if !used.insert(family) {
            if used.len() >= FAMILY.len() {
                break;
            }
            continue;
        }
        out.push(Character {
            name: vec![given.to_string(), family.to_string()],
            surname: family.to_string(),
            male: MALE_GIVEN.contains(&given),
        });
    }
    out
}

/// Generate one book with its gold clusters.
pub fn synth_document(cfg: &SynthConfig, index: usize) -> Entry {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64));
    let chars = characters(&mut rng, cfg.characters_per_doc.max(1));
    let weights: Vec<f64> = (1..=chars.len()).map(|r| 1.0 / (r as f64).powf(cfg.zipf)).collect();
    let pick_char = WeightedIndex::new(&weights).expect("positive weights");
    let kinds = [
        cfg.full_name_share,
        cfg.surname_share,
        cfg.pronoun_share,
        (1.0 - cfg.full_name_share - cfg.surname_share - cfg.pronoun_share).max(0.0),
    ];
    let pick_kind = WeightedIndex::new(kinds).expect("mention shares");

    // Average mention length under the configured mix, to hit the target count.
    let avg_len = kinds[0] * 2.0 + kinds[1] + kinds[2] + kinds[3] * 2.5;
    let budget = cfg.tokens_per_doc as f64;
    let p_mention =
        (cfg.mentions_per_doc as f64 / (budget - cfg.mentions_per_doc as f64 * (avg_len - 1.0)).max(1.0)).min(1.0);

    let doc_id = format!("synth-{index:02}");
    let mut tokens: Vec<String> = Vec::with_capacity(cfg.tokens_per_doc + 4);
    let mut gold = ClusterSet::new(doc_id.clone(), Stage::Gold);
    // Every character is mentioned by full name at least twice, so no chain is a singleton.
    let mut pending: Vec<usize> = (0..chars.len()).flat_map(|c| [c, c]).collect();

    while tokens.len() < cfg.tokens_per_doc {
        let room = cfg.tokens_per_doc - tokens.len();
        let forced = !pending.is_empty() && rng.gen_bool((pending.len() as f64 * 50.0 / room as f64).min(1.0));
        if forced || rng.gen_bool(p_mention) {
            let (c, kind) = if forced {
                (pending.pop().expect("pending"), 0)
            } else {
                (pick_char.sample(&mut rng), pick_kind.sample(&mut rng))
            };
            let ch = &chars[c];
            let words: Vec<String> = match kind {
                0 => ch.name.clone(),
                1 => vec![ch.surname.clone()],
                2 => {
                    let set = if ch.male { MALE_PRONOUNS } else { FEMALE_PRONOUNS };
                    vec![set[rng.gen_range(0..set.len())].to_string()]
                }
                _ => {
                    let set = if ch.male { MALE_NPS } else { FEMALE_NPS };
                    set[rng.gen_range(0..set.len())].iter().map(|s| s.to_string()).collect()
                }
            };
            if words.len() > room {
                tokens.push(FILLER[rng.gen_range(0..FILLER.len())].to_string());
                continue;
            }
            let start = tokens.len();
            tokens.extend(words);
            gold.insert(
                ClusterKey::Name(ch.name.join(" ")),
                Mention::new(start, tokens.len() - 1),
            );
        } else {
            tokens.push(FILLER[rng.gen_range(0..FILLER.len())].to_string());
        }
    }

    let names: Vec<String> = chars.iter().map(|c| c.name.join(" ")).collect();
    for n in &names {
        gold.ensure_key(ClusterKey::name(n));
    }
    let mut document = Document::new(doc_id, tokens, names);
    document.source = Some(SourceInfo {
        title: Some(format!("Synthetic book {index}")),
        author: None,
        token_count: Some(document.tokens.len()),
    });
    Entry::new(document, gold)
}

pub fn synth_corpus(cfg: &SynthConfig) -> CorpusFile {
    CorpusFile::new((0..cfg.docs).map(|i| synth_document(cfg, i)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::corpus_stats;
    use crate::model::validate;

    #[test]
    fn deterministic_for_a_seed() {
        let cfg = SynthConfig {
            tokens_per_doc: 3000,
            mentions_per_doc: 300,
            ..Default::default()
        };
        assert_eq!(synth_corpus(&cfg), synth_corpus(&cfg));
        let other = SynthConfig { seed: 1, ..cfg.clone() };
        assert_ne!(synth_corpus(&cfg), synth_corpus(&other));
    }

    #[test]
    fn default_shape_and_validity() {
        let c = synth_corpus(&SynthConfig::default());
        for e in &c.entries {
            let r = validate(&e.document, &e.clusters);
            assert!(r.is_ok(), "{:?}", r.errors.first());
        }
        let s = corpus_stats(&c);
        assert_eq!(s.docs, 3);
        assert_eq!(s.tokens, 3 * 76_419);
        assert!(
            (s.mentions_per_doc - 7_844.0).abs() / 7_844.0 < 0.05,
            "{}",
            s.mentions_per_doc
        );
        assert!((s.chains_per_doc - 22.0).abs() < 1.0);
    }
}
