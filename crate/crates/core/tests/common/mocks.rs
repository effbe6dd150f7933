//! Deterministic adversarial components for pipeline properties.

use std::sync::Arc;

use bookcoref_core::error::Error;
use bookcoref_core::model::{ClusterKey, ClusterSet, Document, Mention, Stage};
use bookcoref_core::pipeline::components::ComponentResult;
use bookcoref_core::pipeline::{
    run, Components, ExpandRequest, Expander, GoldIndex, Judge, JudgeQuery, OracleLinker, PipelineConfig,
};
use bookcoref_core::{CorpusFile, Entry};

pub fn contract_in_stage(e: &Error) -> bool {
    match e {
        Error::InStage { source, .. } => matches!(**source, Error::Contract(_)),
        _ => false,
    }
}

/// Deterministic pseudo-random choices from a seed and the call's inputs.
pub fn mix(seed: u64, a: usize, b: usize) -> u64 {
    let mut x = seed ^ (a as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (b as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    x ^= x >> 33;
    x = x.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    x ^ (x >> 29)
}

/// Adds arbitrary spans, and with some probability breaks the contract
/// in one of four ways.
pub struct Adversary {
    pub seed: u64,
    pub misbehave: u64,
}

impl Expander for Adversary {
    fn name(&self) -> String {
        "adversary".into()
    }

    fn expand(&self, req: &ExpandRequest<'_>) -> ComponentResult<ClusterSet> {
        let n = req.tokens.len();
        let mut out = req.seeds.clone();
        let keys: Vec<ClusterKey> = out.keys().cloned().collect();
        let used: std::collections::HashSet<Mention> = out.iter().flat_map(|(_, ms)| ms.to_vec()).collect();
        for i in 0..4 {
            let r = mix(self.seed, req.offset, i);
            if keys.is_empty() {
                break;
            }
            let s = (r as usize) % n;
            let m = Mention::new(s, (s + (r >> 20) as usize % 3).min(n - 1));
            if !used.contains(&m) && !out.iter().any(|(_, ms)| ms.contains(&m)) {
                out.insert(keys[(r >> 40) as usize % keys.len()].clone(), m);
            }
        }
        match mix(self.seed, req.offset, 99) % 100 {
            x if x >= self.misbehave => {}
            x => match x % 4 {
                0 => {
                    let first = out
                        .iter()
                        .find(|(_, ms)| !ms.is_empty())
                        .map(|(k, ms)| (k.clone(), ms[0]));
                    if let Some((k, m)) = first {
                        out.remove(&k, &m);
                    }
                }
                1 => {
                    out.insert(ClusterKey::name("Intruder"), Mention::new(0, 0));
                }
                2 => {
                    if let Some(k) = keys.first() {
                        out.insert(k.clone(), Mention::new(n - 1, n));
                    }
                }
                _ => {
                    if keys.len() >= 2 {
                        out.insert(keys[0].clone(), Mention::new(0, 0));
                        out.insert(keys[1].clone(), Mention::new(0, 0));
                    }
                }
            },
        }
        Ok(out)
    }
}

pub struct SeededJudge(pub u64);

impl Judge for SeededJudge {
    fn name(&self) -> String {
        "seeded".into()
    }
    fn judge(&self, q: &JudgeQuery<'_>) -> ComponentResult<bool> {
        Ok(!mix(self.0, q.mention.start, q.mention.end).is_multiple_of(4))
    }
}

pub fn adversarial_doc(seed: u64) -> (Document, ClusterSet) {
    let n = 40 + (seed % 60) as usize;
    let names = ["Ann Lee", "Bo Park", "Cy Moss"];
    let mut tokens = vec!["w".to_string(); n];
    let mut gold = ClusterSet::new("adv", Stage::Gold);
    let mut i = 0;
    let mut step = 0;
    while i + 1 < n {
        let r = mix(seed, step, 7);
        step += 1;
        let c = (r % 3) as usize;
        let parts: Vec<&str> = names[c].split(' ').collect();
        tokens[i] = parts[0].into();
        tokens[i + 1] = parts[1].into();
        gold.insert(ClusterKey::name(names[c]), Mention::new(i, i + 1));
        i += 2 + (r >> 8) as usize % 9;
    }
    (
        Document::new("adv", tokens, names.iter().map(|s| s.to_string()).collect()),
        gold,
    )
}

pub fn adversarial_components(seed: u64, misbehave: u64, doc: &Document, gold: &ClusterSet) -> Components {
    let g = GoldIndex::from_corpus(&CorpusFile::new(vec![Entry::new(doc.clone(), gold.clone())]));
    Components {
        linker: Arc::new(OracleLinker(g)),
        judge: Arc::new(SeededJudge(seed)),
        expander: Arc::new(Adversary { seed, misbehave }),
    }
}

/// One pipeline run against the adversary. Either every stage keeps all
/// of its input mentions and the counts move the right way, or the run
/// stops with a contract error.
pub fn check_seed_preservation(seed: u64, misbehave: u64, window: usize, group: usize) -> Result<(), String> {
    let (doc, gold) = adversarial_doc(seed);
    let comps = adversarial_components(seed, misbehave, &doc, &gold);
    let cfg = PipelineConfig {
        window_len: window,
        group_size: group,
        retry_backoff_ms: 1,
        ..Default::default()
    };
    match run(&doc, &cfg, &comps) {
        Ok((out, t)) => {
            for (a, b) in [
                (&t.refined, &t.window_expanded),
                (&t.window_expanded, &t.final_clusters),
            ] {
                for (k, ms) in a.iter() {
                    for m in ms {
                        if !b.contains(k, m) {
                            return Err(format!("lost {m} of {k}"));
                        }
                    }
                }
            }
            if t.refined.mention_count() > t.initialized.mention_count() {
                return Err("refine added mentions".into());
            }
            if out != t.final_clusters || out.stage != Stage::Final {
                return Err("output differs from the traced final clusters".into());
            }
            Ok(())
        }
        Err(e) if contract_in_stage(&e) => Ok(()),
        Err(e) => Err(format!("unexpected error: {e}")),
    }
}
