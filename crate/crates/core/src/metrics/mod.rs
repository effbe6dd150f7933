//! Coreference and linking scorers, corpus statistics, and report rendering.

pub mod assignment;
pub mod coref;
pub mod linking;
pub mod stats;

pub use coref::{b_cubed, ceaf_phi4, conll, muc, Prf, ScoreOptions, ScoreReport};
pub use linking::linking_prf;
pub use stats::{chain_distance, corpus_stats, CorpusStats};

/// Fraction as a percentage with one decimal, rounding halves up.
pub fn pct(x: f64) -> f64 {
    // The epsilon absorbs binary representation error such as 0.8035 * 1000.
    ((x * 1000.0) + 0.5 + 1e-9).floor() / 10.0
}

/// Plain-text table with the MUC / B³ / CEAF-φ4 / CoNLL columns.
pub fn render_score_table(rows: &[(String, ScoreReport)]) -> String {
    let name_w = rows.iter().map(|(n, _)| n.chars().count()).max().unwrap_or(4).max(4);
    let mut out = format!(
        "{:<name_w$}  {:>6} {:>6} {:>6}  {:>6} {:>6} {:>6}  {:>6} {:>6} {:>6}  {:>6}\n",
        "unit", "MUC-P", "MUC-R", "MUC-F", "B3-P", "B3-R", "B3-F", "CE-P", "CE-R", "CE-F", "CoNLL"
    );
    for (name, r) in rows {
        out.push_str(&format!(
            "{:<name_w$}  {:>6.1} {:>6.1} {:>6.1}  {:>6.1} {:>6.1} {:>6.1}  {:>6.1} {:>6.1} {:>6.1}  {:>6.1}\n",
            name,
            pct(r.muc.precision),
            pct(r.muc.recall),
            pct(r.muc.f1),
            pct(r.b3.precision),
            pct(r.b3.recall),
            pct(r.b3.f1),
            pct(r.ceaf.precision),
            pct(r.ceaf.recall),
            pct(r.ceaf.f1),
            pct(r.conll_f1),
        ));
    }
    out
}

pub fn render_stats_table(name: &str, s: &CorpusStats) -> String {
    format!(
        "{:<12} {:>6} {:>10} {:>9} {:>10} {:>10} {:>11} {:>12} {:>11}\n{:<12} {:>6} {:>10} {:>9} {:>10.0} {:>10.0} {:>11.1} {:>12.0} {:>11.0}\n",
        "corpus", "docs", "tokens", "mentions", "tok/doc", "ment/doc", "chains/doc", "ment/chain", "ment.dist",
        name,
        s.docs,
        s.tokens,
        s.mentions,
        s.tokens_per_doc,
        s.mentions_per_doc,
        s.chains_per_doc,
        s.mentions_per_chain,
        s.mention_distance,
    )
}
