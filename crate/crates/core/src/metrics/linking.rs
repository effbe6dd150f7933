//! Character Linking precision and recall over (span, character) pairs.

use std::collections::HashSet;

use super::coref::Prf;
use crate::error::{Error, Result};
use crate::model::{ClusterKey, ClusterSet, Mention};

fn pairs<'a>(cs: &'a ClusterSet, side: &str) -> Result<HashSet<(Mention, &'a str)>> {
    let mut out = HashSet::with_capacity(cs.mention_count());
    for (key, ms) in cs.iter() {
        let ClusterKey::Name(name) = key else {
            return Err(Error::Contract(format!(
                "linking needs character names but the {side} of {} has anonymous cluster {key}",
                cs.doc_id
            )));
        };
        out.extend(ms.iter().map(|m| (*m, name.as_str())));
    }
    Ok(out)
}

/// A predicted pair is correct iff the key holds the same span under the
/// same character.
pub fn linking_prf(key: &ClusterSet, response: &ClusterSet) -> Result<Prf> {
    let k = pairs(key, "key")?;
    let r = pairs(response, "response")?;
    let tp = r.iter().filter(|p| k.contains(p)).count() as f64;
    Ok(Prf::from_counts(tp, r.len() as f64, tp, k.len() as f64))
}
