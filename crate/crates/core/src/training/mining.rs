use std::collections::{BTreeMap, HashSet};

use crate::encoders::Encoder;
use crate::error::{Error, Result};
use crate::extraction::TaggedQuery;
use crate::formatting::{format_query, FormatStyle};
use crate::neggen::NegativeExample;
use crate::retrieval::{retrieve_excluding, Candidate, CandidateSet, DenseIndex};

/// Top-`k` retrieval per query for cross-encoder training. An in-KB gold
/// missing from the list replaces the last candidate and the set is
/// flagged. Entries in `exclude` are never returned.
pub fn mine_candidates(
    queries: &[TaggedQuery],
    index: &DenseIndex,
    encoder: &dyn Encoder,
    style: FormatStyle,
    max_len: usize,
    k: usize,
    exclude: &HashSet<String>,
) -> Result<BTreeMap<String, CandidateSet>> {
    index.check_encoder(encoder)?;
    let mut out = BTreeMap::new();
    for q in queries {
        let emb = encoder.encode(&format_query(style, q, max_len)?)?;
        let mut set = retrieve_excluding(index, q.query_id(), &emb, k, exclude)?;
        if let Some(gold) = q.base.gold.as_entry() {
            if set.rank_of(gold).is_none() && !exclude.contains(gold) {
                let pos = index
                    .ids
                    .iter()
                    .position(|id| id == gold)
                    .ok_or_else(|| Error::UnknownId(gold.to_string()))?;
                let last = set.candidates.len() - 1;
                set.candidates[last] = Candidate {
                    id: gold.to_string(),
                    score: emb.dot(index.row(pos)),
                };
                set.gold_injected = true;
            }
        }
        if out.insert(q.query_id().to_string(), set).is_some() {
            return Err(Error::DuplicateId(q.query_id().to_string()));
        }
    }
    Ok(out)
}

/// Candidate sets for negatives: the paired ids, verbatim. Scores are not
/// kept with the pairing and are reported as 0.
pub fn negative_candidates(negatives: &[NegativeExample]) -> Result<BTreeMap<String, CandidateSet>> {
    let mut out = BTreeMap::new();
    for n in negatives {
        let id = n.generated_query.query_id().to_string();
        if n.paired_candidate_ids.is_empty() {
            return Err(Error::InvalidQuery {
                query_id: id,
                message: "negative has no paired candidates".into(),
            });
        }
        let set = CandidateSet {
            query_id: id.clone(),
            candidates: n
                .paired_candidate_ids
                .iter()
                .map(|c| Candidate {
                    id: c.clone(),
                    score: 0.0,
                })
                .collect(),
            gold_injected: false,
        };
        if out.insert(id.clone(), set).is_some() {
            return Err(Error::DuplicateId(id));
        }
    }
    Ok(out)
}
