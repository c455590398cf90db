//! First-stage retrieval: exact dense top-k by dot product, and BM25.
//!
//! Every ranking here orders by score (descending) and breaks ties by the
//! entry's position in the knowledge base.

mod bm25;

use std::cmp::Ordering;
use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bm25::{bm25_build, bm25_retrieve, query_window, Bm25Index, BM25_WINDOW};

use crate::encoders::{Embedding, Encoder};
use crate::extraction::TaggedQuery;
use crate::formatting::{format_query, FormatStyle};
use crate::error::{Error, Result};
use crate::kb::{candidate_text, KnowledgeBase};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub score: f64,
}

/// Ranked retrieval result for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub query_id: String,
    pub candidates: Vec<Candidate>,
    /// Set when mining replaced the last candidate with the gold entry.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub gold_injected: bool,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.candidates.iter().map(|c| c.id.as_str()).collect()
    }

    /// 0-based rank of `id`, if present.
    pub fn rank_of(&self, id: &str) -> Option<usize> {
        self.candidates.iter().position(|c| c.id == id)
    }
}

/// Dense rows aligned with KB order, tagged with the encoder fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseIndex {
    pub ids: Vec<String>,
    pub dim: usize,
    /// Row-major `n × dim`.
    pub rows: Vec<f64>,
    pub encoder_fingerprint: String,
    pub max_len: usize,
}

impl DenseIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn check_encoder(&self, encoder: &dyn Encoder) -> Result<()> {
        if encoder.fingerprint() != self.encoder_fingerprint {
            return Err(Error::Config(
                "index was built by a different encoder".into(),
            ));
        }
        Ok(())
    }
}

/// Encodes every entry's candidate text. Rows follow KB order.
pub fn build_index(kb: &KnowledgeBase, encoder: &dyn Encoder, max_len: usize) -> Result<DenseIndex> {
    if kb.is_empty() {
        return Err(Error::EmptyKnowledgeBase);
    }
    let dim = encoder.dim();
    let encoded: Vec<Embedding> = kb
        .entries()
        .par_iter()
        .map(|e| encoder.encode(&candidate_text(e, max_len)))
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(kb.len() * dim);
    for e in encoded {
        if e.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: e.dim(),
            });
        }
        rows.extend(e.0);
    }
    Ok(DenseIndex {
        ids: kb.iter().map(|e| e.id.clone()).collect(),
        dim,
        rows,
        encoder_fingerprint: encoder.fingerprint(),
        max_len,
    })
}

/// Exact top-k by dot product.
pub fn retrieve(index: &DenseIndex, query_id: &str, q: &Embedding, k: usize) -> Result<CandidateSet> {
    retrieve_excluding(index, query_id, q, k, &HashSet::new())
}

/// As [`retrieve`], skipping excluded ids. `k` is capped at the number of
/// remaining entries.
pub fn retrieve_excluding(
    index: &DenseIndex,
    query_id: &str,
    q: &Embedding,
    k: usize,
    exclude: &HashSet<String>,
) -> Result<CandidateSet> {
    if q.dim() != index.dim {
        return Err(Error::DimensionMismatch {
            expected: index.dim,
            actual: q.dim(),
        });
    }
    let available = index.len() - index.ids.iter().filter(|id| exclude.contains(*id)).count();
    if k == 0 || (exclude.is_empty() && k > index.len()) {
        return Err(Error::InvalidK { k, n: index.len() });
    }
    let scores: Vec<(usize, f64)> = (0..index.len())
        .filter(|&i| !exclude.contains(&index.ids[i]))
        .map(|i| (i, q.dot(index.row(i))))
        .collect();
    Ok(CandidateSet {
        query_id: query_id.to_string(),
        candidates: top_k(scores, k.min(available))
            .into_iter()
            .map(|(i, score)| Candidate {
                id: index.ids[i].clone(),
                score,
            })
            .collect(),
        gold_injected: false,
    })
}

/// Formats `query` in `style`, encodes it and retrieves the top `k`
/// entries not in `exclude`.
pub fn retrieve_query(
    index: &DenseIndex,
    encoder: &dyn Encoder,
    query: &TaggedQuery,
    style: FormatStyle,
    max_len: usize,
    k: usize,
    exclude: &HashSet<String>,
) -> Result<CandidateSet> {
    let q = encoder.encode(&format_query(style, query, max_len)?)?;
    retrieve_excluding(index, query.query_id(), &q, k, exclude)
}

/// Score descending, then position ascending.
pub(crate) fn rank_order(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

pub(crate) fn top_k(mut scored: Vec<(usize, f64)>, k: usize) -> Vec<(usize, f64)> {
    let k = k.min(scored.len());
    if k == 0 {
        return Vec::new();
    }
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, rank_order);
        scored.truncate(k);
    }
    scored.sort_by(rank_order);
    scored
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis_index() -> DenseIndex {
        DenseIndex {
            ids: vec!["E1".into(), "E2".into(), "E3".into()],
            dim: 3,
            rows: vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            encoder_fingerprint: String::new(),
            max_len: 300,
        }
    }

    #[test]
    fn orthogonal_basis() {
        let set = retrieve(&basis_index(), "q", &Embedding(vec![0.0, 1.0, 0.0]), 1).unwrap();
        assert_eq!(set.candidates, vec![Candidate { id: "E2".into(), score: 1.0 }]);
    }

    #[test]
    fn ties_break_by_position() {
        let set = retrieve(&basis_index(), "q", &Embedding(vec![0.0, 0.0, 0.0]), 3).unwrap();
        assert_eq!(set.ids(), ["E1", "E2", "E3"]);
    }

    #[test]
    fn errors() {
        let idx = basis_index();
        assert!(matches!(
            retrieve(&idx, "q", &Embedding(vec![1.0]), 1),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            retrieve(&idx, "q", &Embedding(vec![1.0, 0.0, 0.0]), 4),
            Err(Error::InvalidK { .. })
        ));
    }

    #[test]
    fn exclusion_skips_ids() {
        let exclude: HashSet<String> = ["E1".to_string()].into();
        let set =
            retrieve_excluding(&basis_index(), "q", &Embedding(vec![1.0, 0.5, 0.0]), 3, &exclude)
                .unwrap();
        assert_eq!(set.ids(), ["E2", "E3"]);
    }
}
