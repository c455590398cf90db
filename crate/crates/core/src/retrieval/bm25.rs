//! Okapi BM25 over candidate text.
//!
//! Terms are lower-cased words (markers are ignored). The inverse document
//! frequency is `ln(1 + (N - df + 0.5) / (df + 0.5))`, which stays positive,
//! so a document scores zero exactly when it shares no term with the query.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{top_k, Candidate, CandidateSet};
use crate::error::{Error, Result};
use crate::extraction::EventQuery;
use crate::kb::{candidate_text, KnowledgeBase};
use crate::token::Token;

/// Query context window centered on the mention.
pub const BM25_WINDOW: usize = 16;

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Index {
    pub ids: Vec<String>,
    pub doc_freq: BTreeMap<String, usize>,
    pub term_counts: Vec<BTreeMap<String, usize>>,
    pub doc_lens: Vec<usize>,
    pub avg_doc_len: f64,
    pub k1: f64,
    pub b: f64,
    pub window: usize,
}

fn terms(tokens: &[Token]) -> Vec<String> {
    tokens
        .iter()
        .filter_map(Token::as_word)
        .map(str::to_lowercase)
        .collect()
}

/// Indexes `kb` with the classic parameters (k1 = 1.2, b = 0.75).
pub fn bm25_build(kb: &KnowledgeBase, max_len: usize) -> Result<Bm25Index> {
    Bm25Index::new(kb, max_len, DEFAULT_K1, DEFAULT_B, BM25_WINDOW)
}

impl Bm25Index {
    pub fn new(kb: &KnowledgeBase, max_len: usize, k1: f64, b: f64, window: usize) -> Result<Self> {
        if kb.is_empty() {
            return Err(Error::EmptyKnowledgeBase);
        }
        if k1.is_nan() || k1 <= 0.0 || !(0.0..=1.0).contains(&b) || window == 0 {
            return Err(Error::Config(format!(
                "invalid BM25 parameters k1={k1}, b={b}, window={window}"
            )));
        }
        let mut doc_freq: BTreeMap<String, usize> = BTreeMap::new();
        let mut term_counts = Vec::with_capacity(kb.len());
        let mut doc_lens = Vec::with_capacity(kb.len());
        for e in kb.iter() {
            let ts = terms(&candidate_text(e, max_len));
            let mut counts: BTreeMap<String, usize> = BTreeMap::new();
            for t in &ts {
                *counts.entry(t.clone()).or_default() += 1;
            }
            for t in counts.keys() {
                *doc_freq.entry(t.clone()).or_default() += 1;
            }
            doc_lens.push(ts.len());
            term_counts.push(counts);
        }
        let avg_doc_len = doc_lens.iter().sum::<usize>() as f64 / kb.len() as f64;
        Ok(Self {
            ids: kb.iter().map(|e| e.id.clone()).collect(),
            doc_freq,
            term_counts,
            doc_lens,
            avg_doc_len,
            k1,
            b,
            window,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.len() as f64;
        let df = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Score of document `doc` for query terms; repeated terms contribute
    /// once per occurrence.
    pub fn score(&self, doc: usize, query_terms: &[String]) -> f64 {
        let counts = &self.term_counts[doc];
        let len_norm = if self.avg_doc_len > 0.0 {
            self.doc_lens[doc] as f64 / self.avg_doc_len
        } else {
            0.0
        };
        query_terms
            .iter()
            .filter_map(|t| counts.get(t).map(|&tf| (t, tf as f64)))
            .map(|(t, tf)| {
                self.idf(t) * tf * (self.k1 + 1.0)
                    / (tf + self.k1 * (1.0 - self.b + self.b * len_norm))
            })
            .sum()
    }

    /// Top-k for raw query terms (lower-cased here).
    pub fn retrieve_terms(&self, query_id: &str, query_terms: &[String], k: usize) -> Result<CandidateSet> {
        if k == 0 || k > self.len() {
            return Err(Error::InvalidK { k, n: self.len() });
        }
        let lowered: Vec<String> = query_terms.iter().map(|t| t.to_lowercase()).collect();
        let scored = (0..self.len()).map(|i| (i, self.score(i, &lowered))).collect();
        Ok(CandidateSet {
            query_id: query_id.to_string(),
            candidates: top_k(scored, k)
                .into_iter()
                .map(|(i, score)| Candidate {
                    id: self.ids[i].clone(),
                    score,
                })
                .collect(),
            gold_injected: false,
        })
    }
}

/// The `width`-token window of `query` centered on its mention (same
/// centering rule as the query formats).
pub fn query_window(query: &EventQuery, width: usize) -> Vec<String> {
    let n = query.tokens.len();
    let m = query.mention;
    if m.len() >= width {
        return query.tokens[m.start..m.start + width].to_vec();
    }
    let extra = width.min(n) - m.len();
    let want_left = extra.div_ceil(2);
    let lo = (m.end + 1).saturating_sub(width.min(n));
    let hi = m.start.min(n - width.min(n));
    let start = m.start.saturating_sub(want_left).clamp(lo, hi);
    query.tokens[start..start + width.min(n)].to_vec()
}

pub fn bm25_retrieve(index: &Bm25Index, query: &EventQuery, k: usize) -> Result<CandidateSet> {
    index.retrieve_terms(&query.query_id, &query_window(query, index.window), k)
}
