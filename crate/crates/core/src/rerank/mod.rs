//! Second-stage re-ranking over `k + 1` options, index 0 being NIL.

mod cross;
mod llm_rerank;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use cross::{tiny_cross_scorer, CrossCheckpoint, PairCache, TinyCrossScorer};
pub use llm_rerank::{
    build_rerank_prompt, llm_rerank, parse_rerank_answer, RerankAnswer, LLM_RERANK_K, NIL_SENTENCE,
};

use crate::error::{Error, Result};
use crate::kb::{candidate_text, KnowledgeBase, Label};
use crate::retrieval::CandidateSet;
use crate::token::{Marker, Token};

/// Default cross-encoder pair budget (query + separator + candidate).
pub const CROSS_MAX_LEN: usize = 256;

/// Reads a (query, candidate) pair and returns a relevance score; the NIL
/// option is scored from the query alone.
pub trait CrossScorer: Send + Sync {
    /// Scores `[NIL, c_1, .., c_k]` for one query.
    fn score_all(&self, query: &[Token], candidates: &[Vec<Token>]) -> Result<Vec<f64>>;

    fn fingerprint(&self) -> String;
}

/// Splits the pair budget: the formatted query is kept whole and the
/// candidate text fills what is left after the separator.
pub fn candidate_budget(query: &[Token], budget: usize) -> Result<usize> {
    let left = budget.checked_sub(query.len() + 1).filter(|&n| n > 0);
    left.ok_or(Error::BudgetTooSmall {
        max_len: budget,
        required: query.len() + 2,
    })
}

/// `query [SEP] candidate_text`, as the scorer reads it.
pub fn pair_tokens(query: &[Token], candidate: &[Token]) -> Vec<Token> {
    let mut out = query.to_vec();
    out.push(Token::Marker(Marker::Sep));
    out.extend_from_slice(candidate);
    out
}

/// Candidate-side token sequences for `candidates`, truncated to fit the
/// pair budget next to `query`.
pub fn candidate_sides(
    query: &[Token],
    candidates: &CandidateSet,
    kb: &KnowledgeBase,
    budget: usize,
) -> Result<Vec<Vec<Token>>> {
    let room = candidate_budget(query, budget)?;
    candidates
        .candidates
        .iter()
        .map(|c| {
            kb.get(&c.id)
                .map(|e| candidate_text(e, room))
                .ok_or_else(|| Error::UnknownId(c.id.clone()))
        })
        .collect()
}

/// Scores `[NIL, c_1, .., c_k]` for a formatted query.
pub fn score_pairs(
    scorer: &dyn CrossScorer,
    query: &[Token],
    candidates: &CandidateSet,
    kb: &KnowledgeBase,
    budget: usize,
) -> Result<Vec<f64>> {
    let sides = candidate_sides(query, candidates, kb, budget)?;
    let scores = scorer.score_all(query, &sides)?;
    debug_assert_eq!(scores.len(), candidates.len() + 1);
    Ok(scores)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionRule {
    LearnedNil,
    Threshold,
    Llm,
}

impl fmt::Display for DecisionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecisionRule::LearnedNil => "learned_nil",
            DecisionRule::Threshold => "threshold",
            DecisionRule::Llm => "llm",
        })
    }
}

/// Which side of the threshold keeps the candidate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdDirection {
    /// Candidate when its normalized score is below the threshold, NIL
    /// otherwise; the piecewise rule as printed for the baseline.
    Literal,
    /// NIL when the normalized score is below the threshold.
    #[default]
    Conventional,
}

impl FromStr for ThresholdDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(Self::Literal),
            "conventional" => Ok(Self::Conventional),
            other => Err(Error::Config(format!("unknown threshold direction {other:?}"))),
        }
    }
}

impl fmt::Display for ThresholdDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Literal => "literal",
            Self::Conventional => "conventional",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkDecision {
    pub query_id: String,
    pub prediction: Label,
    pub rule: DecisionRule,
    /// `k + 1` values, index 0 for NIL. Threshold decisions store the
    /// threshold at index 0 and softmax probabilities after it; LLM
    /// decisions store rank-derived scores.
    pub scores: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Argmax over `[NIL, c_1, .., c_k]`; ties go to the lower index.
pub fn select_learned_nil(scores: &[f64], candidates: &CandidateSet) -> Result<LinkDecision> {
    if scores.len() != candidates.len() + 1 {
        return Err(Error::DimensionMismatch {
            expected: candidates.len() + 1,
            actual: scores.len(),
        });
    }
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = i;
        }
    }
    let prediction = if best == 0 {
        Label::Nil
    } else {
        Label::entry(candidates.candidates[best - 1].id.clone())
    };
    Ok(LinkDecision {
        query_id: candidates.query_id.clone(),
        prediction,
        rule: DecisionRule::LearnedNil,
        scores: scores.to_vec(),
        note: None,
    })
}

/// Numerically stable softmax.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Threshold baseline over the `k` candidate scores (no NIL score).
pub fn select_threshold(
    candidate_scores: &[f64],
    candidates: &CandidateSet,
    theta: f64,
    direction: ThresholdDirection,
) -> Result<LinkDecision> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::Config(format!("threshold {theta} outside [0, 1]")));
    }
    if candidate_scores.len() != candidates.len() || candidates.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: candidates.len(),
            actual: candidate_scores.len(),
        });
    }
    let probs = softmax(candidate_scores);
    let mut best = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = i;
        }
    }
    let p = probs[best];
    let keep = match direction {
        ThresholdDirection::Conventional => p >= theta,
        ThresholdDirection::Literal => p < theta,
    };
    let prediction = if keep {
        Label::entry(candidates.candidates[best].id.clone())
    } else {
        Label::Nil
    };
    let mut scores = Vec::with_capacity(probs.len() + 1);
    scores.push(theta);
    scores.extend(probs);
    Ok(LinkDecision {
        query_id: candidates.query_id.clone(),
        prediction,
        rule: DecisionRule::Threshold,
        scores,
        note: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::Candidate;

    fn cands(n: usize) -> CandidateSet {
        CandidateSet {
            query_id: "q".into(),
            candidates: (1..=n)
                .map(|i| Candidate {
                    id: format!("E{i}"),
                    score: 0.0,
                })
                .collect(),
            gold_injected: false,
        }
    }

    #[test]
    fn learned_nil_examples() {
        let c = cands(3);
        let d = select_learned_nil(&[0.9, 0.2, 0.1, 0.3], &c).unwrap();
        assert_eq!(d.prediction, Label::Nil);
        let d = select_learned_nil(&[0.1, 0.2, 0.8, 0.3], &c).unwrap();
        assert_eq!(d.prediction, Label::entry("E2"));
        let d = select_learned_nil(&[0.5, 0.5, 0.2, 0.1], &c).unwrap();
        assert_eq!(d.prediction, Label::Nil);
        let d = select_learned_nil(&[0.1, 0.5, 0.5, 0.1], &c).unwrap();
        assert_eq!(d.prediction, Label::entry("E1"));
        assert!(select_learned_nil(&[0.1, 0.2], &c).is_err());
    }

    #[test]
    fn threshold_examples() {
        let c = cands(2);
        let d = select_threshold(&[1.0, 1.0], &c, 0.5, ThresholdDirection::Conventional).unwrap();
        assert_eq!(d.prediction, Label::entry("E1"));
        assert_eq!(d.scores, vec![0.5, 0.5, 0.5]);

        // softmax([ln 9, 0]) = [0.9, 0.1]
        let s = [9f64.ln(), 0.0];
        let conv = select_threshold(&s, &c, 0.5, ThresholdDirection::Conventional).unwrap();
        assert_eq!(conv.prediction, Label::entry("E1"));
        let lit = select_threshold(&s, &c, 0.5, ThresholdDirection::Literal).unwrap();
        assert_eq!(lit.prediction, Label::Nil);

        let c3 = cands(3);
        // three equal scores: normalized max 1/3
        let flat = [0.0, 0.0, 0.0];
        let d = select_threshold(&flat, &c3, 0.5, ThresholdDirection::Conventional).unwrap();
        assert_eq!(d.prediction, Label::Nil);

        assert!(select_threshold(&s, &c, 1.5, ThresholdDirection::Conventional).is_err());
    }

    #[test]
    fn threshold_extremes() {
        let c = cands(3);
        let s = [0.3, -2.0, 1.0];
        let zero = select_threshold(&s, &c, 0.0, ThresholdDirection::Conventional).unwrap();
        assert!(!zero.prediction.is_nil());
        let one = select_threshold(&s, &c, 1.0, ThresholdDirection::Conventional).unwrap();
        assert!(one.prediction.is_nil());
        let single = select_threshold(&[0.4], &cands(1), 1.0, ThresholdDirection::Conventional).unwrap();
        assert_eq!(single.prediction, Label::entry("E1"));
    }

    #[test]
    fn budget_split() {
        let q = vec![Token::word("a"); 10];
        assert_eq!(candidate_budget(&q, 256).unwrap(), 245);
        assert!(candidate_budget(&q, 11).is_err());
        assert_eq!(pair_tokens(&q[..1], &q[..2]).len(), 4);
    }
}
