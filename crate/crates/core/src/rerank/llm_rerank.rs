//! Prompted text-completion model as a re-ranker over exactly ten candidates.

use std::collections::BTreeMap;

use super::{DecisionRule, LinkDecision};
use crate::error::{Error, Result};
use crate::kb::{KbEntry, KnowledgeBase, Label};
use crate::llm::CompletionClient;
use crate::prompt::{fill, RERANK, RERANK_NIL};
use crate::retrieval::CandidateSet;
use crate::token::{render, Token};

/// Candidate list length the prompts are written for.
pub const LLM_RERANK_K: usize = 10;

pub const NIL_SENTENCE: &str = "The passage should be labeled as NIL.";

#[derive(Debug, Clone, PartialEq)]
pub enum RerankAnswer {
    /// Candidate indices (0-based, into the candidate set) in answer order.
    Ranked(Vec<usize>),
    Nil,
    Unparseable(String),
}

fn resolve<'a>(candidates: &CandidateSet, kb: &'a KnowledgeBase) -> Result<Vec<&'a KbEntry>> {
    candidates
        .candidates
        .iter()
        .map(|c| kb.get(&c.id).ok_or_else(|| Error::UnknownId(c.id.clone())))
        .collect()
}

/// Fills the re-ranking prompt (the NIL-aware variant when `allow_nil`).
pub fn build_rerank_prompt(
    query: &[Token],
    candidates: &CandidateSet,
    kb: &KnowledgeBase,
    allow_nil: bool,
) -> Result<String> {
    if candidates.len() != LLM_RERANK_K {
        return Err(Error::InvalidK {
            k: candidates.len(),
            n: LLM_RERANK_K,
        });
    }
    let mut input = String::new();
    for (i, e) in resolve(candidates, kb)?.iter().enumerate() {
        input.push_str(&format!("Document {}: {}\n{}\n", i + 1, e.title, e.description));
    }
    input.push_str("Short passage containing an event: ");
    input.push_str(&render(query));
    let mut values = BTreeMap::new();
    values.insert("actual input", input);
    fill(if allow_nil { RERANK_NIL } else { RERANK }, &values)
}

/// Reads `Document dN: <title>` lines, or the NIL sentence when allowed.
/// Every listed title must belong to a candidate.
pub fn parse_rerank_answer(raw: &str, titles: &[&str], allow_nil: bool) -> RerankAnswer {
    let text = raw.trim();
    if allow_nil && text.starts_with(NIL_SENTENCE) {
        return RerankAnswer::Nil;
    }
    let mut order: Vec<usize> = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let Some(rest) = line.strip_prefix("Document ") else {
            continue;
        };
        let Some((_, title)) = rest.split_once(':') else {
            continue;
        };
        let title = title.trim();
        let hit = titles
            .iter()
            .enumerate()
            .position(|(i, t)| *t == title && !order.contains(&i));
        match hit {
            Some(i) => order.push(i),
            None if titles.contains(&title) => {}
            None => return RerankAnswer::Unparseable(format!("title not among candidates: {title:?}")),
        }
    }
    if order.is_empty() {
        RerankAnswer::Unparseable("no ranked documents found".into())
    } else {
        RerankAnswer::Ranked(order)
    }
}

/// Asks `client` to rank the candidates and returns its top choice.
/// Scores are rank-derived: `(k - r) / k` for answer rank `r`, 0 for
/// unranked candidates, and 1 at index 0 for a NIL answer.
pub fn llm_rerank(
    client: &dyn CompletionClient,
    query: &[Token],
    candidates: &CandidateSet,
    kb: &KnowledgeBase,
    allow_nil: bool,
) -> Result<LinkDecision> {
    let prompt = build_rerank_prompt(query, candidates, kb, allow_nil)?;
    let raw = client.complete(&prompt)?;
    let entries = resolve(candidates, kb)?;
    let titles: Vec<&str> = entries.iter().map(|e| e.title.as_str()).collect();
    let k = candidates.len();
    let mut scores = vec![0.0; k + 1];
    let (prediction, note) = match parse_rerank_answer(&raw, &titles, allow_nil) {
        RerankAnswer::Nil => {
            scores[0] = 1.0;
            (Label::Nil, None)
        }
        RerankAnswer::Ranked(order) => {
            for (r, &i) in order.iter().enumerate() {
                scores[i + 1] = (k - r) as f64 / k as f64;
            }
            (Label::entry(candidates.candidates[order[0]].id.clone()), None)
        }
        RerankAnswer::Unparseable(why) => (Label::Nil, Some(format!("parse failure: {why}"))),
    };
    Ok(LinkDecision {
        query_id: candidates.query_id.clone(),
        prediction,
        rule: DecisionRule::Llm,
        scores,
        note,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{FlakyClient, ScriptedClient};
    use crate::retrieval::Candidate;
    use crate::token::words;

    fn fixture() -> (KnowledgeBase, CandidateSet) {
        let kb = KnowledgeBase::from_entries(
            (1..=10)
                .map(|i| KbEntry::new(format!("E{i}"), format!("Event {i}"), format!("about {i}")))
                .collect(),
        )
        .unwrap();
        let set = CandidateSet {
            query_id: "q".into(),
            candidates: (1..=10)
                .map(|i| Candidate {
                    id: format!("E{i}"),
                    score: 0.0,
                })
                .collect(),
            gold_injected: false,
        };
        (kb, set)
    }

    fn reverse_echo(prompt: &str) -> Result<String> {
        let input = prompt.rsplit("Now, here is the actual input.\n").next().unwrap();
        let titles: Vec<&str> = input
            .lines()
            .filter_map(|l| l.strip_prefix("Document "))
            .filter_map(|l| l.split_once(": ").map(|(_, t)| t))
            .collect();
        Ok(titles
            .iter()
            .rev()
            .enumerate()
            .map(|(i, t)| format!("Document d{}: {t}", i + 1))
            .collect::<Vec<_>>()
            .join("\n"))
    }

    #[test]
    fn reverse_echo_picks_last_candidate() {
        let (kb, set) = fixture();
        let client = ScriptedClient::new(reverse_echo);
        let d = llm_rerank(&client, &words(&["x"]), &set, &kb, false).unwrap();
        assert_eq!(d.prediction, Label::entry("E10"));
        assert_eq!(d.scores.len(), 11);
        assert_eq!(d.scores[10], 1.0);
        assert!(d.note.is_none());
    }

    #[test]
    fn nil_sentence_and_unknown_title() {
        let (kb, set) = fixture();
        let nil = ScriptedClient::new(|_: &str| Ok(NIL_SENTENCE.to_string()));
        let d = llm_rerank(&nil, &words(&["x"]), &set, &kb, true).unwrap();
        assert_eq!(d.prediction, Label::Nil);
        assert!(d.note.is_none());

        let bad = ScriptedClient::new(|_: &str| Ok("Document d1: Battle of Nowhere".to_string()));
        let d = llm_rerank(&bad, &words(&["x"]), &set, &kb, true).unwrap();
        assert_eq!(d.prediction, Label::Nil);
        assert!(d.note.unwrap().starts_with("parse failure"));
    }

    #[test]
    fn transport_failure_is_retryable() {
        let (kb, set) = fixture();
        let c = FlakyClient::new(ScriptedClient::new(reverse_echo), 1);
        let err = llm_rerank(&c, &words(&["x"]), &set, &kb, false).unwrap_err();
        assert!(err.is_retryable());
    }

    #[test]
    fn requires_ten_candidates() {
        let (kb, mut set) = fixture();
        set.candidates.pop();
        assert!(build_rerank_prompt(&words(&["x"]), &set, &kb, false).is_err());
    }
}
