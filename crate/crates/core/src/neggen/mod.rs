//! Synthetic out-of-KB training queries.
//!
//! In-KB queries with at least two tagged arguments are rewritten by a
//! completion model so that the event no longer matches its entry, then
//! paired with the top entries retrieved for the original query and
//! labeled NIL. KB pruning is the baseline that relabels queries whose gold
//! entry is removed instead.

mod mock;
mod passage;

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use mock::ArgumentSwapClient;
pub use passage::{
    build_prompt, parse_completion, parse_tagged_passage, role_tag, serialize_passage,
    strip_role_tags, GeneratedPassage, ParseOutcome, Segments, MENTION_TAG,
};

use crate::encoders::Encoder;
use crate::error::{Error, Result};
use crate::extraction::{extract, EventQuery, ExtractorAdapter, TaggedQuery};
use crate::formatting::FormatStyle;
use crate::kb::Label;
use crate::llm::{complete_with_retry, CompletionClient};
use crate::retrieval::{retrieve_query, DenseIndex};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenStyle {
    /// Role-tagged passage, two-step plan prompt.
    ArgumentAware,
    /// Mention-tagged passage only.
    Plain,
}

impl FromStr for GenStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "args" | "argument_aware" => Ok(Self::ArgumentAware),
            "plain" | "non_argument_aware" => Ok(Self::Plain),
            other => Err(Error::Config(format!("unknown generation style {other:?}"))),
        }
    }
}

impl fmt::Display for GenStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ArgumentAware => "args",
            Self::Plain => "plain",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    ArgumentAware,
    NonArgumentAware,
    KbPruning,
}

impl From<GenStyle> for Provenance {
    fn from(s: GenStyle) -> Self {
        match s {
            GenStyle::ArgumentAware => Provenance::ArgumentAware,
            GenStyle::Plain => Provenance::NonArgumentAware,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeExample {
    pub generated_query: TaggedQuery,
    pub origin_query_id: String,
    pub paired_candidate_ids: Vec<String>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttemptStatus {
    Accepted,
    Rejected,
    /// The client failed after retries.
    Skipped,
    /// Completed in the same wave after the target count was reached.
    Surplus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub origin_query_id: String,
    pub style: GenStyle,
    pub prompt: String,
    pub completion: Option<String>,
    pub segments: Option<Segments>,
    pub status: AttemptStatus,
    pub reason: Option<String>,
}

fn is_numeric(text: &str) -> bool {
    let compact: String = text.chars().filter(|c| !c.is_whitespace() && *c != ',').collect();
    compact.chars().any(|c| c.is_ascii_digit()) && compact.parse::<f64>().is_ok()
}

fn sentence_initial(tokens: &[String], i: usize) -> bool {
    i == 0 || matches!(tokens[i - 1].as_str(), "." | "!" | "?" | "\"" | "``")
}

/// True when every alphabetic mention token is capitalized. A capital on
/// the first word of a sentence is not counted as evidence.
fn is_proper_noun(q: &EventQuery) -> bool {
    let mut evidence = false;
    for i in q.mention.start..=q.mention.end {
        let t = &q.tokens[i];
        let Some(first) = t.chars().find(|c| c.is_alphabetic()) else {
            continue;
        };
        if !first.is_uppercase() {
            return false;
        }
        if !sentence_initial(&q.tokens, i) {
            evidence = true;
        }
    }
    evidence
}

/// Keeps queries whose mention is neither numeric nor a proper noun and
/// that carry at least two arguments.
pub fn sample_filter(pool: &[TaggedQuery]) -> Vec<TaggedQuery> {
    pool.iter()
        .filter(|q| {
            q.arguments.len() >= 2
                && !is_numeric(&q.base.mention_text())
                && !is_proper_noun(&q.base)
        })
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub style: GenStyle,
    /// Accepted examples to produce.
    pub count: usize,
    pub seed: u64,
    /// Paired candidates per example.
    pub k: usize,
    /// Format used to retrieve for the origin query.
    pub query_style: FormatStyle,
    pub query_max_len: usize,
    pub retries: usize,
    /// Requests in flight per wave.
    pub concurrency: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            style: GenStyle::ArgumentAware,
            count: 200,
            seed: 0,
            k: 10,
            query_style: FormatStyle::Args,
            query_max_len: 300,
            retries: 2,
            concurrency: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRun {
    /// Ordered by origin query id.
    pub negatives: Vec<NegativeExample>,
    /// Every attempt, in attempt order.
    pub log: Vec<GenerationRecord>,
}

struct Attempt {
    record: GenerationRecord,
    passage: Option<GeneratedPassage>,
}

fn attempt(origin: &TaggedQuery, client: &dyn CompletionClient, cfg: &GenerationConfig) -> Attempt {
    let with_roles = cfg.style == GenStyle::ArgumentAware;
    let mut record = GenerationRecord {
        origin_query_id: origin.query_id().to_string(),
        style: cfg.style,
        prompt: String::new(),
        completion: None,
        segments: None,
        status: AttemptStatus::Skipped,
        reason: None,
    };
    let prepared = build_prompt(origin, cfg.style)
        .and_then(|p| serialize_passage(origin, with_roles).map(|s| (p, s)));
    let (prompt, original) = match prepared {
        Ok(v) => v,
        Err(e) => {
            record.reason = Some(e.to_string());
            return Attempt { record, passage: None };
        }
    };
    record.prompt = prompt;
    let raw = match complete_with_retry(client, &record.prompt, cfg.retries) {
        Ok(raw) => raw,
        Err(e) => {
            record.reason = Some(e.to_string());
            return Attempt { record, passage: None };
        }
    };
    let outcome = parse_completion(&raw, cfg.style, &original);
    record.completion = Some(raw);
    match outcome {
        ParseOutcome::Accepted { segments, passage } => {
            record.segments = Some(segments);
            record.status = AttemptStatus::Accepted;
            Attempt {
                record,
                passage: Some(passage),
            }
        }
        ParseOutcome::Rejected { segments, reason } => {
            record.segments = segments;
            record.status = AttemptStatus::Rejected;
            record.reason = Some(reason);
            Attempt { record, passage: None }
        }
    }
}

/// Builds the NIL query for an accepted passage. Plain-style passages carry
/// no role tags; `retag` re-extracts their arguments when given.
fn negative_query(
    origin: &TaggedQuery,
    passage: GeneratedPassage,
    retag: Option<&dyn ExtractorAdapter>,
) -> Result<TaggedQuery> {
    let base = EventQuery {
        query_id: format!("{}#neg", origin.query_id()),
        tokens: passage.tokens,
        mention: passage.mention,
        pos: origin.base.pos,
        gold: Label::Nil,
        entities: Vec::new(),
    };
    base.validate()?;
    let arguments = match (passage.arguments.is_empty(), retag) {
        (true, Some(x)) => extract(x, &base)?.arguments,
        _ => passage.arguments,
    };
    let q = TaggedQuery {
        base,
        event_type: origin.event_type.clone(),
        arguments,
    };
    q.validate()?;
    Ok(q)
}

/// Generates up to `cfg.count` accepted negatives from the filtered pool.
pub fn generate_negatives(
    pool: &[TaggedQuery],
    index: &DenseIndex,
    encoder: &dyn Encoder,
    client: &dyn CompletionClient,
    retag: Option<&dyn ExtractorAdapter>,
    cfg: &GenerationConfig,
) -> Result<GenerationRun> {
    if cfg.k == 0 || cfg.concurrency == 0 {
        return Err(Error::Config("k and concurrency must be positive".into()));
    }
    index.check_encoder(encoder)?;
    let mut order = sample_filter(pool);
    order.sort_by(|a, b| a.query_id().cmp(b.query_id()));
    order.shuffle(&mut seeded(cfg.seed));

    let mut accepted: Vec<(TaggedQuery, GeneratedPassage)> = Vec::new();
    let mut log = Vec::new();
    for wave in order.chunks(cfg.concurrency) {
        if accepted.len() >= cfg.count {
            break;
        }
        let results: Vec<Attempt> = wave.par_iter().map(|q| attempt(q, client, cfg)).collect();
        for (origin, mut a) in wave.iter().zip(results) {
            if accepted.len() >= cfg.count {
                a.record.status = AttemptStatus::Surplus;
                a.record.reason = Some("count reached".into());
            } else if let Some(p) = a.passage {
                accepted.push((origin.clone(), p));
            }
            log.push(a.record);
        }
    }

    let mut negatives = accepted
        .into_iter()
        .map(|(origin, passage)| {
            let paired = retrieve_query(
                index,
                encoder,
                &origin,
                cfg.query_style,
                cfg.query_max_len,
                cfg.k.min(index.len()),
                &HashSet::new(),
            )?;
            Ok(NegativeExample {
                generated_query: negative_query(&origin, passage, retag)?,
                origin_query_id: origin.query_id().to_string(),
                paired_candidate_ids: paired.ids().into_iter().map(String::from).collect(),
                provenance: cfg.style.into(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    negatives.sort_by(|a, b| a.origin_query_id.cmp(&b.origin_query_id));
    Ok(GenerationRun { negatives, log })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneOutcome {
    /// Sorted.
    pub pruned_labels: Vec<String>,
    /// Every input query; those with a pruned gold now carry NIL.
    pub queries: Vec<TaggedQuery>,
    /// The relabeled queries, with no paired candidates yet.
    pub negatives: Vec<NegativeExample>,
}

/// Prunes `ceil(fraction × unique gold labels)` labels sampled with `seed`
/// and relabels their queries as NIL.
pub fn kb_pruning_negatives(train: &[TaggedQuery], fraction: f64, seed: u64) -> Result<PruneOutcome> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("prune fraction {fraction} outside (0, 1)")));
    }
    let labels: Vec<&str> = train
        .iter()
        .filter_map(|q| q.base.gold.as_entry())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    // Tolerance keeps products such as 0.1 × 30 from rounding up.
    let m = ((fraction * labels.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut picked: Vec<String> = index::sample(&mut seeded(seed), labels.len(), m.min(labels.len()))
        .into_iter()
        .map(|i| labels[i].to_string())
        .collect();
    picked.sort();
    let pruned: HashSet<&str> = picked.iter().map(String::as_str).collect();

    let mut queries = Vec::with_capacity(train.len());
    let mut negatives = Vec::new();
    for q in train {
        let hit = q.base.gold.as_entry().is_some_and(|g| pruned.contains(g));
        if hit {
            let mut relabeled = q.clone();
            relabeled.base.gold = Label::Nil;
            negatives.push(NegativeExample {
                generated_query: relabeled.clone(),
                origin_query_id: q.query_id().to_string(),
                paired_candidate_ids: Vec::new(),
                provenance: Provenance::KbPruning,
            });
            queries.push(relabeled);
        } else {
            queries.push(q.clone());
        }
    }
    Ok(PruneOutcome {
        pruned_labels: picked,
        queries,
        negatives,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::hashing_encoder;
    use crate::extraction::{Argument, Pos, Span};
    use crate::kb::{KbEntry, KnowledgeBase};
    use crate::llm::ScriptedClient;
    use crate::retrieval::build_index;
    use std::collections::BTreeMap;

    fn query(id: &str, text: &str, mention: usize, args: Vec<Argument>, gold: &str) -> TaggedQuery {
        TaggedQuery {
            base: EventQuery::new(
                id,
                text.split(' ').map(String::from).collect(),
                Span::single(mention),
                Pos::Verb,
                Label::entry(gold),
            )
            .unwrap(),
            event_type: "Attack".into(),
            arguments: args,
        }
    }

    fn two_args() -> Vec<Argument> {
        vec![Argument::new(0, 0, "Attacker"), Argument::new(2, 2, "Target")]
    }

    #[test]
    fn filter_rules() {
        let kept = query("a", "Rome invaded Gaul", 1, two_args(), "E1");
        let proper = query("b", "Rome Waterloo Gaul", 1, two_args(), "E1");
        let numeric = query("c", "Rome 1,000 Gaul", 1, two_args(), "E1");
        let one = query("d", "Rome invaded Gaul", 1, vec![Argument::new(0, 0, "Attacker")], "E1");
        let initial = query("e", "Attacked Rome then", 0, vec![Argument::new(1, 1, "T"), Argument::new(2, 2, "U")], "E1");
        let pool = vec![kept, proper, numeric, one, initial];
        let out = sample_filter(&pool);
        let ids: Vec<_> = out.iter().map(|q| q.query_id()).collect();
        assert_eq!(ids, ["a", "e"]);
        assert_eq!(sample_filter(&out), out);
    }

    #[test]
    fn pruning_counts() {
        let train: Vec<_> = (0..20)
            .map(|i| query(&format!("q{i}"), "Rome invaded Gaul", 1, two_args(), &format!("E{}", i % 10)))
            .collect();
        let out = kb_pruning_negatives(&train, 0.1, 3).unwrap();
        assert_eq!(out.pruned_labels.len(), 1);
        let p = &out.pruned_labels[0];
        for (before, after) in train.iter().zip(&out.queries) {
            if before.base.gold.as_entry() == Some(p) {
                assert!(after.base.gold.is_nil());
            } else {
                assert_eq!(before, after);
            }
        }
        assert_eq!(out.negatives.len(), 2);
        assert_eq!(kb_pruning_negatives(&train, 0.1, 3).unwrap(), out);
        assert!(kb_pruning_negatives(&train, 1.0, 3).is_err());
    }

    fn fixture() -> (KnowledgeBase, Vec<TaggedQuery>) {
        let kb = KnowledgeBase::from_entries(
            (0..12)
                .map(|i| KbEntry::new(format!("E{i}"), format!("War {i}"), "a war between states"))
                .collect(),
        )
        .unwrap();
        let pool = ["Rome", "Gaul", "Carthage", "Sparta"]
            .iter()
            .enumerate()
            .map(|(i, a)| query(&format!("q{i}"), &format!("{a} invaded Athens"), 1, two_args(), "E1"))
            .collect();
        (kb, pool)
    }

    fn pools() -> BTreeMap<String, Vec<String>> {
        let mut m = BTreeMap::new();
        m.insert("Attacker".into(), vec!["Rome".into(), "Persia".into(), "Egypt".into()]);
        m.insert("Target".into(), vec!["Athens".into(), "Troy".into()]);
        m
    }

    #[test]
    fn mock_pipeline_is_reproducible() {
        let (kb, pool) = fixture();
        let enc = hashing_encoder(16, 1).unwrap();
        let index = build_index(&kb, &enc, 32).unwrap();
        let client = ArgumentSwapClient::new(pools(), 9);
        let cfg = GenerationConfig {
            count: 3,
            concurrency: 2,
            ..GenerationConfig::default()
        };
        let run = generate_negatives(&pool, &index, &enc, &client, None, &cfg).unwrap();
        assert_eq!(run.negatives.len(), 3);
        for n in &run.negatives {
            assert!(n.generated_query.base.gold.is_nil());
            assert_eq!(n.paired_candidate_ids.len(), 10);
            assert_eq!(n.generated_query.arguments.len(), 2);
            assert_eq!(n.provenance, Provenance::ArgumentAware);
        }
        assert!(run.log.iter().all(|r| r.status != AttemptStatus::Rejected));
        let again = generate_negatives(&pool, &index, &enc, &client, None, &cfg).unwrap();
        assert_eq!(again, run);
    }

    #[test]
    fn tag_dropping_client_yields_nothing() {
        let (kb, pool) = fixture();
        let enc = hashing_encoder(16, 1).unwrap();
        let index = build_index(&kb, &enc, 32).unwrap();
        let client = ScriptedClient::new(|_: &str| {
            Ok("Plan 1: a\nFollowing Plan 1, we can generate this passage after Step 1: b\nPlan 2: c\nFollowing Plan 2, we can generate this passage after Step 2: Persia invaded Troy".to_string())
        });
        let run = generate_negatives(&pool, &index, &enc, &client, None, &GenerationConfig::default()).unwrap();
        assert!(run.negatives.is_empty());
        assert_eq!(run.log.len(), 4);
        assert!(run
            .log
            .iter()
            .all(|r| r.status == AttemptStatus::Rejected && r.reason.as_deref() == Some("mention tags removed")));
    }

    #[test]
    fn plain_style_uses_mention_tags_only() {
        let (kb, pool) = fixture();
        let enc = hashing_encoder(16, 1).unwrap();
        let index = build_index(&kb, &enc, 32).unwrap();
        let client = ArgumentSwapClient::new(pools(), 9);
        let cfg = GenerationConfig {
            style: GenStyle::Plain,
            count: 2,
            ..GenerationConfig::default()
        };
        let run = generate_negatives(&pool, &index, &enc, &client, None, &cfg).unwrap();
        assert_eq!(run.negatives.len(), 2);
        assert!(run.negatives.iter().all(|n| n.provenance == Provenance::NonArgumentAware));
        assert!(run.log.iter().all(|r| !r.prompt.contains("<Attacker>")));
    }
}
