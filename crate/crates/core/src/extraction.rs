//! Event queries, argument annotations and extractor adapters.
//!
//! Extractor output is normalized here, not trusted: arguments that fall
//! outside the query, overlap the mention, or overlap each other are
//! resolved before a [`TaggedQuery`] is returned.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formatting::NamedEntity;
use crate::kb::{KnowledgeBase, Label};

/// Event type assigned when the extractor has nothing to say.
pub const UNKNOWN_EVENT_TYPE: &str = "UNKNOWN";

/// Inclusive token span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn single(i: usize) -> Self {
        Self { start: i, end: i }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn check(&self, len: usize) -> Result<()> {
        if self.start > self.end || self.end >= len {
            return Err(Error::SpanOutOfBounds {
                start: self.start,
                end: self.end,
                len,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pos {
    Verb,
    Noun,
    #[default]
    Other,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pos::Verb => "verb",
            Pos::Noun => "noun",
            Pos::Other => "other",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EventQueryRecord {
    query_id: String,
    tokens: Vec<String>,
    mention_start: usize,
    mention_end: usize,
    #[serde(default)]
    pos: Pos,
    gold: Label,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    entities: Vec<NamedEntity>,
}

/// A query passage with one marked event mention and its gold label.
///
/// `entities` carries optional named-entity annotations, consumed only by
/// the entity-augmented input format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EventQueryRecord", into = "EventQueryRecord")]
pub struct EventQuery {
    pub query_id: String,
    pub tokens: Vec<String>,
    pub mention: Span,
    pub pos: Pos,
    pub gold: Label,
    pub entities: Vec<NamedEntity>,
}

impl TryFrom<EventQueryRecord> for EventQuery {
    type Error = Error;

    fn try_from(r: EventQueryRecord) -> Result<Self> {
        let q = EventQuery {
            query_id: r.query_id,
            tokens: r.tokens,
            mention: Span::new(r.mention_start, r.mention_end),
            pos: r.pos,
            gold: r.gold,
            entities: r.entities,
        };
        q.validate()?;
        Ok(q)
    }
}

impl From<EventQuery> for EventQueryRecord {
    fn from(q: EventQuery) -> Self {
        EventQueryRecord {
            query_id: q.query_id,
            tokens: q.tokens,
            mention_start: q.mention.start,
            mention_end: q.mention.end,
            pos: q.pos,
            gold: q.gold,
            entities: q.entities,
        }
    }
}

impl EventQuery {
    pub fn new(
        query_id: impl Into<String>,
        tokens: Vec<String>,
        mention: Span,
        pos: Pos,
        gold: Label,
    ) -> Result<Self> {
        let q = Self {
            query_id: query_id.into(),
            tokens,
            mention,
            pos,
            gold,
            entities: Vec::new(),
        };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(self.invalid("empty token sequence"));
        }
        self.mention.check(self.tokens.len())?;
        for e in &self.entities {
            e.span.check(self.tokens.len())?;
        }
        Ok(())
    }

    /// Checks that an in-KB gold label names an entry of `kb`.
    pub fn validate_gold(&self, kb: &KnowledgeBase) -> Result<()> {
        match &self.gold {
            Label::Entry(id) if !kb.contains(id) => Err(self.invalid(&format!(
                "gold {id:?} is not in the knowledge base"
            ))),
            _ => Ok(()),
        }
    }

    pub fn mention_text(&self) -> String {
        self.span_text(self.mention)
    }

    pub fn span_text(&self, span: Span) -> String {
        self.tokens[span.start..=span.end].join(" ")
    }

    fn invalid(&self, message: &str) -> Error {
        Error::InvalidQuery {
            query_id: self.query_id.clone(),
            message: message.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Argument {
    #[serde(flatten)]
    pub span: Span,
    pub role: String,
}

impl Argument {
    pub fn new(start: usize, end: usize, role: impl Into<String>) -> Self {
        Self {
            span: Span::new(start, end),
            role: role.into(),
        }
    }
}

/// A query with its predicted event type and argument annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedQuery {
    #[serde(flatten)]
    pub base: EventQuery,
    pub event_type: String,
    pub arguments: Vec<Argument>,
}

impl TaggedQuery {
    /// A tagged view with no arguments and an unknown event type.
    pub fn untagged(base: EventQuery) -> Self {
        Self {
            base,
            event_type: UNKNOWN_EVENT_TYPE.to_string(),
            arguments: Vec::new(),
        }
    }

    pub fn query_id(&self) -> &str {
        &self.base.query_id
    }

    /// Checks the tagging invariants: arguments in bounds, non-empty roles,
    /// pairwise disjoint and disjoint from the mention.
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        let n = self.base.tokens.len();
        for (i, a) in self.arguments.iter().enumerate() {
            a.span.check(n)?;
            if a.role.is_empty() {
                return Err(self.base.invalid("argument with empty role"));
            }
            if a.span.overlaps(&self.base.mention) {
                return Err(self.base.invalid("argument overlaps the mention"));
            }
            if self.arguments[..i].iter().any(|b| b.span.overlaps(&a.span)) {
                return Err(self.base.invalid("overlapping arguments"));
            }
        }
        Ok(())
    }
}

/// Raw output of an extractor before normalization.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Extraction {
    pub event_type: Option<String>,
    pub arguments: Vec<Argument>,
}

/// Pluggable event typing and argument extraction backend.
pub trait ExtractorAdapter: Send + Sync {
    fn name(&self) -> &str;

    fn extract(&self, query: &EventQuery) -> std::result::Result<Extraction, String>;

    /// Adapters that cannot take concurrent calls return true; the pipeline
    /// then runs them one query at a time.
    fn is_serial(&self) -> bool {
        false
    }
}

/// Runs `extractor` on `query` and enforces the tagging invariants.
pub fn extract(extractor: &dyn ExtractorAdapter, query: &EventQuery) -> Result<TaggedQuery> {
    let raw = extractor
        .extract(query)
        .map_err(|message| Error::Extraction {
            query_id: query.query_id.clone(),
            message,
        })?;
    let event_type = raw
        .event_type
        .filter(|t| !t.trim().is_empty())
        .unwrap_or_else(|| UNKNOWN_EVENT_TYPE.to_string());
    let arguments = resolve_overlaps(raw.arguments, query.mention, query.tokens.len());
    Ok(TaggedQuery {
        base: query.clone(),
        event_type,
        arguments,
    })
}

/// Tags every query, preserving input order.
pub fn extract_all(
    extractor: &dyn ExtractorAdapter,
    queries: &[EventQuery],
) -> Result<Vec<TaggedQuery>> {
    if extractor.is_serial() {
        queries.iter().map(|q| extract(extractor, q)).collect()
    } else {
        queries.par_iter().map(|q| extract(extractor, q)).collect()
    }
}

/// Drops invalid arguments and those touching the mention, then keeps the
/// longest of any mutually overlapping group (earlier start wins ties).
/// The result is sorted by start.
pub fn resolve_overlaps(mut args: Vec<Argument>, mention: Span, len: usize) -> Vec<Argument> {
    args.retain(|a| a.span.check(len).is_ok() && !a.role.is_empty() && !a.span.overlaps(&mention));
    args.sort_by(|a, b| {
        b.span
            .len()
            .cmp(&a.span.len())
            .then(a.span.start.cmp(&b.span.start))
            .then(a.span.end.cmp(&b.span.end))
    });
    let mut kept: Vec<Argument> = Vec::with_capacity(args.len());
    for a in args {
        if kept.iter().all(|k| !k.span.overlaps(&a.span)) {
            kept.push(a);
        }
    }
    kept.sort_by_key(|a| a.span);
    kept
}

/// Surface-string lexicon for [`RuleExtractor`]. Keys are matched
/// case-insensitively against whitespace tokens.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    /// Mention surface → event type.
    #[serde(default)]
    pub triggers: BTreeMap<String, String>,
    /// Argument surface → role.
    #[serde(default)]
    pub roles: BTreeMap<String, String>,
}

impl Lexicon {
    pub fn with_role(mut self, surface: &str, role: &str) -> Self {
        self.roles.insert(surface.to_string(), role.to_string());
        self
    }

    pub fn with_trigger(mut self, surface: &str, event_type: &str) -> Self {
        self.triggers
            .insert(surface.to_string(), event_type.to_string());
        self
    }
}

/// Deterministic exact-match extractor.
#[derive(Debug, Clone)]
pub struct RuleExtractor {
    triggers: BTreeMap<String, String>,
    roles: Vec<(Vec<String>, String)>,
}

pub fn rule_extractor(lexicon: &Lexicon) -> RuleExtractor {
    RuleExtractor::new(lexicon)
}

impl RuleExtractor {
    pub fn new(lexicon: &Lexicon) -> Self {
        let triggers = lexicon
            .triggers
            .iter()
            .map(|(k, v)| (normalize(k), v.clone()))
            .collect();
        let roles = lexicon
            .roles
            .iter()
            .map(|(k, v)| {
                let toks: Vec<String> = k.split_whitespace().map(str::to_lowercase).collect();
                (toks, v.clone())
            })
            .filter(|(toks, _)| !toks.is_empty())
            .collect();
        Self { triggers, roles }
    }
}

fn normalize(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

impl ExtractorAdapter for RuleExtractor {
    fn name(&self) -> &str {
        "rule"
    }

    fn extract(&self, query: &EventQuery) -> std::result::Result<Extraction, String> {
        let lower: Vec<String> = query.tokens.iter().map(|t| t.to_lowercase()).collect();
        let event_type = self.triggers.get(&normalize(&query.mention_text())).cloned();
        let mut arguments = Vec::new();
        for start in 0..lower.len() {
            for (surface, role) in &self.roles {
                let end = start + surface.len();
                if end <= lower.len() && lower[start..end] == surface[..] {
                    arguments.push(Argument::new(start, end - 1, role.clone()));
                }
            }
        }
        Ok(Extraction {
            event_type,
            arguments,
        })
    }
}

/// Extractor that never finds anything.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullExtractor;

impl ExtractorAdapter for NullExtractor {
    fn name(&self) -> &str {
        "none"
    }

    fn extract(&self, _query: &EventQuery) -> std::result::Result<Extraction, String> {
        Ok(Extraction::default())
    }
}
