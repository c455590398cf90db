//! Tagged-passage text used by the generation prompts, plus the prompt
//! builders and completion parser.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::GenStyle;
use crate::error::{Error, Result};
use crate::extraction::{Argument, Span, TaggedQuery, UNKNOWN_EVENT_TYPE};
use crate::prompt::{exemplars, fill, Exemplar, GENERATION_ARGUMENT_AWARE, GENERATION_PLAIN};

pub const MENTION_TAG: &str = "mention";

const PLAN_1: &str = "Plan 1:";
const STEP_1: &str = "Following Plan 1, we can generate this passage after Step 1:";
const PLAN_2: &str = "Plan 2:";
const STEP_2: &str = "Following Plan 2, we can generate this passage after Step 2:";
const NEW_PASSAGE: &str = "New passage:";

/// Role name as it appears inside a tag.
pub fn role_tag(role: &str) -> String {
    role.split_whitespace().collect::<Vec<_>>().join("_")
}

/// Space-separated passage with `<mention> .. </mention>` around the event
/// mention and, when `with_roles`, `<Role> .. </Role>` around arguments.
pub fn serialize_passage(query: &TaggedQuery, with_roles: bool) -> Result<String> {
    let base = &query.base;
    let mut opens: BTreeMap<usize, String> = BTreeMap::new();
    let mut closes: BTreeMap<usize, String> = BTreeMap::new();
    opens.insert(base.mention.start, MENTION_TAG.to_string());
    closes.insert(base.mention.end, MENTION_TAG.to_string());
    if with_roles {
        for a in &query.arguments {
            let tag = role_tag(&a.role);
            if tag.is_empty() || tag.eq_ignore_ascii_case(MENTION_TAG) || tag.contains(['<', '>']) {
                return Err(Error::InvalidQuery {
                    query_id: base.query_id.clone(),
                    message: format!("role {:?} cannot be written as a tag", a.role),
                });
            }
            opens.insert(a.span.start, tag.clone());
            closes.insert(a.span.end, tag);
        }
    }
    let mut out: Vec<String> = Vec::with_capacity(base.tokens.len() + 2 * opens.len());
    for (i, t) in base.tokens.iter().enumerate() {
        if let Some(tag) = opens.get(&i) {
            out.push(format!("<{tag}>"));
        }
        out.push(t.clone());
        if let Some(tag) = closes.get(&i) {
            out.push(format!("</{tag}>"));
        }
    }
    Ok(out.join(" "))
}

/// Removes every tag other than the mention tags.
pub fn strip_role_tags(passage: &str) -> String {
    split_tags(passage)
        .split_whitespace()
        .filter(|t| match tag_of(t) {
            Some((_, name)) => name == MENTION_TAG,
            None => true,
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn valid_tag_name(name: &str) -> bool {
    !name.is_empty() && !name.chars().any(|c| c.is_whitespace() || c == '<' || c == '>' || c == '/')
}

/// `(is_closing, name)` when `token` is exactly one tag.
fn tag_of(token: &str) -> Option<(bool, &str)> {
    let inner = token.strip_prefix('<')?.strip_suffix('>')?;
    let (closing, name) = match inner.strip_prefix('/') {
        Some(n) => (true, n),
        None => (false, inner),
    };
    valid_tag_name(name).then_some((closing, name))
}

/// Inserts spaces around tags glued to neighboring text.
fn split_tags(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 16);
    let mut rest = text;
    while let Some(lt) = rest.find('<') {
        out.push_str(&rest[..lt]);
        let after = &rest[lt..];
        match after.find('>') {
            Some(gt) if tag_of(&after[..=gt]).is_some() => {
                out.push(' ');
                out.push_str(&after[..=gt]);
                out.push(' ');
                rest = &after[gt + 1..];
            }
            _ => {
                out.push('<');
                rest = &after[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

/// Tokens and annotations recovered from a tagged passage.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedPassage {
    pub tokens: Vec<String>,
    pub mention: Span,
    pub arguments: Vec<Argument>,
}

impl GeneratedPassage {
    fn role_counts(&self) -> BTreeMap<&str, usize> {
        let mut m = BTreeMap::new();
        for a in &self.arguments {
            *m.entry(a.role.as_str()).or_default() += 1;
        }
        m
    }
}

/// Parses `<tag> .. </tag>` groups. Tags may not nest, and the mention
/// must be tagged exactly once.
pub fn parse_tagged_passage(text: &str) -> std::result::Result<GeneratedPassage, String> {
    let spaced = split_tags(text);
    let raw: Vec<&str> = spaced.split_whitespace().collect();
    let opens = raw.iter().filter(|t| tag_of(t) == Some((false, MENTION_TAG))).count();
    let closes = raw.iter().filter(|t| tag_of(t) == Some((true, MENTION_TAG))).count();
    if opens == 0 || closes == 0 {
        return Err("mention tags removed".into());
    }
    if opens > 1 || closes > 1 {
        return Err("malformed: repeated mention tags".into());
    }
    let mut tokens = Vec::with_capacity(raw.len());
    let mut mention = None;
    let mut arguments = Vec::new();
    let mut open: Option<(&str, usize)> = None;
    for t in raw {
        match (tag_of(t), open) {
            (None, _) => tokens.push(t.to_string()),
            (Some((false, _)), Some(_)) => return Err("malformed: nested tags".into()),
            (Some((false, name)), None) => open = Some((name, tokens.len())),
            (Some((true, name)), Some((o, start))) if o == name => {
                if tokens.len() == start {
                    return Err(format!("malformed: empty <{name}> span"));
                }
                let span = Span::new(start, tokens.len() - 1);
                if name == MENTION_TAG {
                    mention = Some(span);
                } else {
                    arguments.push(Argument {
                        span,
                        role: name.to_string(),
                    });
                }
                open = None;
            }
            (Some((true, name)), _) if name == MENTION_TAG => {
                return Err("malformed: misplaced mention tags".into())
            }
            (Some((true, _)), _) => return Err("unbalanced role tags".into()),
        }
    }
    match open {
        Some((MENTION_TAG, _)) => Err("malformed: misplaced mention tags".into()),
        Some(_) => Err("unbalanced role tags".into()),
        None => Ok(GeneratedPassage {
            tokens,
            mention: mention.ok_or("malformed: misplaced mention tags")?,
            arguments,
        }),
    }
}

fn render_exemplar(ex: &Exemplar, style: GenStyle) -> String {
    match style {
        GenStyle::ArgumentAware => {
            let mention = parse_tagged_passage(&ex.passage)
                .map(|p| p.tokens[p.mention.start..=p.mention.end].join(" "))
                .expect("bundled exemplar is well formed");
            format!(
                "Passage: {}\n\nAdditional information we have for the Passage: This \"{}\" event is of the type \"{}\".\n{PLAN_1} {}\n{STEP_1} {}\n{PLAN_2} {}\n{STEP_2} {}",
                ex.passage, mention, ex.event_type, ex.plan_1, ex.step_1, ex.plan_2, ex.step_2
            )
        }
        GenStyle::Plain => format!(
            "Passage: {}\n\n{NEW_PASSAGE} {}",
            strip_role_tags(&ex.passage),
            strip_role_tags(&ex.step_2)
        ),
    }
}

/// Fills the generation prompt for `query` with the two bundled exemplars.
pub fn build_prompt(query: &TaggedQuery, style: GenStyle) -> Result<String> {
    let shots = exemplars();
    let mut values = BTreeMap::new();
    values.insert("Example 1", render_exemplar(&shots[0], style));
    values.insert("Example 2", render_exemplar(&shots[1], style));
    match style {
        GenStyle::ArgumentAware => {
            let t = query.event_type.trim();
            if t.is_empty() || t == UNKNOWN_EVENT_TYPE {
                return Err(Error::MissingEventType(query.query_id().to_string()));
            }
            values.insert("", serialize_passage(query, true)?);
            values.insert("event mention text span", query.base.mention_text());
            values.insert("event type", t.to_string());
            fill(GENERATION_ARGUMENT_AWARE, &values)
        }
        GenStyle::Plain => {
            values.insert("", serialize_passage(query, false)?);
            fill(GENERATION_PLAIN, &values)
        }
    }
}

/// Text pieces of a completion. The plain style fills only `passage_2`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segments {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan_1: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passage_1: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan_2: Option<String>,
    pub passage_2: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParseOutcome {
    Accepted {
        segments: Segments,
        passage: GeneratedPassage,
    },
    Rejected {
        segments: Option<Segments>,
        reason: String,
    },
}

impl ParseOutcome {
    fn reject(segments: Option<Segments>, reason: impl Into<String>) -> Self {
        ParseOutcome::Rejected {
            segments,
            reason: reason.into(),
        }
    }
}

/// First paragraph of `text`, trimmed.
fn paragraph(text: &str) -> String {
    let t = text.trim_start();
    t.split("\n\n").next().unwrap_or("").trim().to_string()
}

fn split_segments(raw: &str, style: GenStyle) -> Option<Segments> {
    match style {
        GenStyle::ArgumentAware => {
            let p1 = raw.find(PLAN_1)?;
            let s1 = p1 + raw[p1..].find(STEP_1)?;
            let p2 = s1 + raw[s1..].find(PLAN_2)?;
            let s2 = p2 + raw[p2..].find(STEP_2)?;
            Some(Segments {
                plan_1: Some(raw[p1 + PLAN_1.len()..s1].trim().to_string()),
                passage_1: Some(raw[s1 + STEP_1.len()..p2].trim().to_string()),
                plan_2: Some(raw[p2 + PLAN_2.len()..s2].trim().to_string()),
                passage_2: paragraph(&raw[s2 + STEP_2.len()..]),
            })
        }
        GenStyle::Plain => {
            let body = match raw.rfind(NEW_PASSAGE) {
                Some(i) => &raw[i + NEW_PASSAGE.len()..],
                None => raw,
            };
            Some(Segments {
                passage_2: paragraph(body),
                ..Segments::default()
            })
        }
    }
}

/// Extracts and checks the final passage of a completion against the
/// tagged `original` passage that was sent.
pub fn parse_completion(raw: &str, style: GenStyle, original: &str) -> ParseOutcome {
    let Some(segments) = split_segments(raw, style) else {
        return ParseOutcome::reject(None, "malformed: missing plan or step segments");
    };
    if segments.passage_2.is_empty() {
        return ParseOutcome::reject(Some(segments), "malformed: empty passage");
    }
    let passage = match parse_tagged_passage(&segments.passage_2) {
        Ok(p) => p,
        Err(reason) => return ParseOutcome::reject(Some(segments), reason),
    };
    let normalized = split_tags(&segments.passage_2)
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ");
    if normalized == original.split_whitespace().collect::<Vec<_>>().join(" ") {
        return ParseOutcome::reject(Some(segments), "unchanged");
    }
    if style == GenStyle::ArgumentAware {
        if let Ok(orig) = parse_tagged_passage(original) {
            let have = passage.role_counts();
            let lost = orig
                .role_counts()
                .into_iter()
                .any(|(role, n)| have.get(role).copied().unwrap_or(0) < n);
            if lost {
                return ParseOutcome::reject(Some(segments), "argument role tags removed");
            }
        }
    }
    ParseOutcome::Accepted { segments, passage }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::{EventQuery, Pos};
    use crate::kb::Label;

    pub(crate) fn invasion() -> TaggedQuery {
        let tokens = ["Germany", "invaded", "the", "Soviet", "Union", "in", "1941"];
        TaggedQuery {
            base: EventQuery::new(
                "q1",
                tokens.iter().map(|s| s.to_string()).collect(),
                Span::single(1),
                Pos::Verb,
                Label::entry("E1"),
            )
            .unwrap(),
            event_type: "Invasion".into(),
            arguments: vec![Argument::new(0, 0, "Assailant"), Argument::new(2, 4, "Victim")],
        }
    }

    #[test]
    fn passage_tags() {
        let q = invasion();
        assert_eq!(
            serialize_passage(&q, true).unwrap(),
            "<Assailant> Germany </Assailant> <mention> invaded </mention> <Victim> the Soviet Union </Victim> in 1941"
        );
        assert_eq!(
            serialize_passage(&q, false).unwrap(),
            "Germany <mention> invaded </mention> the Soviet Union in 1941"
        );
        let back = parse_tagged_passage(&serialize_passage(&q, true).unwrap()).unwrap();
        assert_eq!(back.tokens, q.base.tokens);
        assert_eq!(back.mention, q.base.mention);
        assert_eq!(back.arguments, q.arguments);
    }

    #[test]
    fn glued_tags_are_split() {
        let p = parse_tagged_passage("<A>Rome</A> <mention>fell</mention>.").unwrap();
        assert_eq!(p.tokens, ["Rome", "fell", "."]);
        assert_eq!(p.mention, Span::single(1));
    }

    #[test]
    fn prompts_carry_tags_and_type_sentence() {
        let q = invasion();
        let aware = build_prompt(&q, GenStyle::ArgumentAware).unwrap();
        assert!(aware.contains("<Victim> the Soviet Union </Victim>"));
        assert!(aware.ends_with(
            "Additional information we have for the Passage: This \"invaded\" event is of the type \"Invasion\"."
        ));
        let plain = build_prompt(&q, GenStyle::Plain).unwrap();
        assert!(plain.ends_with(
            "Passage: Germany <mention> invaded </mention> the Soviet Union in 1941\n\nNew passage: "
        ));
        assert!(!plain.contains("</Victim>"));
        assert!(!plain.contains("event is of the type"));

        let mut untyped = q.clone();
        untyped.event_type = UNKNOWN_EVENT_TYPE.into();
        assert!(matches!(
            build_prompt(&untyped, GenStyle::ArgumentAware),
            Err(Error::MissingEventType(_))
        ));
        assert!(build_prompt(&untyped, GenStyle::Plain).is_ok());
    }

    fn two_step(final_passage: &str) -> String {
        format!(
            "Plan 1: swap.\n{STEP_1} x <mention> y </mention>\nPlan 2: smooth.\n{STEP_2} {final_passage}"
        )
    }

    #[test]
    fn completion_parsing() {
        let original = serialize_passage(&invasion(), true).unwrap();
        let good = "<Assailant> Spain </Assailant> <mention> invaded </mention> <Victim> Peru </Victim> in 1941";
        match parse_completion(&two_step(good), GenStyle::ArgumentAware, &original) {
            ParseOutcome::Accepted { segments, passage } => {
                assert_eq!(segments.plan_1.as_deref(), Some("swap."));
                assert_eq!(segments.passage_2, good);
                assert_eq!(passage.arguments.len(), 2);
            }
            other => panic!("{other:?}"),
        }
        let reason = |raw: &str| match parse_completion(raw, GenStyle::ArgumentAware, &original) {
            ParseOutcome::Rejected { reason, .. } => reason,
            other => panic!("{other:?}"),
        };
        assert_eq!(
            reason(&two_step("<Assailant> Spain </Assailant> <mention> invaded Peru")),
            "mention tags removed"
        );
        assert_eq!(reason(&two_step(&original)), "unchanged");
        assert_eq!(
            reason(&two_step("<Assailant> Spain <mention> invaded </mention> Peru")),
            "malformed: nested tags"
        );
        assert_eq!(
            reason(&two_step("Spain </Assailant> <mention> invaded </mention> Peru")),
            "unbalanced role tags"
        );
        assert_eq!(
            reason(&two_step("<Assailant> Spain </Assailant> <mention> invaded </mention> Peru")),
            "argument role tags removed"
        );
        assert!(reason(good).starts_with("malformed"));
    }

    #[test]
    fn plain_completion() {
        let original = serialize_passage(&invasion(), false).unwrap();
        match parse_completion(" Spain <mention> invaded </mention> Peru\n\nnotes", GenStyle::Plain, &original) {
            ParseOutcome::Accepted { segments, passage } => {
                assert_eq!(segments.passage_2, "Spain <mention> invaded </mention> Peru");
                assert!(segments.plan_1.is_none());
                assert_eq!(passage.mention, Span::single(1));
            }
            other => panic!("{other:?}"),
        }
    }
}
