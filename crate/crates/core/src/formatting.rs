//! Query-side input formats: mention-marked, entity-augmented and
//! argument-tagged sequences.
//!
//! Truncation keeps the marked mention and grows a window outward one atomic
//! unit at a time (a plain token, or a whole `[role_s] .. [role_e]` group).
//! The side with less context so far grows first; ties go left, which leaves
//! an odd leftover token on the left. A unit that no longer fits blocks its
//! side for good, so the window stays contiguous and distant groups are the
//! ones dropped.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extraction::{EventQuery, Span, TaggedQuery};
use crate::token::{Marker, Token};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NamedEntity {
    #[serde(flatten)]
    pub span: Span,
    #[serde(rename = "type")]
    pub entity_type: String,
}

impl NamedEntity {
    pub fn new(start: usize, end: usize, entity_type: impl Into<String>) -> Self {
        Self {
            span: Span::new(start, end),
            entity_type: entity_type.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatStyle {
    Blink,
    Evelink,
    Args,
}

impl fmt::Display for FormatStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FormatStyle::Blink => "blink",
            FormatStyle::Evelink => "evelink",
            FormatStyle::Args => "args",
        })
    }
}

impl FromStr for FormatStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blink" => Ok(FormatStyle::Blink),
            "evelink" => Ok(FormatStyle::Evelink),
            "args" => Ok(FormatStyle::Args),
            other => Err(Error::Config(format!("unknown format style {other:?}"))),
        }
    }
}

/// Formats a tagged query in `style`. The entity-augmented style reads the
/// entity annotations carried on the base query.
pub fn format_query(style: FormatStyle, query: &TaggedQuery, max_len: usize) -> Result<Vec<Token>> {
    match style {
        FormatStyle::Blink => format_blink(&query.base, max_len),
        FormatStyle::Evelink => format_evelink(&query.base, &query.base.entities, max_len),
        FormatStyle::Args => format_arguments(query, max_len),
    }
}

/// `x_1 .. [M_s] mention [M_e] .. x_l`, windowed to `max_len`.
pub fn format_blink(query: &EventQuery, max_len: usize) -> Result<Vec<Token>> {
    query.mention.check(query.tokens.len())?;
    window(&units(&query.tokens, query.mention, &[]), max_len)
}

/// The mention-marked window, `[SEP]`, then `[t_s] entity [t_e]` groups in
/// document order. Entity groups are dropped last-first when over budget.
pub fn format_evelink(
    query: &EventQuery,
    entities: &[NamedEntity],
    max_len: usize,
) -> Result<Vec<Token>> {
    for e in entities {
        e.span.check(query.tokens.len())?;
    }
    let mut out = format_blink(query, max_len.saturating_sub(1)).map_err(|e| match e {
        Error::BudgetTooSmall { required, .. } => Error::BudgetTooSmall {
            max_len,
            required: required + 1,
        },
        other => other,
    })?;
    out.push(Token::Marker(Marker::Sep));
    let mut ordered: Vec<&NamedEntity> = entities.iter().collect();
    ordered.sort_by_key(|e| e.span);
    for e in ordered {
        let group_len = e.span.len() + 2;
        if out.len() + group_len > max_len {
            break;
        }
        out.push(Token::Marker(Marker::TypeStart(e.entity_type.clone())));
        out.extend(
            query.tokens[e.span.start..=e.span.end]
                .iter()
                .map(|w| Token::word(w.as_str())),
        );
        out.push(Token::Marker(Marker::TypeEnd(e.entity_type.clone())));
    }
    Ok(out)
}

/// Inline argument tagging: every argument becomes `[role_s] x_arg [role_e]`
/// and the mention is marked as in [`format_blink`].
pub fn format_arguments(query: &TaggedQuery, max_len: usize) -> Result<Vec<Token>> {
    query.validate()?;
    let mut args = query.arguments.clone();
    args.sort_by_key(|a| a.span);
    let tagged: Vec<(Span, &str)> = args.iter().map(|a| (a.span, a.role.as_str())).collect();
    window(&units(&query.base.tokens, query.base.mention, &tagged), max_len)
}

/// Removes every marker token.
pub fn strip_markers(seq: &[Token]) -> Vec<Token> {
    seq.iter().filter(|t| !t.is_marker()).cloned().collect()
}

/// Atomic pieces of a marked sequence, split around the anchor (mention).
struct Units {
    /// Units before the mention, nearest first.
    left: Vec<Vec<Token>>,
    anchor: Vec<Token>,
    /// Units after the mention, nearest first.
    right: Vec<Vec<Token>>,
}

fn units(tokens: &[String], mention: Span, args: &[(Span, &str)]) -> Units {
    let word = |i: usize| Token::word(tokens[i].as_str());
    let mut left = Vec::new();
    let mut right = Vec::new();
    let mut anchor = Vec::new();
    let mut i = 0;
    let mut next_arg = 0;
    while i < tokens.len() {
        let unit = if i == mention.start {
            anchor.push(Token::Marker(Marker::MentionStart));
            anchor.extend((mention.start..=mention.end).map(word));
            anchor.push(Token::Marker(Marker::MentionEnd));
            i = mention.end + 1;
            continue;
        } else if next_arg < args.len() && args[next_arg].0.start == i {
            let (span, role) = args[next_arg];
            next_arg += 1;
            let mut group = vec![Token::Marker(Marker::RoleStart(role.to_string()))];
            group.extend((span.start..=span.end).map(word));
            group.push(Token::Marker(Marker::RoleEnd(role.to_string())));
            i = span.end + 1;
            group
        } else {
            i += 1;
            vec![word(i - 1)]
        };
        if anchor.is_empty() {
            left.push(unit);
        } else {
            right.push(unit);
        }
    }
    left.reverse();
    Units {
        left,
        anchor,
        right,
    }
}

fn window(units: &Units, max_len: usize) -> Result<Vec<Token>> {
    if max_len < units.anchor.len() {
        return Err(Error::BudgetTooSmall {
            max_len,
            required: units.anchor.len(),
        });
    }
    let mut budget = max_len - units.anchor.len();
    let (mut li, mut ri) = (0, 0);
    let (mut used_left, mut used_right) = (0, 0);
    loop {
        let left_fits = units.left.get(li).is_some_and(|u| u.len() <= budget);
        let right_fits = units.right.get(ri).is_some_and(|u| u.len() <= budget);
        let take_left = match (left_fits, right_fits) {
            (false, false) => break,
            (true, false) => true,
            (false, true) => false,
            (true, true) => used_left <= used_right,
        };
        if take_left {
            let n = units.left[li].len();
            budget -= n;
            used_left += n;
            li += 1;
        } else {
            let n = units.right[ri].len();
            budget -= n;
            used_right += n;
            ri += 1;
        }
    }
    let mut out = Vec::with_capacity(max_len - budget);
    for u in units.left[..li].iter().rev() {
        out.extend(u.iter().cloned());
    }
    out.extend(units.anchor.iter().cloned());
    for u in &units.right[..ri] {
        out.extend(u.iter().cloned());
    }
    Ok(out)
}
