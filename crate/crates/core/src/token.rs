//! Tokens and atomic marker tokens.
//!
//! Corpus text is split on whitespace into [`Token::Word`]s. Markers are a
//! separate variant, so no corpus token can ever be mistaken for one, and
//! every encoder sees a marker as a single atomic unit.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Prefix that no whitespace-split word can carry; used to keep marker keys
/// disjoint from word keys.
const MARKER_KEY_PREFIX: char = '\u{0}';

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Marker {
    MentionStart,
    MentionEnd,
    Sep,
    TitleSep,
    Nil,
    RoleStart(String),
    RoleEnd(String),
    TypeStart(String),
    TypeEnd(String),
}

impl Marker {
    fn key_body(&self) -> String {
        match self {
            Marker::MentionStart => "M_s".into(),
            Marker::MentionEnd => "M_e".into(),
            Marker::Sep => "SEP".into(),
            Marker::TitleSep => "TITLE_SEP".into(),
            Marker::Nil => "NIL".into(),
            Marker::RoleStart(r) => format!("role:{r}_s"),
            Marker::RoleEnd(r) => format!("role:{r}_e"),
            Marker::TypeStart(t) => format!("type:{t}_s"),
            Marker::TypeEnd(t) => format!("type:{t}_e"),
        }
    }
}

impl fmt::Display for Marker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Marker::MentionStart => f.write_str("[M_s]"),
            Marker::MentionEnd => f.write_str("[M_e]"),
            Marker::Sep => f.write_str("[SEP]"),
            Marker::TitleSep => f.write_str("[TITLE_SEP]"),
            Marker::Nil => f.write_str("[NIL]"),
            Marker::RoleStart(r) | Marker::TypeStart(r) => write!(f, "[{r}_s]"),
            Marker::RoleEnd(r) | Marker::TypeEnd(r) => write!(f, "[{r}_e]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Token {
    Word(String),
    Marker(Marker),
}

impl Token {
    pub fn word(s: impl Into<String>) -> Self {
        Token::Word(s.into())
    }

    pub fn is_marker(&self) -> bool {
        matches!(self, Token::Marker(_))
    }

    pub fn as_word(&self) -> Option<&str> {
        match self {
            Token::Word(w) => Some(w),
            Token::Marker(_) => None,
        }
    }

    /// Stable lookup key. Word keys are the word itself; marker keys start
    /// with a NUL character and encode the marker kind.
    pub fn key(&self) -> String {
        match self {
            Token::Word(w) => w.clone(),
            Token::Marker(m) => format!("{MARKER_KEY_PREFIX}{}", m.key_body()),
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Word(w) => f.write_str(w),
            Token::Marker(m) => m.fmt(f),
        }
    }
}

impl From<Marker> for Token {
    fn from(m: Marker) -> Self {
        Token::Marker(m)
    }
}

/// Whitespace tokenizer.
pub fn tokenize(text: &str) -> Vec<Token> {
    text.split_whitespace().map(Token::word).collect()
}

pub fn words<S: AsRef<str>>(items: &[S]) -> Vec<Token> {
    items.iter().map(|s| Token::word(s.as_ref())).collect()
}

/// Renders tokens separated by single spaces.
pub fn render(tokens: &[Token]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&t.to_string());
    }
    out
}

pub fn render_strings(tokens: &[Token]) -> Vec<String> {
    tokens.iter().map(ToString::to_string).collect()
}
