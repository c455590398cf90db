//! Knowledge-base entries, loading and candidate-side serialization.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::token::{tokenize, Marker, Token};

/// The reserved out-of-KB label.
pub const NIL: &str = "NIL";

/// A gold label or prediction: a KB id, or NIL.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Nil,
    Entry(String),
}

impl Label {
    pub fn entry(id: impl Into<String>) -> Self {
        let id = id.into();
        if id == NIL {
            Label::Nil
        } else {
            Label::Entry(id)
        }
    }

    pub fn is_nil(&self) -> bool {
        matches!(self, Label::Nil)
    }

    pub fn as_entry(&self) -> Option<&str> {
        match self {
            Label::Entry(id) => Some(id),
            Label::Nil => None,
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            Label::Nil => NIL,
            Label::Entry(id) => id,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(Label::entry(s))
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(Label::entry(s))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbEntry {
    pub id: String,
    pub title: String,
    pub description: String,
}

impl KbEntry {
    pub fn new(
        id: impl Into<String>,
        title: impl Into<String>,
        description: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            title: title.into(),
            description: description.into(),
        }
    }
}

/// An immutable, ordered collection of entries with unique ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeBase {
    entries: Vec<KbEntry>,
    by_id: HashMap<String, usize>,
}

impl KnowledgeBase {
    /// Validates and indexes `entries`, preserving their order.
    pub fn from_entries(entries: Vec<KbEntry>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            validate_entry(e, i + 1)?;
            if by_id.insert(e.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(e.id.clone()));
            }
        }
        Ok(Self { entries, by_id })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[KbEntry] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = &KbEntry> {
        self.entries.iter()
    }

    pub fn get(&self, id: &str) -> Option<&KbEntry> {
        self.position(id).map(|i| &self.entries[i])
    }

    /// Position of `id` in file order.
    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    /// A copy of this KB with the given ids removed; order of the rest is kept.
    pub fn without<'a, I: IntoIterator<Item = &'a str>>(&self, ids: I) -> Self {
        let drop: std::collections::HashSet<&str> = ids.into_iter().collect();
        let kept = self
            .entries
            .iter()
            .filter(|e| !drop.contains(e.id.as_str()))
            .cloned()
            .collect();
        Self::from_entries(kept).expect("subset of a valid KB is valid")
    }

    /// Writes the KB as line-delimited JSON.
    pub fn to_jsonl(&self) -> String {
        crate::io::to_jsonl_string(&self.entries).expect("entries serialize")
    }
}

fn validate_entry(e: &KbEntry, line: usize) -> Result<()> {
    if e.id == NIL {
        return Err(Error::ReservedId { line });
    }
    if e.id.is_empty() {
        return Err(Error::InvalidEntry {
            line,
            message: "empty id".into(),
        });
    }
    if e.title.trim().is_empty() {
        return Err(Error::InvalidEntry {
            line,
            message: format!("entry {:?} has an empty title", e.id),
        });
    }
    Ok(())
}

/// Loads a KB file with one `{id, title, description}` object per line.
pub fn load_kb(path: &Path) -> Result<KnowledgeBase> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_kb(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_kb<R: BufRead>(reader: R) -> Result<KnowledgeBase> {
    let mut entries = Vec::new();
    let mut by_id = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io("<stream>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: KbEntry = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            line: line_no,
            message: e.to_string(),
        })?;
        validate_entry(&entry, line_no)?;
        if by_id.insert(entry.id.clone(), entries.len()).is_some() {
            return Err(Error::DuplicateId(entry.id));
        }
        entries.push(entry);
    }
    Ok(KnowledgeBase { entries, by_id })
}

/// `title [TITLE_SEP] description`, whitespace-tokenized and truncated from
/// the right to `max_len` tokens.
pub fn candidate_text(entry: &KbEntry, max_len: usize) -> Vec<Token> {
    let mut out = tokenize(&entry.title);
    out.push(Token::Marker(Marker::TitleSep));
    out.extend(tokenize(&entry.description));
    out.truncate(max_len);
    out
}
