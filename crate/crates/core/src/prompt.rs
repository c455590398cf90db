//! Versioned prompt templates and placeholder substitution.
//!
//! Templates use `{name}` placeholders (the empty name `{}` included) and
//! `{{` / `}}` for literal braces.

use std::collections::BTreeMap;

use serde::Deserialize;

use crate::error::{Error, Result};

pub const GENERATION_ARGUMENT_AWARE: &str =
    include_str!("../templates/generation_argument_aware.v1.txt");
pub const GENERATION_PLAIN: &str = include_str!("../templates/generation_plain.v1.txt");
pub const RERANK: &str = include_str!("../templates/rerank.v1.txt");
pub const RERANK_NIL: &str = include_str!("../templates/rerank_nil.v1.txt");
const EXEMPLARS_JSON: &str = include_str!("../templates/exemplars.v1.json");

pub const TEMPLATE_VERSION: u32 = 1;

/// Fills `template`; every placeholder must have a value.
pub fn fill(template: &str, values: &BTreeMap<&str, String>) -> Result<String> {
    let mut out = String::with_capacity(template.len() + 256);
    let mut chars = template.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        match c {
            '{' if matches!(chars.peek(), Some((_, '{'))) => {
                chars.next();
                out.push('{');
            }
            '}' if matches!(chars.peek(), Some((_, '}'))) => {
                chars.next();
                out.push('}');
            }
            '{' => {
                let rest = &template[i + 1..];
                let close = rest
                    .find('}')
                    .ok_or_else(|| Error::Template(format!("unclosed placeholder at byte {i}")))?;
                let name = &rest[..close];
                let value = values
                    .get(name)
                    .ok_or_else(|| Error::Template(format!("no value for placeholder {{{name}}}")))?;
                out.push_str(value);
                for _ in 0..=close {
                    chars.next();
                }
            }
            '}' => return Err(Error::Template(format!("stray '}}' at byte {i}"))),
            _ => out.push(c),
        }
    }
    Ok(out)
}

/// One few-shot demonstration for the generation prompts. Passages carry
/// `<mention>` and `<Role>` tags; the plain style strips the role tags.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Exemplar {
    pub passage: String,
    pub event_type: String,
    pub plan_1: String,
    pub step_1: String,
    pub plan_2: String,
    pub step_2: String,
}

pub fn exemplars() -> Vec<Exemplar> {
    serde_json::from_str(EXEMPLARS_JSON).expect("bundled exemplars parse")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_handles_braces_and_names() {
        let mut v = BTreeMap::new();
        v.insert("", "P".to_string());
        v.insert("event type", "Attack".to_string());
        assert_eq!(
            fill("a {{x}} {} \"{event type}\"", &v).unwrap(),
            "a {x} P \"Attack\""
        );
        assert!(fill("{missing}", &v).is_err());
        assert!(fill("{open", &v).is_err());
    }

    #[test]
    fn bundled_templates_have_expected_placeholders() {
        let mut v = BTreeMap::new();
        for k in ["Example 1", "Example 2", "", "event mention text span", "event type", "actual input"] {
            v.insert(k, String::new());
        }
        for t in [GENERATION_ARGUMENT_AWARE, GENERATION_PLAIN, RERANK, RERANK_NIL] {
            fill(t, &v).unwrap();
        }
        assert_eq!(exemplars().len(), 2);
    }
}
