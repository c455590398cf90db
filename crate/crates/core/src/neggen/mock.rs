//! Deterministic stand-in for a generation model: swaps argument values
//! for others of the same role.

use std::collections::BTreeMap;

use super::passage::{parse_tagged_passage, strip_role_tags, MENTION_TAG};
use crate::encoders::fnv1a64;
use crate::error::{Error, Result};
use crate::llm::CompletionClient;

const PASSAGE_PREFIX: &str = "Example 3:\nPassage: ";

/// Replaces each argument with another value from its role's pool.
///
/// For argument-aware prompts the tagged groups of the Example 3 passage
/// are rewritten and a two-step answer is returned. For plain prompts,
/// whose passage carries no role tags, any pool value found in the text is
/// swapped for another member of the same pool.
#[derive(Debug, Clone)]
pub struct ArgumentSwapClient {
    pools: BTreeMap<String, Vec<String>>,
    seed: u64,
}

impl ArgumentSwapClient {
    pub fn new(pools: BTreeMap<String, Vec<String>>, seed: u64) -> Self {
        Self { pools, seed }
    }

    fn pick(&self, role: &str, current: &str, salt: &str) -> Option<&str> {
        let pool = self.pools.get(role)?;
        let options: Vec<&String> = pool.iter().filter(|v| *v != current).collect();
        if options.is_empty() {
            return None;
        }
        let key = format!("{}\u{0}{role}\u{0}{current}\u{0}{salt}", self.seed);
        Some(options[(fnv1a64(key.as_bytes()) % options.len() as u64) as usize])
    }

    fn rewrite_tagged(&self, passage: &str) -> Option<String> {
        let parsed = parse_tagged_passage(passage).ok()?;
        let mut out: Vec<String> = Vec::new();
        let mut i = 0;
        while i < parsed.tokens.len() {
            if i == parsed.mention.start {
                out.push(format!("<{MENTION_TAG}>"));
                out.extend(parsed.tokens[i..=parsed.mention.end].iter().cloned());
                out.push(format!("</{MENTION_TAG}>"));
                i = parsed.mention.end + 1;
            } else if let Some(a) = parsed.arguments.iter().find(|a| a.span.start == i) {
                let current = parsed.tokens[a.span.start..=a.span.end].join(" ");
                let value = self.pick(&a.role, &current, passage).unwrap_or(&current);
                out.push(format!("<{}>", a.role));
                out.push(value.to_string());
                out.push(format!("</{}>", a.role));
                i = a.span.end + 1;
            } else {
                out.push(parsed.tokens[i].clone());
                i += 1;
            }
        }
        Some(out.join(" "))
    }

    fn rewrite_plain(&self, passage: &str) -> String {
        let mut found: Vec<(&str, &str)> = Vec::new();
        for (role, pool) in &self.pools {
            for v in pool {
                found.push((role, v));
            }
        }
        found.sort_by_key(|(_, v)| std::cmp::Reverse(v.len()));
        // Placeholders stop a replacement from being replaced again.
        let mut text = format!(" {passage} ");
        let mut swaps = Vec::new();
        for (role, v) in found {
            let needle = format!(" {v} ");
            if text.contains(&needle) {
                if let Some(new) = self.pick(role, v, passage) {
                    text = text.replacen(&needle, &format!(" \u{1}{}\u{1} ", swaps.len()), 1);
                    swaps.push(new);
                }
            }
        }
        for (i, new) in swaps.iter().enumerate() {
            text = text.replace(&format!("\u{1}{i}\u{1}"), new);
        }
        text.trim().to_string()
    }
}

fn example_passage(prompt: &str) -> Option<&str> {
    let start = prompt.rfind(PASSAGE_PREFIX)? + PASSAGE_PREFIX.len();
    let rest = &prompt[start..];
    Some(rest.split("\n\n").next().unwrap_or(rest).trim())
}

impl CompletionClient for ArgumentSwapClient {
    fn complete(&self, prompt: &str) -> Result<String> {
        let passage = example_passage(prompt).ok_or_else(|| Error::Client {
            message: "prompt has no Example 3 passage".into(),
            retryable: false,
        })?;
        if prompt.contains("Following Plan 2") {
            let step = self.rewrite_tagged(passage).unwrap_or_else(|| passage.to_string());
            Ok(format!(
                "Plan 1: Replace each tagged detail with another of the same role.\n\
                 Following Plan 1, we can generate this passage after Step 1: {step}\n\
                 Plan 2: Keep the rewritten passage as is.\n\
                 Following Plan 2, we can generate this passage after Step 2: {step}"
            ))
        } else {
            Ok(format!("New passage: {}", self.rewrite_plain(&strip_role_tags(passage))))
        }
    }
}
