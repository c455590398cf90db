//! Text-completion client adapters. No vendor is built in; callers plug in
//! their own client, a scripted mock, or a replay file of saved completions.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub trait CompletionClient: Send + Sync {
    /// Returns the completion for `prompt`. Transport failures should be
    /// reported as retryable [`Error::Client`] values.
    fn complete(&self, prompt: &str) -> Result<String>;
}

/// Hex SHA-256 of a prompt, the key used by [`ReplayClient`].
pub fn prompt_digest(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Client backed by a closure.
pub struct ScriptedClient<F> {
    respond: F,
}

impl<F> ScriptedClient<F>
where
    F: Fn(&str) -> Result<String> + Send + Sync,
{
    pub fn new(respond: F) -> Self {
        Self { respond }
    }
}

impl<F> CompletionClient for ScriptedClient<F>
where
    F: Fn(&str) -> Result<String> + Send + Sync,
{
    fn complete(&self, prompt: &str) -> Result<String> {
        (self.respond)(prompt)
    }
}

/// Fails with a retryable error for the first `failures` calls, then
/// delegates.
pub struct FlakyClient<C> {
    inner: C,
    remaining: Mutex<usize>,
}

impl<C: CompletionClient> FlakyClient<C> {
    pub fn new(inner: C, failures: usize) -> Self {
        Self {
            inner,
            remaining: Mutex::new(failures),
        }
    }
}

impl<C: CompletionClient> CompletionClient for FlakyClient<C> {
    fn complete(&self, prompt: &str) -> Result<String> {
        {
            let mut left = self.remaining.lock().expect("lock poisoned");
            if *left > 0 {
                *left -= 1;
                return Err(Error::Client {
                    message: "simulated transport failure".into(),
                    retryable: true,
                });
            }
        }
        self.inner.complete(prompt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub prompt_sha256: String,
    pub completion: String,
}

/// Serves completions saved from an earlier run, keyed by prompt digest.
#[derive(Debug, Clone, Default)]
pub struct ReplayClient {
    completions: HashMap<String, String>,
}

impl ReplayClient {
    pub fn new(records: Vec<ReplayRecord>) -> Self {
        Self {
            completions: records
                .into_iter()
                .map(|r| (r.prompt_sha256, r.completion))
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::new(crate::io::read_jsonl(path)?))
    }
}

impl CompletionClient for ReplayClient {
    fn complete(&self, prompt: &str) -> Result<String> {
        let key = prompt_digest(prompt);
        self.completions
            .get(&key)
            .cloned()
            .ok_or_else(|| Error::Client {
                message: format!("no saved completion for prompt {key}"),
                retryable: false,
            })
    }
}

/// Calls `client`, retrying retryable failures up to `retries` extra times.
pub fn complete_with_retry(
    client: &dyn CompletionClient,
    prompt: &str,
    retries: usize,
) -> Result<String> {
    let mut attempt = 0;
    loop {
        match client.complete(prompt) {
            Err(e) if e.is_retryable() && attempt < retries => attempt += 1,
            other => return other,
        }
    }
}
