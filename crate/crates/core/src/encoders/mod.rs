//! Text-encoder adapters.
//!
//! Every adapter maps a token sequence to an L2-normalized [`Embedding`], so
//! dot products between embeddings are cosines.

mod hashing;
mod tiny;

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use hashing::{fnv1a64, hashing_encoder, HashingEncoder, SplitMix64};
pub use tiny::{tiny_encoder, EncoderCache, TinyEncoder};

use crate::error::{Error, Result};
use crate::token::{Marker, Token};

/// Default embedding width at desk scale.
pub const DEFAULT_DIM: usize = 64;

pub const CHECKPOINT_FORMAT: &str = "arglink-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn scaled(&self, factor: f64) -> Embedding {
        Embedding(self.0.iter().map(|x| x * factor).collect())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Scales `v` to unit length.
pub(crate) fn normalize(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let n = norm(&v);
    if !(n.is_finite() && n > 0.0) {
        return Err(Error::NonFinite(format!("embedding norm {n}")));
    }
    for x in &mut v {
        *x /= n;
    }
    Ok(v)
}

/// Encoder contract shared by retrieval, training and indexing.
pub trait Encoder: Send + Sync {
    fn dim(&self) -> usize;

    fn encode(&self, tokens: &[Token]) -> Result<Embedding>;

    /// Digest identifying the parameters that produced embeddings.
    fn fingerprint(&self) -> String;

    fn is_trainable(&self) -> bool {
        false
    }
}

/// Token vocabulary with a reserved out-of-vocabulary slot at index 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    keys: Vec<String>,
    index: HashMap<String, usize>,
}

pub const OOV_KEY: &str = "\u{0}OOV";

impl Vocab {
    /// Builds a sorted vocabulary from sequences, always including the fixed
    /// markers and the OOV slot.
    pub fn build<'a, I>(sequences: I) -> Self
    where
        I: IntoIterator<Item = &'a [Token]>,
    {
        let mut keys: BTreeSet<String> = [
            Marker::MentionStart,
            Marker::MentionEnd,
            Marker::Sep,
            Marker::TitleSep,
            Marker::Nil,
        ]
        .into_iter()
        .map(|m| Token::Marker(m).key())
        .collect();
        for seq in sequences {
            keys.extend(seq.iter().map(Token::key));
        }
        keys.remove(OOV_KEY);
        let mut all = vec![OOV_KEY.to_string()];
        all.extend(keys);
        Self::from_keys(all).expect("built vocabulary is well-formed")
    }

    pub fn from_keys(keys: Vec<String>) -> Result<Self> {
        if keys.first().map(String::as_str) != Some(OOV_KEY) {
            return Err(Error::Checkpoint("vocabulary must start with the OOV slot".into()));
        }
        let mut index = HashMap::with_capacity(keys.len());
        for (i, k) in keys.iter().enumerate() {
            if index.insert(k.clone(), i).is_some() {
                return Err(Error::Checkpoint(format!("duplicate vocabulary key {k:?}")));
            }
        }
        Ok(Self { keys, index })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn id(&self, token: &Token) -> usize {
        self.index.get(&token.key()).copied().unwrap_or(0)
    }

    pub fn ids(&self, tokens: &[Token]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }
}

/// Serialized encoder parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderCheckpoint {
    Hashing {
        dim: usize,
        seed: u64,
    },
    Tiny {
        dim: usize,
        seed: u64,
        vocab: Vec<String>,
        params: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointFile<T> {
    format: String,
    version: u32,
    #[serde(flatten)]
    body: T,
}

/// Serializes a checkpoint body with the versioned envelope.
pub fn checkpoint_to_json<T: Serialize + Clone>(body: &T) -> Result<String> {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        body: body.clone(),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn checkpoint_from_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    let file: CheckpointFile<T> = serde_json::from_str(text)?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("unknown format {:?}", file.format)));
    }
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {} (expected {CHECKPOINT_VERSION})",
            file.version
        )));
    }
    Ok(file.body)
}

/// Any encoder that can be restored from a checkpoint.
#[derive(Debug, Clone)]
pub enum AnyEncoder {
    Hashing(HashingEncoder),
    Tiny(TinyEncoder),
}

impl AnyEncoder {
    pub fn from_checkpoint(ckpt: EncoderCheckpoint) -> Result<Self> {
        match ckpt {
            EncoderCheckpoint::Hashing { dim, seed } => {
                Ok(AnyEncoder::Hashing(hashing_encoder(dim, seed)?))
            }
            c @ EncoderCheckpoint::Tiny { .. } => Ok(AnyEncoder::Tiny(TinyEncoder::from_checkpoint(c)?)),
        }
    }

    pub fn checkpoint(&self) -> EncoderCheckpoint {
        match self {
            AnyEncoder::Hashing(h) => h.checkpoint(),
            AnyEncoder::Tiny(t) => t.checkpoint(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(checkpoint_from_json(&text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        checkpoint_to_json(&self.checkpoint())
    }
}

impl Encoder for AnyEncoder {
    fn dim(&self) -> usize {
        match self {
            AnyEncoder::Hashing(h) => h.dim(),
            AnyEncoder::Tiny(t) => t.dim(),
        }
    }

    fn encode(&self, tokens: &[Token]) -> Result<Embedding> {
        match self {
            AnyEncoder::Hashing(h) => h.encode(tokens),
            AnyEncoder::Tiny(t) => t.encode(tokens),
        }
    }

    fn fingerprint(&self) -> String {
        match self {
            AnyEncoder::Hashing(h) => h.fingerprint(),
            AnyEncoder::Tiny(t) => t.fingerprint(),
        }
    }

    fn is_trainable(&self) -> bool {
        matches!(self, AnyEncoder::Tiny(_))
    }
}

pub(crate) fn digest_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("checkpoint serializes");
    hex::encode(Sha256::digest(&bytes))
}
