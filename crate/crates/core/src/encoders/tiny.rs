//! Trainable mean-pooled bag encoder.
//!
//! `encode(s) = normalize(W · mean(E[s]) + b)`. All parameters live in one
//! flat vector (table, then `W` row-major, then `b`) so optimizers and
//! finite-difference probes can treat them uniformly.

use crate::rng::{seeded, standard_normal};

use super::{digest_json, norm, Embedding, Encoder, EncoderCheckpoint, Vocab};
use crate::error::{Error, Result};
use crate::token::Token;

#[derive(Debug, Clone, PartialEq)]
pub struct TinyEncoder {
    vocab: Vocab,
    dim: usize,
    seed: u64,
    params: Vec<f64>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    pub ids: Vec<usize>,
    pub pooled: Vec<f64>,
    pub out: Vec<f64>,
    pub pre_norm: f64,
}

pub fn tiny_encoder(vocab: Vocab, dim: usize, seed: u64) -> TinyEncoder {
    TinyEncoder::new(vocab, dim, seed)
}

impl TinyEncoder {
    pub fn new(vocab: Vocab, dim: usize, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let v = vocab.len();
        let mut params = Vec::with_capacity(v * dim + dim * dim + dim);
        for _ in 0..v * dim {
            params.push(standard_normal(&mut rng));
        }
        let w_scale = 1.0 / (dim as f64).sqrt();
        for i in 0..dim {
            for j in 0..dim {
                let eye = if i == j { 1.0 } else { 0.0 };
                params.push(eye + 0.1 * w_scale * standard_normal(&mut rng));
            }
        }
        params.extend(std::iter::repeat_n(0.0, dim));
        Self {
            vocab,
            dim,
            seed,
            params,
        }
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn w_offset(&self) -> usize {
        self.vocab.len() * self.dim
    }

    fn b_offset(&self) -> usize {
        self.w_offset() + self.dim * self.dim
    }

    pub fn forward(&self, tokens: &[Token]) -> Result<EncoderCache> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput);
        }
        self.forward_ids(self.vocab.ids(tokens))
    }

    pub fn forward_ids(&self, ids: Vec<usize>) -> Result<EncoderCache> {
        if ids.is_empty() {
            return Err(Error::EmptyInput);
        }
        let d = self.dim;
        let mut pooled = vec![0.0; d];
        for &id in &ids {
            let row = &self.params[id * d..(id + 1) * d];
            for (p, x) in pooled.iter_mut().zip(row) {
                *p += x;
            }
        }
        let inv = 1.0 / ids.len() as f64;
        pooled.iter_mut().for_each(|p| *p *= inv);

        let w = &self.params[self.w_offset()..self.b_offset()];
        let b = &self.params[self.b_offset()..];
        let mut z: Vec<f64> = (0..d)
            .map(|i| b[i] + super::dot(&w[i * d..(i + 1) * d], &pooled))
            .collect();
        let n = norm(&z);
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::NonFinite(format!("pre-normalization norm {n}")));
        }
        z.iter_mut().for_each(|x| *x /= n);
        Ok(EncoderCache {
            ids,
            pooled,
            out: z,
            pre_norm: n,
        })
    }

    /// Accumulates into `grad` the gradient of a loss whose derivative with
    /// respect to the encoder output is `g_out`.
    pub fn backward(&self, cache: &EncoderCache, g_out: &[f64], grad: &mut [f64]) {
        let d = self.dim;
        let proj = super::dot(&cache.out, g_out);
        let dz: Vec<f64> = (0..d)
            .map(|i| (g_out[i] - cache.out[i] * proj) / cache.pre_norm)
            .collect();
        let (w_off, b_off) = (self.w_offset(), self.b_offset());
        let w = &self.params[w_off..b_off];
        let mut dpooled = vec![0.0; d];
        for i in 0..d {
            if dz[i] == 0.0 {
                continue;
            }
            let row = &w[i * d..(i + 1) * d];
            let grow = &mut grad[w_off + i * d..w_off + (i + 1) * d];
            for j in 0..d {
                grow[j] += dz[i] * cache.pooled[j];
                dpooled[j] += dz[i] * row[j];
            }
            grad[b_off + i] += dz[i];
        }
        let inv = 1.0 / cache.ids.len() as f64;
        for &id in &cache.ids {
            let grow = &mut grad[id * d..(id + 1) * d];
            for j in 0..d {
                grow[j] += dpooled[j] * inv;
            }
        }
    }

    pub fn checkpoint(&self) -> EncoderCheckpoint {
        EncoderCheckpoint::Tiny {
            dim: self.dim,
            seed: self.seed,
            vocab: self.vocab.keys().to_vec(),
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: EncoderCheckpoint) -> Result<Self> {
        let EncoderCheckpoint::Tiny {
            dim,
            seed,
            vocab,
            params,
        } = ckpt
        else {
            return Err(Error::Checkpoint("not a tiny-encoder checkpoint".into()));
        };
        let vocab = Vocab::from_keys(vocab)?;
        let expected = vocab.len() * dim + dim * dim + dim;
        if params.len() != expected {
            return Err(Error::Checkpoint(format!(
                "expected {expected} parameters, found {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        Ok(Self {
            vocab,
            dim,
            seed,
            params,
        })
    }
}

impl Encoder for TinyEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, tokens: &[Token]) -> Result<Embedding> {
        Ok(Embedding(self.forward(tokens)?.out))
    }

    fn fingerprint(&self) -> String {
        digest_json(&self.checkpoint())
    }

    fn is_trainable(&self) -> bool {
        true
    }
}
