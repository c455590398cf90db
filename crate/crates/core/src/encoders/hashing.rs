//! Deterministic hashing encoder.
//!
//! Each token key is hashed with 64-bit FNV-1a. The hash, mixed with the
//! encoder seed, seeds a SplitMix64 stream; Box–Muller turns consecutive
//! pairs of draws into Gaussian components, and the resulting vector is
//! scaled to unit length. A sequence embeds as the normalized sum of its
//! token vectors.

use super::{digest_json, normalize, Embedding, Encoder, EncoderCheckpoint};
use crate::error::{Error, Result};
use crate::token::Token;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME)
    })
}

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(state: u64) -> Self {
        Self { state }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashingEncoder {
    dim: usize,
    seed: u64,
}

pub fn hashing_encoder(dim: usize, seed: u64) -> Result<HashingEncoder> {
    if dim < 2 {
        return Err(Error::Config(format!("hashing encoder needs dim >= 2, got {dim}")));
    }
    Ok(HashingEncoder { dim, seed })
}

impl HashingEncoder {
    /// The unit vector assigned to one token.
    pub fn token_vector(&self, token: &Token) -> Vec<f64> {
        let h = fnv1a64(token.key().as_bytes());
        let mut rng = SplitMix64::new(self.seed.wrapping_mul(GOLDEN_GAMMA) ^ h);
        let mut v = Vec::with_capacity(self.dim + 1);
        while v.len() < self.dim {
            let u1 = 1.0 - rng.next_f64();
            let u2 = rng.next_f64();
            let r = (-2.0 * u1.ln()).sqrt();
            let theta = std::f64::consts::TAU * u2;
            v.push(r * theta.cos());
            v.push(r * theta.sin());
        }
        v.truncate(self.dim);
        normalize(v).expect("Gaussian draw is nonzero")
    }

    pub fn checkpoint(&self) -> EncoderCheckpoint {
        EncoderCheckpoint::Hashing {
            dim: self.dim,
            seed: self.seed,
        }
    }
}

impl Encoder for HashingEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, tokens: &[Token]) -> Result<Embedding> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut sum = vec![0.0; self.dim];
        for t in tokens {
            for (s, x) in sum.iter_mut().zip(self.token_vector(t)) {
                *s += x;
            }
        }
        Ok(Embedding(normalize(sum)?))
    }

    fn fingerprint(&self) -> String {
        digest_json(&self.checkpoint())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::dot;
    use crate::token::{words, Marker};

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn splitmix_reference_value() {
        // First output for state 0 of the reference SplitMix64.
        assert_eq!(SplitMix64::new(0).next_u64(), 0xe220_a839_7b1d_cdaf);
    }

    #[test]
    fn matches_reference_values() {
        // Computed independently with numpy (tests/oracles/hashing_oracle.py).
        let enc = hashing_encoder(16, 0).unwrap();
        let a = enc.token_vector(&Token::word("a"));
        for (x, want) in a.iter().zip([0.19429826763048927, -0.002292401837620922, -0.2456647314109761]) {
            assert!((x - want).abs() < 1e-12, "{x} vs {want}");
        }
        let ab = enc.encode(&words(&["a", "b"])).unwrap();
        let ac = enc.encode(&words(&["a", "c"])).unwrap();
        assert!((ab.dot(ac.as_slice()) - 0.3612044950198842).abs() < 1e-12);
    }

    #[test]
    fn deterministic_and_single_token_identity() {
        let enc = hashing_encoder(64, 7).unwrap();
        let ab = words(&["a", "b"]);
        assert_eq!(enc.encode(&ab).unwrap(), enc.encode(&ab).unwrap());
        let a = enc.encode(&words(&["a"])).unwrap();
        assert_eq!(a.0, enc.token_vector(&Token::word("a")));
        assert!((a.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_empty_and_small_dim() {
        let enc = hashing_encoder(8, 0).unwrap();
        assert!(matches!(enc.encode(&[]), Err(Error::EmptyInput)));
        assert!(hashing_encoder(1, 0).is_err());
    }

    #[test]
    fn markers_distinct_from_words() {
        let enc = hashing_encoder(64, 1).unwrap();
        let mut toks = words(&["[M_s]", "M_s", "invaded", "Germany", "the", "[SEP]"]);
        toks.extend(
            [
                Marker::MentionStart,
                Marker::MentionEnd,
                Marker::Sep,
                Marker::TitleSep,
                Marker::RoleStart("Victim".into()),
                Marker::RoleEnd("Victim".into()),
            ]
            .map(Token::Marker),
        );
        let vecs: Vec<_> = toks.iter().map(|t| enc.token_vector(t)).collect();
        for i in 0..vecs.len() {
            for j in i + 1..vecs.len() {
                assert!(dot(&vecs[i], &vecs[j]) < 0.99, "{:?} vs {:?}", toks[i], toks[j]);
            }
        }
    }
}
