//! Trainable bag-of-tokens cross-scorer with a learned NIL vector.
//!
//! For a query `q` and candidate `c`, with `a = mean(E[q])` and
//! `b = mean(E[c])` (or `b = nil` for the NIL option):
//!
//! ```text
//! f = [a; b; a ⊙ b]
//! S(q, c) = v · tanh(W f + bias)
//! ```
//!
//! The parameter vector is laid out as: token table, NIL vector, `W`
//! (row-major, `hidden × 3·dim`), bias, `v`.

use serde::{Deserialize, Serialize};

use super::CrossScorer;
use crate::encoders::{dot, Vocab};
use crate::error::{Error, Result};
use crate::rng::{seeded, standard_normal};
use crate::token::Token;

#[derive(Debug, Clone, PartialEq)]
pub struct TinyCrossScorer {
    vocab: Vocab,
    dim: usize,
    hidden: usize,
    seed: u64,
    params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename = "tiny_cross")]
pub struct CrossCheckpoint {
    pub dim: usize,
    pub hidden: usize,
    pub seed: u64,
    pub vocab: Vec<String>,
    pub params: Vec<f64>,
}

/// Forward values of one (query, option) pair.
#[derive(Debug, Clone)]
pub struct PairCache {
    /// `None` for the NIL option.
    pub candidate_ids: Option<Vec<usize>>,
    pub b: Vec<f64>,
    pub features: Vec<f64>,
    pub hidden: Vec<f64>,
    pub score: f64,
}

pub fn tiny_cross_scorer(vocab: Vocab, dim: usize, hidden: usize, seed: u64) -> TinyCrossScorer {
    TinyCrossScorer::new(vocab, dim, hidden, seed)
}

impl TinyCrossScorer {
    pub fn new(vocab: Vocab, dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let v = vocab.len();
        let total = v * dim + dim + hidden * 3 * dim + hidden + hidden;
        let mut params = Vec::with_capacity(total);
        for _ in 0..(v + 1) * dim {
            params.push(standard_normal(&mut rng));
        }
        let w_scale = 1.0 / ((3 * dim) as f64).sqrt();
        for _ in 0..hidden * 3 * dim {
            params.push(w_scale * standard_normal(&mut rng));
        }
        params.extend(std::iter::repeat_n(0.0, hidden));
        let v_scale = 1.0 / (hidden as f64).sqrt();
        for _ in 0..hidden {
            params.push(v_scale * standard_normal(&mut rng));
        }
        Self {
            vocab,
            dim,
            hidden,
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

    fn nil_offset(&self) -> usize {
        self.vocab.len() * self.dim
    }

    fn w_offset(&self) -> usize {
        self.nil_offset() + self.dim
    }

    fn bias_offset(&self) -> usize {
        self.w_offset() + self.hidden * 3 * self.dim
    }

    fn v_offset(&self) -> usize {
        self.bias_offset() + self.hidden
    }

    pub fn nil_vector(&self) -> &[f64] {
        &self.params[self.nil_offset()..self.w_offset()]
    }

    fn pool(&self, ids: &[usize]) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; d];
        for &id in ids {
            for (o, x) in out.iter_mut().zip(&self.params[id * d..(id + 1) * d]) {
                *o += x;
            }
        }
        let inv = 1.0 / ids.len() as f64;
        out.iter_mut().for_each(|x| *x *= inv);
        out
    }

    /// Pooled query representation.
    pub fn query_rep(&self, query: &[Token]) -> Result<(Vec<usize>, Vec<f64>)> {
        if query.is_empty() {
            return Err(Error::EmptyInput);
        }
        let ids = self.vocab.ids(query);
        let a = self.pool(&ids);
        Ok((ids, a))
    }

    /// Scores one option; `candidate = None` selects NIL.
    pub fn forward_pair(&self, a: &[f64], candidate: Option<&[Token]>) -> Result<PairCache> {
        let d = self.dim;
        let (candidate_ids, b) = match candidate {
            Some([]) => return Err(Error::EmptyInput),
            Some(tokens) => {
                let ids = self.vocab.ids(tokens);
                let b = self.pool(&ids);
                (Some(ids), b)
            }
            None => (None, self.nil_vector().to_vec()),
        };
        let mut features = Vec::with_capacity(3 * d);
        features.extend_from_slice(a);
        features.extend_from_slice(&b);
        features.extend(a.iter().zip(&b).map(|(x, y)| x * y));

        let w = &self.params[self.w_offset()..self.bias_offset()];
        let bias = &self.params[self.bias_offset()..self.v_offset()];
        let v = &self.params[self.v_offset()..];
        let hidden: Vec<f64> = (0..self.hidden)
            .map(|j| (bias[j] + dot(&w[j * 3 * d..(j + 1) * 3 * d], &features)).tanh())
            .collect();
        let score = dot(v, &hidden);
        if !score.is_finite() {
            return Err(Error::NonFinite(format!("cross score {score}")));
        }
        Ok(PairCache {
            candidate_ids,
            b,
            features,
            hidden,
            score,
        })
    }

    /// Backpropagates `d_score` through one pair. Parameter gradients are
    /// added to `grad`; the gradient with respect to the pooled query
    /// representation is added to `d_query` for the caller to distribute.
    pub fn backward_pair(
        &self,
        a: &[f64],
        cache: &PairCache,
        d_score: f64,
        grad: &mut [f64],
        d_query: &mut [f64],
    ) {
        let d = self.dim;
        let (w_off, bias_off, v_off) = (self.w_offset(), self.bias_offset(), self.v_offset());
        let mut d_features = vec![0.0; 3 * d];
        for j in 0..self.hidden {
            let h = cache.hidden[j];
            grad[v_off + j] += d_score * h;
            let d_pre = d_score * self.params[v_off + j] * (1.0 - h * h);
            if d_pre == 0.0 {
                continue;
            }
            grad[bias_off + j] += d_pre;
            let row = w_off + j * 3 * d;
            for i in 0..3 * d {
                grad[row + i] += d_pre * cache.features[i];
                d_features[i] += d_pre * self.params[row + i];
            }
        }
        let mut d_b = vec![0.0; d];
        for i in 0..d {
            d_query[i] += d_features[i] + d_features[2 * d + i] * cache.b[i];
            d_b[i] = d_features[d + i] + d_features[2 * d + i] * a[i];
        }
        match &cache.candidate_ids {
            Some(ids) => self.spread(ids, &d_b, grad),
            None => {
                let off = self.nil_offset();
                for i in 0..d {
                    grad[off + i] += d_b[i];
                }
            }
        }
    }

    /// Distributes a pooled-representation gradient over token rows.
    pub fn spread(&self, ids: &[usize], d_pooled: &[f64], grad: &mut [f64]) {
        let d = self.dim;
        let inv = 1.0 / ids.len() as f64;
        for &id in ids {
            for i in 0..d {
                grad[id * d + i] += d_pooled[i] * inv;
            }
        }
    }

    pub fn checkpoint(&self) -> CrossCheckpoint {
        CrossCheckpoint {
            dim: self.dim,
            hidden: self.hidden,
            seed: self.seed,
            vocab: self.vocab.keys().to_vec(),
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(c: CrossCheckpoint) -> Result<Self> {
        let vocab = Vocab::from_keys(c.vocab)?;
        let expected = (vocab.len() + 1) * c.dim + c.hidden * 3 * c.dim + 2 * c.hidden;
        if c.params.len() != expected {
            return Err(Error::Checkpoint(format!(
                "expected {expected} cross-scorer parameters, found {}",
                c.params.len()
            )));
        }
        if c.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        Ok(Self {
            vocab,
            dim: c.dim,
            hidden: c.hidden,
            seed: c.seed,
            params: c.params,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        crate::encoders::checkpoint_to_json(&self.checkpoint())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_checkpoint(crate::encoders::checkpoint_from_json(text)?)
    }
}

impl CrossScorer for TinyCrossScorer {
    fn score_all(&self, query: &[Token], candidates: &[Vec<Token>]) -> Result<Vec<f64>> {
        let (_, a) = self.query_rep(query)?;
        let mut out = Vec::with_capacity(candidates.len() + 1);
        out.push(self.forward_pair(&a, None)?.score);
        for c in candidates {
            out.push(self.forward_pair(&a, Some(c))?.score);
        }
        Ok(out)
    }

    fn fingerprint(&self) -> String {
        crate::encoders::digest_json(&self.checkpoint())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::token::words;

    fn scorer() -> TinyCrossScorer {
        let seqs = [words(&["a", "b", "c", "d"])];
        let vocab = Vocab::build(seqs.iter().map(Vec::as_slice));
        tiny_cross_scorer(vocab, 6, 5, 11)
    }

    #[test]
    fn nil_score_ignores_candidates() {
        let s = scorer();
        let q = words(&["a", "b"]);
        let one = s.score_all(&q, &[words(&["c"])]).unwrap();
        let two = s.score_all(&q, &[words(&["d"]), words(&["c", "a"])]).unwrap();
        assert_eq!(one[0], two[0]);
        assert_eq!(one.len(), 2);
        assert_eq!(two.len(), 3);
    }

    #[test]
    fn permutation_permutes_scores() {
        let s = scorer();
        let q = words(&["a", "c"]);
        let cs = [words(&["a"]), words(&["b", "d"]), words(&["c"])];
        let fwd = s.score_all(&q, &cs).unwrap();
        let rev: Vec<_> = cs.iter().rev().cloned().collect();
        let back = s.score_all(&q, &rev).unwrap();
        assert_eq!(fwd[0], back[0]);
        assert_eq!(fwd[1], back[3]);
        assert_eq!(fwd[3], back[1]);
        assert_eq!(fwd, s.score_all(&q, &cs).unwrap());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let s = scorer();
        let back = TinyCrossScorer::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(back, s);
    }
}
