//! Bi-encoder and cross-encoder training, and candidate mining.

mod bi;
mod cross;
mod mining;

use serde::{Deserialize, Serialize};

pub use bi::{bi_encoder_loss, train_biencoder, BiExample};
pub use cross::{cross_encoder_loss, cross_examples, cross_query_len, train_crossencoder, CrossExample};
pub use mining::{mine_candidates, negative_candidates};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::neggen::NegativeExample;
use crate::rng::{seeded, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Bi-encoder: query and candidate length. Cross-encoder: pair budget.
    pub max_len: usize,
    pub seed: u64,
    /// Candidates mined per query for cross-encoder training.
    pub k: usize,
    pub optimizer: OptimizerKind,
    /// Multiplier on dot-product logits in the bi-encoder loss.
    pub logit_scale: f64,
    /// Cap on negatives per positive; `None` keeps every negative.
    pub negative_ratio: Option<f64>,
}

impl TrainConfig {
    pub fn bi_encoder() -> Self {
        Self {
            lr: 1e-5,
            batch_size: 48,
            epochs: 15,
            max_len: 300,
            seed: 0,
            k: 10,
            optimizer: OptimizerKind::Sgd,
            logit_scale: 1.0,
            negative_ratio: Some(0.1),
        }
    }

    pub fn cross_encoder() -> Self {
        Self {
            lr: 2e-5,
            batch_size: 6,
            epochs: 20,
            max_len: 256,
            ..Self::bi_encoder()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && self.batch_size > 0
            && self.epochs > 0
            && self.max_len > 0
            && self.k > 0
            && self.logit_scale > 0.0
            && self.negative_ratio.is_none_or(|r| r > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training configuration {self:?}")))
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::bi_encoder()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    BiEncoder,
    CrossEncoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub model: ModelKind,
    /// Mean per-example loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub examples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<ValidationMetric>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationMetric {
    pub name: String,
    pub value: f64,
}

/// Plain SGD or Adam over one flat parameter vector.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, n: usize) -> Self {
        let (m, v) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Adam { .. } => (vec![0.0; n], vec![0.0; n]),
        };
        Self {
            kind,
            lr,
            step: 0,
            m,
            v,
        }
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
                }
            }
        }
    }
}

/// Keeps at most `ratio × positives` negatives (rounded down, at least one
/// when any exist), chosen with `seed` from the id-sorted list. The result
/// is id-sorted.
pub fn select_negatives(
    negatives: &[NegativeExample],
    positives: usize,
    ratio: Option<f64>,
    seed: u64,
) -> Vec<NegativeExample> {
    let mut sorted: Vec<NegativeExample> = negatives.to_vec();
    sorted.sort_by(|a, b| a.generated_query.query_id().cmp(b.generated_query.query_id()));
    let Some(r) = ratio else {
        return sorted;
    };
    let cap = ((r * positives as f64).floor() as usize).max(1);
    if sorted.len() <= cap {
        return sorted;
    }
    sorted.shuffle(&mut seeded(seed));
    sorted.truncate(cap);
    sorted.sort_by(|a, b| a.generated_query.query_id().cmp(b.generated_query.query_id()));
    sorted
}

/// `logsumexp(logits) - logits[target]`, with the softmax.
pub(crate) fn cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let loss = max + total.ln() - logits[target];
    (loss.max(0.0), exps.into_iter().map(|e| e / total).collect())
}

/// Example order for one epoch.
pub(crate) fn epoch_order(n: usize, rng: &mut SeededRng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

pub(crate) fn check_finite(loss: f64, what: &str, epoch: usize, batch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "{what} loss {loss} at epoch {epoch}, batch {batch}"
        )))
    }
}

#[cfg(test)]
pub(crate) mod gradcheck {
    /// Max relative error between `analytic` and central differences of
    /// `f` over the parameter indices `probe`.
    pub fn max_relative_error<F>(params: &mut [f64], analytic: &[f64], probe: &[usize], mut f: F) -> f64
    where
        F: FnMut(&[f64]) -> f64,
    {
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for &i in probe {
            let orig = params[i];
            params[i] = orig + h;
            let up = f(params);
            params[i] = orig - h;
            let down = f(params);
            params[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((analytic[i] - numeric).abs() / denom);
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_settings() {
        let bi = TrainConfig::bi_encoder();
        assert_eq!((bi.lr, bi.batch_size, bi.epochs, bi.max_len, bi.k), (1e-5, 48, 15, 300, 10));
        let cross = TrainConfig::cross_encoder();
        assert_eq!((cross.lr, cross.batch_size, cross.epochs, cross.max_len), (2e-5, 6, 20, 256));
        assert_eq!(cross.negative_ratio, Some(0.1));
        assert!(TrainConfig { lr: 0.0, ..bi }.validate().is_err());
    }

    #[test]
    fn single_logit_loss_is_zero() {
        let (loss, p) = cross_entropy(&[3.7], 0);
        assert_eq!(loss, 0.0);
        assert_eq!(p, vec![1.0]);
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut p = vec![1.0, -1.0];
        let mut opt = Optimizer::new(OptimizerKind::adam(), 0.1, 2);
        opt.apply(&mut p, &[2.0, -3.0]);
        assert!(p[0] < 1.0 && p[1] > -1.0);
    }
}
