use serde::{Deserialize, Serialize};

use super::{check_finite, cross_entropy, epoch_order, ModelKind, Optimizer, TrainConfig, TrainReport};
use crate::error::{Error, Result};
use crate::extraction::TaggedQuery;
use crate::formatting::{format_query, FormatStyle};
use crate::kb::{KnowledgeBase, Label};
use crate::rerank::{candidate_sides, TinyCrossScorer};
use crate::retrieval::CandidateSet;
use crate::rng::seeded;
use crate::token::Token;

/// One `(k + 1)`-way training example; `target` 0 means NIL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossExample {
    pub query_id: String,
    pub query: Vec<Token>,
    pub candidates: Vec<Vec<Token>>,
    pub target: usize,
}

/// Query length inside a cross-encoder pair budget.
pub fn cross_query_len(budget: usize) -> usize {
    budget / 2
}

/// Builds training examples. In-KB queries target their gold's position
/// (which must be among the candidates); NIL queries target 0.
pub fn cross_examples(
    items: &[(&TaggedQuery, &CandidateSet)],
    kb: &KnowledgeBase,
    style: FormatStyle,
    budget: usize,
) -> Result<Vec<CrossExample>> {
    items
        .iter()
        .map(|(q, set)| {
            let target = match &q.base.gold {
                Label::Nil => 0,
                Label::Entry(gold) => {
                    set.rank_of(gold).ok_or_else(|| Error::GoldNotInCandidates {
                        query_id: q.query_id().to_string(),
                        gold: gold.clone(),
                    })? + 1
                }
            };
            let query = format_query(style, q, cross_query_len(budget))?;
            let candidates = candidate_sides(&query, set, kb, budget)?;
            Ok(CrossExample {
                query_id: q.query_id().to_string(),
                query,
                candidates,
                target,
            })
        })
        .collect()
}

/// Mean `(k + 1)`-way cross-entropy over `batch` and its parameter gradient.
pub fn cross_encoder_loss(scorer: &TinyCrossScorer, batch: &[&CrossExample]) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; scorer.params().len()];
    let mut total = 0.0;
    let n = batch.len() as f64;
    for ex in batch {
        let (ids, a) = scorer.query_rep(&ex.query)?;
        let mut caches = Vec::with_capacity(ex.candidates.len() + 1);
        caches.push(scorer.forward_pair(&a, None)?);
        for c in &ex.candidates {
            caches.push(scorer.forward_pair(&a, Some(c))?);
        }
        let logits: Vec<f64> = caches.iter().map(|c| c.score).collect();
        let (loss, probs) = cross_entropy(&logits, ex.target);
        total += loss;
        let mut d_query = vec![0.0; a.len()];
        for (i, cache) in caches.iter().enumerate() {
            let d = (probs[i] - if i == ex.target { 1.0 } else { 0.0 }) / n;
            scorer.backward_pair(&a, cache, d, &mut grad, &mut d_query);
        }
        scorer.spread(&ids, &d_query, &mut grad);
    }
    Ok((total / n, grad))
}

/// Trains `scorer` in place. Examples are put in query-id order and then
/// shuffled with `cfg.seed`, so the order does not depend on input order.
pub fn train_crossencoder(
    examples: &[CrossExample],
    scorer: &mut TinyCrossScorer,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sorted: Vec<&CrossExample> = examples.iter().collect();
    sorted.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    let mut rng = seeded(cfg.seed);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, scorer.params().len());
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = epoch_order(sorted.len(), &mut rng);
        let mut sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&CrossExample> = chunk.iter().map(|&i| sorted[i]).collect();
            let (loss, grad) = cross_encoder_loss(scorer, &batch)?;
            check_finite(loss, "cross-encoder", epoch, b)?;
            sum += loss * batch.len() as f64;
            opt.apply(scorer.params_mut(), &grad);
        }
        epoch_losses.push(sum / sorted.len() as f64);
    }
    Ok(TrainReport {
        model: ModelKind::CrossEncoder,
        epoch_losses,
        examples: examples.len(),
        validation: None,
        checkpoint: None,
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::Vocab;
    use crate::rerank::tiny_cross_scorer;
    use crate::token::words;
    use crate::training::gradcheck::max_relative_error;

    fn examples() -> Vec<CrossExample> {
        let w = |s: &str| words(&s.split(' ').collect::<Vec<_>>());
        vec![
            CrossExample {
                query_id: "a".into(),
                query: w("a b"),
                candidates: vec![w("x y"), w("b z")],
                target: 2,
            },
            CrossExample {
                query_id: "b".into(),
                query: w("c"),
                candidates: vec![w("x"), w("y z")],
                target: 0,
            },
            CrossExample {
                query_id: "c".into(),
                query: w("a d c"),
                candidates: vec![w("w"), w("x d")],
                target: 1,
            },
        ]
    }

    fn scorer(data: &[CrossExample]) -> TinyCrossScorer {
        let vocab = Vocab::build(
            data.iter()
                .flat_map(|e| std::iter::once(e.query.as_slice()).chain(e.candidates.iter().map(Vec::as_slice))),
        );
        tiny_cross_scorer(vocab, 4, 3, 5)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = examples();
        let mut s = scorer(&data);
        let batch: Vec<&CrossExample> = data.iter().collect();
        let (loss, grad) = cross_encoder_loss(&s, &batch).unwrap();
        assert!(loss > 0.0);
        let probe: Vec<usize> = (0..s.params().len()).collect();
        let mut params = s.params().to_vec();
        let err = max_relative_error(&mut params, &grad, &probe, |p| {
            s.params_mut().copy_from_slice(p);
            cross_encoder_loss(&s, &batch).unwrap().0
        });
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn training_is_order_independent_and_reproducible() {
        let data = examples();
        let cfg = TrainConfig {
            lr: 0.05,
            batch_size: 2,
            epochs: 3,
            ..TrainConfig::cross_encoder()
        };
        let mut a = scorer(&data);
        let ra = train_crossencoder(&data, &mut a, &cfg).unwrap();
        let mut rev = data.clone();
        rev.reverse();
        let mut b = scorer(&data);
        let rb = train_crossencoder(&rev, &mut b, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert!(ra.epoch_losses.iter().all(|l| l.is_finite() && *l >= 0.0));
    }
}
