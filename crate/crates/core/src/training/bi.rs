use serde::{Deserialize, Serialize};

use super::{check_finite, cross_entropy, epoch_order, ModelKind, Optimizer, TrainConfig, TrainReport};
use crate::encoders::{dot, EncoderCache, TinyEncoder};
use crate::error::{Error, Result};
use crate::extraction::TaggedQuery;
use crate::formatting::{format_query, FormatStyle};
use crate::kb::{candidate_text, KnowledgeBase};
use crate::rng::seeded;
use crate::token::Token;

/// A formatted query and its gold entry's candidate text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiExample {
    pub query_id: String,
    pub query: Vec<Token>,
    pub candidate: Vec<Token>,
}

impl BiExample {
    /// Builds examples for every in-KB query; NIL queries are skipped.
    pub fn from_queries(
        queries: &[TaggedQuery],
        kb: &KnowledgeBase,
        style: FormatStyle,
        max_len: usize,
    ) -> Result<Vec<BiExample>> {
        queries
            .iter()
            .filter_map(|q| q.base.gold.as_entry().map(|g| (q, g)))
            .map(|(q, gold)| {
                let entry = kb.get(gold).ok_or_else(|| Error::UnknownId(gold.to_string()))?;
                Ok(BiExample {
                    query_id: q.query_id().to_string(),
                    query: format_query(style, q, max_len)?,
                    candidate: candidate_text(entry, max_len),
                })
            })
            .collect()
    }
}

/// Mean in-batch softmax cross-entropy: `logits[i][j] = scale · q_i · c_j`,
/// targets on the diagonal. Returns the loss and its gradient over the
/// encoder parameters (query and candidate towers share weights).
pub fn bi_encoder_loss(enc: &TinyEncoder, batch: &[&BiExample], scale: f64) -> Result<(f64, Vec<f64>)> {
    let n = batch.len();
    let qs: Vec<EncoderCache> = batch.iter().map(|e| enc.forward(&e.query)).collect::<Result<_>>()?;
    let cs: Vec<EncoderCache> = batch.iter().map(|e| enc.forward(&e.candidate)).collect::<Result<_>>()?;
    let d = enc.params().len();
    let dim = qs[0].out.len();
    let mut grad = vec![0.0; d];
    let mut total = 0.0;
    let mut gq = vec![vec![0.0; dim]; n];
    let mut gc = vec![vec![0.0; dim]; n];
    for i in 0..n {
        let logits: Vec<f64> = cs.iter().map(|c| scale * dot(&qs[i].out, &c.out)).collect();
        let (loss, probs) = cross_entropy(&logits, i);
        total += loss;
        for j in 0..n {
            let g = (probs[j] - if i == j { 1.0 } else { 0.0 }) * scale / n as f64;
            if g == 0.0 {
                continue;
            }
            for t in 0..dim {
                gq[i][t] += g * cs[j].out[t];
                gc[j][t] += g * qs[i].out[t];
            }
        }
    }
    for i in 0..n {
        enc.backward(&qs[i], &gq[i], &mut grad);
        enc.backward(&cs[i], &gc[i], &mut grad);
    }
    Ok((total / n as f64, grad))
}

/// Trains `enc` in place with in-batch negatives.
pub fn train_biencoder(data: &[BiExample], enc: &mut TinyEncoder, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if data.len() < cfg.batch_size {
        return Err(Error::Config(format!(
            "{} examples is fewer than the batch size {}",
            data.len(),
            cfg.batch_size
        )));
    }
    let mut sorted: Vec<&BiExample> = data.iter().collect();
    sorted.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    let mut rng = seeded(cfg.seed);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, enc.params().len());
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = epoch_order(sorted.len(), &mut rng);
        let mut sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&BiExample> = chunk.iter().map(|&i| sorted[i]).collect();
            let (loss, grad) = bi_encoder_loss(enc, &batch, cfg.logit_scale)?;
            check_finite(loss, "bi-encoder", epoch, b)?;
            sum += loss * batch.len() as f64;
            opt.apply(enc.params_mut(), &grad);
        }
        epoch_losses.push(sum / sorted.len() as f64);
    }
    Ok(TrainReport {
        model: ModelKind::BiEncoder,
        epoch_losses,
        examples: data.len(),
        validation: None,
        checkpoint: None,
        config: cfg.clone(),
    })
}
