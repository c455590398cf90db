//! Accuracy, recall@k and run comparison.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::extraction::{EventQuery, Pos};
use crate::kb::Label;
use crate::rerank::LinkDecision;
use crate::retrieval::CandidateSet;

/// Recall cutoffs reported by default.
pub const RECALL_GRID: [usize; 9] = [1, 2, 3, 4, 5, 8, 10, 15, 20];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub all: usize,
    pub verb: usize,
    pub noun: usize,
    pub in_kb: usize,
    pub out_of_kb: usize,
}

/// Exact-match accuracy. Empty splits are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub all: f64,
    pub verb: Option<f64>,
    pub noun: Option<f64>,
    pub in_kb: Option<f64>,
    pub out_of_kb: Option<f64>,
    pub counts: SplitCounts,
}

fn ratio(hit: usize, n: usize) -> Option<f64> {
    (n > 0).then(|| hit as f64 / n as f64)
}

fn by_id<'a, T, F>(items: &'a [T], id: F) -> Result<HashMap<&'a str, &'a T>>
where
    F: Fn(&'a T) -> &'a str,
{
    let mut m = HashMap::with_capacity(items.len());
    for it in items {
        if m.insert(id(it), it).is_some() {
            return Err(Error::DuplicateId(id(it).to_string()));
        }
    }
    Ok(m)
}

/// A prediction is correct iff it equals the gold label (an id or NIL).
/// Every gold needs exactly one decision and vice versa.
pub fn accuracy(decisions: &[LinkDecision], golds: &[EventQuery]) -> Result<Accuracy> {
    if golds.is_empty() {
        return Err(Error::EmptyInput);
    }
    let preds = by_id(decisions, |d| d.query_id.as_str())?;
    by_id(golds, |g| g.query_id.as_str())?;
    if decisions.len() != golds.len() {
        let known: std::collections::HashSet<&str> = golds.iter().map(|g| g.query_id.as_str()).collect();
        let stray = decisions
            .iter()
            .find(|d| !known.contains(d.query_id.as_str()))
            .map(|d| d.query_id.clone());
        if let Some(id) = stray {
            return Err(Error::UnmatchedQuery(id));
        }
    }
    let mut counts = SplitCounts::default();
    let mut hits = SplitCounts::default();
    for g in golds {
        let d = preds
            .get(g.query_id.as_str())
            .ok_or_else(|| Error::UnmatchedQuery(g.query_id.clone()))?;
        let ok = usize::from(d.prediction == g.gold);
        counts.all += 1;
        hits.all += ok;
        match g.pos {
            Pos::Verb => {
                counts.verb += 1;
                hits.verb += ok;
            }
            Pos::Noun => {
                counts.noun += 1;
                hits.noun += ok;
            }
            Pos::Other => {}
        }
        if g.gold.is_nil() {
            counts.out_of_kb += 1;
            hits.out_of_kb += ok;
        } else {
            counts.in_kb += 1;
            hits.in_kb += ok;
        }
    }
    Ok(Accuracy {
        all: hits.all as f64 / counts.all as f64,
        verb: ratio(hits.verb, counts.verb),
        noun: ratio(hits.noun, counts.noun),
        in_kb: ratio(hits.in_kb, counts.in_kb),
        out_of_kb: ratio(hits.out_of_kb, counts.out_of_kb),
        counts,
    })
}

/// Fraction of in-KB queries whose gold is among the first `k` candidates,
/// for each `k`. NIL-gold queries are skipped.
pub fn recall_at_k(sets: &[CandidateSet], golds: &[EventQuery], ks: &[usize]) -> Result<BTreeMap<usize, f64>> {
    let by_query = by_id(sets, |s| s.query_id.as_str())?;
    let in_kb: Vec<(&EventQuery, &str)> = golds
        .iter()
        .filter_map(|g| g.gold.as_entry().map(|id| (g, id)))
        .collect();
    let mut ranks = Vec::with_capacity(in_kb.len());
    for (g, gold) in &in_kb {
        let set = by_query
            .get(g.query_id.as_str())
            .ok_or_else(|| Error::UnmatchedQuery(g.query_id.clone()))?;
        for &k in ks {
            if k == 0 || k > set.len() {
                return Err(Error::RecallDepth {
                    k,
                    depth: set.len(),
                    query_id: g.query_id.clone(),
                });
            }
        }
        ranks.push(set.rank_of(gold));
    }
    let mut out = BTreeMap::new();
    if ranks.is_empty() {
        return Ok(out);
    }
    for &k in ks {
        let hit = ranks.iter().filter(|r| r.is_some_and(|r| r < k)).count();
        out.insert(k, hit as f64 / ranks.len() as f64);
    }
    Ok(out)
}

/// Digest of the gold labels, identifying the evaluated dataset.
pub fn dataset_fingerprint(golds: &[EventQuery]) -> String {
    let mut rows: Vec<(&str, &str, Pos)> = golds
        .iter()
        .map(|g| (g.query_id.as_str(), g.gold.as_str(), g.pos))
        .collect();
    rows.sort_by(|a, b| a.0.cmp(b.0));
    let mut h = Sha256::new();
    for (id, gold, pos) in rows {
        h.update(id.as_bytes());
        h.update([0]);
        h.update(gold.as_bytes());
        h.update([0]);
        h.update(format!("{pos:?}").as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy_all: f64,
    pub accuracy_verb: Option<f64>,
    pub accuracy_noun: Option<f64>,
    pub accuracy_in_kb: Option<f64>,
    pub accuracy_out_of_kb: Option<f64>,
    /// Empty when no candidate sets were given or no query is in-KB.
    pub recall_at: BTreeMap<usize, f64>,
    pub counts: SplitCounts,
    pub dataset_fingerprint: String,
    /// Digest of the run that produced the predictions, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_fingerprint: Option<String>,
}

pub fn evaluate(
    decisions: &[LinkDecision],
    golds: &[EventQuery],
    sets: Option<&[CandidateSet]>,
    ks: &[usize],
) -> Result<EvalReport> {
    let acc = accuracy(decisions, golds)?;
    let recall_at = match sets {
        Some(s) => recall_at_k(s, golds, ks)?,
        None => BTreeMap::new(),
    };
    Ok(EvalReport {
        accuracy_all: acc.all,
        accuracy_verb: acc.verb,
        accuracy_noun: acc.noun,
        accuracy_in_kb: acc.in_kb,
        accuracy_out_of_kb: acc.out_of_kb,
        recall_at,
        counts: acc.counts,
        dataset_fingerprint: dataset_fingerprint(golds),
        config_fingerprint: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub values: Vec<Option<f64>>,
    /// Per column: this row holds the column maximum.
    pub best: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub dataset_fingerprint: String,
    pub columns: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

fn report_columns(r: &EvalReport) -> Vec<(String, Option<f64>)> {
    let mut cols = vec![
        ("all".to_string(), Some(r.accuracy_all)),
        ("verb".to_string(), r.accuracy_verb),
        ("noun".to_string(), r.accuracy_noun),
        ("in_kb".to_string(), r.accuracy_in_kb),
        ("out_of_kb".to_string(), r.accuracy_out_of_kb),
    ];
    cols.extend(r.recall_at.iter().map(|(k, v)| (format!("R@{k}"), Some(*v))));
    cols
}

/// One row per run, one column per metric present in any run; the maximum
/// of each column is marked (ties all marked).
pub fn compare_report(runs: &[(String, EvalReport)]) -> Result<Comparison> {
    let first = runs.first().ok_or(Error::EmptyInput)?;
    let fp = &first.1.dataset_fingerprint;
    for (_, r) in runs {
        if &r.dataset_fingerprint != fp {
            return Err(Error::FingerprintMismatch(fp.clone(), r.dataset_fingerprint.clone()));
        }
    }
    let mut columns: Vec<String> = Vec::new();
    let per_run: Vec<BTreeMap<String, Option<f64>>> = runs
        .iter()
        .map(|(_, r)| {
            let cols = report_columns(r);
            for (c, _) in &cols {
                if !columns.contains(c) {
                    columns.push(c.clone());
                }
            }
            cols.into_iter().collect()
        })
        .collect();
    let values: Vec<Vec<Option<f64>>> = per_run
        .iter()
        .map(|m| columns.iter().map(|c| m.get(c).copied().flatten()).collect())
        .collect();
    let maxima: Vec<Option<f64>> = (0..columns.len())
        .map(|j| values.iter().filter_map(|row| row[j]).reduce(f64::max))
        .collect();
    let rows = runs
        .iter()
        .zip(values)
        .map(|((name, _), vals)| ComparisonRow {
            name: name.clone(),
            best: vals.iter().zip(&maxima).map(|(v, m)| v.is_some() && v == m).collect(),
            values: vals,
        })
        .collect();
    Ok(Comparison {
        dataset_fingerprint: fp.clone(),
        columns,
        rows,
    })
}

impl Comparison {
    /// Markdown table; best values in bold, absent values as `-`.
    pub fn to_markdown(&self) -> String {
        let mut out = format!("| run | {} |\n", self.columns.join(" | "));
        out.push_str(&format!("|---|{}\n", "---|".repeat(self.columns.len())));
        for r in &self.rows {
            let cells: Vec<String> = r
                .values
                .iter()
                .zip(&r.best)
                .map(|(v, b)| match (v, b) {
                    (Some(v), true) => format!("**{:.2}**", v * 100.0),
                    (Some(v), false) => format!("{:.2}", v * 100.0),
                    (None, _) => "-".into(),
                })
                .collect();
            out.push_str(&format!("| {} | {} |\n", r.name, cells.join(" | ")));
        }
        out
    }
}

/// Share of queries predicted NIL.
pub fn nil_rate(decisions: &[LinkDecision]) -> f64 {
    if decisions.is_empty() {
        return 0.0;
    }
    decisions.iter().filter(|d| d.prediction == Label::Nil).count() as f64 / decisions.len() as f64
}
