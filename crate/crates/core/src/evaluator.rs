//! Intrinsic metrics over generated counterfactual claims: flip rate,
//! fluency (perplexity), similarity, diversity (inverse BLEU) and multi-hop
//! similarity to the evidence.

use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{sequence_log_prob, verify, EmbeddingProvider, TokenScorer, Verifier};
use crate::error::BackendError;
use crate::filtering::{semantic_fidelity, FilterError};
use crate::model::{CounterfactualRecord, Instance, RecordKind};
use crate::scalar::Scalar;
use crate::text;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("metric needs at least one input")]
    EmptyInput,
    #[error("record refers to unknown source instance {0}")]
    UnknownSource(String),
    #[error("claim has no tokens: {0:?}")]
    EmptyText(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Filter(#[from] FilterError),
}

const MAX_ORDER: usize = 4;

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU up to 4-grams with add-one smoothing on every clipped
/// n-gram precision and the usual brevity penalty.
pub fn bleu_tokens<S: Scalar, T: Eq + Hash>(candidate: &[T], reference: &[T]) -> S {
    if candidate.is_empty() {
        return S::zero();
    }
    let mut log_sum = S::zero();
    for n in 1..=MAX_ORDER {
        let cand = ngram_counts(candidate, n);
        let refs = ngram_counts(reference, n);
        let total: usize = cand.values().sum();
        let matched: usize = cand
            .iter()
            .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
            .sum();
        let p = S::from_count(matched + 1) / S::from_count(total + 1);
        log_sum += p.ln();
    }
    let c = S::from_count(candidate.len());
    let r = S::from_count(reference.len());
    let bp = if c > r { S::zero() } else { S::one() - r / c };
    (log_sum / S::from_count(MAX_ORDER) + bp).exp()
}

/// [`bleu_tokens`] over the toy tokenizer's tokens.
pub fn bleu(candidate: &str, reference: &str) -> f64 {
    bleu_tokens(&text::token_strings(candidate), &text::token_strings(reference))
}

fn mean(values: impl IntoIterator<Item = f64>) -> Result<f64, MetricError> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        return Err(MetricError::EmptyInput);
    }
    Ok(sum / n as f64)
}

fn claim_records(records: &[CounterfactualRecord]) -> Vec<&CounterfactualRecord> {
    records.iter().filter(|r| r.kind == RecordKind::ClaimCf).collect()
}

/// Fraction of records whose verdict on `(claim, evidence)` equals the record label.
pub fn flip_rate(records: &[CounterfactualRecord], verifier: &dyn Verifier) -> Result<f64, MetricError> {
    if records.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut hits = 0usize;
    for r in records {
        if verify(verifier, &r.claim, &r.evidence)?.label == r.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / records.len() as f64)
}

pub fn perplexity(claim: &str, scorer: &dyn TokenScorer) -> Result<f64, MetricError> {
    let tokens = scorer.vocab().encode(claim)?;
    if tokens.is_empty() {
        return Err(MetricError::EmptyText(claim.to_string()));
    }
    let lp = sequence_log_prob(scorer, &[], &tokens)?;
    Ok((-lp / tokens.len() as f64).exp())
}

/// Mean per-claim perplexity.
pub fn fluency_ppl(claims: &[String], scorer: &dyn TokenScorer) -> Result<f64, MetricError> {
    let ppl: Vec<f64> = claims
        .iter()
        .map(|c| perplexity(c, scorer))
        .collect::<Result<_, _>>()?;
    mean(ppl)
}

/// Mean semantic fidelity over `(generated, original)` pairs.
pub fn similarity(pairs: &[(String, String)], embedder: &dyn EmbeddingProvider) -> Result<f64, MetricError> {
    let s: Vec<f64> = pairs
        .iter()
        .map(|(c, o)| semantic_fidelity(c, o, embedder))
        .collect::<Result<_, _>>()?;
    mean(s)
}

/// Mean inverse BLEU over `(generated, original)` pairs.
pub fn diversity(pairs: &[(String, String)]) -> Result<f64, MetricError> {
    mean(pairs.iter().map(|(c, o)| 1.0 / bleu(c, o)))
}

/// Mean over records of the mean semantic fidelity between the claim and
/// each evidence sentence.
pub fn multi_hop(records: &[CounterfactualRecord], embedder: &dyn EmbeddingProvider) -> Result<f64, MetricError> {
    let per_record: Vec<f64> = records
        .iter()
        .map(|r| {
            let s: Vec<f64> = r
                .evidence
                .iter()
                .map(|e| semantic_fidelity(&r.claim, &e.text, embedder))
                .collect::<Result<_, _>>()?;
            mean(s)
        })
        .collect::<Result<_, _>>()?;
    mean(per_record)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicReport {
    pub flip_rate: f64,
    pub fluency_ppl: f64,
    pub similarity: f64,
    pub diversity: f64,
    pub multi_hop: f64,
    pub n_records: usize,
}

impl fmt::Display for IntrinsicReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>8} {:>10} {:>8} {:>8} {:>8} {:>8}",
            "Flip.", "Flu.", "Sim.", "Div.", "M.h.", "N"
        )?;
        writeln!(
            f,
            "{:>8.4} {:>10.2} {:>8.4} {:>8.2} {:>8.4} {:>8}",
            self.flip_rate, self.fluency_ppl, self.similarity, self.diversity, self.multi_hop, self.n_records
        )
    }
}

/// All five metrics over the claim counterfactuals in `records`; original
/// claims are looked up in `sources` by `source_id`.
pub fn evaluate(
    records: &[CounterfactualRecord],
    sources: &[Instance],
    scorer: &dyn TokenScorer,
    embedder: &dyn EmbeddingProvider,
    verifier: &dyn Verifier,
) -> Result<IntrinsicReport, MetricError> {
    let claims: Vec<CounterfactualRecord> = claim_records(records).into_iter().cloned().collect();
    if claims.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let by_id: HashMap<&str, &Instance> = sources.iter().map(|i| (i.id.as_str(), i)).collect();
    let pairs: Vec<(String, String)> = claims
        .iter()
        .map(|r| {
            by_id
                .get(r.source_id.as_str())
                .map(|src| (r.claim.clone(), src.claim.clone()))
                .ok_or_else(|| MetricError::UnknownSource(r.source_id.clone()))
        })
        .collect::<Result<_, _>>()?;
    let texts: Vec<String> = claims.iter().map(|r| r.claim.clone()).collect();
    Ok(IntrinsicReport {
        flip_rate: flip_rate(&claims, verifier)?,
        fluency_ppl: fluency_ppl(&texts, scorer)?,
        similarity: similarity(&pairs, embedder)?,
        diversity: diversity(&pairs)?,
        multi_hop: multi_hop(&claims, embedder)?,
        n_records: claims.len(),
    })
}
