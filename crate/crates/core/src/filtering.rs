//! Semantic and entity fidelity of candidate claims, and best-candidate
//! selection by their sum.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{recognize_entities, EmbeddingProvider, EntityRecognizer};
use crate::error::BackendError;
use crate::model::Label;
use crate::scalar::Scalar;
use crate::transport::{self, TransportError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FilterError {
    #[error("no candidate to select from")]
    EmptyCandidates,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// `(1 - cos(u, v)) / 2`, clamped to `[0, 1]`. Zero vectors sit at cost 1/2
/// from anything but another zero vector.
pub fn cosine_cost<S: Scalar>(u: &[S], v: &[S]) -> S {
    let dot = u.iter().zip(v).fold(S::zero(), |a, (&x, &y)| a + x * y);
    let nu = u.iter().fold(S::zero(), |a, &x| a + x * x).sqrt();
    let nv = v.iter().fold(S::zero(), |a, &x| a + x * x).sqrt();
    let half = S::lit(0.5);
    if nu == S::zero() || nv == S::zero() {
        return if nu == nv { S::zero() } else { half };
    }
    let cos = (dot / (nu * nv)).max(-S::one()).min(S::one());
    ((S::one() - cos) * half).max(S::zero()).min(S::one())
}

pub fn cost_matrix<S: Scalar>(a: &[Vec<S>], b: &[Vec<S>]) -> Vec<Vec<S>> {
    a.iter()
        .map(|u| b.iter().map(|v| cosine_cost(u, v)).collect())
        .collect()
}

/// `1 - EMD` between two bags of token vectors with uniform weights.
/// Two empty bags score 1, exactly one empty bag scores 0.
pub fn fidelity_from_vectors<S: Scalar>(a: &[Vec<S>], b: &[Vec<S>]) -> Result<S, TransportError> {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return Ok(S::one()),
        (true, false) | (false, true) => return Ok(S::zero()),
        _ => {}
    }
    let emd = transport::emd_uniform(&cost_matrix(a, b))?;
    Ok((S::one() - emd).max(S::zero()).min(S::one()))
}

/// Semantic fidelity score in `[0, 1]`.
pub fn semantic_fidelity(
    candidate: &str,
    original: &str,
    embedder: &dyn EmbeddingProvider,
) -> Result<f64, FilterError> {
    let a = embedder.embed(candidate)?;
    let b = embedder.embed(original)?;
    Ok(fidelity_from_vectors(&a, &b)?)
}

fn entity_keys(text: &str, ner: &dyn EntityRecognizer) -> Result<BTreeSet<String>, BackendError> {
    Ok(recognize_entities(ner, text, 0)?
        .into_iter()
        .map(|e| e.surface.to_lowercase())
        .collect())
}

/// Jaccard overlap of case-folded entity surfaces.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

pub fn entity_fidelity(
    candidate: &str,
    original: &str,
    ner: &dyn EntityRecognizer,
) -> Result<f64, FilterError> {
    Ok(jaccard(&entity_keys(candidate, ner)?, &entity_keys(original, ner)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityScores<S> {
    pub semantic: S,
    pub entity: S,
    pub total: S,
}

impl<S: Scalar> FidelityScores<S> {
    pub fn new(semantic: S, entity: S) -> Self {
        Self {
            semantic,
            entity,
            total: semantic + entity,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate<S> {
    pub claim: String,
    pub label: Label,
    pub scores: FidelityScores<S>,
}

/// Total descending, then semantic descending, then claim text ascending.
fn preference<S: Scalar>(a: &ScoredCandidate<S>, b: &ScoredCandidate<S>) -> Ordering {
    b.scores
        .total
        .partial_cmp(&a.scores.total)
        .unwrap_or(Ordering::Equal)
        .then_with(|| {
            b.scores
                .semantic
                .partial_cmp(&a.scores.semantic)
                .unwrap_or(Ordering::Equal)
        })
        .then_with(|| a.claim.cmp(&b.claim))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection<S> {
    pub best: ScoredCandidate<S>,
    /// Every candidate, in input order.
    pub ledger: Vec<ScoredCandidate<S>>,
}

pub fn select_best<S: Scalar>(candidates: &[ScoredCandidate<S>]) -> Result<Selection<S>, FilterError> {
    let best = candidates
        .iter()
        .min_by(|a, b| preference(a, b))
        .ok_or(FilterError::EmptyCandidates)?;
    Ok(Selection {
        best: best.clone(),
        ledger: candidates.to_vec(),
    })
}

/// Scores every candidate against the original claim.
pub fn score_candidates(
    candidates: &[(String, Label)],
    original: &str,
    embedder: &dyn EmbeddingProvider,
    ner: &dyn EntityRecognizer,
) -> Result<Vec<ScoredCandidate<f64>>, FilterError> {
    candidates
        .iter()
        .map(|(claim, label)| {
            let semantic = semantic_fidelity(claim, original, embedder)?;
            let entity = entity_fidelity(claim, original, ner)?;
            Ok(ScoredCandidate {
                claim: claim.clone(),
                label: *label,
                scores: FidelityScores::new(semantic, entity),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{Gazetteer, GazetteerRecognizer, HashEmbedder, TableEmbedder};
    use std::collections::HashMap;

    #[test]
    fn identical_texts_score_one() {
        let e = HashEmbedder::new(8, 1);
        let s = semantic_fidelity("The Ford Fusion won in 2006.", "The Ford Fusion won in 2006.", &e).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn antipodal_single_tokens_score_zero() {
        let table = HashMap::from([
            ("x".to_string(), vec![1.0, 0.0]),
            ("y".to_string(), vec![-1.0, 0.0]),
        ]);
        let e = TableEmbedder::new(table, 0);
        assert_eq!(semantic_fidelity("x", "y", &e).unwrap(), 0.0);
    }

    #[test]
    fn cosine_cost_bounds() {
        assert_eq!(cosine_cost(&[1.0, 0.0], &[0.0, 1.0]), 0.5);
        assert_eq!(cosine_cost(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert_eq!(cosine_cost(&[0.0, 0.0], &[1.0, 0.0]), 0.5);
        assert_eq!(cosine_cost(&[2.0f32, 0.0], &[3.0, 0.0]), 0.0);
    }

    fn ner() -> GazetteerRecognizer {
        GazetteerRecognizer::new(&Gazetteer {
            person: vec!["Reg Presley".into()],
            ..Default::default()
        })
    }

    #[test]
    fn entity_fidelity_cases() {
        let n = ner();
        assert_eq!(entity_fidelity("Reg Presley in 1994", "In 1994 Reg Presley", &n).unwrap(), 1.0);
        assert_eq!(entity_fidelity("Reg Presley in 1994", "Reg Presley sang", &n).unwrap(), 0.5);
        assert_eq!(entity_fidelity("no names", "none here", &n).unwrap(), 1.0);
        assert_eq!(entity_fidelity("in 1994", "none here", &n).unwrap(), 0.0);
    }

    fn cand(claim: &str, semantic: f64, entity: f64) -> ScoredCandidate<f64> {
        ScoredCandidate {
            claim: claim.into(),
            label: Label::Ref,
            scores: FidelityScores::new(semantic, entity),
        }
    }

    #[test]
    fn select_argmax_total() {
        let c = vec![cand("a", 0.8, 0.5), cand("b", 0.9, 0.8), cand("c", 0.4, 0.5)];
        assert_eq!(select_best(&c).unwrap().best.claim, "b");
    }

    #[test]
    fn select_tie_prefers_semantic_then_text() {
        let c = vec![cand("a", 0.5, 0.75), cand("b", 0.75, 0.5)];
        assert_eq!(c[0].scores.total, c[1].scores.total);
        assert_eq!(select_best(&c).unwrap().best.claim, "b");
        let c = vec![cand("zeta", 0.5, 0.5), cand("alpha", 0.5, 0.5)];
        assert_eq!(select_best(&c).unwrap().best.claim, "alpha");
    }

    #[test]
    fn select_single_and_empty() {
        let c = vec![cand("only", 0.1, 0.1)];
        let sel = select_best(&c).unwrap();
        assert_eq!(sel.best, c[0]);
        assert_eq!(sel.ledger, c);
        assert_eq!(select_best::<f64>(&[]), Err(FilterError::EmptyCandidates));
    }

    #[test]
    fn total_is_exact_sum() {
        let s = FidelityScores::new(0.1f64, 0.2);
        assert_eq!(s.total, 0.1 + 0.2);
    }
}
