//! Rationale extraction: which evidence sentences and tokens carry the label.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Instance, Label, Rationales};
use crate::text::{self, Span};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExplainError {
    #[error("instance {0}: no evidence sentence qualifies as a rationale")]
    EmptyRationale(String),
    #[error("instance {id}: rationale extraction needs a SUP or REF label, got {label}")]
    UnsupportedLabel { id: String, label: Label },
    #[error("instance {0}: no gold rationale available")]
    MissingGold(String),
    #[error(transparent)]
    Invalid(#[from] crate::error::ValidationError),
}

pub trait RationaleExtractor: Send + Sync {
    fn extract(&self, inst: &Instance) -> Result<Rationales, ExplainError>;
}

/// Runs the extractor and enforces the output contract: the rationales fit
/// the instance, at least one sentence is masked, and every masked sentence
/// has at least one token span.
pub fn extract_rationales(
    extractor: &dyn RationaleExtractor,
    inst: &Instance,
) -> Result<Rationales, ExplainError> {
    if !inst.label.is_binary() {
        return Err(ExplainError::UnsupportedLabel {
            id: inst.id.clone(),
            label: inst.label,
        });
    }
    let rats = extractor.extract(inst)?;
    rats.validate_against(inst)?;
    let any_masked = rats.masked_indices().next().is_some();
    let all_spanned = rats.masked_indices().all(|i| !rats.token_spans[i].is_empty());
    if !any_masked || !all_spanned {
        return Err(ExplainError::EmptyRationale(inst.id.clone()));
    }
    Ok(rats)
}

/// Overlap heuristic. Token rationales are evidence tokens whose lowercase
/// form is a claim content word, plus bridge tokens whose content word occurs
/// in two or more evidence items. Sentence rationales are the sentences that
/// own at least one token rationale.
#[derive(Clone, Copy, Debug, Default)]
pub struct HeuristicExtractor;

impl RationaleExtractor for HeuristicExtractor {
    fn extract(&self, inst: &Instance) -> Result<Rationales, ExplainError> {
        let claim_words: BTreeSet<String> = text::tokenize(&inst.claim)
            .iter()
            .filter_map(text::content_word)
            .collect();

        let per_evidence: Vec<Vec<(Span, Option<String>)>> = inst
            .evidence
            .iter()
            .map(|e| {
                text::tokenize(&e.text)
                    .iter()
                    .map(|t| (t.span, text::content_word(t)))
                    .collect()
            })
            .collect();

        let mut doc_freq: HashMap<&str, usize> = HashMap::new();
        for toks in &per_evidence {
            let words: BTreeSet<&str> = toks.iter().filter_map(|(_, w)| w.as_deref()).collect();
            for w in words {
                *doc_freq.entry(w).or_default() += 1;
            }
        }

        let token_spans: Vec<Vec<Span>> = per_evidence
            .iter()
            .map(|toks| {
                toks.iter()
                    .filter_map(|(span, word)| {
                        let w = word.as_deref()?;
                        let keep = claim_words.contains(w) || doc_freq.get(w).copied().unwrap_or(0) >= 2;
                        keep.then_some(*span)
                    })
                    .collect()
            })
            .collect();
        let sentence_mask = token_spans.iter().map(|s| !s.is_empty()).collect();
        let rats = Rationales {
            sentence_mask,
            token_spans,
        };
        if rats.masked_indices().next().is_none() {
            return Err(ExplainError::EmptyRationale(inst.id.clone()));
        }
        Ok(rats)
    }
}

/// One line of the gold-rationale sidecar file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldRationale {
    pub id: String,
    pub sentence_mask: Vec<bool>,
    pub token_spans: Vec<Vec<Span>>,
}

impl From<GoldRationale> for (String, Rationales) {
    fn from(g: GoldRationale) -> Self {
        (
            g.id,
            Rationales {
                sentence_mask: g.sentence_mask,
                token_spans: g.token_spans,
            },
        )
    }
}

/// Returns annotated rationales verbatim, keyed by instance id.
#[derive(Clone, Debug, Default)]
pub struct OracleExtractor {
    gold: HashMap<String, Rationales>,
}

impl OracleExtractor {
    pub fn new(gold: impl IntoIterator<Item = GoldRationale>) -> Self {
        Self {
            gold: gold.into_iter().map(Into::into).collect(),
        }
    }
}

impl RationaleExtractor for OracleExtractor {
    fn extract(&self, inst: &Instance) -> Result<Rationales, ExplainError> {
        self.gold
            .get(&inst.id)
            .cloned()
            .ok_or_else(|| ExplainError::MissingGold(inst.id.clone()))
    }
}

/// Gold annotations when present, the heuristic otherwise.
#[derive(Clone, Debug, Default)]
pub struct GoldOrHeuristic {
    pub gold: OracleExtractor,
}

impl RationaleExtractor for GoldOrHeuristic {
    fn extract(&self, inst: &Instance) -> Result<Rationales, ExplainError> {
        match self.gold.extract(inst) {
            Err(ExplainError::MissingGold(_)) => HeuristicExtractor.extract(inst),
            other => other,
        }
    }
}
