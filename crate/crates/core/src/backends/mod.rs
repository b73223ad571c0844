//! Model-backend contracts: token scorer, embedding provider, entity
//! recognizer and verifier.
//!
//! Every backend declares whether it tolerates concurrent invocation through
//! [`Concurrency`]; [`Exclusive`] wraps a backend so calls are serialized.

mod toy;

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

pub use toy::{
    BigramParams, BigramScorer, EntityOverlapVerifier, Gazetteer, GazetteerRecognizer,
    HashEmbedder, RandomScorer, TableEmbedder, UniformScorer,
};

use crate::error::BackendError;
use crate::model::{Entity, EntityType, EvidenceItem, Label};
use crate::text::{self, Span};

pub type TokenId = u32;

pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;
pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";

/// Finite ordered vocabulary. Ids 0 and 1 are the begin and end tokens; the
/// remaining entries are sorted so ids are stable for a given token set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = tokens
            .into_iter()
            .map(Into::into)
            .filter(|t| t != BOS_TOKEN && t != EOS_TOKEN)
            .collect();
        let tokens: Vec<String> = [BOS_TOKEN.to_string(), EOS_TOKEN.to_string()]
            .into_iter()
            .chain(set)
            .collect();
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Self { tokens, index }
    }

    /// Vocabulary over every toy-tokenizer token of `texts`.
    pub fn from_texts<'a, I: IntoIterator<Item = &'a str>>(texts: I) -> Self {
        Self::from_tokens(texts.into_iter().flat_map(text::token_strings))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Result<TokenId, BackendError> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| BackendError::UnknownToken(token.to_string()))
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn is_special(id: TokenId) -> bool {
        id == BOS || id == EOS
    }

    pub fn check(&self, ids: &[TokenId]) -> Result<(), BackendError> {
        match ids.iter().find(|&&id| id as usize >= self.tokens.len()) {
            Some(bad) => Err(BackendError::UnknownToken(format!("#{bad}"))),
            None => Ok(()),
        }
    }

    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>, BackendError> {
        text::tokenize(text).iter().map(|t| self.id(t.text)).collect()
    }

    /// Detokenizes, dropping the begin/end tokens.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        let toks: Vec<&str> = ids
            .iter()
            .filter(|&&id| !Self::is_special(id))
            .filter_map(|&id| self.token(id))
            .collect();
        text::detokenize(&toks)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Concurrency {
    /// Safe to call from several workers at once.
    Shared,
    /// Calls must be serialized.
    Exclusive,
}

/// Next-token distribution over a fixed vocabulary.
pub trait TokenScorer: Send + Sync {
    fn vocab(&self) -> &Vocab;

    /// Log-probabilities over the whole vocabulary for the token following
    /// `prefix`, conditioned on the encoder `context`.
    fn score_next_tokens(
        &self,
        context: &[TokenId],
        prefix: &[TokenId],
    ) -> Result<Vec<f64>, BackendError>;

    fn concurrency(&self) -> Concurrency {
        Concurrency::Shared
    }
}

/// Chain-rule log-probability of `tokens` given `context`.
pub fn sequence_log_prob(
    scorer: &dyn TokenScorer,
    context: &[TokenId],
    tokens: &[TokenId],
) -> Result<f64, BackendError> {
    if tokens.is_empty() {
        return Err(BackendError::InvalidInput("empty token sequence".into()));
    }
    scorer.vocab().check(tokens)?;
    let mut total = 0.0;
    for i in 0..tokens.len() {
        let dist = scorer.score_next_tokens(context, &tokens[..i])?;
        total += dist[tokens[i] as usize];
    }
    Ok(total)
}

/// One vector per toy-tokenizer token.
pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;

    fn embed(&self, text: &str) -> Result<Vec<Vec<f64>>, BackendError>;

    fn concurrency(&self) -> Concurrency {
        Concurrency::Shared
    }
}

/// Raw recognizer output; `label` may name a type outside the retained five.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub surface: String,
    pub label: String,
    pub span: Span,
}

pub trait EntityRecognizer: Send + Sync {
    fn recognize(&self, text: &str) -> Result<Vec<Mention>, BackendError>;

    fn concurrency(&self) -> Concurrency {
        Concurrency::Shared
    }
}

/// Recognizes entities in one evidence text, keeping the five retained types
/// and dropping mentions whose span does not reproduce their surface.
pub fn recognize_entities(
    ner: &dyn EntityRecognizer,
    text: &str,
    evidence_index: usize,
) -> Result<Vec<Entity>, BackendError> {
    let len = text::char_len(text);
    Ok(ner
        .recognize(text)?
        .into_iter()
        .filter_map(|m| {
            let etype = EntityType::from_label(&m.label)?;
            if m.span.is_empty() || m.span.end > len || text::slice(text, m.span) != m.surface {
                log::debug!("dropping inconsistent mention {:?}", m);
                return None;
            }
            Some(Entity {
                surface: m.surface,
                etype,
                evidence_index,
                span: m.span,
            })
        })
        .collect())
}

/// Per-label verifier scores.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelScores {
    #[serde(rename = "SUP")]
    pub sup: f64,
    #[serde(rename = "REF")]
    pub refute: f64,
    #[serde(rename = "NEI")]
    pub nei: f64,
}

impl LabelScores {
    pub fn get(&self, label: Label) -> f64 {
        match label {
            Label::Sup => self.sup,
            Label::Ref => self.refute,
            Label::Nei => self.nei,
        }
    }

    /// Highest-scoring label; ties go to the earliest of SUP, REF, NEI.
    pub fn argmax(&self) -> Label {
        let mut best = Label::Sup;
        for label in [Label::Ref, Label::Nei] {
            if self.get(label) > self.get(best) {
                best = label;
            }
        }
        best
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: Label,
    pub scores: LabelScores,
}

impl Verdict {
    pub fn from_scores(scores: LabelScores) -> Self {
        Self {
            label: scores.argmax(),
            scores,
        }
    }
}

pub trait Verifier: Send + Sync {
    fn verify(&self, claim: &str, evidence: &[EvidenceItem]) -> Result<Verdict, BackendError>;

    fn concurrency(&self) -> Concurrency {
        Concurrency::Shared
    }
}

/// Checks preconditions, then delegates to the verifier.
pub fn verify(
    verifier: &dyn Verifier,
    claim: &str,
    evidence: &[EvidenceItem],
) -> Result<Verdict, BackendError> {
    if claim.trim().is_empty() {
        return Err(BackendError::InvalidInput("empty claim".into()));
    }
    if evidence.is_empty() {
        return Err(BackendError::InvalidInput("empty evidence".into()));
    }
    verifier.verify(claim, evidence)
}

/// Serializes every call into the wrapped backend.
pub struct Exclusive<B: ?Sized> {
    lock: Mutex<()>,
    inner: Arc<B>,
}

impl<B: ?Sized> Exclusive<B> {
    pub fn new(inner: Arc<B>) -> Self {
        Self {
            lock: Mutex::new(()),
            inner,
        }
    }

    fn guard(&self) -> std::sync::MutexGuard<'_, ()> {
        self.lock.lock().unwrap_or_else(|p| p.into_inner())
    }
}

impl<B: TokenScorer + ?Sized> TokenScorer for Exclusive<B> {
    fn vocab(&self) -> &Vocab {
        self.inner.vocab()
    }

    fn score_next_tokens(
        &self,
        context: &[TokenId],
        prefix: &[TokenId],
    ) -> Result<Vec<f64>, BackendError> {
        let _g = self.guard();
        self.inner.score_next_tokens(context, prefix)
    }
}

impl<B: EmbeddingProvider + ?Sized> EmbeddingProvider for Exclusive<B> {
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn embed(&self, text: &str) -> Result<Vec<Vec<f64>>, BackendError> {
        let _g = self.guard();
        self.inner.embed(text)
    }
}

impl<B: EntityRecognizer + ?Sized> EntityRecognizer for Exclusive<B> {
    fn recognize(&self, text: &str) -> Result<Vec<Mention>, BackendError> {
        let _g = self.guard();
        self.inner.recognize(text)
    }
}

impl<B: Verifier + ?Sized> Verifier for Exclusive<B> {
    fn verify(&self, claim: &str, evidence: &[EvidenceItem]) -> Result<Verdict, BackendError> {
        let _g = self.guard();
        self.inner.verify(claim, evidence)
    }
}

/// The four backends the pipeline needs.
#[derive(Clone)]
pub struct Backends {
    pub scorer: Arc<dyn TokenScorer>,
    pub embedder: Arc<dyn EmbeddingProvider>,
    pub ner: Arc<dyn EntityRecognizer>,
    pub verifier: Arc<dyn Verifier>,
}

impl Backends {
    /// Wraps every backend that declared itself exclusive.
    pub fn serialized(self) -> Self {
        let scorer: Arc<dyn TokenScorer> = match self.scorer.concurrency() {
            Concurrency::Shared => self.scorer,
            Concurrency::Exclusive => Arc::new(Exclusive::new(self.scorer)),
        };
        let embedder: Arc<dyn EmbeddingProvider> = match self.embedder.concurrency() {
            Concurrency::Shared => self.embedder,
            Concurrency::Exclusive => Arc::new(Exclusive::new(self.embedder)),
        };
        let ner: Arc<dyn EntityRecognizer> = match self.ner.concurrency() {
            Concurrency::Shared => self.ner,
            Concurrency::Exclusive => Arc::new(Exclusive::new(self.ner)),
        };
        let verifier: Arc<dyn Verifier> = match self.verifier.concurrency() {
            Concurrency::Shared => self.verifier,
            Concurrency::Exclusive => Arc::new(Exclusive::new(self.verifier)),
        };
        Self {
            scorer,
            embedder,
            ner,
            verifier,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocab_ids_are_stable() {
        let v = Vocab::from_tokens(["b", "a", "b", "c"]);
        assert_eq!(v.tokens(), ["<s>", "</s>", "a", "b", "c"]);
        assert_eq!(v.id("a").unwrap(), 2);
        assert!(matches!(v.id("z"), Err(BackendError::UnknownToken(_))));
    }

    #[test]
    fn argmax_ties_prefer_lower_enum() {
        let s = LabelScores {
            sup: 0.4,
            refute: 0.4,
            nei: 0.2,
        };
        assert_eq!(s.argmax(), Label::Sup);
        let s = LabelScores {
            sup: 0.2,
            refute: 0.4,
            nei: 0.4,
        };
        assert_eq!(s.argmax(), Label::Ref);
    }

    #[test]
    fn label_scores_wire_names() {
        let s = LabelScores {
            sup: 0.5,
            refute: 0.25,
            nei: 0.25,
        };
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"{"SUP":0.5,"REF":0.25,"NEI":0.25}"#);
    }

    #[test]
    fn recognize_entities_drops_unknown_types() {
        struct Fixed;
        impl EntityRecognizer for Fixed {
            fn recognize(&self, _text: &str) -> Result<Vec<Mention>, BackendError> {
                Ok(vec![
                    Mention {
                        surface: "Ford".into(),
                        label: "ORG".into(),
                        span: Span::new(0, 4),
                    },
                    Mention {
                        surface: "cars".into(),
                        label: "PRODUCT".into(),
                        span: Span::new(5, 9),
                    },
                ])
            }
        }
        let ents = recognize_entities(&Fixed, "Ford cars", 0).unwrap();
        assert_eq!(ents.len(), 1);
        assert_eq!(ents[0].etype, EntityType::Org);
    }

    #[test]
    fn verify_rejects_empty_inputs() {
        let v = EntityOverlapVerifier::new(Arc::new(GazetteerRecognizer::default()));
        assert!(verify(&v, " ", &[EvidenceItem::new("", "x")]).is_err());
        assert!(verify(&v, "x", &[]).is_err());
    }
}
