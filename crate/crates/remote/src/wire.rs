//! Request and response bodies. Token spans travel as character offsets.

use serde::{Deserialize, Serialize};

use hopcf::backends::{LabelScores, Mention, TokenId};
use hopcf::text::Span;
use hopcf::Label;

pub const SCORE: &str = "/score";
pub const EMBED: &str = "/embed";
pub const NER: &str = "/ner";
pub const VERIFY: &str = "/verify";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub context: Vec<TokenId>,
    pub prefix: Vec<TokenId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub log_probs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vectors: Vec<Vec<f64>>,
    pub dimension: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NerRequest {
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireEntity {
    pub surface: String,
    #[serde(rename = "type")]
    pub etype: String,
    pub start: usize,
    pub end: usize,
}

impl From<Mention> for WireEntity {
    fn from(m: Mention) -> Self {
        Self {
            surface: m.surface,
            etype: m.label,
            start: m.span.start,
            end: m.span.end,
        }
    }
}

impl From<WireEntity> for Mention {
    fn from(w: WireEntity) -> Self {
        Mention {
            surface: w.surface,
            label: w.etype,
            span: Span::new(w.start, w.end),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NerResponse {
    pub entities: Vec<WireEntity>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyRequest {
    pub claim: String,
    pub evidence: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyResponse {
    pub label: Label,
    pub scores: LabelScores,
}

/// Body of every non-2xx response.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
