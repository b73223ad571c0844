//! Shared data vocabulary: instances, rationales, entities and output records.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::ValidationError;
use crate::text::Span;

/// Verification label. Pipeline inputs are restricted to `Sup` and `Ref`;
/// `Nei` exists for three-way checking verifiers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Sup,
    Ref,
    Nei,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Sup, Label::Ref, Label::Nei];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Sup => "SUP",
            Label::Ref => "REF",
            Label::Nei => "NEI",
        }
    }

    pub fn is_binary(self) -> bool {
        matches!(self, Label::Sup | Label::Ref)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = ValidationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "SUP" => Ok(Label::Sup),
            "REF" => Ok(Label::Ref),
            "NEI" => Ok(Label::Nei),
            other => Err(ValidationError::BadLabel(other.to_string())),
        }
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

/// One evidence sentence with its page title. Serialized as `["title", "sentence"]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EvidenceItem {
    pub title: String,
    pub text: String,
}

impl EvidenceItem {
    pub fn new(title: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            text: text.into(),
        }
    }
}

impl Serialize for EvidenceItem {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        (&self.title, &self.text).serialize(s)
    }
}

impl<'de> Deserialize<'de> for EvidenceItem {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let (title, text) = <(String, String)>::deserialize(d)?;
        Ok(Self { title, text })
    }
}

/// A claim, its ordered multi-hop evidence and a verification label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub claim: String,
    pub label: Label,
    pub evidence: Vec<EvidenceItem>,
}

impl Instance {
    pub fn new(
        id: impl Into<String>,
        claim: impl Into<String>,
        label: Label,
        evidence: Vec<EvidenceItem>,
    ) -> Self {
        Self {
            id: id.into(),
            claim: claim.into(),
            label,
            evidence,
        }
    }
}

/// Checks every [`Instance`] invariant and hands the instance back unchanged.
pub fn validate_instance(inst: Instance) -> Result<Instance, ValidationError> {
    if inst.evidence.is_empty() {
        return Err(ValidationError::EmptyEvidence { id: inst.id });
    }
    if let Some(index) = inst.evidence.iter().position(|e| e.text.trim().is_empty()) {
        return Err(ValidationError::EmptyEvidenceText { id: inst.id, index });
    }
    if inst.claim.trim().is_empty() {
        return Err(ValidationError::EmptyClaim { id: inst.id });
    }
    Ok(inst)
}

/// Same as [`validate_instance`] but also checks attached rationales.
pub fn validate_with_rationales(
    inst: Instance,
    rationales: &Rationales,
) -> Result<Instance, ValidationError> {
    let inst = validate_instance(inst)?;
    rationales.validate_against(&inst)?;
    Ok(inst)
}

/// Sentence-level mask and per-sentence character spans marking causal content.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rationales {
    pub sentence_mask: Vec<bool>,
    pub token_spans: Vec<Vec<Span>>,
}

impl Rationales {
    pub fn masked_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.sentence_mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
    }

    pub fn validate_against(&self, inst: &Instance) -> Result<(), ValidationError> {
        let n = inst.evidence.len();
        if self.sentence_mask.len() != n || self.token_spans.len() != n {
            return Err(ValidationError::RationaleShape {
                id: inst.id.clone(),
                evidence: n,
                mask: self.sentence_mask.len(),
                spans: self.token_spans.len(),
            });
        }
        for (i, spans) in self.token_spans.iter().enumerate() {
            let len = inst.evidence[i].text.chars().count();
            let mut prev_end = 0;
            for (j, span) in spans.iter().enumerate() {
                if span.start >= span.end || span.end > len {
                    return Err(ValidationError::SpanOutOfBounds {
                        id: inst.id.clone(),
                        evidence: i,
                        span: *span,
                    });
                }
                if j > 0 && span.start < prev_end {
                    return Err(ValidationError::SpansUnordered {
                        id: inst.id.clone(),
                        evidence: i,
                    });
                }
                prev_end = span.end;
            }
            if !spans.is_empty() && !self.sentence_mask[i] {
                return Err(ValidationError::UnmaskedSpans {
                    id: inst.id.clone(),
                    evidence: i,
                });
            }
        }
        Ok(())
    }
}

/// The five retained entity types.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EntityType {
    Org,
    Person,
    Date,
    Gpe,
    Num,
}

impl EntityType {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityType::Org => "ORG",
            EntityType::Person => "PERSON",
            EntityType::Date => "DATE",
            EntityType::Gpe => "GPE",
            EntityType::Num => "NUM",
        }
    }

    /// Types replaced from dataset-wide pools.
    pub fn is_replaceable(self) -> bool {
        matches!(self, EntityType::Gpe | EntityType::Date | EntityType::Num)
    }

    /// Types swapped within an instance.
    pub fn is_swappable(self) -> bool {
        matches!(self, EntityType::Person | EntityType::Org)
    }

    /// Maps a recognizer label onto a retained type; anything else is dropped.
    pub fn from_label(label: &str) -> Option<Self> {
        match label {
            "ORG" => Some(EntityType::Org),
            "PERSON" => Some(EntityType::Person),
            "DATE" => Some(EntityType::Date),
            "GPE" => Some(EntityType::Gpe),
            "NUM" => Some(EntityType::Num),
            _ => None,
        }
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Entity {
    pub surface: String,
    pub etype: EntityType,
    pub evidence_index: usize,
    pub span: Span,
}

/// Causal entities, sorted by `(evidence_index, span.start)` with no duplicate position.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySet {
    entities: Vec<Entity>,
}

impl EntitySet {
    pub fn new(mut entities: Vec<Entity>) -> Self {
        entities.sort_by(|a, b| {
            (a.evidence_index, a.span.start, a.span.end).cmp(&(
                b.evidence_index,
                b.span.start,
                b.span.end,
            ))
        });
        entities.dedup_by(|a, b| a.evidence_index == b.evidence_index && a.span == b.span);
        Self { entities }
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Entity> {
        self.entities.iter()
    }
}

impl<'a> IntoIterator for &'a EntitySet {
    type Item = &'a Entity;
    type IntoIter = std::slice::Iter<'a, Entity>;

    fn into_iter(self) -> Self::IntoIter {
        self.entities.iter()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RecordKind {
    /// Generated claim paired with the original evidence.
    ClaimCf,
    /// Original claim paired with edited evidence.
    EvidenceCf,
}

/// One augmented instance. `provenance` keys are stage names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualRecord {
    pub source_id: String,
    pub kind: RecordKind,
    pub claim: String,
    pub evidence: Vec<EvidenceItem>,
    pub label: Label,
    pub provenance: BTreeMap<String, serde_json::Value>,
}
