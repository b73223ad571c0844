//! Verifier gates around editing and generation.

use serde::{Deserialize, Serialize};

use crate::backends::{verify, LabelScores, Verifier};
use crate::error::BackendError;
use crate::model::{EvidenceItem, Label};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardReason {
    /// Edited evidence still supports the claim.
    UnderEdited,
    /// Edited evidence no longer decides the claim.
    OverEdited,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "lowercase")]
pub enum AdCheck {
    Keep { scores: LabelScores },
    Discard { label: Label, reason: DiscardReason, scores: LabelScores },
}

impl AdCheck {
    pub fn is_keep(&self) -> bool {
        matches!(self, AdCheck::Keep { .. })
    }
}

/// Keeps edited evidence only when it refutes the original claim.
pub fn ad_check(
    claim: &str,
    edited: &[EvidenceItem],
    verifier: &dyn Verifier,
) -> Result<AdCheck, BackendError> {
    let v = verify(verifier, claim, edited)?;
    Ok(match v.label {
        Label::Ref => AdCheck::Keep { scores: v.scores },
        Label::Sup => AdCheck::Discard {
            label: Label::Sup,
            reason: DiscardReason::UnderEdited,
            scores: v.scores,
        },
        Label::Nei => AdCheck::Discard {
            label: Label::Nei,
            reason: DiscardReason::OverEdited,
            scores: v.scores,
        },
    })
}

/// A candidate claim whose predicted label differs from the source label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlippedCandidate {
    pub claim: String,
    pub label: Label,
    pub scores: LabelScores,
}

/// Keeps candidates whose verdict against the original evidence differs
/// from `original_label`, in input order.
pub fn post_check(
    candidates: &[String],
    original_evidence: &[EvidenceItem],
    original_label: Label,
    verifier: &dyn Verifier,
) -> Result<Vec<FlippedCandidate>, BackendError> {
    if !original_label.is_binary() {
        return Err(BackendError::InvalidInput(format!(
            "post-checking needs a SUP or REF source label, got {original_label}"
        )));
    }
    let mut kept = Vec::new();
    for c in candidates {
        let v = verify(verifier, c, original_evidence)?;
        if v.label != original_label {
            kept.push(FlippedCandidate {
                claim: c.clone(),
                label: v.label,
                scores: v.scores,
            });
        }
    }
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::Verdict;
    use std::collections::HashMap;

    /// Answers from a fixed claim -> label table.
    struct Scripted(HashMap<String, Label>);

    impl Verifier for Scripted {
        fn verify(&self, claim: &str, _e: &[EvidenceItem]) -> Result<Verdict, BackendError> {
            let label = self.0[claim];
            let mut s = [0.1; 3];
            s[label as usize] = 0.8;
            Ok(Verdict::from_scores(LabelScores {
                sup: s[0],
                refute: s[1],
                nei: s[2],
            }))
        }
    }

    fn scripted(pairs: &[(&str, Label)]) -> Scripted {
        Scripted(pairs.iter().map(|(c, l)| (c.to_string(), *l)).collect())
    }

    fn ev() -> Vec<EvidenceItem> {
        vec![EvidenceItem::new("", "evidence")]
    }

    #[test]
    fn ad_check_decisions() {
        let v = scripted(&[("r", Label::Ref), ("s", Label::Sup), ("n", Label::Nei)]);
        assert!(ad_check("r", &ev(), &v).unwrap().is_keep());
        assert!(matches!(
            ad_check("s", &ev(), &v).unwrap(),
            AdCheck::Discard { reason: DiscardReason::UnderEdited, label: Label::Sup, .. }
        ));
        assert!(matches!(
            ad_check("n", &ev(), &v).unwrap(),
            AdCheck::Discard { reason: DiscardReason::OverEdited, label: Label::Nei, .. }
        ));
    }

    #[test]
    fn post_check_keeps_flipped_in_order() {
        let v = scripted(&[("c1", Label::Ref), ("c2", Label::Sup), ("c3", Label::Nei)]);
        let cands: Vec<String> = ["c1", "c2", "c3"].map(String::from).to_vec();
        let kept = post_check(&cands, &ev(), Label::Sup, &v).unwrap();
        let got: Vec<_> = kept.iter().map(|k| (k.claim.as_str(), k.label)).collect();
        assert_eq!(got, vec![("c1", Label::Ref), ("c3", Label::Nei)]);
    }

    #[test]
    fn post_check_all_unflipped_is_empty() {
        let v = scripted(&[("c1", Label::Sup), ("c2", Label::Sup)]);
        let cands: Vec<String> = ["c1", "c2"].map(String::from).to_vec();
        assert!(post_check(&cands, &ev(), Label::Sup, &v).unwrap().is_empty());
    }

    #[test]
    fn post_check_ref_source() {
        let v = scripted(&[("c1", Label::Sup)]);
        let kept = post_check(&["c1".to_string()], &ev(), Label::Ref, &v).unwrap();
        assert_eq!(kept[0].label, Label::Sup);
    }

    #[test]
    fn ad_check_record_shape() {
        let v = scripted(&[("s", Label::Sup)]);
        let json = serde_json::to_value(ad_check("s", &ev(), &v).unwrap()).unwrap();
        assert_eq!(json["decision"], "discard");
        assert_eq!(json["reason"], "under_edited");
    }
}
