//! NEI instances for training three-way checking verifiers: half of the SUP
//! and half of the REF instances lose one evidence item or borrow another
//! instance's evidence, and are relabeled NEI.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Instance, Label};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NeiError {
    #[error("need at least two {0} instances, found {1}")]
    InsufficientData(Label, usize),
    #[error("instance {id}: {reason}")]
    InvalidInput { id: String, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum Perturbation {
    /// Evidence item at `index` was dropped.
    RemoveEvidence { index: usize },
    /// Evidence replaced by that of the dataset instance at `donor`.
    BorrowEvidence { donor: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeiAugmentation {
    /// Unselected originals in input order, then NEI instances in input order.
    pub instances: Vec<Instance>,
    /// `(source index, perturbation)` for every NEI instance, aligned with
    /// the NEI tail of `instances`.
    pub perturbations: Vec<(usize, Perturbation)>,
}

impl NeiAugmentation {
    pub fn count(&self, label: Label) -> usize {
        self.instances.iter().filter(|i| i.label == label).count()
    }
}

pub fn augment_nei<R: Rng + ?Sized>(dataset: &[Instance], rng: &mut R) -> Result<NeiAugmentation, NeiError> {
    for inst in dataset {
        if !inst.label.is_binary() {
            return Err(NeiError::InvalidInput {
                id: inst.id.clone(),
                reason: "input already labeled NEI".into(),
            });
        }
        if inst.evidence.len() < 2 {
            return Err(NeiError::InvalidInput {
                id: inst.id.clone(),
                reason: "needs at least two evidence items".into(),
            });
        }
    }
    let of = |label: Label| -> Vec<usize> {
        (0..dataset.len()).filter(|&i| dataset[i].label == label).collect()
    };
    let (sup, refute) = (of(Label::Sup), of(Label::Ref));
    for (label, idx) in [(Label::Sup, &sup), (Label::Ref, &refute)] {
        if idx.len() < 2 {
            return Err(NeiError::InsufficientData(label, idx.len()));
        }
    }

    let mut selected = vec![false; dataset.len()];
    for idx in [&sup, &refute] {
        for k in index::sample(rng, idx.len(), idx.len() / 2) {
            selected[idx[k]] = true;
        }
    }

    let mut kept = Vec::new();
    let mut nei = Vec::new();
    let mut perturbations = Vec::new();
    for (i, inst) in dataset.iter().enumerate() {
        if !selected[i] {
            kept.push(inst.clone());
            continue;
        }
        let mut out = inst.clone();
        out.label = Label::Nei;
        out.id = format!("{}-nei", inst.id);
        let p = if rng.gen_bool(0.5) {
            let index = rng.gen_range(0..inst.evidence.len());
            out.evidence.remove(index);
            Perturbation::RemoveEvidence { index }
        } else {
            // Uniform over every other instance.
            let mut donor = rng.gen_range(0..dataset.len() - 1);
            if donor >= i {
                donor += 1;
            }
            out.evidence = dataset[donor].evidence.clone();
            Perturbation::BorrowEvidence { donor }
        };
        nei.push(out);
        perturbations.push((i, p));
    }
    kept.extend(nei);
    Ok(NeiAugmentation {
        instances: kept,
        perturbations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EvidenceItem;
    use crate::seed;

    fn data(n_sup: usize, n_ref: usize, n_ev: usize) -> Vec<Instance> {
        let mk = |i: usize, label| {
            Instance::new(
                format!("i{i}"),
                format!("claim {i}"),
                label,
                (0..n_ev)
                    .map(|e| EvidenceItem::new(format!("t{i}"), format!("evidence {i}.{e}")))
                    .collect(),
            )
        };
        (0..n_sup)
            .map(|i| mk(i, Label::Sup))
            .chain((n_sup..n_sup + n_ref).map(|i| mk(i, Label::Ref)))
            .collect()
    }

    #[test]
    fn four_and_four() {
        let out = augment_nei(&data(4, 4, 3), &mut seed::rng(1)).unwrap();
        assert_eq!(out.count(Label::Sup), 2);
        assert_eq!(out.count(Label::Ref), 2);
        assert_eq!(out.count(Label::Nei), 4);
        assert_eq!(out.instances.len(), 8);
        assert!(out.instances[..4].iter().all(|i| i.label != Label::Nei));
        assert!(out.instances[4..].iter().all(|i| i.label == Label::Nei));
    }

    #[test]
    fn removal_drops_one_item_and_keeps_claim() {
        let d = data(4, 4, 5);
        for s in 0..50 {
            let out = augment_nei(&d, &mut seed::rng(s)).unwrap();
            let tail = &out.instances[out.instances.len() - out.perturbations.len()..];
            for ((src, p), inst) in out.perturbations.iter().zip(tail) {
                assert_eq!(inst.claim, d[*src].claim);
                if let Perturbation::RemoveEvidence { index } = p {
                    assert_eq!(inst.evidence.len(), 4);
                    let mut expect = d[*src].evidence.clone();
                    expect.remove(*index);
                    assert_eq!(inst.evidence, expect);
                }
            }
        }
    }

    #[test]
    fn too_few_of_a_class() {
        assert_eq!(
            augment_nei(&data(1, 4, 2), &mut seed::rng(0)),
            Err(NeiError::InsufficientData(Label::Sup, 1))
        );
    }

    #[test]
    fn single_evidence_rejected() {
        assert!(matches!(
            augment_nei(&data(2, 2, 1), &mut seed::rng(0)),
            Err(NeiError::InvalidInput { .. })
        ));
    }

    #[test]
    fn deterministic_under_seed() {
        let d = data(7, 5, 3);
        assert_eq!(
            augment_nei(&d, &mut seed::rng(3)).unwrap(),
            augment_nei(&d, &mut seed::rng(3)).unwrap()
        );
    }
}
