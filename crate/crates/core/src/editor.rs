//! Entity-based evidence editing for SUP instances.
//!
//! Causal entities are the recognized entities overlapping token rationales.
//! GPE/DATE/NUM surfaces are replaced by other surfaces of the same type
//! harvested from the whole dataset; PERSON/ORG surfaces found in different
//! evidence items are swapped. Every edit is applied to every occurrence in
//! every evidence text and title.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{recognize_entities, EntityRecognizer};
use crate::error::BackendError;
use crate::model::{Entity, EntitySet, EntityType, EvidenceItem, Instance, Rationales};
use crate::text::{self, Span};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EditError {
    #[error("no edit possible: {0}")]
    NoEditPossible(String),
}

/// Token-rationale entities of the five retained types.
pub fn collect_causal_entities(
    inst: &Instance,
    rats: &Rationales,
    ner: &dyn EntityRecognizer,
) -> Result<EntitySet, BackendError> {
    let mut out = Vec::new();
    for (i, ev) in inst.evidence.iter().enumerate() {
        let spans = match rats.token_spans.get(i) {
            Some(s) if !s.is_empty() => s,
            _ => continue,
        };
        for ent in recognize_entities(ner, &ev.text, i)? {
            if spans.iter().any(|s| s.overlaps(&ent.span)) {
                out.push(ent);
            }
        }
    }
    Ok(EntitySet::new(out))
}

/// Dataset-wide replacement pools, deduplicated and sorted.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityPools {
    pub gpe: Vec<String>,
    pub date: Vec<String>,
    pub num: Vec<String>,
}

impl EntityPools {
    pub fn get(&self, etype: EntityType) -> &[String] {
        match etype {
            EntityType::Gpe => &self.gpe,
            EntityType::Date => &self.date,
            EntityType::Num => &self.num,
            EntityType::Person | EntityType::Org => &[],
        }
    }
}

pub fn build_entity_pools(
    dataset: &[Instance],
    ner: &dyn EntityRecognizer,
) -> Result<EntityPools, BackendError> {
    let mut pools: BTreeMap<EntityType, BTreeSet<String>> = BTreeMap::new();
    for inst in dataset {
        for (i, ev) in inst.evidence.iter().enumerate() {
            for ent in recognize_entities(ner, &ev.text, i)? {
                if ent.etype.is_replaceable() && !ent.surface.trim().is_empty() {
                    pools.entry(ent.etype).or_default().insert(ent.surface);
                }
            }
        }
    }
    let mut take = |t| pools.remove(&t).unwrap_or_default().into_iter().collect();
    Ok(EntityPools {
        gpe: take(EntityType::Gpe),
        date: take(EntityType::Date),
        num: take(EntityType::Num),
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum EditOp {
    Replace {
        etype: EntityType,
        old: String,
        new: String,
    },
    Swap {
        a: String,
        b: String,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditPlan {
    pub ops: Vec<EditOp>,
}

impl EditPlan {
    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// `(old, new)` rewrite pairs; a swap contributes both directions.
    pub fn rewrites(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for op in &self.ops {
            match op {
                EditOp::Replace { old, new, .. } => out.push((old.clone(), new.clone())),
                EditOp::Swap { a, b } => {
                    out.push((a.clone(), b.clone()));
                    out.push((b.clone(), a.clone()));
                }
            }
        }
        out
    }

    /// Surfaces rewritten by `Replace` ops.
    pub fn replaced_surfaces(&self) -> impl Iterator<Item = &str> {
        self.ops.iter().filter_map(|op| match op {
            EditOp::Replace { old, .. } => Some(old.as_str()),
            EditOp::Swap { .. } => None,
        })
    }
}

/// Draws one edit plan.
///
/// Each distinct GPE/DATE/NUM surface gets an independent uniform draw from
/// its pool, excluding candidates that contain any causal surface of the
/// instance. If two or more PERSON/ORG surfaces exist, one pair located in
/// different evidence items is swapped. Surfaces nested inside another causal
/// surface ("Ford" in "Ford Fusion") are never edited.
pub fn plan_edits<R: Rng + ?Sized>(
    entities: &EntitySet,
    pools: &EntityPools,
    rng: &mut R,
) -> Result<EditPlan, EditError> {
    if entities.is_empty() {
        return Err(EditError::NoEditPossible("no causal entity".into()));
    }
    let all_surfaces: BTreeSet<&str> = entities.iter().map(|e| e.surface.as_str()).collect();

    // Distinct surfaces in entity order; the first type seen wins.
    let mut replaceable: Vec<(&str, EntityType)> = Vec::new();
    let mut swappable: Vec<&str> = Vec::new();
    let mut locations: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for e in entities {
        locations
            .entry(e.surface.as_str())
            .or_default()
            .insert(e.evidence_index);
        if !seen.insert(e.surface.as_str()) {
            continue;
        }
        let nested = all_surfaces
            .iter()
            .any(|s| *s != e.surface && s.contains(e.surface.as_str()));
        if nested {
            continue;
        }
        if e.etype.is_replaceable() {
            replaceable.push((&e.surface, e.etype));
        } else if e.etype.is_swappable() {
            swappable.push(&e.surface);
        }
    }

    let mut ops = Vec::new();
    for (old, etype) in replaceable {
        let candidates: Vec<&String> = pools
            .get(etype)
            .iter()
            .filter(|p| !all_surfaces.iter().any(|s| p.contains(s)))
            .collect();
        if candidates.is_empty() {
            continue;
        }
        let new = candidates[rng.gen_range(0..candidates.len())].clone();
        ops.push(EditOp::Replace {
            etype,
            old: old.to_string(),
            new,
        });
    }

    let mut pairs = Vec::new();
    for (i, a) in swappable.iter().enumerate() {
        for b in &swappable[i + 1..] {
            if a.contains(b) || b.contains(a) {
                continue;
            }
            let (la, lb) = (&locations[a], &locations[b]);
            if la.iter().any(|x| lb.iter().any(|y| x != y)) {
                pairs.push((*a, *b));
            }
        }
    }
    if !pairs.is_empty() {
        let (a, b) = pairs[rng.gen_range(0..pairs.len())];
        ops.push(EditOp::Swap {
            a: a.to_string(),
            b: b.to_string(),
        });
    }

    if ops.is_empty() {
        return Err(EditError::NoEditPossible(
            "no replaceable entity with a usable pool and no cross-evidence swap pair".into(),
        ));
    }
    Ok(EditPlan { ops })
}

/// One rewritten region, in characters of the old and new text.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Region {
    old: Span,
    new: Span,
}

/// Simultaneous left-to-right rewrite; at each position the longest matching
/// surface wins, so a swap never re-rewrites its own output.
fn rewrite(text: &str, map: &[(String, String)]) -> (String, Vec<Region>) {
    let mut out = String::with_capacity(text.len());
    let mut regions = Vec::new();
    let (mut byte, mut old_ch, mut new_ch) = (0, 0, 0);
    while byte < text.len() {
        let rest = &text[byte..];
        if let Some((old, new)) = map.iter().find(|(o, _)| rest.starts_with(o.as_str())) {
            let (ol, nl) = (text::char_len(old), text::char_len(new));
            regions.push(Region {
                old: Span::new(old_ch, old_ch + ol),
                new: Span::new(new_ch, new_ch + nl),
            });
            out.push_str(new);
            byte += old.len();
            old_ch += ol;
            new_ch += nl;
        } else {
            let c = rest.chars().next().expect("non-empty rest");
            out.push(c);
            byte += c.len_utf8();
            old_ch += 1;
            new_ch += 1;
        }
    }
    (out, regions)
}

fn map_offset(regions: &[Region], off: usize, is_end: bool) -> usize {
    let mut delta: isize = 0;
    for r in regions {
        // Offsets on a region boundary fall through to the shift below.
        if r.old.start < off && off < r.old.end {
            return if is_end { r.new.end } else { r.new.start };
        }
        if r.old.end <= off {
            delta += r.new.len() as isize - r.old.len() as isize;
        }
    }
    (off as isize + delta) as usize
}

/// Applies `plan` to every evidence text and title. Returns the edited
/// evidence and the entity set with surfaces and spans moved to the new text.
pub fn apply_edits(
    evidence: &[EvidenceItem],
    entities: &EntitySet,
    plan: &EditPlan,
) -> (Vec<EvidenceItem>, EntitySet) {
    let mut map = plan.rewrites();
    map.retain(|(o, _)| !o.is_empty());
    map.sort_by(|a, b| {
        text::char_len(&b.0)
            .cmp(&text::char_len(&a.0))
            .then_with(|| a.0.cmp(&b.0))
    });

    let mut edited = Vec::with_capacity(evidence.len());
    let mut regions = Vec::with_capacity(evidence.len());
    for ev in evidence {
        let (title, _) = rewrite(&ev.title, &map);
        let (body, r) = rewrite(&ev.text, &map);
        edited.push(EvidenceItem::new(title, body));
        regions.push(r);
    }

    let moved = entities
        .iter()
        .map(|e| {
            let r = &regions[e.evidence_index];
            let span = Span::new(
                map_offset(r, e.span.start, false),
                map_offset(r, e.span.end, true),
            );
            Entity {
                surface: text::slice(&edited[e.evidence_index].text, span).to_string(),
                etype: e.etype,
                evidence_index: e.evidence_index,
                span,
            }
        })
        .collect();
    (edited, EntitySet::new(moved))
}
