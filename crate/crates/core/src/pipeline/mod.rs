//! End-to-end run: SUP instances are edited, ad-checked and regenerated from
//! the edited evidence; REF instances are regenerated from their own
//! evidence. Every surviving candidate is post-checked against the original
//! evidence and filtered by fidelity.

mod config;
mod io;

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub use config::{corpus_texts, BackendSpec, ConfigError, PipelineConfig, ToyConfig};
pub use io::{
    load_dataset, load_jsonl, load_records, parse_dataset, read_jsonl, save_jsonl, save_records,
    to_jsonl, write_jsonl, DataError,
};

use crate::backends::{verify, Backends};
use crate::checking::{self, ad_check, post_check, AdCheck};
use crate::editor::{apply_edits, build_entity_pools, collect_causal_entities, plan_edits, EditError, EntityPools};
use crate::error::BackendError;
use crate::explainer::{extract_rationales, ExplainError, GoldOrHeuristic, GoldRationale, OracleExtractor, RationaleExtractor};
use crate::filtering::{score_candidates, select_best, FilterError};
use crate::generator::{build_constraints, generate_candidates, Candidates, GenerateError};
use crate::model::{validate_instance, CounterfactualRecord, EntitySet, Instance, Label, Rationales, RecordKind};
use crate::seed;

/// The bundled 20-instance toy corpus and its gazetteer.
pub mod bundled {
    pub const TOY_CORPUS: &str = include_str!("../../data/toy_corpus.jsonl");
    pub const TOY_GAZETTEER: &str = include_str!("../../data/gazetteer.json");

    /// Default config with the bundled gazetteer inlined.
    pub fn toy_config() -> super::PipelineConfig {
        let mut cfg = super::PipelineConfig::default();
        cfg.toy.gazetteer = serde_json::from_str(TOY_GAZETTEER).expect("bundled gazetteer parses");
        cfg
    }

    pub fn toy_corpus() -> Vec<crate::model::Instance> {
        super::parse_dataset(TOY_CORPUS).expect("bundled corpus is valid")
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("building entity pools: {0}")]
    Pools(BackendError),
    #[error("worker pool: {0}")]
    Workers(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Validate,
    Explain,
    Edit,
    AdCheck,
    Generate,
    PostCheck,
    Filter,
    Emit,
}

impl Stage {
    const ALL: [Stage; 8] = [
        Stage::Validate,
        Stage::Explain,
        Stage::Edit,
        Stage::AdCheck,
        Stage::Generate,
        Stage::PostCheck,
        Stage::Filter,
        Stage::Emit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Validate => "validate",
            Stage::Explain => "explain",
            Stage::Edit => "edit",
            Stage::AdCheck => "ad_check",
            Stage::Generate => "generate",
            Stage::PostCheck => "post_check",
            Stage::Filter => "filter",
            Stage::Emit => "emit",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    InvalidInstance,
    NoRationale,
    NoCausalEntity,
    NoEditPossible,
    UnderEdited,
    OverEdited,
    NoConstraint,
    NoSatisfyingHypothesis,
    GenerationFailed,
    NoFlippedCandidate,
    EmissionCheckFailed,
    BackendError,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::InvalidInstance => "invalid_instance",
            DropReason::NoRationale => "no_rationale",
            DropReason::NoCausalEntity => "no_causal_entity",
            DropReason::NoEditPossible => "no_edit_possible",
            DropReason::UnderEdited => "under_edited",
            DropReason::OverEdited => "over_edited",
            DropReason::NoConstraint => "no_constraint",
            DropReason::NoSatisfyingHypothesis => "no_satisfying_hypothesis",
            DropReason::GenerationFailed => "generation_failed",
            DropReason::NoFlippedCandidate => "no_flipped_candidate",
            DropReason::EmissionCheckFailed => "emission_check_failed",
            DropReason::BackendError => "backend_error",
        }
    }
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dropped {
    pub source_id: String,
    pub stage: Stage,
    pub reason: DropReason,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub instances_in: usize,
    /// Instances that produced records.
    pub instances_out: usize,
    pub discards: BTreeMap<DropReason, usize>,
    /// Keyed `KIND/LABEL`, e.g. `CLAIM_CF/REF`.
    pub records: BTreeMap<String, usize>,
    /// Wall-clock seconds per stage, summed over workers.
    pub stage_seconds: BTreeMap<String, f64>,
    pub dropped: Vec<Dropped>,
}

impl RunReport {
    pub fn discarded(&self) -> usize {
        self.discards.values().sum()
    }

    pub fn is_conserved(&self) -> bool {
        self.instances_in == self.instances_out + self.discarded()
    }
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "instances in:  {}", self.instances_in)?;
        writeln!(f, "instances out: {}", self.instances_out)?;
        for (reason, n) in &self.discards {
            writeln!(f, "  dropped {reason}: {n}")?;
        }
        for (kind, n) in &self.records {
            writeln!(f, "records {kind}: {n}")?;
        }
        for (stage, secs) in &self.stage_seconds {
            writeln!(f, "time {stage}: {secs:.3}s")?;
        }
        Ok(())
    }
}

struct Discard {
    stage: Stage,
    reason: DropReason,
    detail: String,
}

impl Discard {
    fn new(stage: Stage, reason: DropReason, detail: impl fmt::Display) -> Self {
        Self {
            stage,
            reason,
            detail: detail.to_string(),
        }
    }

    fn backend(stage: Stage, e: impl fmt::Display) -> Self {
        Self::new(stage, DropReason::BackendError, e)
    }

    fn explain(e: ExplainError) -> Self {
        let reason = match e {
            ExplainError::EmptyRationale(_) | ExplainError::MissingGold(_) => DropReason::NoRationale,
            ExplainError::UnsupportedLabel { .. } | ExplainError::Invalid(_) => DropReason::InvalidInstance,
        };
        Self::new(Stage::Explain, reason, e)
    }

    fn generate(e: GenerateError) -> Self {
        let reason = match e {
            GenerateError::EmptyConstraints => DropReason::NoConstraint,
            GenerateError::NoSatisfyingHypothesis { .. } => DropReason::NoSatisfyingHypothesis,
            GenerateError::InvalidConfig(_) | GenerateError::NoRationale => DropReason::GenerationFailed,
            GenerateError::Backend(_) => DropReason::BackendError,
        };
        Self::new(Stage::Generate, reason, e)
    }

    fn filter(e: FilterError) -> Self {
        Self::backend(Stage::Filter, e)
    }
}

#[derive(Default)]
struct Timer {
    seconds: BTreeMap<Stage, f64>,
}

impl Timer {
    fn time<T>(&mut self, stage: Stage, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        *self.seconds.entry(stage).or_default() += start.elapsed().as_secs_f64();
        out
    }
}

struct Ctx<'a> {
    cfg: &'a PipelineConfig,
    backends: &'a Backends,
    extractor: &'a dyn RationaleExtractor,
    pools: &'a EntityPools,
}

struct Outcome {
    source_id: String,
    result: Result<Vec<CounterfactualRecord>, Discard>,
    timer: Timer,
}

impl Ctx<'_> {
    fn base_provenance(&self, inst: &Instance, rats: &Rationales) -> BTreeMap<String, Value> {
        BTreeMap::from([
            ("seed".into(), json!(self.cfg.seed)),
            ("instance_seed".into(), json!(seed::instance_seed(self.cfg.seed, &inst.id))),
            ("route".into(), json!(inst.label)),
            ("rationale".into(), json!(rats.masked_indices().collect::<Vec<_>>())),
            ("verifier_max_tokens".into(), json!(self.cfg.verifier_max_tokens)),
        ])
    }

    fn process(&self, inst: &Instance, timer: &mut Timer) -> Result<Vec<CounterfactualRecord>, Discard> {
        timer.time(Stage::Validate, || {
            validate_instance(inst.clone()).map_err(|e| Discard::new(Stage::Validate, DropReason::InvalidInstance, e))?;
            if !inst.label.is_binary() {
                return Err(Discard::new(Stage::Validate, DropReason::InvalidInstance, "NEI instances are not augmented"));
            }
            Ok(())
        })?;
        let (rats, entities) = timer.time(Stage::Explain, || {
            let rats = extract_rationales(self.extractor, inst).map_err(Discard::explain)?;
            let entities = collect_causal_entities(inst, &rats, self.backends.ner.as_ref())
                .map_err(|e| Discard::backend(Stage::Explain, e))?;
            if entities.is_empty() {
                return Err(Discard::new(Stage::Explain, DropReason::NoCausalEntity, "no entity in the token rationales"));
            }
            Ok((rats, entities))
        })?;
        let mut provenance = self.base_provenance(inst, &rats);

        match inst.label {
            Label::Sup => self.sup_route(inst, &rats, &entities, &mut provenance, timer),
            _ => {
                let candidates = timer
                    .time(Stage::Generate, || {
                        generate_candidates(&inst.evidence, &rats, &entities, self.backends.scorer.as_ref(), &self.cfg.generator)
                    })
                    .map_err(Discard::generate)?;
                let rec = self.finish(inst, &entities, candidates, provenance, timer)?;
                Ok(vec![rec])
            }
        }
    }

    fn sup_route(
        &self,
        inst: &Instance,
        rats: &Rationales,
        entities: &EntitySet,
        provenance: &mut BTreeMap<String, Value>,
        timer: &mut Timer,
    ) -> Result<Vec<CounterfactualRecord>, Discard> {
        let (plan, edited, edited_entities) = timer.time(Stage::Edit, || {
            let mut rng = seed::rng(seed::instance_seed(self.cfg.seed, &inst.id));
            let plan = plan_edits(entities, self.pools, &mut rng)
                .map_err(|e: EditError| Discard::new(Stage::Edit, DropReason::NoEditPossible, e))?;
            let (edited, edited_entities) = apply_edits(&inst.evidence, entities, &plan);
            Ok((plan, edited, edited_entities))
        })?;
        provenance.insert("edit".into(), json!(plan));

        let ad = timer
            .time(Stage::AdCheck, || ad_check(&inst.claim, &edited, self.backends.verifier.as_ref()))
            .map_err(|e| Discard::backend(Stage::AdCheck, e))?;
        provenance.insert("ad_check".into(), json!(ad));
        if let AdCheck::Discard { reason, label, .. } = ad {
            let reason = match reason {
                checking::DiscardReason::UnderEdited => DropReason::UnderEdited,
                checking::DiscardReason::OverEdited => DropReason::OverEdited,
            };
            return Err(Discard::new(Stage::AdCheck, reason, format!("edited evidence verified {label}")));
        }

        let mut records = Vec::new();
        if self.cfg.emit_evidence_cf {
            records.push(CounterfactualRecord {
                source_id: inst.id.clone(),
                kind: RecordKind::EvidenceCf,
                claim: inst.claim.clone(),
                evidence: edited.clone(),
                label: Label::Ref,
                provenance: provenance.clone(),
            });
        }
        let candidates = timer
            .time(Stage::Generate, || {
                generate_candidates(&edited, rats, &edited_entities, self.backends.scorer.as_ref(), &self.cfg.generator)
            })
            .map_err(Discard::generate)?;
        records.push(self.finish(inst, &edited_entities, candidates, provenance.clone(), timer)?);
        Ok(records)
    }

    /// Post-check against the original evidence, filter, and re-verify the
    /// winner before emitting it.
    fn finish(
        &self,
        inst: &Instance,
        constraint_entities: &EntitySet,
        candidates: Candidates,
        mut provenance: BTreeMap<String, Value>,
        timer: &mut Timer,
    ) -> Result<CounterfactualRecord, Discard> {
        let texts: Vec<String> = candidates.claims.iter().map(|c| c.text.clone()).collect();
        provenance.insert(
            "generate".into(),
            json!({ "input": candidates.input, "candidates": texts.len(), "shortfall": candidates.shortfall }),
        );

        let flipped = timer
            .time(Stage::PostCheck, || {
                post_check(&texts, &inst.evidence, inst.label, self.backends.verifier.as_ref())
            })
            .map_err(|e| Discard::backend(Stage::PostCheck, e))?;
        let nei = flipped.iter().filter(|c| c.label == Label::Nei).count();
        let kept: Vec<_> = flipped.iter().filter(|c| c.label.is_binary()).collect();
        if kept.is_empty() {
            return Err(Discard::new(
                Stage::PostCheck,
                DropReason::NoFlippedCandidate,
                format!("{} candidates, {} flipped to NEI", texts.len(), nei),
            ));
        }

        let selection = timer.time(Stage::Filter, || {
            let pairs: Vec<(String, Label)> = kept.iter().map(|c| (c.claim.clone(), c.label)).collect();
            let scored = score_candidates(
                &pairs,
                &inst.claim,
                self.backends.embedder.as_ref(),
                self.backends.ner.as_ref(),
            )
            .map_err(Discard::filter)?;
            select_best(&scored).map_err(Discard::filter)
        })?;
        let best = selection.best;
        let verdict = kept
            .iter()
            .find(|c| c.claim == best.claim)
            .expect("selected claim comes from the post-checked set");
        provenance.insert(
            "post_check".into(),
            json!({ "label": verdict.label, "scores": verdict.scores, "flipped": kept.len(), "nei": nei }),
        );
        provenance.insert(
            "filter".into(),
            json!({ "semantic": best.scores.semantic, "entity": best.scores.entity, "total": best.scores.total }),
        );

        timer.time(Stage::Emit, || self.recheck(inst, constraint_entities, &best.claim, best.label))?;
        Ok(CounterfactualRecord {
            source_id: inst.id.clone(),
            kind: RecordKind::ClaimCf,
            claim: best.claim,
            evidence: inst.evidence.clone(),
            label: best.label,
            provenance,
        })
    }

    fn recheck(&self, inst: &Instance, entities: &EntitySet, claim: &str, label: Label) -> Result<(), Discard> {
        let fail = |m: String| Discard::new(Stage::Emit, DropReason::EmissionCheckFailed, m);
        let vocab = self.backends.scorer.vocab();
        let cons = build_constraints(entities, vocab).map_err(|e| fail(e.to_string()))?;
        let tokens = vocab.encode(claim).map_err(|e| fail(e.to_string()))?;
        if !cons.is_satisfied_by(&tokens) {
            return Err(fail(format!("{claim:?} misses a constraint group")));
        }
        let v = verify(self.backends.verifier.as_ref(), claim, &inst.evidence).map_err(|e| Discard::backend(Stage::Emit, e))?;
        if v.label != label || label == inst.label || !label.is_binary() {
            return Err(fail(format!("{claim:?} re-verified {} (source {})", v.label, inst.label)));
        }
        Ok(())
    }
}

/// Gold rationales from the configured sidecar, heuristic otherwise.
pub fn configured_extractor(cfg: &PipelineConfig) -> Result<GoldOrHeuristic, PipelineError> {
    let gold: Vec<GoldRationale> = match &cfg.rationales {
        Some(path) => load_jsonl(path)?,
        None => Vec::new(),
    };
    Ok(GoldOrHeuristic {
        gold: OracleExtractor::new(gold),
    })
}

pub fn run_pipeline(
    dataset: &[Instance],
    cfg: &PipelineConfig,
    backends: &Backends,
) -> Result<(Vec<CounterfactualRecord>, RunReport), PipelineError> {
    let extractor = configured_extractor(cfg)?;
    run_pipeline_with(dataset, cfg, backends, &extractor)
}

/// Processes every instance on a pool of `cfg.workers` threads. Per-instance
/// failures are dropped with a reason; only configuration problems abort.
pub fn run_pipeline_with(
    dataset: &[Instance],
    cfg: &PipelineConfig,
    backends: &Backends,
    extractor: &dyn RationaleExtractor,
) -> Result<(Vec<CounterfactualRecord>, RunReport), PipelineError> {
    cfg.validate()?;
    let backends = backends.clone().serialized();
    let pools = build_entity_pools(dataset, backends.ner.as_ref()).map_err(PipelineError::Pools)?;
    let ctx = Ctx {
        cfg,
        backends: &backends,
        extractor,
        pools: &pools,
    };
    let workers = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| PipelineError::Workers(e.to_string()))?;
    let mut outcomes: Vec<Outcome> = workers.install(|| {
        dataset
            .par_iter()
            .map(|inst| {
                let mut timer = Timer::default();
                let result = ctx.process(inst, &mut timer);
                Outcome {
                    source_id: inst.id.clone(),
                    result,
                    timer,
                }
            })
            .collect()
    });
    outcomes.sort_by(|a, b| a.source_id.cmp(&b.source_id));

    let mut report = RunReport {
        instances_in: dataset.len(),
        ..Default::default()
    };
    for stage in Stage::ALL {
        report.stage_seconds.insert(stage.as_str().to_string(), 0.0);
    }
    let mut records = Vec::new();
    for o in outcomes {
        for (stage, secs) in o.timer.seconds {
            *report.stage_seconds.entry(stage.as_str().to_string()).or_default() += secs;
        }
        match o.result {
            Ok(recs) => {
                report.instances_out += 1;
                for r in &recs {
                    let kind = serde_json::to_value(r.kind).expect("enum serializes");
                    let key = format!("{}/{}", kind.as_str().unwrap_or_default(), r.label);
                    *report.records.entry(key).or_default() += 1;
                }
                records.extend(recs);
            }
            Err(d) => {
                log::info!("{}: dropped at {} ({}): {}", o.source_id, d.stage.as_str(), d.reason, d.detail);
                *report.discards.entry(d.reason).or_default() += 1;
                report.dropped.push(Dropped {
                    source_id: o.source_id,
                    stage: d.stage,
                    reason: d.reason,
                    detail: d.detail,
                });
            }
        }
    }
    Ok((records, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_corpus_has_twenty_valid_instances() {
        let corpus = bundled::toy_corpus();
        assert_eq!(corpus.len(), 20);
        assert!(corpus.iter().all(|i| i.label.is_binary()));
    }

    #[test]
    fn report_conservation_helper() {
        let mut r = RunReport {
            instances_in: 3,
            instances_out: 1,
            ..Default::default()
        };
        r.discards.insert(DropReason::UnderEdited, 2);
        assert!(r.is_conserved());
        r.instances_out = 2;
        assert!(!r.is_conserved());
    }

    #[test]
    fn drop_reason_names_match_serde() {
        for r in [DropReason::UnderEdited, DropReason::NoFlippedCandidate, DropReason::BackendError] {
            assert_eq!(serde_json::to_value(r).unwrap(), json!(r.as_str()));
        }
    }
}
