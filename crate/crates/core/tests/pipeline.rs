use std::collections::BTreeMap;
use std::path::PathBuf;

use hopcf::backends::verify;
use hopcf::pipeline::{
    bundled, load_dataset, run_pipeline, save_records, to_jsonl, DropReason, PipelineConfig, RunReport,
};
use hopcf::{CounterfactualRecord, Instance, Label, RecordKind};

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/toy_seed42.jsonl")
}

fn run(cfg: &PipelineConfig) -> (Vec<Instance>, Vec<CounterfactualRecord>, RunReport) {
    let corpus = bundled::toy_corpus();
    let backends = cfg.toy.backends(&corpus).unwrap();
    let (records, report) = run_pipeline(&corpus, cfg, &backends).unwrap();
    (corpus, records, report)
}

#[test]
fn golden_output_is_stable() {
    let (_, records, _) = run(&bundled::toy_config());
    let text = to_jsonl(&records);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(golden_path(), &text).unwrap();
    }
    let golden = std::fs::read_to_string(golden_path()).expect("golden file present");
    assert_eq!(text, golden);
}

#[test]
fn worker_count_does_not_change_output() {
    let mut one = bundled::toy_config();
    one.workers = 1;
    let mut many = bundled::toy_config();
    many.workers = 8;
    assert_eq!(to_jsonl(&run(&one).1), to_jsonl(&run(&many).1));
}

#[test]
fn report_conserves_instances() {
    let (corpus, records, report) = run(&bundled::toy_config());
    assert_eq!(report.instances_in, corpus.len());
    assert!(report.is_conserved(), "{report}");
    assert_eq!(report.records.values().sum::<usize>(), records.len());
    assert_eq!(report.dropped.len(), report.discarded());
}

#[test]
fn claim_records_flip_and_keep_original_evidence() {
    let cfg = bundled::toy_config();
    let (corpus, records, _) = run(&cfg);
    let backends = cfg.toy.backends(&corpus).unwrap();
    let by_id: BTreeMap<_, _> = corpus.iter().map(|i| (i.id.as_str(), i)).collect();
    assert!(!records.is_empty());
    for r in records.iter().filter(|r| r.kind == RecordKind::ClaimCf) {
        let src = by_id[r.source_id.as_str()];
        assert_eq!(r.evidence, src.evidence);
        assert_ne!(r.label, src.label);
        assert!(r.label.is_binary());
        let v = verify(backends.verifier.as_ref(), &r.claim, &r.evidence).unwrap();
        assert_eq!(v.label, r.label);
        assert_eq!(r.provenance["seed"], serde_json::json!(42));
        assert_eq!(r.provenance["verifier_max_tokens"], serde_json::json!(130));
    }
}

#[test]
fn ref_route_yields_sup_claims_only() {
    let (corpus, records, _) = run(&bundled::toy_config());
    for r in &records {
        let src = corpus.iter().find(|i| i.id == r.source_id).unwrap();
        if src.label == Label::Ref {
            assert_eq!(r.kind, RecordKind::ClaimCf);
            assert_eq!(r.label, Label::Sup);
            assert!(!r.provenance.contains_key("edit"));
        }
    }
}

#[test]
fn evidence_counterfactuals_on_request() {
    let mut cfg = bundled::toy_config();
    cfg.emit_evidence_cf = true;
    let (corpus, records, report) = run(&cfg);
    let ev: Vec<_> = records.iter().filter(|r| r.kind == RecordKind::EvidenceCf).collect();
    assert!(!ev.is_empty());
    for r in &ev {
        let src = corpus.iter().find(|i| i.id == r.source_id).unwrap();
        assert_eq!(src.label, Label::Sup);
        assert_eq!(r.claim, src.claim);
        assert_eq!(r.label, Label::Ref);
        assert_ne!(r.evidence, src.evidence);
        // The matching claim record follows immediately.
        let pos = records.iter().position(|x| std::ptr::eq(x, *r)).unwrap();
        assert_eq!(records[pos + 1].source_id, r.source_id);
        assert_eq!(records[pos + 1].kind, RecordKind::ClaimCf);
    }
    assert!(report.is_conserved());
    // The claim records are unchanged by the flag.
    let (_, plain, _) = run(&bundled::toy_config());
    let claims: Vec<_> = records.into_iter().filter(|r| r.kind == RecordKind::ClaimCf).collect();
    assert_eq!(claims, plain);
}

#[test]
fn under_edited_instance_emits_nothing() {
    let (_, records, report) = run(&bundled::toy_config());
    let d = report
        .dropped
        .iter()
        .find(|d| d.reason == DropReason::UnderEdited)
        .expect("bundled corpus has an under-edited instance");
    assert!(records.iter().all(|r| r.source_id != d.source_id));
}

#[test]
fn output_sorted_by_source_id() {
    let (_, records, _) = run(&bundled::toy_config());
    assert!(records.windows(2).all(|w| w[0].source_id <= w[1].source_id));
}

#[test]
fn nei_instances_are_dropped_not_fatal() {
    let mut corpus = bundled::toy_corpus();
    corpus[0].label = Label::Nei;
    let cfg = bundled::toy_config();
    let backends = cfg.toy.backends(&corpus).unwrap();
    let (_, report) = run_pipeline(&corpus, &cfg, &backends).unwrap();
    assert_eq!(report.discards.get(&DropReason::InvalidInstance), Some(&1));
    assert!(report.is_conserved());
}

#[test]
fn bad_config_aborts() {
    let mut cfg = bundled::toy_config();
    cfg.generator.k = 0;
    let corpus = bundled::toy_corpus();
    let backends = cfg.toy.backends(&corpus).unwrap();
    assert!(run_pipeline(&corpus, &cfg, &backends).is_err());
}

#[test]
fn dataset_and_records_round_trip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("corpus.jsonl");
    std::fs::write(&data, bundled::TOY_CORPUS).unwrap();
    let corpus = load_dataset(&data).unwrap();
    assert_eq!(corpus, bundled::toy_corpus());
    let (_, records, _) = run(&bundled::toy_config());
    let out = dir.path().join("out.jsonl");
    save_records(&records, &out).unwrap();
    assert_eq!(hopcf::pipeline::load_records(&out).unwrap(), records);
    assert_eq!(std::fs::read_to_string(&out).unwrap(), to_jsonl(&records));
}
