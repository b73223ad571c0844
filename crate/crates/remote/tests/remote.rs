use std::time::Duration;

use hopcf::backends::{verify, Backends};
use hopcf::pipeline::{bundled, run_pipeline, to_jsonl};
use hopcf::{BackendError, EvidenceItem, Label};
use hopcf_remote::wire::*;
use hopcf_remote::{remote_backends, RemoteClient, RetryPolicy, StubServer};
use proptest::prelude::*;

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        attempts: 2,
        backoff: Duration::from_millis(1),
        timeout: Duration::from_secs(10),
    }
}

fn toy() -> (Vec<hopcf::Instance>, Backends) {
    let corpus = bundled::toy_corpus();
    let backends = bundled::toy_config().toy.backends(&corpus).unwrap();
    (corpus, backends)
}

#[test]
fn every_endpoint_matches_in_process_backends() {
    let (corpus, local) = toy();
    let server = StubServer::local(local.clone()).unwrap();
    let remote = remote_backends(&server.url(), local.scorer.vocab().clone(), fast_retry()).unwrap();

    let vocab = local.scorer.vocab();
    let ctx = vocab.encode(&corpus[0].evidence[0].text).unwrap();
    let prefix = vocab.encode("The Ford").unwrap();
    assert_eq!(
        remote.scorer.score_next_tokens(&ctx, &prefix).unwrap(),
        local.scorer.score_next_tokens(&ctx, &prefix).unwrap()
    );

    assert_eq!(remote.embedder.dimension(), local.embedder.dimension());
    for inst in &corpus {
        assert_eq!(remote.embedder.embed(&inst.claim).unwrap(), local.embedder.embed(&inst.claim).unwrap());
        assert_eq!(remote.ner.recognize(&inst.claim).unwrap(), local.ner.recognize(&inst.claim).unwrap());
        assert_eq!(
            verify(remote.verifier.as_ref(), &inst.claim, &inst.evidence).unwrap(),
            verify(local.verifier.as_ref(), &inst.claim, &inst.evidence).unwrap()
        );
    }
}

#[test]
fn pipeline_output_identical_over_the_wire() {
    let (corpus, local) = toy();
    let cfg = bundled::toy_config();
    let server = StubServer::local(local.clone()).unwrap();
    let remote = remote_backends(&server.url(), local.scorer.vocab().clone(), fast_retry()).unwrap();
    let (a, ra) = run_pipeline(&corpus, &cfg, &local).unwrap();
    let (b, rb) = run_pipeline(&corpus, &cfg, &remote).unwrap();
    assert_eq!(to_jsonl(&a), to_jsonl(&b));
    assert_eq!(ra.discards, rb.discards);
}

#[test]
fn unreachable_server_reports_attempts() {
    // Bind then drop to get a port nobody listens on.
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let client = RemoteClient::new(&format!("http://127.0.0.1:{port}"), fast_retry()).unwrap();
    let err = client
        .post::<_, NerResponse>(NER, &NerRequest { text: "x".into() })
        .unwrap_err();
    match err {
        BackendError::Unavailable { endpoint, attempts, .. } => {
            assert_eq!(attempts, 2);
            assert!(endpoint.ends_with("/ner"));
        }
        other => panic!("expected Unavailable, got {other:?}"),
    }
}

#[test]
fn unknown_path_and_bad_body_are_protocol_errors() {
    let (_, local) = toy();
    let server = StubServer::local(local).unwrap();
    let client = RemoteClient::new(&server.url(), fast_retry()).unwrap();
    let err = client.post::<_, NerResponse>("/nope", &NerRequest { text: "x".into() }).unwrap_err();
    assert!(matches!(err, BackendError::Protocol(m) if m.contains("404")));
    let err = client
        .post::<_, ScoreResponse>(SCORE, &NerRequest { text: "x".into() })
        .unwrap_err();
    assert!(matches!(err, BackendError::Protocol(m) if m.contains("400")));
}

#[test]
fn unknown_token_rejected_by_server() {
    let (_, local) = toy();
    let server = StubServer::local(local).unwrap();
    let client = RemoteClient::new(&server.url(), fast_retry()).unwrap();
    let err = client
        .post::<_, ScoreResponse>(
            SCORE,
            &ScoreRequest {
                context: vec![],
                prefix: vec![u32::MAX],
            },
        )
        .unwrap_err();
    assert!(matches!(err, BackendError::Protocol(_)));
}

#[test]
fn verify_sends_texts_only() {
    let (_, local) = toy();
    let server = StubServer::local(local.clone()).unwrap();
    let remote = remote_backends(&server.url(), local.scorer.vocab().clone(), fast_retry()).unwrap();
    let ev = vec![EvidenceItem::new("Reg Presley", "Mike Newell directed it in 1994.")];
    let v = verify(remote.verifier.as_ref(), "Reg Presley directed it in 1994.", &ev).unwrap();
    assert_eq!(v.label, Label::Ref);
}

fn finite() -> impl Strategy<Value = f64> {
    prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO
}

fn round_trip<T>(value: &T) -> T
where
    T: serde::Serialize + serde::de::DeserializeOwned,
{
    serde_json::from_str(&serde_json::to_string(value).unwrap()).unwrap()
}

proptest! {
    #[test]
    fn score_bodies_round_trip(context in prop::collection::vec(any::<u32>(), 0..8),
                               prefix in prop::collection::vec(any::<u32>(), 0..8),
                               log_probs in prop::collection::vec(finite(), 0..16)) {
        let req = ScoreRequest { context, prefix };
        prop_assert_eq!(round_trip(&req), req);
        let resp = ScoreResponse { log_probs };
        prop_assert_eq!(round_trip(&resp), resp);
    }

    #[test]
    fn embed_bodies_round_trip(text in ".{0,40}", vectors in prop::collection::vec(prop::collection::vec(finite(), 3), 0..5)) {
        let req = EmbedRequest { text };
        prop_assert_eq!(round_trip(&req), req);
        let resp = EmbedResponse { vectors, dimension: 3 };
        prop_assert_eq!(round_trip(&resp), resp);
    }

    #[test]
    fn ner_and_verify_bodies_round_trip(text in ".{0,40}", surface in "[A-Za-z ]{1,12}", start in 0usize..100, len in 0usize..20,
                                        evidence in prop::collection::vec(".{0,30}", 1..4),
                                        s in finite(), r in finite(), n in finite()) {
        let req = NerRequest { text: text.clone() };
        prop_assert_eq!(round_trip(&req), req);
        let resp = NerResponse { entities: vec![WireEntity { surface, etype: "PERSON".into(), start, end: start + len }] };
        prop_assert_eq!(round_trip(&resp), resp);
        let req = VerifyRequest { claim: text, evidence };
        prop_assert_eq!(round_trip(&req), req);
        let resp = VerifyResponse {
            label: Label::Nei,
            scores: hopcf::backends::LabelScores { sup: s, refute: r, nei: n },
        };
        prop_assert_eq!(round_trip(&resp), resp);
    }
}
