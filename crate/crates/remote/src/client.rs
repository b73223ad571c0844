use std::sync::Arc;
use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use serde::de::DeserializeOwned;
use serde::Serialize;

use hopcf::backends::{
    Backends, EmbeddingProvider, EntityRecognizer, LabelScores, Mention, TokenId, TokenScorer, Verdict,
    Verifier, Vocab,
};
use hopcf::{BackendError, EvidenceItem};

use crate::wire::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Total tries per request, at least 1.
    pub attempts: u32,
    /// Sleep before retry `n` is `backoff * n`.
    pub backoff: Duration,
    pub timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            backoff: Duration::from_millis(100),
            timeout: Duration::from_secs(30),
        }
    }
}

/// Shared HTTP plumbing. Transport failures and 5xx answers are retried;
/// 4xx answers and undecodable bodies are protocol errors and are not.
#[derive(Clone, Debug)]
pub struct RemoteClient {
    base: String,
    http: Client,
    retry: RetryPolicy,
}

enum Failure {
    Retry(String),
    Fatal(BackendError),
}

impl RemoteClient {
    pub fn new(base_url: &str, retry: RetryPolicy) -> Result<Self, BackendError> {
        let http = Client::builder()
            .timeout(retry.timeout)
            .build()
            .map_err(|e| BackendError::Protocol(format!("building HTTP client: {e}")))?;
        Ok(Self {
            base: base_url.trim_end_matches('/').to_string(),
            http,
            retry,
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn once<Q: Serialize, R: DeserializeOwned>(&self, url: &str, body: &Q) -> Result<R, Failure> {
        let resp = self
            .http
            .post(url)
            .json(body)
            .send()
            .map_err(|e| Failure::Retry(e.to_string()))?;
        let status = resp.status();
        let bytes = resp.bytes().map_err(|e| Failure::Retry(e.to_string()))?;
        if status.is_server_error() {
            return Err(Failure::Retry(format!("HTTP {status}: {}", String::from_utf8_lossy(&bytes))));
        }
        if !status.is_success() {
            let msg = serde_json::from_slice::<ErrorBody>(&bytes)
                .map(|b| b.error)
                .unwrap_or_else(|_| String::from_utf8_lossy(&bytes).into_owned());
            return Err(Failure::Fatal(BackendError::Protocol(format!("HTTP {status}: {msg}"))));
        }
        serde_json::from_slice(&bytes)
            .map_err(|e| Failure::Fatal(BackendError::Protocol(format!("{url}: undecodable body: {e}"))))
    }

    pub fn post<Q: Serialize, R: DeserializeOwned>(&self, path: &str, body: &Q) -> Result<R, BackendError> {
        let url = format!("{}{}", self.base, path);
        let attempts = self.retry.attempts.max(1);
        let mut last = String::new();
        for n in 1..=attempts {
            match self.once(&url, body) {
                Ok(r) => return Ok(r),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retry(msg)) => {
                    log::warn!("{url}: attempt {n}/{attempts} failed: {msg}");
                    last = msg;
                    if n < attempts {
                        thread::sleep(self.retry.backoff * n);
                    }
                }
            }
        }
        Err(BackendError::Unavailable {
            endpoint: url,
            attempts,
            message: last,
        })
    }
}

/// Token scorer over `/score`. The vocabulary is built locally with the same
/// tokenizer and corpus as the server's, since the protocol carries ids only.
pub struct RemoteScorer {
    client: RemoteClient,
    vocab: Vocab,
}

impl RemoteScorer {
    pub fn new(client: RemoteClient, vocab: Vocab) -> Self {
        Self { client, vocab }
    }
}

impl TokenScorer for RemoteScorer {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn score_next_tokens(&self, context: &[TokenId], prefix: &[TokenId]) -> Result<Vec<f64>, BackendError> {
        self.vocab.check(context)?;
        self.vocab.check(prefix)?;
        let req = ScoreRequest {
            context: context.to_vec(),
            prefix: prefix.to_vec(),
        };
        let resp: ScoreResponse = self.client.post(SCORE, &req)?;
        if resp.log_probs.len() != self.vocab.len() {
            return Err(BackendError::Protocol(format!(
                "server scored {} tokens, local vocabulary has {}",
                resp.log_probs.len(),
                self.vocab.len()
            )));
        }
        Ok(resp.log_probs)
    }
}

pub struct RemoteEmbedder {
    client: RemoteClient,
    dimension: usize,
}

impl RemoteEmbedder {
    /// Asks the server for its dimension with an empty probe.
    pub fn connect(client: RemoteClient) -> Result<Self, BackendError> {
        let resp: EmbedResponse = client.post(EMBED, &EmbedRequest { text: String::new() })?;
        Ok(Self {
            client,
            dimension: resp.dimension,
        })
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<Vec<f64>>, BackendError> {
        let resp: EmbedResponse = self.client.post(EMBED, &EmbedRequest { text: text.to_string() })?;
        if resp.dimension != self.dimension || resp.vectors.iter().any(|v| v.len() != self.dimension) {
            return Err(BackendError::Protocol(format!(
                "embedding dimension changed from {}",
                self.dimension
            )));
        }
        Ok(resp.vectors)
    }
}

pub struct RemoteRecognizer {
    client: RemoteClient,
}

impl RemoteRecognizer {
    pub fn new(client: RemoteClient) -> Self {
        Self { client }
    }
}

impl EntityRecognizer for RemoteRecognizer {
    fn recognize(&self, text: &str) -> Result<Vec<Mention>, BackendError> {
        let resp: NerResponse = self.client.post(NER, &NerRequest { text: text.to_string() })?;
        Ok(resp.entities.into_iter().map(Mention::from).collect())
    }
}

/// Verifier over `/verify`. Only evidence texts cross the wire.
pub struct RemoteVerifier {
    client: RemoteClient,
}

impl RemoteVerifier {
    pub fn new(client: RemoteClient) -> Self {
        Self { client }
    }
}

impl Verifier for RemoteVerifier {
    fn verify(&self, claim: &str, evidence: &[EvidenceItem]) -> Result<Verdict, BackendError> {
        let req = VerifyRequest {
            claim: claim.to_string(),
            evidence: evidence.iter().map(|e| e.text.clone()).collect(),
        };
        let resp: VerifyResponse = self.client.post(VERIFY, &req)?;
        let scores: LabelScores = resp.scores;
        Ok(Verdict {
            label: resp.label,
            scores,
        })
    }
}

/// All four backends against one server.
pub fn remote_backends(base_url: &str, vocab: Vocab, retry: RetryPolicy) -> Result<Backends, BackendError> {
    let client = RemoteClient::new(base_url, retry)?;
    Ok(Backends {
        scorer: Arc::new(RemoteScorer::new(client.clone(), vocab)),
        embedder: Arc::new(RemoteEmbedder::connect(client.clone())?),
        ner: Arc::new(RemoteRecognizer::new(client.clone())),
        verifier: Arc::new(RemoteVerifier::new(client)),
    })
}
