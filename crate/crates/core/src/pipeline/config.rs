//! Run configuration, read from JSON; every field has a default.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::backends::{
    Backends, BigramParams, BigramScorer, EntityOverlapVerifier, EntityRecognizer, Gazetteer,
    GazetteerRecognizer, HashEmbedder,
};
use crate::generator::GeneratorConfig;
use crate::model::Instance;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
}

/// Which backends a run mounts: `toy` or `remote:URL`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum BackendSpec {
    #[default]
    Toy,
    Remote(String),
}

impl FromStr for BackendSpec {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            None if s == "toy" => Ok(BackendSpec::Toy),
            Some(("remote", url)) if !url.is_empty() => Ok(BackendSpec::Remote(url.to_string())),
            _ => Err(ConfigError::Invalid(format!(
                "backend {s:?} is neither \"toy\" nor \"remote:URL\""
            ))),
        }
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Toy => f.write_str("toy"),
            BackendSpec::Remote(url) => write!(f, "remote:{url}"),
        }
    }
}

impl Serialize for BackendSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BackendSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Toy-backend rules. The scorer vocabulary and bigram counts come from the
/// corpus being processed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub gazetteer: Gazetteer,
    /// Merged into `gazetteer` when set.
    pub gazetteer_path: Option<PathBuf>,
    pub bigram: BigramParams,
    pub embed_dim: usize,
    pub embed_seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            gazetteer: Gazetteer::default(),
            gazetteer_path: None,
            bigram: BigramParams::default(),
            embed_dim: 16,
            embed_seed: 0,
        }
    }
}

impl ToyConfig {
    pub fn resolve_gazetteer(&self) -> Result<Gazetteer, ConfigError> {
        let mut gaz = self.gazetteer.clone();
        if let Some(path) = &self.gazetteer_path {
            let extra: Gazetteer = read_json(path)?;
            gaz.person.extend(extra.person);
            gaz.org.extend(extra.org);
            gaz.gpe.extend(extra.gpe);
        }
        Ok(gaz)
    }

    pub fn recognizer(&self) -> Result<GazetteerRecognizer, ConfigError> {
        Ok(GazetteerRecognizer::new(&self.resolve_gazetteer()?))
    }

    pub fn embedder(&self) -> HashEmbedder {
        HashEmbedder::new(self.embed_dim, self.embed_seed)
    }

    /// Bigram scorer over the claims, titles and evidence texts of `corpus`.
    pub fn scorer(&self, corpus: &[Instance]) -> BigramScorer {
        BigramScorer::from_texts(corpus_texts(corpus), self.bigram)
    }

    pub fn backends(&self, corpus: &[Instance]) -> Result<Backends, ConfigError> {
        let ner: Arc<dyn EntityRecognizer> = Arc::new(self.recognizer()?);
        Ok(Backends {
            scorer: Arc::new(self.scorer(corpus)),
            embedder: Arc::new(self.embedder()),
            verifier: Arc::new(EntityOverlapVerifier::new(ner.clone())),
            ner,
        })
    }
}

/// Texts a corpus-trained scorer sees, in a fixed order.
pub fn corpus_texts(corpus: &[Instance]) -> Vec<&str> {
    let mut texts = Vec::new();
    for inst in corpus {
        texts.push(inst.claim.as_str());
        for e in &inst.evidence {
            if !e.title.trim().is_empty() {
                texts.push(e.title.as_str());
            }
            texts.push(e.text.as_str());
        }
    }
    texts
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub backend: BackendSpec,
    pub toy: ToyConfig,
    pub dataset: Option<PathBuf>,
    pub output: Option<PathBuf>,
    /// Gold-rationale sidecar (JSONL); instances without an entry fall back
    /// to the overlap heuristic.
    pub rationales: Option<PathBuf>,
    /// Also emit the (claim, edited evidence, REF) records of the SUP route.
    pub emit_evidence_cf: bool,
    pub workers: usize,
    /// Input cap of the mounted verifier. Recorded in provenance only.
    pub verifier_max_tokens: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            generator: GeneratorConfig::default(),
            backend: BackendSpec::Toy,
            toy: ToyConfig::default(),
            dataset: None,
            output: None,
            rationales: None,
            emit_evidence_cf: false,
            workers: 4,
            verifier_max_tokens: 130,
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let file_err = |message: String| ConfigError::File {
        path: path.to_path_buf(),
        message,
    };
    let text = fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| file_err(e.to_string()))
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        read_json(path)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let g = &self.generator;
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if g.k == 0 {
            return bad("generator.k must be at least 1");
        }
        if g.beam_size == 0 {
            return bad("generator.beam_size must be at least 1");
        }
        if g.max_length == 0 {
            return bad("generator.max_length must be at least 1");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        if self.toy.embed_dim == 0 {
            return bad("toy.embed_dim must be at least 1");
        }
        Ok(())
    }

    /// Input files exist and the output directory does.
    pub fn check_paths(&self) -> Result<(), ConfigError> {
        let inputs = [&self.dataset, &self.rationales, &self.toy.gazetteer_path];
        for p in inputs.into_iter().flatten() {
            if !p.is_file() {
                return Err(ConfigError::Invalid(format!("{} does not exist", p.display())));
            }
        }
        if let Some(out) = &self.output {
            let parent = out.parent().filter(|p| !p.as_os_str().is_empty());
            if let Some(dir) = parent {
                if !dir.is_dir() {
                    return Err(ConfigError::Invalid(format!(
                        "output directory {} does not exist",
                        dir.display()
                    )));
                }
            }
        }
        Ok(())
    }
}
