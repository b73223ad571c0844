//! Deterministic in-process backends for tests, golden runs and the stub server.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    recognize_entities, EmbeddingProvider, EntityRecognizer, LabelScores, Mention, TokenId,
    TokenScorer, Verdict, Verifier, Vocab, BOS,
};
use crate::error::BackendError;
use crate::model::EvidenceItem;
use crate::seed;
use crate::text::{self, Span};

fn log_normalize(weights: Vec<f64>) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| (w / total).ln()).collect()
}

/// Same probability for every vocabulary entry.
pub struct UniformScorer {
    vocab: Vocab,
}

impl UniformScorer {
    pub fn new(vocab: Vocab) -> Self {
        Self { vocab }
    }
}

impl TokenScorer for UniformScorer {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn score_next_tokens(
        &self,
        context: &[TokenId],
        prefix: &[TokenId],
    ) -> Result<Vec<f64>, BackendError> {
        self.vocab.check(context)?;
        self.vocab.check(prefix)?;
        let lp = -(self.vocab.len() as f64).ln();
        Ok(vec![lp; self.vocab.len()])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BigramParams {
    /// Additive smoothing applied to every vocabulary entry.
    pub add_k: f64,
    /// Extra pseudo-count for tokens that occur in the context.
    pub context_boost: f64,
}

impl Default for BigramParams {
    fn default() -> Self {
        Self {
            add_k: 0.01,
            context_boost: 0.5,
        }
    }
}

/// Count-based bigram model. Each training sentence is framed by the begin
/// and end tokens. An unseen history with no smoothing mass falls back to uniform.
pub struct BigramScorer {
    vocab: Vocab,
    params: BigramParams,
    rows: HashMap<TokenId, HashMap<TokenId, f64>>,
}

impl BigramScorer {
    pub fn train(vocab: Vocab, sentences: &[Vec<TokenId>], params: BigramParams) -> Self {
        let mut rows: HashMap<TokenId, HashMap<TokenId, f64>> = HashMap::new();
        for sent in sentences {
            let framed = std::iter::once(BOS)
                .chain(sent.iter().copied())
                .chain(std::iter::once(super::EOS));
            let framed: Vec<TokenId> = framed.collect();
            for w in framed.windows(2) {
                *rows.entry(w[0]).or_default().entry(w[1]).or_default() += 1.0;
            }
        }
        Self {
            vocab,
            params,
            rows,
        }
    }

    /// Builds the vocabulary from `texts` and trains on them.
    pub fn from_texts<'a, I>(texts: I, params: BigramParams) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let texts: Vec<&str> = texts.into_iter().collect();
        let vocab = Vocab::from_texts(texts.iter().copied());
        let sentences: Vec<Vec<TokenId>> = texts
            .iter()
            .map(|t| vocab.encode(t).expect("vocabulary covers its own corpus"))
            .collect();
        Self::train(vocab, &sentences, params)
    }
}

impl TokenScorer for BigramScorer {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn score_next_tokens(
        &self,
        context: &[TokenId],
        prefix: &[TokenId],
    ) -> Result<Vec<f64>, BackendError> {
        self.vocab.check(context)?;
        self.vocab.check(prefix)?;
        let prev = prefix.last().copied().unwrap_or(BOS);
        let mut weights = vec![self.params.add_k; self.vocab.len()];
        if let Some(row) = self.rows.get(&prev) {
            for (&tok, &c) in row {
                weights[tok as usize] += c;
            }
        }
        if self.params.context_boost > 0.0 {
            let ctx: BTreeSet<TokenId> = context
                .iter()
                .copied()
                .filter(|&t| !Vocab::is_special(t))
                .collect();
            for t in ctx {
                weights[t as usize] += self.params.context_boost;
            }
        }
        if weights.iter().sum::<f64>() <= 0.0 {
            weights.iter_mut().for_each(|w| *w = 1.0);
        }
        Ok(log_normalize(weights))
    }
}

/// Pseudo-random distribution keyed by `(seed, context, prefix)`.
pub struct RandomScorer {
    vocab: Vocab,
    seed: u64,
    spread: f64,
}

impl RandomScorer {
    pub fn new(vocab: Vocab, seed: u64, spread: f64) -> Self {
        Self {
            vocab,
            seed,
            spread,
        }
    }
}

impl TokenScorer for RandomScorer {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn score_next_tokens(
        &self,
        context: &[TokenId],
        prefix: &[TokenId],
    ) -> Result<Vec<f64>, BackendError> {
        self.vocab.check(context)?;
        self.vocab.check(prefix)?;
        let enc = |ids: &[TokenId]| -> Vec<u8> { ids.iter().flat_map(|t| t.to_le_bytes()).collect() };
        let d = seed::digest(&[&self.seed.to_le_bytes(), &enc(context), &enc(prefix)]);
        let mut rng = seed::rng_from_digest(d);
        let logits: Vec<f64> = (0..self.vocab.len())
            .map(|_| rng.gen::<f64>() * self.spread)
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(log_normalize(logits.iter().map(|l| (l - max).exp()).collect()))
    }
}

/// Context-free token vectors derived from a hash of the lowercased token.
#[derive(Clone, Debug)]
pub struct HashEmbedder {
    dimension: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension, seed }
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let lower = token.to_lowercase();
        let mut rng =
            seed::rng_from_digest(seed::digest(&[&self.seed.to_le_bytes(), lower.as_bytes()]));
        loop {
            let v: Vec<f64> = (0..self.dimension).map(|_| rng.gen_range(-1.0..1.0)).collect();
            if v.iter().any(|x| *x != 0.0) {
                return v;
            }
        }
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<Vec<f64>>, BackendError> {
        Ok(text::tokenize(text)
            .iter()
            .map(|t| self.token_vector(t.text))
            .collect())
    }
}

/// Explicit token vectors with a hashed fallback for unlisted tokens.
#[derive(Clone, Debug)]
pub struct TableEmbedder {
    table: HashMap<String, Vec<f64>>,
    fallback: HashEmbedder,
}

impl TableEmbedder {
    pub fn new(table: HashMap<String, Vec<f64>>, fallback_seed: u64) -> Self {
        let dim = table.values().next().map(Vec::len).unwrap_or(1);
        assert!(
            table.values().all(|v| v.len() == dim),
            "table vectors must share one dimension"
        );
        Self {
            table,
            fallback: HashEmbedder::new(dim, fallback_seed),
        }
    }
}

impl EmbeddingProvider for TableEmbedder {
    fn dimension(&self) -> usize {
        self.fallback.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<Vec<f64>>, BackendError> {
        Ok(text::tokenize(text)
            .iter()
            .map(|t| match self.table.get(t.text) {
                Some(v) => v.clone(),
                None => self.fallback.token_vector(t.text),
            })
            .collect())
    }
}

/// Name lists for the gazetteer recognizer.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Gazetteer {
    pub person: Vec<String>,
    pub org: Vec<String>,
    pub gpe: Vec<String>,
}

/// Gazetteer plus digit patterns: four-digit tokens are DATE, other
/// all-digit tokens NUM, listed names PERSON/ORG/GPE (longest match wins).
#[derive(Clone, Debug, Default)]
pub struct GazetteerRecognizer {
    entries: Vec<(Vec<String>, &'static str)>,
}

impl GazetteerRecognizer {
    pub fn new(gaz: &Gazetteer) -> Self {
        let mut seen = HashSet::new();
        let mut entries = Vec::new();
        let lists = [("PERSON", &gaz.person), ("ORG", &gaz.org), ("GPE", &gaz.gpe)];
        for (label, names) in lists {
            for name in names {
                let toks = text::token_strings(name);
                if !toks.is_empty() && seen.insert(toks.clone()) {
                    entries.push((toks, label));
                }
            }
        }
        // Longest entries first so a scan takes the longest match.
        entries.sort_by(|a, b| b.0.len().cmp(&a.0.len()));
        Self { entries }
    }
}

impl EntityRecognizer for GazetteerRecognizer {
    fn recognize(&self, text: &str) -> Result<Vec<Mention>, BackendError> {
        let toks = text::tokenize(text);
        let mut out = Vec::new();
        let mut i = 0;
        while i < toks.len() {
            let hit = self.entries.iter().find(|(entry, _)| {
                i + entry.len() <= toks.len()
                    && entry.iter().zip(&toks[i..]).all(|(e, t)| e == t.text)
            });
            if let Some((entry, label)) = hit {
                let span = Span::new(toks[i].span.start, toks[i + entry.len() - 1].span.end);
                out.push(Mention {
                    surface: text::slice(text, span).to_string(),
                    label: (*label).to_string(),
                    span,
                });
                i += entry.len();
                continue;
            }
            let t = &toks[i];
            if t.text.chars().all(|c| c.is_ascii_digit()) {
                let label = if t.text.len() == 4 { "DATE" } else { "NUM" };
                out.push(Mention {
                    surface: t.text.to_string(),
                    label: label.to_string(),
                    span: t.span,
                });
            }
            i += 1;
        }
        Ok(out)
    }
}

/// Rule-based verifier over recognized claim entities and evidence sentences
/// (titles are ignored): every entity present verbatim gives SUP, at least
/// half present gives REF, fewer gives NEI. A claim with no entity is NEI.
pub struct EntityOverlapVerifier {
    ner: Arc<dyn EntityRecognizer>,
}

impl EntityOverlapVerifier {
    pub fn new(ner: Arc<dyn EntityRecognizer>) -> Self {
        Self { ner }
    }

    pub fn presence(&self, claim: &str, evidence: &[EvidenceItem]) -> Result<(usize, usize), BackendError> {
        let surfaces: BTreeSet<String> = recognize_entities(self.ner.as_ref(), claim, 0)?
            .into_iter()
            .map(|e| e.surface)
            .collect();
        let present = surfaces
            .iter()
            .filter(|s| evidence.iter().any(|e| e.text.contains(s.as_str())))
            .count();
        Ok((present, surfaces.len()))
    }
}

const WIN: f64 = 0.8;
const LOSE: f64 = 0.1;

impl Verifier for EntityOverlapVerifier {
    fn verify(&self, claim: &str, evidence: &[EvidenceItem]) -> Result<Verdict, BackendError> {
        let (present, total) = self.presence(claim, evidence)?;
        let scores = |label: usize| {
            let mut s = [LOSE; 3];
            s[label] = WIN;
            LabelScores {
                sup: s[0],
                refute: s[1],
                nei: s[2],
            }
        };
        let label = if total == 0 {
            2
        } else if present == total {
            0
        } else if 2 * present >= total {
            1
        } else {
            2
        };
        Ok(Verdict::from_scores(scores(label)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::sequence_log_prob;
    use crate::model::Label;
    use proptest::prelude::*;

    fn abc_vocab() -> Vocab {
        Vocab::from_tokens(["a", "b"])
    }

    #[test]
    fn uniform_scorer_is_uniform() {
        let s = UniformScorer::new(abc_vocab());
        assert_eq!(s.vocab().len(), 4);
        let lp = s.score_next_tokens(&[], &[2, 3]).unwrap();
        for v in lp {
            assert!((v - (0.25f64).ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_sequence_log_prob() {
        let s = UniformScorer::new(abc_vocab());
        let lp = sequence_log_prob(&s, &[], &[2, 3, 2]).unwrap();
        assert!((lp - 3.0 * (0.25f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn single_token_sequence_is_first_step_score() {
        let s = BigramScorer::from_texts(["a b. a b."], BigramParams::default());
        let a = s.vocab().id("a").unwrap();
        let first = s.score_next_tokens(&[], &[]).unwrap()[a as usize];
        assert_eq!(sequence_log_prob(&s, &[], &[a]).unwrap(), first);
    }

    #[test]
    fn bigram_mle_follows_counts() {
        let params = BigramParams {
            add_k: 0.0,
            context_boost: 0.0,
        };
        let s = BigramScorer::from_texts(["a b. a b."], params);
        let a = s.vocab().id("a").unwrap();
        let b = s.vocab().id("b").unwrap();
        let lp = s.score_next_tokens(&[], &[a]).unwrap();
        assert!((lp[b as usize].exp() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bigram_chain_rule_matches_hand_product() {
        // Corpus "a b. a b." framed as <s> a b . a b . </s>:
        // P(a|<s>)=1, P(b|a)=1, P(.|b)=1, P(a|.)=1/2, P(</s>|.)=1/2.
        let params = BigramParams {
            add_k: 0.0,
            context_boost: 0.0,
        };
        let s = BigramScorer::from_texts(["a b. a b."], params);
        let v = s.vocab();
        let seq: Vec<TokenId> = ["a", "b", ".", "a"].iter().map(|t| v.id(t).unwrap()).collect();
        let expected = (1.0f64 * 1.0 * 1.0 * 0.5).ln();
        assert!((sequence_log_prob(&s, &[], &seq).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn unknown_prefix_token_rejected() {
        let s = UniformScorer::new(abc_vocab());
        assert!(matches!(
            s.score_next_tokens(&[], &[99]),
            Err(BackendError::UnknownToken(_))
        ));
    }

    proptest! {
        #[test]
        fn scorers_normalize(seed in any::<u64>(), prefix in proptest::collection::vec(0u32..8, 0..6),
                             ctx in proptest::collection::vec(0u32..8, 0..6)) {
            let vocab = Vocab::from_tokens(["a", "b", "c", "d", "e", "f"]);
            let bigram = BigramScorer::from_texts(["a b c", "d e f a", "b b"], BigramParams::default());
            let scorers: Vec<Box<dyn TokenScorer>> = vec![
                Box::new(UniformScorer::new(vocab.clone())),
                Box::new(RandomScorer::new(vocab, seed, 3.0)),
                Box::new(bigram),
            ];
            for s in &scorers {
                let n = s.vocab().len() as u32;
                let p: Vec<u32> = prefix.iter().map(|t| t % n).collect();
                let c: Vec<u32> = ctx.iter().map(|t| t % n).collect();
                let lp = s.score_next_tokens(&c, &p).unwrap();
                prop_assert_eq!(lp.len(), n as usize);
                let total: f64 = lp.iter().map(|x| x.exp()).sum();
                prop_assert!((total - 1.0).abs() < 1e-6);
                prop_assert_eq!(&lp, &s.score_next_tokens(&c, &p).unwrap());
            }
        }
    }

    fn gazetteer() -> GazetteerRecognizer {
        GazetteerRecognizer::new(&Gazetteer {
            person: vec!["Patrick Carpentier".into()],
            org: vec!["Ford".into(), "Ford Fusion".into()],
            gpe: vec!["Arizona".into()],
        })
    }

    #[test]
    fn gazetteer_prefers_longest_match_and_digits() {
        let m = gazetteer()
            .recognize("Patrick Carpentier drove the Ford Fusion in 1997 for 30 days in Arizona.")
            .unwrap();
        let got: Vec<(&str, &str)> = m.iter().map(|m| (m.surface.as_str(), m.label.as_str())).collect();
        assert_eq!(
            got,
            vec![
                ("Patrick Carpentier", "PERSON"),
                ("Ford Fusion", "ORG"),
                ("1997", "DATE"),
                ("30", "NUM"),
                ("Arizona", "GPE"),
            ]
        );
    }

    fn verifier() -> EntityOverlapVerifier {
        EntityOverlapVerifier::new(Arc::new(gazetteer()))
    }

    #[test]
    fn verifier_rules() {
        let ev = vec![
            EvidenceItem::new("", "Patrick Carpentier drove the Ford Fusion."),
            EvidenceItem::new("", "He was rookie in 1997."),
        ];
        let v = verifier();
        let sup = v.verify("Patrick Carpentier won in 1997.", &ev).unwrap();
        assert_eq!(sup.label, Label::Sup);
        let refute = v.verify("Patrick Carpentier won in 1998.", &ev).unwrap();
        assert_eq!(refute.label, Label::Ref);
        let nei = v.verify("Arizona saw 1998 and 44 and Ford Fusion.", &ev).unwrap();
        assert_eq!(nei.label, Label::Nei);
        let total = nei.scores.sup + nei.scores.refute + nei.scores.nei;
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn verifier_is_pure() {
        let ev = vec![EvidenceItem::new("", "Arizona in 2006.")];
        let v = verifier();
        assert_eq!(v.verify("Arizona 2007", &ev).unwrap(), v.verify("Arizona 2007", &ev).unwrap());
    }

    #[test]
    fn hash_embedder_is_case_insensitive_and_sized() {
        let e = HashEmbedder::new(8, 3);
        let v = e.embed("Ford ford!").unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v[0], v[1]);
        assert!(v.iter().all(|x| x.len() == 8 && x.iter().all(|f| f.is_finite())));
    }
}
