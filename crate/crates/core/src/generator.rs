//! Entity-constrained claim generation.
//!
//! Causal entities of each evidence item form one disjunctive group of token
//! phrases; the groups are conjoined, so a finished claim must contain at
//! least one phrase of every group as a contiguous token run. Decoding is
//! lexically constrained beam search with the beam partitioned into banks by
//! the number of satisfied groups.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{TokenId, TokenScorer, Vocab, BOS, EOS};
use crate::error::BackendError;
use crate::model::{EntitySet, EvidenceItem, Rationales};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenerateError {
    #[error("no entity yields a non-empty constraint phrase")]
    EmptyConstraints,
    #[error("no hypothesis satisfies every constraint group within {max_length} tokens")]
    NoSatisfyingHypothesis { max_length: usize },
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("rationales mask no evidence sentence")]
    NoRationale,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Phrases from one evidence item; any one of them satisfies the group.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintGroup {
    pub evidence_index: usize,
    pub phrases: Vec<Vec<TokenId>>,
}

/// Conjunction of disjunctive groups, ordered by evidence index.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSet {
    groups: Vec<ConstraintGroup>,
}

impl ConstraintSet {
    /// Drops empty phrases and groups, deduplicates phrases within a group
    /// and orders groups by evidence index.
    pub fn new(groups: Vec<ConstraintGroup>) -> Self {
        let mut groups: Vec<ConstraintGroup> = groups
            .into_iter()
            .map(|mut g| {
                let mut seen = BTreeSet::new();
                g.phrases.retain(|p| !p.is_empty() && seen.insert(p.clone()));
                g
            })
            .filter(|g| !g.phrases.is_empty())
            .collect();
        groups.sort_by_key(|g| g.evidence_index);
        Self { groups }
    }

    /// No groups: the search degenerates to plain beam search.
    pub fn unconstrained() -> Self {
        Self::default()
    }

    pub fn groups(&self) -> &[ConstraintGroup] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Every group has a phrase occurring as a contiguous run of `tokens`.
    pub fn is_satisfied_by(&self, tokens: &[TokenId]) -> bool {
        self.groups.iter().all(|g| {
            g.phrases
                .iter()
                .any(|p| p.len() <= tokens.len() && tokens.windows(p.len()).any(|w| w == p.as_slice()))
        })
    }

    /// Shortest length that can satisfy every group on its own; a lower
    /// bound only, since phrases of different groups may overlap.
    pub fn min_group_length(&self) -> usize {
        self.groups
            .iter()
            .filter_map(|g| g.phrases.iter().map(Vec::len).min())
            .max()
            .unwrap_or(0)
    }
}

/// One group per evidence index owning an entity; phrases are the entity
/// surfaces under the scorer's tokenizer.
pub fn build_constraints(entities: &EntitySet, vocab: &Vocab) -> Result<ConstraintSet, GenerateError> {
    let mut groups: Vec<ConstraintGroup> = Vec::new();
    for e in entities {
        let phrase = vocab.encode(&e.surface)?;
        match groups.last_mut() {
            Some(g) if g.evidence_index == e.evidence_index => g.phrases.push(phrase),
            _ => groups.push(ConstraintGroup {
                evidence_index: e.evidence_index,
                phrases: vec![phrase],
            }),
        }
    }
    let cons = ConstraintSet::new(groups);
    if cons.is_empty() {
        return Err(GenerateError::EmptyConstraints);
    }
    Ok(cons)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub beam_size: usize,
    /// Maximum generated tokens, not counting the end token.
    pub max_length: usize,
    /// Candidates returned per instance.
    pub k: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            beam_size: 30,
            max_length: 96,
            k: 10,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self, cons: &ConstraintSet) -> Result<(), GenerateError> {
        let bad = |m: String| Err(GenerateError::InvalidConfig(m));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.beam_size < cons.len() + 1 {
            return bad(format!(
                "beam size {} smaller than {} constraint groups + 1",
                self.beam_size,
                cons.len()
            ));
        }
        if self.k > self.beam_size {
            return bad(format!("k = {} exceeds beam size {}", self.k, self.beam_size));
        }
        if self.max_length < cons.min_group_length() {
            return bad(format!(
                "max length {} shorter than every phrase of some constraint group ({})",
                self.max_length,
                cons.min_group_length()
            ));
        }
        Ok(())
    }
}

/// Position inside a partially generated phrase.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhraseProgress {
    pub group: usize,
    pub phrase: usize,
    /// Tokens of the phrase already generated.
    pub pos: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub tokens: Vec<TokenId>,
    pub log_prob: f64,
    pub satisfied: Vec<bool>,
    pub progress: Option<PhraseProgress>,
}

impl Hypothesis {
    fn root(groups: usize) -> Self {
        Self {
            tokens: Vec::new(),
            log_prob: 0.0,
            satisfied: vec![false; groups],
            progress: None,
        }
    }

    pub fn satisfied_count(&self) -> usize {
        self.satisfied.iter().filter(|&&s| s).count()
    }

    pub fn all_satisfied(&self) -> bool {
        self.satisfied.iter().all(|&s| s)
    }

    pub fn is_finished(&self) -> bool {
        self.tokens.last() == Some(&EOS)
    }

    fn extend(&self, token: TokenId, log_prob: f64, cons: &ConstraintSet) -> Self {
        let mut tokens = Vec::with_capacity(self.tokens.len() + 1);
        tokens.extend_from_slice(&self.tokens);
        tokens.push(token);

        let mut satisfied = self.satisfied.clone();
        for (g, group) in cons.groups().iter().enumerate() {
            if !satisfied[g] {
                satisfied[g] = group.phrases.iter().any(|p| tokens.ends_with(p));
            }
        }

        let mut progress = None;
        if let Some(p) = self.progress {
            let phrase = &cons.groups()[p.group].phrases[p.phrase];
            if !satisfied[p.group] && phrase[p.pos] == token {
                progress = Some(PhraseProgress { pos: p.pos + 1, ..p });
            }
        }
        if progress.is_none() {
            'outer: for (g, group) in cons.groups().iter().enumerate() {
                if satisfied[g] {
                    continue;
                }
                for (pi, phrase) in group.phrases.iter().enumerate() {
                    if phrase.len() > 1 && phrase[0] == token {
                        progress = Some(PhraseProgress {
                            group: g,
                            phrase: pi,
                            pos: 1,
                        });
                        break 'outer;
                    }
                }
            }
        }

        Self {
            tokens,
            log_prob: self.log_prob + log_prob,
            satisfied,
            progress,
        }
    }

    fn forced_tokens<'a>(&'a self, cons: &'a ConstraintSet) -> impl Iterator<Item = TokenId> + 'a {
        let starts = cons
            .groups()
            .iter()
            .zip(&self.satisfied)
            .filter(|(_, &s)| !s)
            .flat_map(|(g, _)| g.phrases.iter().map(|p| p[0]));
        let cont = self
            .progress
            .map(|p| cons.groups()[p.group].phrases[p.phrase][p.pos]);
        starts.chain(cont)
    }
}

/// Higher log-probability first; ties by token sequence.
fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.log_prob
        .partial_cmp(&a.log_prob)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Indices of the `n` highest entries, ties by lower index. Special tokens
/// are never proposed here.
fn top_tokens(dist: &[f64], n: usize) -> Vec<TokenId> {
    let mut idx: Vec<TokenId> = (0..dist.len() as TokenId)
        .filter(|&t| !Vocab::is_special(t) && dist[t as usize].is_finite())
        .collect();
    idx.sort_by(|&a, &b| {
        dist[b as usize]
            .partial_cmp(&dist[a as usize])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(n);
    idx
}

/// Bank sizes for `beam_size` slots over banks `0..=groups` holding
/// `available[i]` candidates: an even split with the remainder going to
/// the banks with more satisfied groups, then unused slots flowing to the
/// fullest-satisfying banks that still have candidates.
pub fn allocate_banks(beam_size: usize, available: &[usize]) -> Vec<usize> {
    let banks = available.len();
    let base = beam_size / banks;
    let rem = beam_size % banks;
    let mut take: Vec<usize> = (0..banks)
        .map(|i| {
            let quota = base + usize::from(i >= banks - rem);
            quota.min(available[i])
        })
        .collect();
    let mut left = beam_size - take.iter().sum::<usize>();
    for i in (0..banks).rev() {
        let extra = left.min(available[i] - take[i]);
        take[i] += extra;
        left -= extra;
    }
    take
}

/// Finished hypotheses, best first. Every one satisfies all groups and ends
/// with the end token after at most `max_length` other tokens.
pub fn constrained_beam_search(
    scorer: &dyn TokenScorer,
    context: &[TokenId],
    cons: &ConstraintSet,
    cfg: &GeneratorConfig,
) -> Result<Vec<Hypothesis>, GenerateError> {
    cfg.validate(cons)?;
    scorer.vocab().check(context)?;
    let n = cons.len();
    let beam = cfg.beam_size;

    let mut live = vec![Hypothesis::root(n)];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for _step in 0..=cfg.max_length {
        if live.is_empty() {
            break;
        }
        let mut banks: Vec<Vec<Hypothesis>> = vec![Vec::new(); n + 1];
        for h in &live {
            let dist = scorer.score_next_tokens(context, &h.tokens)?;
            if h.all_satisfied() && dist[EOS as usize].is_finite() {
                finished.push(h.extend(EOS, dist[EOS as usize], cons));
            }
            if h.tokens.len() >= cfg.max_length {
                continue;
            }
            let mut next: BTreeSet<TokenId> = top_tokens(&dist, beam).into_iter().collect();
            next.extend(h.forced_tokens(cons));
            for t in next {
                let lp = dist[t as usize];
                if t == BOS || t == EOS || !lp.is_finite() {
                    continue;
                }
                let child = h.extend(t, lp, cons);
                debug_assert!(child.satisfied_count() >= h.satisfied_count());
                banks[child.satisfied_count()].push(child);
            }
        }

        for bank in &mut banks {
            bank.sort_by(rank);
        }
        let sizes: Vec<usize> = banks.iter().map(Vec::len).collect();
        let take = allocate_banks(beam, &sizes);
        live = banks
            .into_iter()
            .zip(take)
            .rev()
            .flat_map(|(bank, t)| bank.into_iter().take(t))
            .collect();

        finished.sort_by(rank);
        finished.truncate(beam);
        if finished.len() >= beam {
            let worst = finished[finished.len() - 1].log_prob;
            if live.iter().all(|h| h.log_prob < worst) {
                break;
            }
        }
    }

    finished.sort_by(rank);
    finished.truncate(beam);
    if finished.is_empty() {
        return Err(GenerateError::NoSatisfyingHypothesis {
            max_length: cfg.max_length,
        });
    }
    Ok(finished)
}

/// Concatenation, in evidence order, of the masked sentences.
pub fn rationale_input(evidence: &[EvidenceItem], rats: &Rationales) -> String {
    rats.masked_indices()
        .filter_map(|i| evidence.get(i))
        .map(|e| e.text.trim())
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedClaim {
    pub text: String,
    pub log_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidates {
    pub input: String,
    pub claims: Vec<GeneratedClaim>,
    /// `k` minus the number of distinct claims found.
    pub shortfall: usize,
}

/// Up to `k` distinct claims, best first, generated from the masked
/// sentences of `evidence` under the entity constraints.
pub fn generate_candidates(
    evidence: &[EvidenceItem],
    rats: &Rationales,
    entities: &EntitySet,
    scorer: &dyn TokenScorer,
    cfg: &GeneratorConfig,
) -> Result<Candidates, GenerateError> {
    if rats.masked_indices().next().is_none() {
        return Err(GenerateError::NoRationale);
    }
    let input = rationale_input(evidence, rats);
    let vocab = scorer.vocab();
    let context = vocab.encode(&input)?;
    let cons = build_constraints(entities, vocab)?;
    let hyps = constrained_beam_search(scorer, &context, &cons, cfg)?;

    let mut seen = BTreeSet::new();
    let mut claims = Vec::new();
    for h in hyps {
        let text = vocab.decode(&h.tokens);
        if text.is_empty() || !seen.insert(text.clone()) {
            continue;
        }
        claims.push(GeneratedClaim {
            text,
            log_prob: h.log_prob,
        });
        if claims.len() == cfg.k {
            break;
        }
    }
    Ok(Candidates {
        input,
        shortfall: cfg.k - claims.len(),
        claims,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{RandomScorer, UniformScorer};
    use crate::model::{Entity, EntityType};
    use crate::text::Span;

    fn vocab_ab() -> Vocab {
        Vocab::from_tokens(["a", "b"])
    }

    fn group(i: usize, phrases: Vec<Vec<TokenId>>) -> ConstraintGroup {
        ConstraintGroup {
            evidence_index: i,
            phrases,
        }
    }

    #[test]
    fn allocation_even_split_with_remainder_up() {
        assert_eq!(allocate_banks(10, &[100, 100, 100]), vec![3, 3, 4]);
        assert_eq!(allocate_banks(11, &[100, 100, 100]), vec![3, 4, 4]);
    }

    #[test]
    fn allocation_unused_slots_flow_to_fuller_banks() {
        assert_eq!(allocate_banks(9, &[10, 1, 10]), vec![3, 1, 5]);
        assert_eq!(allocate_banks(9, &[10, 0, 0]), vec![9, 0, 0]);
        assert_eq!(allocate_banks(9, &[2, 1, 1]), vec![2, 1, 1]);
    }

    #[test]
    fn single_forced_phrase_appears() {
        let s = UniformScorer::new(vocab_ab());
        let b = s.vocab().id("b").unwrap();
        let cons = ConstraintSet::new(vec![group(0, vec![vec![b]])]);
        let cfg = GeneratorConfig {
            beam_size: 4,
            max_length: 3,
            k: 2,
        };
        let out = constrained_beam_search(&s, &[], &cons, &cfg).unwrap();
        assert!(!out.is_empty());
        for h in out {
            assert!(h.tokens.contains(&b));
            assert_eq!(*h.tokens.last().unwrap(), EOS);
            assert!(h.tokens.len() <= 4);
        }
    }

    #[test]
    fn conjunction_of_two_groups() {
        let s = UniformScorer::new(vocab_ab());
        let a = s.vocab().id("a").unwrap();
        let b = s.vocab().id("b").unwrap();
        let cons = ConstraintSet::new(vec![group(0, vec![vec![a]]), group(1, vec![vec![b]])]);
        let cfg = GeneratorConfig {
            beam_size: 6,
            max_length: 4,
            k: 3,
        };
        for h in constrained_beam_search(&s, &[], &cons, &cfg).unwrap() {
            assert!(h.tokens.contains(&a) && h.tokens.contains(&b));
        }
    }

    #[test]
    fn multi_token_phrase_completed() {
        let vocab = Vocab::from_tokens(["Ford", "Fusion", "drives", "it"]);
        let s = RandomScorer::new(vocab.clone(), 5, 4.0);
        let phrase = vocab.encode("Ford Fusion").unwrap();
        let cons = ConstraintSet::new(vec![group(0, vec![phrase.clone()])]);
        let cfg = GeneratorConfig {
            beam_size: 5,
            max_length: 5,
            k: 3,
        };
        for h in constrained_beam_search(&s, &[], &cons, &cfg).unwrap() {
            assert!(h.tokens.windows(2).any(|w| w == phrase.as_slice()));
        }
    }

    #[test]
    fn impossible_constraints_error() {
        let s = UniformScorer::new(vocab_ab());
        let a = s.vocab().id("a").unwrap();
        let b = s.vocab().id("b").unwrap();
        let cons = ConstraintSet::new(vec![
            group(0, vec![vec![a, a]]),
            group(1, vec![vec![b, b]]),
        ]);
        let cfg = GeneratorConfig {
            beam_size: 3,
            max_length: 3,
            k: 1,
        };
        assert_eq!(
            constrained_beam_search(&s, &[], &cons, &cfg),
            Err(GenerateError::NoSatisfyingHypothesis { max_length: 3 })
        );
    }

    #[test]
    fn config_validation() {
        let cons = ConstraintSet::new(vec![group(0, vec![vec![2]]), group(1, vec![vec![3, 2, 3]])]);
        let ok = GeneratorConfig {
            beam_size: 3,
            max_length: 3,
            k: 3,
        };
        assert!(ok.validate(&cons).is_ok());
        assert!(GeneratorConfig { beam_size: 2, ..ok }.validate(&cons).is_err());
        assert!(GeneratorConfig { k: 4, ..ok }.validate(&cons).is_err());
        assert!(GeneratorConfig { max_length: 2, ..ok }.validate(&cons).is_err());
    }

    #[test]
    fn long_alternative_does_not_reject_short_budget() {
        let s = UniformScorer::new(vocab_ab());
        let a = s.vocab().id("a").unwrap();
        let b = s.vocab().id("b").unwrap();
        let cons = ConstraintSet::new(vec![group(0, vec![vec![a, b, a], vec![b]])]);
        let cfg = GeneratorConfig {
            beam_size: 2,
            max_length: 1,
            k: 1,
        };
        let out = constrained_beam_search(&s, &[], &cons, &cfg).unwrap();
        assert_eq!(out[0].tokens, vec![b, EOS]);
    }

    fn ent(surface: &str, idx: usize) -> Entity {
        Entity {
            surface: surface.into(),
            etype: EntityType::Person,
            evidence_index: idx,
            span: Span::new(0, surface.chars().count()),
        }
    }

    #[test]
    fn worked_example_has_three_groups() {
        let vocab = Vocab::from_texts([
            "Ford Fusion 2006 Patrick Carpentier 1997",
        ]);
        let t = EntitySet::new(vec![
            ent("Ford Fusion", 0),
            Entity { span: Span::new(20, 24), ..ent("2006", 0) },
            ent("Patrick Carpentier", 1),
            Entity { span: Span::new(30, 41), ..ent("Ford Fusion", 1) },
            ent("1997", 2),
            Entity { span: Span::new(30, 48), ..ent("Patrick Carpentier", 2) },
        ]);
        let cons = build_constraints(&t, &vocab).unwrap();
        assert_eq!(cons.len(), 3);
        let sizes: Vec<usize> = cons.groups().iter().map(|g| g.phrases.len()).collect();
        assert_eq!(sizes, vec![2, 2, 2]);
        assert_eq!(cons.groups()[0].phrases[0], vocab.encode("Ford Fusion").unwrap());
    }

    #[test]
    fn single_entity_single_group() {
        let vocab = Vocab::from_texts(["Arizona"]);
        let cons = build_constraints(&EntitySet::new(vec![ent("Arizona", 0)]), &vocab).unwrap();
        assert_eq!(cons.len(), 1);
        assert_eq!(cons.groups()[0].phrases.len(), 1);
    }

    #[test]
    fn absent_evidence_contributes_no_group() {
        let vocab = Vocab::from_texts(["Arizona Texas"]);
        let t = EntitySet::new(vec![ent("Arizona", 1), Entity { span: Span::new(8, 13), ..ent("Texas", 1) }]);
        let cons = build_constraints(&t, &vocab).unwrap();
        assert_eq!(cons.len(), 1);
        assert_eq!(cons.groups()[0].evidence_index, 1);
    }

    #[test]
    fn no_entities_is_empty_constraints() {
        let vocab = Vocab::from_texts(["x"]);
        assert_eq!(
            build_constraints(&EntitySet::default(), &vocab),
            Err(GenerateError::EmptyConstraints)
        );
    }

    fn candidates_setup() -> (RandomScorer, Vec<EvidenceItem>, Rationales, EntitySet) {
        let evidence = vec![
            EvidenceItem::new("", "Arizona hosted the race in 2006."),
            EvidenceItem::new("", "Texas won in 1997."),
        ];
        let vocab = Vocab::from_texts(evidence.iter().map(|e| e.text.as_str()));
        let scorer = RandomScorer::new(vocab, 17, 3.0);
        let rats = Rationales {
            sentence_mask: vec![true, true],
            token_spans: vec![vec![Span::new(0, 7)], vec![Span::new(0, 5)]],
        };
        let t = EntitySet::new(vec![ent("Arizona", 0), ent("Texas", 1)]);
        (scorer, evidence, rats, t)
    }

    #[test]
    fn k_distinct_candidates_satisfy_groups() {
        let (scorer, evidence, rats, t) = candidates_setup();
        let cfg = GeneratorConfig {
            beam_size: 12,
            max_length: 6,
            k: 3,
        };
        let out = generate_candidates(&evidence, &rats, &t, &scorer, &cfg).unwrap();
        assert_eq!(out.input, "Arizona hosted the race in 2006. Texas won in 1997.");
        assert_eq!(out.claims.len(), 3);
        assert_eq!(out.shortfall, 0);
        let distinct: BTreeSet<_> = out.claims.iter().map(|c| c.text.as_str()).collect();
        assert_eq!(distinct.len(), 3);
        for c in &out.claims {
            let toks = crate::text::token_strings(&c.text);
            assert!(toks.iter().any(|t| t == "Arizona") && toks.iter().any(|t| t == "Texas"));
        }
    }

    #[test]
    fn k_one_is_top_hypothesis() {
        let (scorer, evidence, rats, t) = candidates_setup();
        let cfg = GeneratorConfig {
            beam_size: 12,
            max_length: 6,
            k: 1,
        };
        let out = generate_candidates(&evidence, &rats, &t, &scorer, &cfg).unwrap();
        let context = scorer.vocab().encode(&out.input).unwrap();
        let cons = build_constraints(&t, scorer.vocab()).unwrap();
        let top = &constrained_beam_search(&scorer, &context, &cons, &cfg).unwrap()[0];
        assert_eq!(out.claims.len(), 1);
        assert_eq!(out.claims[0].text, scorer.vocab().decode(&top.tokens));
    }

    #[test]
    fn search_is_deterministic() {
        let (scorer, evidence, rats, t) = candidates_setup();
        let cfg = GeneratorConfig {
            beam_size: 8,
            max_length: 6,
            k: 4,
        };
        let a = generate_candidates(&evidence, &rats, &t, &scorer, &cfg).unwrap();
        let b = generate_candidates(&evidence, &rats, &t, &scorer, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
