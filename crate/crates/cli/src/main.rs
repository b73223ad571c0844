use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use hopcf::backends::{Backends, Vocab};
use hopcf::checking::{ad_check, post_check, AdCheck};
use hopcf::editor::{apply_edits, build_entity_pools, collect_causal_entities, plan_edits, EditPlan};
use hopcf::evaluator::evaluate;
use hopcf::explainer::{extract_rationales, GoldRationale, RationaleExtractor};
use hopcf::filtering::{score_candidates, select_best, ScoredCandidate};
use hopcf::generator::{generate_candidates, GeneratedClaim};
use hopcf::nei::{augment_nei, Perturbation};
use hopcf::pipeline::{
    bundled, configured_extractor, corpus_texts, load_dataset, load_jsonl, load_records, run_pipeline,
    write_jsonl, BackendSpec, PipelineConfig,
};
use hopcf::{seed, EvidenceItem, Instance, Label};
use hopcf_remote::{remote_backends, RetryPolicy, StubServer};

#[derive(Parser)]
#[command(name = "hopcf", version, about = "Counterfactual claim augmentation for multi-hop fact verification")]
struct Cli {
    #[command(flatten)]
    shared: Shared,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
struct Shared {
    /// JSON config file; flags below override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Candidates per instance [default: 10]
    #[arg(long, global = true)]
    k: Option<usize>,
    /// [default: 30]
    #[arg(long, global = true)]
    beam_size: Option<usize>,
    /// Generated tokens, excluding the end token [default: 96]
    #[arg(long, global = true)]
    max_length: Option<usize>,
    /// Also emit (claim, edited evidence, REF) records.
    #[arg(long, global = true)]
    emit_evidence_cf: bool,
    /// `toy` or `remote:URL`
    #[arg(long, global = true)]
    backend: Option<BackendSpec>,
    /// Dataset JSONL; the bundled toy corpus when omitted.
    #[arg(long, short, global = true)]
    input: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Extract sentence and token rationales.
    Explain,
    /// Edit causal entities of SUP instances and ad-check the result.
    Edit,
    /// Generate entity-constrained candidate claims from each instance's rationales.
    Generate,
    /// Post-check and select the best candidate per instance.
    Filter {
        /// Output of `generate`.
        #[arg(long)]
        candidates: PathBuf,
    },
    /// Intrinsic metrics of generated records.
    Evaluate {
        /// Records JSONL written by `run`.
        #[arg(long)]
        records: PathBuf,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Add NEI instances built from half of the SUP and REF instances.
    AugmentNei {
        /// Where to write the perturbation log (JSONL).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Full pipeline.
    Run {
        /// Where to write the run report (JSON).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Serve the toy backends over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        #[arg(long, default_value_t = 4)]
        threads: usize,
    },
}

fn resolve_config(shared: &Shared) -> Result<PipelineConfig> {
    let mut cfg = match &shared.config {
        Some(path) => PipelineConfig::load(path)?,
        None => bundled::toy_config(),
    };
    if let Some(s) = shared.seed {
        cfg.seed = s;
    }
    if let Some(k) = shared.k {
        cfg.generator.k = k;
    }
    if let Some(b) = shared.beam_size {
        cfg.generator.beam_size = b;
    }
    if let Some(m) = shared.max_length {
        cfg.generator.max_length = m;
    }
    if shared.emit_evidence_cf {
        cfg.emit_evidence_cf = true;
    }
    if let Some(b) = &shared.backend {
        cfg.backend = b.clone();
    }
    if let Some(i) = &shared.input {
        cfg.dataset = Some(i.clone());
    }
    if let Some(o) = &shared.output {
        cfg.output = Some(o.clone());
    }
    cfg.validate()?;
    cfg.check_paths()?;
    Ok(cfg)
}

fn load_corpus(cfg: &PipelineConfig) -> Result<Vec<Instance>> {
    match &cfg.dataset {
        Some(path) => load_dataset(path).with_context(|| format!("loading {}", path.display())),
        None => Ok(bundled::toy_corpus()),
    }
}

fn mount(cfg: &PipelineConfig, corpus: &[Instance]) -> Result<Backends> {
    Ok(match &cfg.backend {
        BackendSpec::Toy => cfg.toy.backends(corpus)?,
        BackendSpec::Remote(url) => {
            let vocab = Vocab::from_texts(corpus_texts(corpus));
            remote_backends(url, vocab, RetryPolicy::default())
                .with_context(|| format!("connecting to {url}"))?
        }
    })
}

fn emit<T: Serialize>(items: &[T], out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => {
            let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            write_jsonl(items, io::BufWriter::new(file))?;
        }
        None => write_jsonl(items, io::stdout().lock())?,
    }
    Ok(())
}

fn emit_text(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

#[derive(Serialize)]
struct EditLine {
    id: String,
    plan: EditPlan,
    evidence: Vec<EvidenceItem>,
    ad_check: AdCheck,
}

#[derive(Serialize, Deserialize)]
struct GenerateLine {
    id: String,
    input: String,
    candidates: Vec<GeneratedClaim>,
}

#[derive(Serialize)]
struct FilterLine {
    id: String,
    best: Option<ScoredCandidate<f64>>,
    ledger: Vec<ScoredCandidate<f64>>,
}

#[derive(Serialize)]
struct PerturbationLine {
    source: usize,
    #[serde(flatten)]
    perturbation: Perturbation,
}

fn skip(id: &str, stage: &str, e: impl std::fmt::Display) {
    log::warn!("{id}: skipped at {stage}: {e}");
}

fn explain(cfg: &PipelineConfig, corpus: &[Instance], extractor: &dyn RationaleExtractor) -> Result<()> {
    let mut out = Vec::new();
    for inst in corpus {
        match extract_rationales(extractor, inst) {
            Ok(r) => out.push(GoldRationale {
                id: inst.id.clone(),
                sentence_mask: r.sentence_mask,
                token_spans: r.token_spans,
            }),
            Err(e) => skip(&inst.id, "explain", e),
        }
    }
    emit(&out, cfg.output.as_deref())
}

fn edit(cfg: &PipelineConfig, corpus: &[Instance], b: &Backends, extractor: &dyn RationaleExtractor) -> Result<()> {
    let pools = build_entity_pools(corpus, b.ner.as_ref())?;
    let mut out = Vec::new();
    for inst in corpus.iter().filter(|i| i.label == Label::Sup) {
        let step = || -> Result<EditLine> {
            let rats = extract_rationales(extractor, inst)?;
            let entities = collect_causal_entities(inst, &rats, b.ner.as_ref())?;
            let mut rng = seed::rng(seed::instance_seed(cfg.seed, &inst.id));
            let plan = plan_edits(&entities, &pools, &mut rng)?;
            let (evidence, _) = apply_edits(&inst.evidence, &entities, &plan);
            let ad = ad_check(&inst.claim, &evidence, b.verifier.as_ref())?;
            Ok(EditLine {
                id: inst.id.clone(),
                plan,
                evidence,
                ad_check: ad,
            })
        };
        match step() {
            Ok(line) => out.push(line),
            Err(e) => skip(&inst.id, "edit", e),
        }
    }
    emit(&out, cfg.output.as_deref())
}

fn generate(cfg: &PipelineConfig, corpus: &[Instance], b: &Backends, extractor: &dyn RationaleExtractor) -> Result<()> {
    let mut out = Vec::new();
    for inst in corpus {
        let step = || -> Result<GenerateLine> {
            let rats = extract_rationales(extractor, inst)?;
            let entities = collect_causal_entities(inst, &rats, b.ner.as_ref())?;
            let c = generate_candidates(&inst.evidence, &rats, &entities, b.scorer.as_ref(), &cfg.generator)?;
            Ok(GenerateLine {
                id: inst.id.clone(),
                input: c.input,
                candidates: c.claims,
            })
        };
        match step() {
            Ok(line) => out.push(line),
            Err(e) => skip(&inst.id, "generate", e),
        }
    }
    emit(&out, cfg.output.as_deref())
}

fn filter(cfg: &PipelineConfig, corpus: &[Instance], b: &Backends, candidates: &Path) -> Result<()> {
    let lines: Vec<GenerateLine> = load_jsonl(candidates)?;
    let mut out = Vec::new();
    for line in lines {
        let Some(inst) = corpus.iter().find(|i| i.id == line.id) else {
            bail!("candidate line for unknown instance {}", line.id);
        };
        let texts: Vec<String> = line.candidates.into_iter().map(|c| c.text).collect();
        let flipped = post_check(&texts, &inst.evidence, inst.label, b.verifier.as_ref())?;
        let pairs: Vec<(String, Label)> = flipped
            .into_iter()
            .filter(|c| c.label.is_binary())
            .map(|c| (c.claim, c.label))
            .collect();
        let scored = score_candidates(&pairs, &inst.claim, b.embedder.as_ref(), b.ner.as_ref())?;
        let best = select_best(&scored).ok().map(|s| s.best);
        out.push(FilterLine {
            id: line.id,
            best,
            ledger: scored,
        });
    }
    emit(&out, cfg.output.as_deref())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cfg = resolve_config(&cli.shared)?;
    let corpus = load_corpus(&cfg)?;
    let out = cfg.output.clone();

    match cli.command {
        Command::AugmentNei { log } => {
            let mut rng = seed::rng(cfg.seed);
            let aug = augment_nei(&corpus, &mut rng)?;
            emit(&aug.instances, out.as_deref())?;
            if let Some(path) = log {
                let lines: Vec<PerturbationLine> = aug
                    .perturbations
                    .into_iter()
                    .map(|(source, perturbation)| PerturbationLine { source, perturbation })
                    .collect();
                emit(&lines, Some(&path))?;
            }
            return Ok(());
        }
        Command::Serve { addr, threads } => {
            let backends = cfg.toy.backends(&corpus)?;
            let server = StubServer::start(backends, &addr, threads)?;
            eprintln!("serving toy backends on {}", server.url());
            server.join();
            return Ok(());
        }
        _ => {}
    }

    let backends = mount(&cfg, &corpus)?;
    let extractor = configured_extractor(&cfg)?;
    match cli.command {
        Command::Explain => explain(&cfg, &corpus, &extractor),
        Command::Edit => edit(&cfg, &corpus, &backends, &extractor),
        Command::Generate => generate(&cfg, &corpus, &backends, &extractor),
        Command::Filter { candidates } => filter(&cfg, &corpus, &backends, &candidates),
        Command::Evaluate { records, json } => {
            let records = load_records(&records)?;
            let report = evaluate(
                &records,
                &corpus,
                backends.scorer.as_ref(),
                backends.embedder.as_ref(),
                backends.verifier.as_ref(),
            )?;
            let text = if json {
                serde_json::to_string_pretty(&report)? + "\n"
            } else {
                report.to_string()
            };
            emit_text(&text, out.as_deref())
        }
        Command::Run { report } => {
            let (records, run_report) = run_pipeline(&corpus, &cfg, &backends)?;
            emit(&records, out.as_deref())?;
            if let Some(path) = report {
                fs::write(&path, serde_json::to_string_pretty(&run_report)? + "\n")
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            eprint!("{run_report}");
            Ok(())
        }
        Command::AugmentNei { .. } | Command::Serve { .. } => unreachable!("handled above"),
    }
}
