use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde_json::{json, Value};
use softrules::corpus::{load_corpus, load_instances, serialize_corpus, validate_instance, validate_sentence, MarkedText};
use softrules::episode::{load_episodes, serialize_episodes, Episode};
use softrules::eval::{evaluate_baseline, report, score_episodes, tune_threshold, EvalReport, RuleSource};
use softrules::matcher::{find_matches, matches, CorpusIndex, MatchConfig};
use softrules::pipeline::{load_dataset, run_pipeline, write_dataset, Paraphraser, PipelineConfig, TemplateParaphraser};
use softrules::rule::{parse_rule, read_rule_file, serialize_rule, write_rule_file, RuleKind, RuleRow};
use softrules::rulegen::{generate_rule, RuleGenConfig};
use softrules::semantic::{load_model, retrieval_accuracy, save_model, train, CachedEmbedder, Embedder, HashedEncoder, TrainingConfig};
use softrules::sieve::{HardTieBreak, Mode, SieveConfig, SupportRule};
use softrules::synth::{generate_benchmark, generate_corpus, BenchmarkConfig};
use softrules_workbench::AppState;

use crate::{BuildData, Cli, Command, EvalMode, InputKind, Kind, Preset, SieveArgs, TieBreak, TuneMode, UsageError};

pub fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Validate { corpus, kind } => validate(&corpus, kind),
        Command::GenCorpus { sentences, out } => {
            let corpus = generate_corpus(sentences, seed.unwrap_or(42));
            write_text(&out, &serialize_corpus(&corpus))?;
            eprintln!("wrote {} sentences to {}", corpus.len(), out.display());
            emit(&json!({ "sentences": corpus.len() }))
        }
        Command::GenBench { preset, episodes, out } => {
            let mut cfg = match preset {
                Preset::Mini => BenchmarkConfig::mini(),
                Preset::Dev => BenchmarkConfig::dev(),
            };
            if let Some(n) = episodes {
                cfg.episodes = n;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let eps = generate_benchmark(&cfg);
            write_text(&out, &serialize_episodes(&eps))?;
            eprintln!("wrote {} episodes to {}", eps.len(), out.display());
            emit(&json!({ "episodes": eps.len(), "seed": cfg.seed }))
        }
        Command::GenRules { instances, kind, lexicalize_identical, out } => gen_rules(&instances, kind, lexicalize_identical, &out),
        Command::Match { rules, corpus, case_sensitive, synonyms, all } => {
            match_rules(&rules, &corpus, MatchConfig { case_sensitive, synonyms }, all)
        }
        Command::BuildData(args) => build_data(args, seed),
        Command::Train { data, config, epochs, heldout, out } => train_model(&data, config.as_deref(), epochs, heldout.as_deref(), &out, seed),
        Command::Score { model, rule, sentence } => {
            let rule = parse_rule(&rule).map_err(|e| UsageError(format!("rule: {e}")))?;
            MarkedText { text: sentence.clone() }
                .parse()
                .map_err(|e| UsageError(format!("sentence: {e}")))?;
            let enc = read_model(&model)?;
            let text = serialize_rule(&rule);
            let sim = enc.similarity(&text, &sentence)?;
            emit(&json!({ "rule": text, "sentence": sentence, "similarity": sim }))
        }
        Command::Eval { episodes, sieve, mode, threshold, overrides, report: out } => {
            let eps = read_episodes(&episodes)?;
            let rep = if mode == EvalMode::Baseline {
                evaluate_baseline(&eps)
            } else {
                let mode = match mode {
                    EvalMode::Hard => Mode::Hard,
                    EvalMode::Soft => Mode::Soft,
                    _ => Mode::Hybrid,
                };
                let cfg = SieveConfig {
                    mode,
                    threshold,
                    overrides: overrides.into_iter().collect(),
                    hard_tiebreak: tiebreak(sieve.tiebreak),
                    match_config: MatchConfig {
                        case_sensitive: sieve.case_sensitive,
                        ..MatchConfig::default()
                    },
                };
                let embedder = sieve_embedder(&sieve, mode)?;
                let source = rule_source(&sieve)?;
                let scored = score_episodes(&eps, |ep| source.rules_for(ep), embedder.as_deref(), &cfg)?;
                report(&scored, &cfg)
            };
            summarize(&rep, mode == EvalMode::Baseline);
            if let Some(path) = out {
                let text = serde_json::to_string_pretty(&rep)?;
                write_text(&path, &text)?;
            }
            let mut value = serde_json::to_value(&rep)?;
            if let Value::Object(map) = &mut value {
                map.remove("predictions");
            }
            emit(&value)
        }
        Command::Tune { dev, sieve, step, mode } => {
            if !(step > 0.0 && step < 1.0) {
                bail!(UsageError(format!("--step {step} must lie in (0, 1)")));
            }
            let mode = match mode {
                TuneMode::Soft => Mode::Soft,
                TuneMode::Hybrid => Mode::Hybrid,
            };
            let eps = read_episodes(&dev)?;
            let cfg = SieveConfig {
                mode,
                hard_tiebreak: tiebreak(sieve.tiebreak),
                match_config: MatchConfig {
                    case_sensitive: sieve.case_sensitive,
                    ..MatchConfig::default()
                },
                ..SieveConfig::default()
            };
            let embedder = sieve_embedder(&sieve, mode)?;
            let source = rule_source(&sieve)?;
            let scored = score_episodes(&eps, |ep| source.rules_for(ep), embedder.as_deref(), &cfg)?;
            let tuned = tune_threshold(&scored, &cfg, step)?;
            eprintln!("best threshold {:.4} (F1 {:.4}) over {} episodes", tuned.threshold, tuned.f1, eps.len());
            emit(&json!({ "mode": mode, "step": step, "threshold": tuned.threshold, "f1": tuned.f1 }))
        }
        Command::Serve { episodes, model, host, port, mode, threshold, kind, sessions } => {
            let eps = match episodes {
                Some(p) => read_episodes(&p)?,
                None => softrules::bundled::mini_benchmark(),
            };
            let embedder: Option<Arc<dyn Embedder>> = match model {
                Some(p) => Some(Arc::new(CachedEmbedder::new(read_model(&p)?))),
                None => None,
            };
            let defaults = SieveConfig {
                mode: match mode {
                    TuneMode::Soft => Mode::Soft,
                    TuneMode::Hybrid => Mode::Hybrid,
                },
                threshold,
                ..SieveConfig::default()
            };
            let mut state = AppState::with_rules(eps, embedder, defaults, rule_kind(kind), RuleGenConfig::default());
            if let Some(dir) = sessions {
                state = state.persist_to(dir)?;
            }
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind((host.as_str(), port))
                    .await
                    .with_context(|| format!("binding {host}:{port}"))?;
                let addr = listener.local_addr()?;
                emit(&json!({ "address": format!("http://{addr}") }))?;
                eprintln!("serving on http://{addr}");
                softrules_workbench::serve(listener, state).await?;
                Ok(())
            })
        }
    }
}

/// One JSON document on stdout.
fn emit(value: &impl serde::Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_episodes(path: &Path) -> Result<Vec<Episode>> {
    load_episodes(path).with_context(|| format!("reading episodes from {}", path.display()))
}

fn read_model(path: &Path) -> Result<HashedEncoder> {
    load_model(path).with_context(|| format!("loading model {}", path.display()))
}

fn rule_kind(kind: Kind) -> RuleKind {
    match kind {
        Kind::Syntactic => RuleKind::Syntactic,
        Kind::Surface => RuleKind::Surface,
    }
}

fn tiebreak(t: TieBreak) -> HardTieBreak {
    match t {
        TieBreak::SoftScore => HardTieBreak::BySoftScore,
        TieBreak::MatchCount => HardTieBreak::ByMatchCount,
    }
}

fn sieve_embedder(args: &SieveArgs, mode: Mode) -> Result<Option<Arc<dyn Embedder>>> {
    match &args.model {
        Some(p) => Ok(Some(Arc::new(CachedEmbedder::new(read_model(p)?)))),
        None if mode == Mode::Hard => Ok(None),
        None => bail!(UsageError(format!("--model is required in {mode:?} mode").to_lowercase())),
    }
}

fn rule_source(args: &SieveArgs) -> Result<RuleSource> {
    if args.rules == "generated" {
        return Ok(RuleSource::Generated {
            kind: rule_kind(args.kind),
            config: RuleGenConfig {
                lexicalize_identical_types: args.lexicalize_identical,
            },
        });
    }
    let rows = read_rules(Path::new(&args.rules))?;
    Ok(RuleSource::External(
        rows.into_iter()
            .enumerate()
            .map(|(i, r)| SupportRule {
                id: format!("file-{}", i + 1),
                rule: r.rule,
                relation: r.relation,
                source_instance_id: r.provenance,
                enabled: true,
            })
            .collect(),
    ))
}

/// A rule TSV, or bare rules one per line (relation and provenance left
/// empty). Blank lines and `#`-comments are skipped in the bare form.
fn read_rules(path: &Path) -> Result<Vec<RuleRow>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading rules from {}", path.display()))?;
    if text.contains('\t') {
        return read_rule_file(path).with_context(|| format!("reading rules from {}", path.display()));
    }
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with("# ") || line == "#" {
            continue;
        }
        let rule = parse_rule(line).with_context(|| format!("{}: line {}", path.display(), i + 1))?;
        rows.push(RuleRow {
            relation: String::new(),
            rule,
            provenance: String::new(),
        });
    }
    Ok(rows)
}

fn detect(path: &Path) -> Result<InputKind> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let Some((n, first)) = text.lines().enumerate().find(|(_, l)| !l.trim().is_empty()) else {
        return Ok(InputKind::Sentences);
    };
    let value: Value = serde_json::from_str(first).with_context(|| format!("{}: malformed JSON, line {}", path.display(), n + 1))?;
    Ok(if value.get("supports").is_some() {
        InputKind::Episodes
    } else if value.get("subj").is_some() {
        InputKind::Instances
    } else {
        InputKind::Sentences
    })
}

fn validate(path: &Path, kind: InputKind) -> Result<()> {
    let kind = if kind == InputKind::Auto { detect(path)? } else { kind };
    let ctx = || format!("validating {}", path.display());
    let (name, records, warnings): (&str, usize, Vec<String>) = match kind {
        InputKind::Sentences => {
            let corpus = load_corpus(path).with_context(ctx)?;
            let warnings = corpus
                .iter()
                .flat_map(|s| validate_sentence(s).into_iter().map(move |v| format!("{}: {v}", s.id)))
                .collect();
            ("sentences", corpus.len(), warnings)
        }
        InputKind::Instances => {
            let insts = load_instances(path).with_context(ctx)?;
            let warnings = insts
                .iter()
                .flat_map(|i| validate_instance(i).into_iter().map(move |v| format!("{}: {v}", i.id)))
                .collect();
            ("instances", insts.len(), warnings)
        }
        InputKind::Episodes | InputKind::Auto => {
            let eps = load_episodes(path).with_context(ctx)?;
            let warnings = eps
                .iter()
                .flat_map(|e| e.supports.iter().chain(std::iter::once(&e.query)))
                .flat_map(|i| validate_instance(i).into_iter().map(move |v| format!("{}: {v}", i.id)))
                .collect();
            ("episodes", eps.len(), warnings)
        }
    };
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    eprintln!("{records} {name} ok, {} warnings", warnings.len());
    emit(&json!({ "kind": name, "records": records, "warnings": warnings }))
}

fn gen_rules(instances: &Path, kind: Kind, lexicalize: bool, out: &Path) -> Result<()> {
    let insts = load_instances(instances).with_context(|| format!("reading {}", instances.display()))?;
    let cfg = RuleGenConfig {
        lexicalize_identical_types: lexicalize,
    };
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for inst in &insts {
        match generate_rule(inst, rule_kind(kind), &cfg) {
            Ok(rule) => rows.push(RuleRow {
                relation: inst.relation.clone().unwrap_or_default(),
                rule,
                provenance: inst.id.clone(),
            }),
            Err(e) => {
                eprintln!("skipped: {e}");
                skipped.push(inst.id.clone());
            }
        }
    }
    write_rule_file(out, &rows).with_context(|| format!("writing {}", out.display()))?;
    eprintln!("wrote {} rules to {} ({} skipped)", rows.len(), out.display(), skipped.len());
    emit(&json!({ "rules": rows.len(), "skipped": skipped }))
}

fn match_rules(rules: &Path, corpus: &Path, cfg: MatchConfig, all: bool) -> Result<()> {
    let rows = read_rules(rules)?;
    let insts = load_instances(corpus).with_context(|| format!("reading {}", corpus.display()))?;
    let index = CorpusIndex::new(&insts);
    let mut out = BufWriter::new(std::io::stdout().lock());
    let mut hits = 0;
    for row in &rows {
        let text = serialize_rule(&row.rule);
        let mut line = |id: &str, m: &softrules::matcher::MatchResult| -> Result<()> {
            serde_json::to_writer(&mut out, &json!({ "rule": text, "instance_id": id, "matched": m.matched, "binding": m.binding }))?;
            writeln!(out)?;
            Ok(())
        };
        if all {
            for inst in &insts {
                let m = matches(&row.rule, inst, &cfg);
                hits += m.matched as usize;
                line(&inst.id, &m)?;
            }
        } else {
            for (id, m) in find_matches(&row.rule, &index, &cfg) {
                hits += 1;
                line(&id, &m)?;
            }
        }
    }
    out.flush()?;
    eprintln!("{} rules, {} instances, {hits} matches", rows.len(), insts.len());
    Ok(())
}

fn build_data(args: BuildData, seed: Option<u64>) -> Result<()> {
    let mut cfg: PipelineConfig = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.ablations.no_paraphrase |= args.no_paraphrase;
    cfg.ablations.no_preprocess |= args.no_preprocess;
    cfg.ablations.no_augment |= args.no_augment;
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    let corpus = load_corpus(&args.corpus).with_context(|| format!("reading {}", args.corpus.display()))?;
    let paraphraser = paraphraser(&args)?;
    let started = Instant::now();
    let out = run_pipeline(&corpus, &cfg, Some(paraphraser.as_ref()))?;
    write_dataset(&args.out, &out.pairs).with_context(|| format!("writing {}", args.out.display()))?;
    eprintln!(
        "{} sentences -> {} pairs in {:.1}s, written to {}",
        out.stats.sentences,
        out.stats.output,
        started.elapsed().as_secs_f64(),
        args.out.display()
    );
    emit(&out.stats)
}

#[cfg(feature = "http-paraphraser")]
fn paraphraser(args: &BuildData) -> Result<Box<dyn Paraphraser>> {
    Ok(match &args.paraphrase_endpoint {
        Some(url) => Box::new(softrules::pipeline::HttpParaphraser::new(
            url.clone(),
            args.paraphrase_model.clone(),
            std::env::var("PARAPHRASE_API_KEY").ok(),
        )),
        None => Box::new(TemplateParaphraser::new()),
    })
}

#[cfg(not(feature = "http-paraphraser"))]
fn paraphraser(args: &BuildData) -> Result<Box<dyn Paraphraser>> {
    if args.paraphrase_endpoint.is_some() {
        bail!(UsageError("--paraphrase-endpoint needs the http-paraphraser feature".into()));
    }
    let _ = &args.paraphrase_model;
    Ok(Box::new(TemplateParaphraser::new()))
}

fn train_model(data: &Path, config: Option<&Path>, epochs: Option<usize>, heldout: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg: TrainingConfig = match config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => TrainingConfig::desk(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    let pairs = load_dataset(data).with_context(|| format!("reading {}", data.display()))?;
    let started = Instant::now();
    let (enc, log) = train(&pairs, &cfg)?;
    save_model(out, &enc).with_context(|| format!("writing {}", out.display()))?;
    let (head, tail) = log.head_tail_means(50);
    let mut summary = json!({
        "pairs": pairs.len(),
        "steps": log.steps,
        "loss_first": head,
        "loss_last": tail,
        "final_logit_scale": log.final_logit_scale,
        "seconds": started.elapsed().as_secs_f64(),
    });
    if let Some(p) = heldout {
        let held = load_dataset(p).with_context(|| format!("reading {}", p.display()))?;
        let acc = retrieval_accuracy(&enc, &held, cfg.batch_size, cfg.seed)?;
        summary["heldout_retrieval"] = json!(acc);
    }
    eprintln!("trained {} steps, loss {head:.3} -> {tail:.3}, model written to {}", log.steps, out.display());
    emit(&summary)
}

fn summarize(rep: &EvalReport, baseline: bool) {
    let label = if baseline {
        "baseline".to_string()
    } else {
        format!("{:?} t={}", rep.mode, rep.threshold).to_lowercase()
    };
    let m = &rep.metrics;
    eprintln!(
        "{label}: {} episodes, P {:.4} R {:.4} F1 {:.4}",
        rep.episodes, m.precision, m.recall, m.f1
    );
    for (rel, m) in &rep.per_relation {
        eprintln!("  {rel:<24} P {:.4} R {:.4} F1 {:.4}", m.precision, m.recall, m.f1);
    }
}

