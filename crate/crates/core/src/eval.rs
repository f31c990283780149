//! Episodic evaluation: micro P/R/F1, run aggregation, threshold tuning and
//! the entity-type baseline.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::entity_type_pair;
use crate::episode::{Episode, NO_RELATION};
use crate::rule::RuleKind;
use crate::rulegen::RuleGenConfig;
use crate::semantic::{EmbedError, Embedder};
use crate::sieve::{rules_from_supports, score_query, Channel, EpisodeScores, Mode, Prediction, SieveConfig, SupportRule};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub predicted_positive: usize,
    pub gold_positive: usize,
    pub correct_positive: usize,
}

impl Metrics {
    pub fn from_counts(predicted_positive: usize, gold_positive: usize, correct_positive: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(correct_positive, predicted_positive);
        let recall = ratio(correct_positive, gold_positive);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
            predicted_positive,
            gold_positive,
            correct_positive,
        }
    }

    /// Micro metrics over `(gold, predicted)` labels.
    pub fn from_labels<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let (mut pp, mut gp, mut cp) = (0, 0, 0);
        for (gold, pred) in pairs {
            let pos = pred != NO_RELATION;
            pp += usize::from(pos);
            gp += usize::from(gold != NO_RELATION);
            cp += usize::from(pos && pred == gold);
        }
        Self::from_counts(pp, gp, cp)
    }

    /// Metrics for one relation treated as the only positive class.
    pub fn for_relation<'a>(relation: &str, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let (mut pp, mut gp, mut cp) = (0, 0, 0);
        for (gold, pred) in pairs {
            pp += usize::from(pred == relation);
            gp += usize::from(gold == relation);
            cp += usize::from(pred == relation && gold == relation);
        }
        Self::from_counts(pp, gp, cp)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation (n - 1); zero spread for one value.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: usize,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("nothing to aggregate")]
    NoRuns,
    #[error("grid step {0} outside (0, 1)")]
    Step(f64),
    #[error("ablation cell {0:?} has no trained model")]
    MissingModel(String),
    #[error("{0}")]
    Embed(String),
}

impl From<EmbedError> for EvalError {
    fn from(e: EmbedError) -> Self {
        EvalError::Embed(e.to_string())
    }
}

pub fn aggregate(runs: &[Metrics]) -> Result<Aggregate, EvalError> {
    if runs.is_empty() {
        return Err(EvalError::NoRuns);
    }
    let field = |f: fn(&Metrics) -> f64| MeanStd::of(&runs.iter().map(f).collect::<Vec<_>>());
    Ok(Aggregate {
        runs: runs.len(),
        precision: field(|m| m.precision),
        recall: field(|m| m.recall),
        f1: field(|m| m.f1),
    })
}

/// Where an episode's rules come from.
#[derive(Debug, Clone, PartialEq)]
pub enum RuleSource {
    /// One rule per support, generated at evaluation time.
    Generated { kind: RuleKind, config: RuleGenConfig },
    /// A fixed rule set applied to every episode, restricted to the
    /// episode's relations.
    External(Vec<SupportRule>),
}

impl Default for RuleSource {
    fn default() -> Self {
        RuleSource::Generated {
            kind: RuleKind::Syntactic,
            config: RuleGenConfig::default(),
        }
    }
}

impl RuleSource {
    pub fn rules_for(&self, ep: &Episode) -> Vec<SupportRule> {
        match self {
            RuleSource::Generated { kind, config } => rules_from_supports(ep, *kind, config).0,
            RuleSource::External(rules) => {
                let rels = ep.relations();
                rules.iter().filter(|r| rels.contains(&r.relation)).cloned().collect()
            }
        }
    }
}

/// Scored episodes: the expensive part of evaluation, reusable across
/// modes and thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredEpisode {
    pub id: String,
    pub gold: String,
    pub scores: EpisodeScores,
}

/// Scores every episode in parallel with rules from `rules_for`.
pub fn score_episodes<F>(
    episodes: &[Episode],
    rules_for: F,
    embedder: Option<&dyn Embedder>,
    cfg: &SieveConfig,
) -> Result<Vec<ScoredEpisode>, EmbedError>
where
    F: Fn(&Episode) -> Vec<SupportRule> + Sync,
{
    episodes
        .par_iter()
        .map(|ep| {
            let rules = rules_for(ep);
            Ok(ScoredEpisode {
                id: ep.id.clone(),
                gold: ep.gold().to_string(),
                scores: score_query(&ep.query, &rules, embedder, &cfg.match_config)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub episode_id: String,
    pub gold: String,
    pub relation: String,
    pub score: f64,
    pub channel: Channel,
    pub rule_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: Mode,
    pub threshold: f64,
    pub overrides: BTreeMap<String, f64>,
    pub episodes: usize,
    pub metrics: Metrics,
    pub per_relation: BTreeMap<String, Metrics>,
    pub predictions: Vec<PredictionRecord>,
}

pub fn report(scored: &[ScoredEpisode], cfg: &SieveConfig) -> EvalReport {
    let predictions: Vec<PredictionRecord> = scored
        .iter()
        .map(|s| {
            let p = s.scores.predict(cfg);
            PredictionRecord {
                episode_id: s.id.clone(),
                gold: s.gold.clone(),
                relation: p.relation,
                score: p.score,
                channel: p.channel,
                rule_id: p.matched_rule,
            }
        })
        .collect();
    report_from_predictions(predictions, cfg)
}

pub fn report_from_predictions(predictions: Vec<PredictionRecord>, cfg: &SieveConfig) -> EvalReport {
    let labels = || predictions.iter().map(|p| (p.gold.as_str(), p.relation.as_str()));
    let mut relations: Vec<&str> = labels().flat_map(|(g, p)| [g, p]).filter(|r| *r != NO_RELATION).collect();
    relations.sort_unstable();
    relations.dedup();
    let per_relation = relations
        .iter()
        .map(|r| (r.to_string(), Metrics::for_relation(r, labels())))
        .collect();
    EvalReport {
        mode: cfg.mode,
        threshold: cfg.threshold,
        overrides: cfg.overrides.clone(),
        episodes: predictions.len(),
        metrics: Metrics::from_labels(labels()),
        per_relation,
        predictions,
    }
}

/// Generates or selects rules, scores and predicts every episode.
pub fn evaluate_episodes(
    episodes: &[Episode],
    rules: &RuleSource,
    embedder: Option<&dyn Embedder>,
    cfg: &SieveConfig,
) -> Result<EvalReport, EmbedError> {
    let scored = score_episodes(episodes, |ep| rules.rules_for(ep), embedder, cfg)?;
    Ok(report(&scored, cfg))
}

/// `{0, step, 2 step, ...}` up to 1, each value rounded to 9 decimals.
pub fn threshold_grid(step: f64) -> Result<Vec<f64>, EvalError> {
    if !(step > 0.0 && step < 1.0) {
        return Err(EvalError::Step(step));
    }
    let n = (1.0 / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| ((i as f64 * step) * 1e9).round() / 1e9).map(|t| t.min(1.0)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tuned {
    pub threshold: f64,
    pub f1: f64,
}

/// Grid threshold maximizing F1 under `cfg` (soft or hybrid); ties go to
/// the smallest threshold. Overrides in `cfg` are kept.
pub fn tune_threshold(scored: &[ScoredEpisode], cfg: &SieveConfig, step: f64) -> Result<Tuned, EvalError> {
    let mut best: Option<Tuned> = None;
    for t in threshold_grid(step)? {
        let c = SieveConfig {
            threshold: t,
            ..cfg.clone()
        };
        let preds: Vec<Prediction> = scored.iter().map(|s| s.scores.predict(&c)).collect();
        let f1 = Metrics::from_labels(scored.iter().zip(&preds).map(|(s, p)| (s.gold.as_str(), p.relation.as_str()))).f1;
        if best.is_none_or(|b| f1 > b.f1) {
            best = Some(Tuned { threshold: t, f1 });
        }
    }
    Ok(best.expect("grid is non-empty"))
}

/// Predicts the relation of a support whose type pair equals the query's;
/// several such relations resolve to the one with most matching supports,
/// then the smallest label.
pub fn baseline_entity_type(ep: &Episode) -> Prediction {
    let want = entity_type_pair(&ep.query);
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for s in &ep.supports {
        if entity_type_pair(s) == want {
            if let Some(r) = s.relation.as_deref() {
                *counts.entry(r).or_default() += 1;
            }
        }
    }
    let best = counts.iter().fold(None::<(&str, usize)>, |acc, (r, &c)| match acc {
        Some(a) if a.1 >= c => Some(a),
        _ => Some((r, c)),
    });
    match best {
        Some((r, _)) => Prediction {
            relation: r.to_string(),
            score: 1.0,
            matched_rule: None,
            channel: Channel::Hard,
        },
        None => Prediction::none(0.0),
    }
}

pub fn evaluate_baseline(episodes: &[Episode]) -> EvalReport {
    let predictions = episodes
        .iter()
        .map(|ep| {
            let p = baseline_entity_type(ep);
            PredictionRecord {
                episode_id: ep.id.clone(),
                gold: ep.gold().to_string(),
                relation: p.relation,
                score: p.score,
                channel: p.channel,
                rule_id: None,
            }
        })
        .collect();
    report_from_predictions(
        predictions,
        &SieveConfig {
            mode: Mode::Hard,
            ..SieveConfig::default()
        },
    )
}

/// One trained model per ablation setting.
pub struct AblationCell<'a> {
    pub name: String,
    pub model: Option<&'a dyn Embedder>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub cell: String,
    pub mode: Mode,
    pub result: Aggregate,
}

/// Evaluates every cell under every mode over each run's episodes and
/// aggregates per (cell, mode). Rows are ordered mode-major.
pub fn run_ablation(
    cells: &[AblationCell<'_>],
    modes: &[Mode],
    runs: &[Vec<Episode>],
    rules: &RuleSource,
    cfg: &SieveConfig,
) -> Result<Vec<AblationRow>, EvalError> {
    if runs.is_empty() {
        return Err(EvalError::NoRuns);
    }
    let mut scored = Vec::with_capacity(cells.len());
    for cell in cells {
        let model = cell.model.ok_or_else(|| EvalError::MissingModel(cell.name.clone()))?;
        let per_run = runs
            .iter()
            .map(|eps| score_episodes(eps, |ep| rules.rules_for(ep), Some(model), cfg))
            .collect::<Result<Vec<_>, _>>()?;
        scored.push(per_run);
    }
    let mut rows = Vec::new();
    for &mode in modes {
        let c = SieveConfig { mode, ..cfg.clone() };
        for (cell, per_run) in cells.iter().zip(&scored) {
            let metrics: Vec<Metrics> = per_run.iter().map(|s| report(s, &c).metrics).collect();
            rows.push(AblationRow {
                cell: cell.name.clone(),
                mode,
                result: aggregate(&metrics)?,
            });
        }
    }
    Ok(rows)
}
