//! Episode-level prediction: strict rules first, semantic similarity as the
//! fallback.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{mark_entities, RelationInstance};
use crate::episode::{Episode, NO_RELATION};
use crate::matcher::{matches, MatchConfig};
use crate::rule::{Rule, RuleKind};
use crate::rulegen::{generate_rule, RuleGenConfig, RuleGenError};
use crate::semantic::{EmbedError, Embedder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportRule {
    pub id: String,
    pub rule: Rule,
    pub relation: String,
    /// Support instance the rule came from, or `manual`.
    pub source_instance_id: String,
    pub enabled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Hard,
    Soft,
    Hybrid,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hard" => Ok(Mode::Hard),
            "soft" => Ok(Mode::Soft),
            "hybrid" => Ok(Mode::Hybrid),
            other => Err(format!("unknown mode {other:?} (expected hard, soft or hybrid)")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum HardTieBreak {
    /// Relation of the strictly matching rule with the highest similarity.
    #[default]
    BySoftScore,
    /// Relation with the most matching rules, then the smallest label.
    ByMatchCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SieveConfig {
    pub mode: Mode,
    pub threshold: f64,
    pub overrides: BTreeMap<String, f64>,
    pub hard_tiebreak: HardTieBreak,
    pub match_config: MatchConfig,
}

impl Default for SieveConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Hybrid,
            threshold: 0.5,
            overrides: BTreeMap::new(),
            hard_tiebreak: HardTieBreak::default(),
            match_config: MatchConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SieveConfigError {
    #[error("threshold {0} outside [0, 1]")]
    Threshold(f64),
    #[error("override for {relation} is {value}, outside [0, 1]")]
    Override { relation: String, value: f64 },
}

impl SieveConfig {
    pub fn validate(&self) -> Result<(), SieveConfigError> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(SieveConfigError::Threshold(self.threshold));
        }
        for (relation, &value) in &self.overrides {
            if !(0.0..=1.0).contains(&value) {
                return Err(SieveConfigError::Override {
                    relation: relation.clone(),
                    value,
                });
            }
        }
        Ok(())
    }

    pub fn threshold_for(&self, relation: &str) -> f64 {
        self.overrides.get(relation).copied().unwrap_or(self.threshold)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Channel {
    Hard,
    Soft,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub relation: String,
    pub score: f64,
    pub matched_rule: Option<String>,
    pub channel: Channel,
}

impl Prediction {
    pub fn none(score: f64) -> Self {
        Self {
            relation: NO_RELATION.into(),
            score,
            matched_rule: None,
            channel: Channel::None,
        }
    }

    pub fn is_positive(&self) -> bool {
        self.relation != NO_RELATION
    }
}

/// One rule per support; supports whose rule cannot be generated are
/// reported and skipped. Ids are `{support id}:{kind}`.
pub fn rules_from_supports(
    ep: &Episode,
    kind: RuleKind,
    cfg: &RuleGenConfig,
) -> (Vec<SupportRule>, Vec<RuleGenError>) {
    let mut rules = Vec::new();
    let mut errors = Vec::new();
    for s in &ep.supports {
        match generate_rule(s, kind, cfg) {
            Ok(rule) => rules.push(SupportRule {
                id: format!("{}:{}", s.id, kind_tag(kind)),
                rule,
                relation: s.relation.clone().unwrap_or_default(),
                source_instance_id: s.id.clone(),
                enabled: true,
            }),
            Err(e) => errors.push(e),
        }
    }
    (rules, errors)
}

fn kind_tag(kind: RuleKind) -> &'static str {
    match kind {
        RuleKind::Syntactic => "syn",
        RuleKind::Surface => "surf",
    }
}

/// Best similarity per relation and the rule that achieved it.
pub type SoftScores = BTreeMap<String, (f64, String)>;

/// Everything the sieve needs about one query, computed once so that modes
/// and thresholds can be swept without re-embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeScores {
    /// Enabled rules that strictly match the query, with their similarity
    /// when an embedder was available.
    pub strict: Vec<(String, String, Option<f64>)>,
    pub soft: SoftScores,
}

/// Strict matches and per-relation soft scores for `query`. Without an
/// embedder the soft map is empty.
pub fn score_query(
    query: &RelationInstance,
    rules: &[SupportRule],
    embedder: Option<&dyn Embedder>,
    match_config: &MatchConfig,
) -> Result<EpisodeScores, EmbedError> {
    let marked = match embedder {
        Some(_) => Some(mark_entities(query).map_err(|e| EmbedError::Shape(e.to_string()))?),
        None => None,
    };
    let mut strict = Vec::new();
    let mut soft = SoftScores::new();
    for r in rules.iter().filter(|r| r.enabled) {
        let sim = match (embedder, &marked) {
            (Some(e), Some(m)) => Some(e.similarity(&r.rule.to_string(), m.as_str())?),
            _ => None,
        };
        if matches(&r.rule, query, match_config).matched {
            strict.push((r.id.clone(), r.relation.clone(), sim));
        }
        if let Some(s) = sim {
            let best = soft.entry(r.relation.clone()).or_insert((f64::NEG_INFINITY, r.id.clone()));
            if s > best.0 {
                *best = (s, r.id.clone());
            }
        }
    }
    Ok(EpisodeScores { strict, soft })
}

impl EpisodeScores {
    pub fn hard(&self, tiebreak: HardTieBreak) -> Prediction {
        if self.strict.is_empty() {
            return Prediction::none(0.0);
        }
        let has_scores = self.strict.iter().all(|(_, _, s)| s.is_some());
        let (rule, relation) = if tiebreak == HardTieBreak::BySoftScore && has_scores {
            let mut best = &self.strict[0];
            for m in &self.strict[1..] {
                let (a, b) = (m.2.unwrap_or(0.0), best.2.unwrap_or(0.0));
                if a > b || (a == b && m.1 < best.1) {
                    best = m;
                }
            }
            (best.0.clone(), best.1.clone())
        } else {
            let mut counts: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
            for (id, rel, _) in &self.strict {
                counts.entry(rel).or_insert((0, id)).0 += 1;
            }
            let (rel, (_, id)) = counts
                .iter()
                .fold(None::<(&&str, &(usize, &str))>, |acc, x| match acc {
                    Some(a) if a.1 .0 >= x.1 .0 => Some(a),
                    _ => Some(x),
                })
                .expect("non-empty");
            (id.to_string(), rel.to_string())
        };
        Prediction {
            relation,
            score: 1.0,
            matched_rule: Some(rule),
            channel: Channel::Hard,
        }
    }

    /// Highest-scoring relation, ties to the smallest label.
    pub fn best_soft(&self) -> Option<(&str, f64, &str)> {
        let mut best: Option<(&str, f64, &str)> = None;
        for (rel, (s, id)) in &self.soft {
            if best.is_none_or(|b| *s > b.1) {
                best = Some((rel, *s, id));
            }
        }
        best
    }

    pub fn soft_prediction(&self, threshold: f64, overrides: &BTreeMap<String, f64>) -> Prediction {
        match self.best_soft() {
            None => Prediction::none(0.0),
            Some((rel, s, id)) => {
                let t = overrides.get(rel).copied().unwrap_or(threshold);
                if s >= t {
                    Prediction {
                        relation: rel.to_string(),
                        score: s,
                        matched_rule: Some(id.to_string()),
                        channel: Channel::Soft,
                    }
                } else {
                    Prediction::none(s)
                }
            }
        }
    }

    pub fn predict(&self, cfg: &SieveConfig) -> Prediction {
        match cfg.mode {
            Mode::Hard => self.hard(cfg.hard_tiebreak),
            Mode::Soft => self.soft_prediction(cfg.threshold, &cfg.overrides),
            Mode::Hybrid => {
                let h = self.hard(cfg.hard_tiebreak);
                if h.channel == Channel::Hard {
                    h
                } else {
                    self.soft_prediction(cfg.threshold, &cfg.overrides)
                }
            }
        }
    }
}

/// Per-relation maximum similarity over enabled rules.
pub fn soft_scores(query: &RelationInstance, rules: &[SupportRule], embedder: &dyn Embedder) -> Result<SoftScores, EmbedError> {
    let marked = mark_entities(query).map_err(|e| EmbedError::Shape(e.to_string()))?;
    let mut out = SoftScores::new();
    for r in rules.iter().filter(|r| r.enabled) {
        let s = embedder.similarity(&r.rule.to_string(), marked.as_str())?;
        let best = out.entry(r.relation.clone()).or_insert((f64::NEG_INFINITY, r.id.clone()));
        if s > best.0 {
            *best = (s, r.id.clone());
        }
    }
    Ok(out)
}

/// Strict matching only. Under [`HardTieBreak::BySoftScore`] an embedder
/// resolves conflicts; without one the match count decides.
pub fn classify_hard(
    query: &RelationInstance,
    rules: &[SupportRule],
    embedder: Option<&dyn Embedder>,
    cfg: &SieveConfig,
) -> Result<Prediction, EmbedError> {
    let scores = score_query(query, rules, embedder, &cfg.match_config)?;
    Ok(scores.hard(cfg.hard_tiebreak))
}

pub fn classify_soft(
    query: &RelationInstance,
    rules: &[SupportRule],
    embedder: &dyn Embedder,
    cfg: &SieveConfig,
) -> Result<Prediction, EmbedError> {
    let soft = soft_scores(query, rules, embedder)?;
    let scores = EpisodeScores { strict: Vec::new(), soft };
    Ok(scores.soft_prediction(cfg.threshold, &cfg.overrides))
}

pub fn classify_hybrid(
    query: &RelationInstance,
    rules: &[SupportRule],
    embedder: &dyn Embedder,
    cfg: &SieveConfig,
) -> Result<Prediction, EmbedError> {
    let scores = score_query(query, rules, Some(embedder), &cfg.match_config)?;
    Ok(scores.predict(&SieveConfig {
        mode: Mode::Hybrid,
        ..cfg.clone()
    }))
}

/// Dispatches on `cfg.mode`. Soft and hybrid modes need an embedder.
pub fn classify(
    query: &RelationInstance,
    rules: &[SupportRule],
    embedder: Option<&dyn Embedder>,
    cfg: &SieveConfig,
) -> Result<Prediction, EmbedError> {
    match (cfg.mode, embedder) {
        (Mode::Hard, e) => classify_hard(query, rules, e, cfg),
        (Mode::Soft, Some(e)) => classify_soft(query, rules, e, cfg),
        (Mode::Hybrid, Some(e)) => classify_hybrid(query, rules, e, cfg),
        (_, None) => Err(EmbedError::Shape("soft and hybrid modes need a model".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(strict: &[(&str, &str, f64)], soft: &[(&str, f64)]) -> EpisodeScores {
        EpisodeScores {
            strict: strict.iter().map(|(i, r, s)| (i.to_string(), r.to_string(), Some(*s))).collect(),
            soft: soft.iter().map(|(r, s)| (r.to_string(), (*s, format!("{r}-rule")))).collect(),
        }
    }

    #[test]
    fn match_count_tiebreak() {
        let s = scores(&[("a1", "a", 0.9), ("b1", "b", 0.1), ("b2", "b", 0.2)], &[]);
        assert_eq!(s.hard(HardTieBreak::ByMatchCount).relation, "b");
        assert_eq!(s.hard(HardTieBreak::BySoftScore).relation, "a");
        assert_eq!(s.hard(HardTieBreak::BySoftScore).matched_rule.as_deref(), Some("a1"));
        let tie = scores(&[("z", "z", 0.5), ("y", "y", 0.5)], &[]);
        assert_eq!(tie.hard(HardTieBreak::ByMatchCount).relation, "y");
        assert_eq!(tie.hard(HardTieBreak::BySoftScore).relation, "y");
    }

    #[test]
    fn soft_threshold_and_override() {
        let s = scores(&[], &[("org:parents", 0.65), ("per:spouse", 0.3)]);
        let mut over = BTreeMap::new();
        assert_eq!(s.soft_prediction(0.6, &over).relation, "org:parents");
        assert_eq!(s.soft_prediction(0.7, &over).relation, NO_RELATION);
        over.insert("org:parents".to_string(), 0.7);
        let p = s.soft_prediction(0.6, &over);
        assert_eq!(p.relation, NO_RELATION);
        assert_eq!(p.channel, Channel::None);
    }

    #[test]
    fn hybrid_prefers_hard() {
        let s = scores(&[("a1", "a", 0.1)], &[("b", 0.99)]);
        let cfg = SieveConfig::default();
        assert_eq!(s.predict(&cfg).relation, "a");
        assert_eq!(s.predict(&cfg).channel, Channel::Hard);
        let s = scores(&[], &[("b", 0.99)]);
        assert_eq!(s.predict(&cfg).channel, Channel::Soft);
        let cfg = SieveConfig { threshold: 1.0, ..cfg };
        assert_eq!(s.predict(&cfg).relation, NO_RELATION);
    }

    #[test]
    fn empty_rules_predict_nothing() {
        let s = EpisodeScores { strict: vec![], soft: BTreeMap::new() };
        for mode in [Mode::Hard, Mode::Soft, Mode::Hybrid] {
            let cfg = SieveConfig { mode, threshold: 0.0, ..SieveConfig::default() };
            assert_eq!(s.predict(&cfg).relation, NO_RELATION);
        }
    }

    #[test]
    fn config_bounds() {
        assert!(SieveConfig { threshold: 1.5, ..SieveConfig::default() }.validate().is_err());
        let mut cfg = SieveConfig::default();
        cfg.overrides.insert("r".into(), -0.1);
        assert!(cfg.validate().is_err());
    }
}
