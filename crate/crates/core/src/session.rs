//! Event-sourced rule edit sessions: a snapshot of support-derived rules
//! plus an ordered log of ADD, DELETE and MODIFY operations.
//!
//! ADD makes a rule visible in every episode that has its relation. DELETE
//! and MODIFY act where the rule originated: in the episodes that contain
//! its source support, or everywhere for added rules.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{mark_entities, RelationInstance};
use crate::episode::Episode;
use crate::eval::{report, score_episodes, EvalReport, Metrics};
use crate::matcher::{matches, MatchConfig, MatchResult};
use crate::rule::{parse_rule, ParseError, Rule, RuleKind, MANUAL};
use crate::rulegen::RuleGenConfig;
use crate::semantic::{EmbedError, Embedder};
use crate::sieve::{rules_from_supports, SieveConfig, SupportRule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "UPPERCASE")]
pub enum Edit {
    Add { id: String, relation: String, rule: Rule },
    Delete { id: String },
    Modify { id: String, rule: Rule },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SessionError {
    #[error("rule does not parse: {0}")]
    Parse(#[from] ParseError),
    #[error("unknown rule id {0:?}")]
    UnknownRule(String),
    #[error("rule {0:?} has been deleted")]
    Deleted(String),
    #[error("an identical enabled rule already exists as {existing:?}")]
    Duplicate { existing: String },
    #[error("relation must not be empty")]
    EmptyRelation,
    #[error("threshold {0} outside [0, 1]")]
    Threshold(f64),
}

/// Rules visible per episode, plus the globally added rules.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RuleBook {
    pub episodes: BTreeMap<String, Vec<SupportRule>>,
    pub added: Vec<SupportRule>,
}

impl RuleBook {
    /// Support-derived rules for every episode.
    pub fn from_episodes(episodes: &[Episode], kind: RuleKind, cfg: &RuleGenConfig) -> Self {
        Self {
            episodes: episodes
                .iter()
                .map(|ep| (ep.id.clone(), rules_from_supports(ep, kind, cfg).0))
                .collect(),
            added: Vec::new(),
        }
    }

    /// Rules an episode sees: its own plus added rules for its relations.
    pub fn rules_for(&self, ep: &Episode) -> Vec<SupportRule> {
        let mut out = self.episodes.get(&ep.id).cloned().unwrap_or_default();
        let rels: BTreeSet<String> = ep.relations().into_iter().collect();
        out.extend(self.added.iter().filter(|r| rels.contains(&r.relation)).cloned());
        out
    }

    fn instances_mut<'a>(&'a mut self, id: &'a str) -> impl Iterator<Item = &'a mut SupportRule> + 'a {
        self.episodes
            .values_mut()
            .flat_map(|rs| rs.iter_mut())
            .chain(self.added.iter_mut())
            .filter(move |r| r.id == id)
    }

    pub fn find(&self, id: &str) -> Option<&SupportRule> {
        self.all().find(|r| r.id == id)
    }

    /// Every rule instance; support rules shared by several episodes appear
    /// once per episode.
    pub fn all(&self) -> impl Iterator<Item = &SupportRule> {
        self.episodes.values().flatten().chain(&self.added)
    }

    /// Distinct rules by id, in id order.
    pub fn distinct(&self) -> Vec<&SupportRule> {
        let mut seen = BTreeMap::new();
        for r in self.all() {
            seen.entry(r.id.as_str()).or_insert(r);
        }
        seen.into_values().collect()
    }

    /// Applies one edit. Edits are validated before they reach the log, so
    /// replay never fails on a log produced by [`EditSession`].
    pub fn apply(&mut self, edit: &Edit) -> Result<(), SessionError> {
        match edit {
            Edit::Add { id, relation, rule } => {
                self.added.push(SupportRule {
                    id: id.clone(),
                    rule: rule.clone(),
                    relation: relation.clone(),
                    source_instance_id: MANUAL.into(),
                    enabled: true,
                });
            }
            Edit::Delete { id } => {
                let mut found = false;
                for r in self.instances_mut(id) {
                    r.enabled = false;
                    found = true;
                }
                if !found {
                    return Err(SessionError::UnknownRule(id.clone()));
                }
            }
            Edit::Modify { id, rule } => {
                let mut found = false;
                for r in self.instances_mut(id) {
                    r.rule = rule.clone();
                    found = true;
                }
                if !found {
                    return Err(SessionError::UnknownRule(id.clone()));
                }
            }
        }
        Ok(())
    }
}

/// Replays `log` over `snapshot`.
pub fn replay(snapshot: &RuleBook, log: &[Edit]) -> Result<RuleBook, SessionError> {
    let mut book = snapshot.clone();
    for e in log {
        book.apply(e)?;
    }
    Ok(book)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditSession {
    pub id: String,
    pub snapshot: RuleBook,
    pub log: Vec<Edit>,
    pub overrides: BTreeMap<String, f64>,
    /// Bumped by every accepted mutation.
    pub version: u64,
    pub created: u64,
    pub updated: u64,
    #[serde(skip)]
    current: Option<RuleBook>,
    next_added: u64,
}

/// Outcome of a DELETE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeleteOutcome {
    Deleted,
    AlreadyDeleted,
}

impl EditSession {
    pub fn new(id: impl Into<String>, snapshot: RuleBook, now: u64) -> Self {
        Self {
            id: id.into(),
            current: Some(snapshot.clone()),
            snapshot,
            log: Vec::new(),
            overrides: BTreeMap::new(),
            version: 0,
            created: now,
            updated: now,
            next_added: 0,
        }
    }

    /// Current rules. Sessions loaded from JSON rebuild them by replay.
    pub fn rules(&mut self) -> &RuleBook {
        if self.current.is_none() {
            self.current = Some(replay(&self.snapshot, &self.log).expect("logged edits replay"));
        }
        self.current.as_ref().expect("just set")
    }

    /// Current rules without caching.
    pub fn current(&self) -> RuleBook {
        match &self.current {
            Some(b) => b.clone(),
            None => replay(&self.snapshot, &self.log).expect("logged edits replay"),
        }
    }

    fn commit(&mut self, edit: Edit, now: u64) {
        let mut book = self.current();
        book.apply(&edit).expect("edit validated");
        self.current = Some(book);
        self.log.push(edit);
        self.touch(now);
    }

    fn touch(&mut self, now: u64) {
        self.version += 1;
        self.updated = now.max(self.updated);
    }

    pub fn add_rule(&mut self, relation: &str, rule_text: &str, now: u64) -> Result<String, SessionError> {
        if relation.trim().is_empty() {
            return Err(SessionError::EmptyRelation);
        }
        let rule = parse_rule(rule_text)?;
        let text = rule.to_string();
        let book = self.rules();
        // support rules reach one episode, an added rule reaches all of them
        if let Some(dup) = book.added.iter().find(|r| r.enabled && r.relation == relation && r.rule.to_string() == text) {
            return Err(SessionError::Duplicate { existing: dup.id.clone() });
        }
        let mut id;
        loop {
            self.next_added += 1;
            id = format!("add-{}", self.next_added);
            if self.current().find(&id).is_none() {
                break;
            }
        }
        self.commit(
            Edit::Add {
                id: id.clone(),
                relation: relation.to_string(),
                rule,
            },
            now,
        );
        Ok(id)
    }

    /// Disables a rule where it originated. Deleting twice is acknowledged
    /// without a new log entry.
    pub fn delete_rule(&mut self, id: &str, now: u64) -> Result<DeleteOutcome, SessionError> {
        let enabled = self.rules().find(id).map(|r| r.enabled).ok_or_else(|| SessionError::UnknownRule(id.into()))?;
        if !enabled {
            return Ok(DeleteOutcome::AlreadyDeleted);
        }
        self.commit(Edit::Delete { id: id.into() }, now);
        Ok(DeleteOutcome::Deleted)
    }

    /// Replaces a rule's pattern wherever the original was visible. An
    /// identical replacement is still logged.
    pub fn modify_rule(&mut self, id: &str, rule_text: &str, now: u64) -> Result<(), SessionError> {
        let rule = parse_rule(rule_text)?;
        let enabled = self.rules().find(id).map(|r| r.enabled).ok_or_else(|| SessionError::UnknownRule(id.into()))?;
        if !enabled {
            return Err(SessionError::Deleted(id.into()));
        }
        self.commit(Edit::Modify { id: id.into(), rule }, now);
        Ok(())
    }

    /// Sets (or with `None` clears) a per-relation threshold override.
    pub fn set_override(&mut self, relation: &str, threshold: Option<f64>, now: u64) -> Result<(), SessionError> {
        match threshold {
            Some(t) if !(0.0..=1.0).contains(&t) => return Err(SessionError::Threshold(t)),
            Some(t) => {
                self.overrides.insert(relation.into(), t);
            }
            None => {
                self.overrides.remove(relation);
            }
        }
        self.touch(now);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationDelta {
    pub metrics: Metrics,
    pub baseline: Metrics,
    pub delta_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub version: u64,
    pub overall: Metrics,
    pub baseline: Metrics,
    pub delta_f1: f64,
    /// Every relation of the session's episodes, including ones with no
    /// predictions.
    pub per_relation: BTreeMap<String, RelationDelta>,
    pub report: EvalReport,
}

/// Evaluates the session's current rules and overrides against the
/// snapshot rules without overrides. `cfg.overrides` is ignored in favour
/// of the session's.
pub fn evaluate_session(
    session: &EditSession,
    episodes: &[Episode],
    embedder: Option<&dyn Embedder>,
    cfg: &SieveConfig,
) -> Result<SessionReport, EmbedError> {
    let current = session.current();
    let edited_cfg = SieveConfig {
        overrides: session.overrides.clone(),
        ..cfg.clone()
    };
    let base_cfg = SieveConfig {
        overrides: BTreeMap::new(),
        ..cfg.clone()
    };
    let edited = report(&score_episodes(episodes, |ep| current.rules_for(ep), embedder, cfg)?, &edited_cfg);
    let base = report(
        &score_episodes(episodes, |ep| session.snapshot.rules_for(ep), embedder, cfg)?,
        &base_cfg,
    );
    let relations: BTreeSet<String> = episodes.iter().flat_map(Episode::relations).collect();
    let per_relation = relations
        .into_iter()
        .map(|r| {
            let metrics = edited.per_relation.get(&r).copied().unwrap_or_default();
            let baseline = base.per_relation.get(&r).copied().unwrap_or_default();
            let d = RelationDelta {
                metrics,
                baseline,
                delta_f1: metrics.f1 - baseline.f1,
            };
            (r, d)
        })
        .collect();
    Ok(SessionReport {
        version: session.version,
        overall: edited.metrics,
        baseline: base.metrics,
        delta_f1: edited.metrics.f1 - base.metrics.f1,
        per_relation,
        report: edited,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preview {
    pub rule: String,
    pub sentence: String,
    pub strict: MatchResult,
    pub similarity: Option<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum PreviewError {
    #[error("rule does not parse: {0}")]
    Parse(#[from] ParseError),
    #[error("{0}")]
    Instance(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Strict match and similarity of one rule against one instance.
pub fn preview(
    rule_text: &str,
    inst: &RelationInstance,
    embedder: Option<&dyn Embedder>,
    match_config: &MatchConfig,
) -> Result<Preview, PreviewError> {
    let rule = parse_rule(rule_text)?;
    let marked = mark_entities(inst).map_err(|e| PreviewError::Instance(e.to_string()))?;
    let similarity = match embedder {
        Some(e) => Some(e.similarity(&rule.to_string(), marked.as_str())?),
        None => None,
    };
    Ok(Preview {
        rule: rule.to_string(),
        sentence: marked.as_str().to_string(),
        strict: matches(&rule, inst, match_config),
        similarity,
    })
}
