//! N-way K-shot episodes and their JSONL file format.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusError, InstanceRecord, RelationInstance};

/// Label for "none of the episode's relations".
pub const NO_RELATION: &str = "no_relation";

/// One query plus labeled supports. The query's `relation` holds the gold
/// label (possibly [`NO_RELATION`]); it is never read at prediction time.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub id: String,
    pub query: RelationInstance,
    pub supports: Vec<RelationInstance>,
}

impl Episode {
    /// Distinct support relations, sorted.
    pub fn relations(&self) -> Vec<String> {
        self.supports
            .iter()
            .filter_map(|s| s.relation.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn gold(&self) -> &str {
        self.query.relation.as_deref().unwrap_or(NO_RELATION)
    }

    pub fn to_record(&self) -> EpisodeRecord {
        EpisodeRecord {
            id: self.id.clone(),
            query: self.query.to_record(),
            supports: self.supports.iter().map(RelationInstance::to_record).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub id: String,
    pub query: InstanceRecord,
    pub supports: Vec<InstanceRecord>,
}

impl EpisodeRecord {
    pub fn into_episode(self, line: usize) -> Result<Episode, CorpusError> {
        let query = self.query.into_instance(line)?;
        let supports = self
            .supports
            .into_iter()
            .map(|s| s.into_instance(line))
            .collect::<Result<Vec<_>, _>>()?;
        if supports.is_empty() {
            return Err(CorpusError::Schema {
                line,
                field: "supports",
                message: "episode has no supports".into(),
            });
        }
        if supports.iter().any(|s| s.relation.as_deref().is_none_or(str::is_empty)) {
            return Err(CorpusError::Schema {
                line,
                field: "supports",
                message: "support without a relation label".into(),
            });
        }
        Ok(Episode {
            id: self.id,
            query,
            supports,
        })
    }
}

pub fn parse_episodes(text: &str) -> Result<Vec<Episode>, CorpusError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let line = i + 1;
            let rec: EpisodeRecord =
                serde_json::from_str(l).map_err(|source| CorpusError::Json { line, source })?;
            rec.into_episode(line)
        })
        .collect()
}

pub fn load_episodes(path: impl AsRef<Path>) -> Result<Vec<Episode>, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_episodes(&text)
}

pub fn serialize_episodes(episodes: &[Episode]) -> String {
    let mut out = String::new();
    for ep in episodes {
        out.push_str(&serde_json::to_string(&ep.to_record()).expect("records serialize"));
        out.push('\n');
    }
    out
}
