//! Dependency-annotated sentences, entity spans, relation instances and the
//! entity-marker rendering consumed by the sentence encoder.
//!
//! Sentences are stored one JSON object per line:
//!
//! ```text
//! {"id": "s1", "tokens": ["Bill", "Gates", "founded", "Microsoft"],
//!  "ner": ["per", "per", "O", "org"],
//!  "edges": [[1, 0, "compound"], [2, 1, "nsubj"], [2, 3, "dobj"]]}
//! ```
//!
//! Instance files use the same object with `subj`, `obj` and `relation`
//! added (and an optional `instance_id` when one sentence carries several
//! instances).

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// NER label used for tokens outside any entity.
pub const OUTSIDE: &str = "O";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON, line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{message}, line {line} (field `{field}`)")]
    Schema {
        line: usize,
        field: &'static str,
        message: String,
    },
    #[error("invalid sentence {id}: {message}")]
    Invalid { id: String, message: String },
    #[error("entity spans overlap in instance {0}")]
    OverlappingSpans(String),
    #[error("malformed marked text: {0}")]
    Marker(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub index: usize,
    pub text: String,
    pub ner: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DepEdge {
    pub head: usize,
    pub dependent: usize,
    pub label: String,
}

impl DepEdge {
    pub fn new(head: usize, dependent: usize, label: impl Into<String>) -> Self {
        Self {
            head,
            dependent,
            label: label.into(),
        }
    }
}

impl Serialize for DepEdge {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        (self.head, self.dependent, &self.label).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DepEdge {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let (head, dependent, label) = <(usize, usize, String)>::deserialize(deserializer)?;
        Ok(Self {
            head,
            dependent,
            label,
        })
    }
}

/// A problem found by [`validate_sentence`] or [`validate_instance`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyToken(usize),
    TokenIndex { position: usize, index: usize },
    EmptyLabel { head: usize, dependent: usize },
    EdgeOutOfRange { head: usize, dependent: usize },
    SelfLoop(usize),
    DuplicateEdge(DepEdge),
    /// Span tokens whose NER label disagrees with the span type. Warning only.
    SpanNerMismatch { span: (usize, usize), token: usize },
    /// No undirected dependency path between the two entities. Warning only.
    Disconnected { subj: (usize, usize), obj: (usize, usize) },
}

impl Violation {
    pub fn is_warning(&self) -> bool {
        matches!(
            self,
            Violation::SpanNerMismatch { .. } | Violation::Disconnected { .. }
        )
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyToken(i) => write!(f, "empty token at {i}"),
            Violation::TokenIndex { position, index } => {
                write!(f, "token at position {position} has index {index}")
            }
            Violation::EmptyLabel { head, dependent } => {
                write!(f, "empty label on edge ({head},{dependent})")
            }
            Violation::EdgeOutOfRange { head, dependent } => {
                write!(f, "edge index out of range ({head},{dependent})")
            }
            Violation::SelfLoop(i) => write!(f, "self-loop at {i}"),
            Violation::DuplicateEdge(e) => {
                write!(f, "duplicate edge ({},{},{})", e.head, e.dependent, e.label)
            }
            Violation::SpanNerMismatch { span, token } => write!(
                f,
                "span [{},{}) type disagrees with ner of token {token}",
                span.0, span.1
            ),
            Violation::Disconnected { subj, obj } => write!(
                f,
                "entities [{},{}) and [{},{}) are disconnected",
                subj.0, subj.1, obj.0, obj.1
            ),
        }
    }
}

/// A tokenized sentence with NER labels and a labeled dependency graph.
///
/// Immutable once built; adjacency lists are precomputed for the matcher.
#[derive(Debug, Clone)]
pub struct AnnotatedSentence {
    pub id: String,
    tokens: Vec<Token>,
    edges: Vec<DepEdge>,
    outgoing: Vec<Vec<usize>>,
    incoming: Vec<Vec<usize>>,
}

impl PartialEq for AnnotatedSentence {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id && self.tokens == other.tokens && self.edges == other.edges
    }
}

impl AnnotatedSentence {
    /// Builds a sentence without validating it. Edges whose endpoints are out
    /// of range are kept in the edge list but left out of the adjacency.
    pub fn from_parts(
        id: impl Into<String>,
        words: Vec<(String, String)>,
        edges: Vec<DepEdge>,
    ) -> Self {
        let tokens: Vec<Token> = words
            .into_iter()
            .enumerate()
            .map(|(index, (text, ner))| Token { index, text, ner })
            .collect();
        let n = tokens.len();
        let mut outgoing = vec![Vec::new(); n];
        let mut incoming = vec![Vec::new(); n];
        for (i, e) in edges.iter().enumerate() {
            if e.head < n && e.dependent < n {
                outgoing[e.head].push(i);
                incoming[e.dependent].push(i);
            }
        }
        Self {
            id: id.into(),
            tokens,
            edges,
            outgoing,
            incoming,
        }
    }

    /// Builds and validates; any violation is an error.
    pub fn new(
        id: impl Into<String>,
        words: Vec<(String, String)>,
        edges: Vec<DepEdge>,
    ) -> Result<Self, CorpusError> {
        let s = Self::from_parts(id, words, edges);
        if let Some(v) = validate_sentence(&s).into_iter().next() {
            return Err(CorpusError::Invalid {
                id: s.id.clone(),
                message: v.to_string(),
            });
        }
        Ok(s)
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn edges(&self) -> &[DepEdge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Edges whose head is `node`.
    pub fn outgoing(&self, node: usize) -> impl Iterator<Item = &DepEdge> {
        self.outgoing[node].iter().map(move |&i| &self.edges[i])
    }

    /// Edges whose dependent is `node`.
    pub fn incoming(&self, node: usize) -> impl Iterator<Item = &DepEdge> {
        self.incoming[node].iter().map(move |&i| &self.edges[i])
    }

    /// Positions in [`edges`](Self::edges) of the edges headed at `node`.
    pub fn outgoing_ids(&self, node: usize) -> &[usize] {
        &self.outgoing[node]
    }

    /// Positions in [`edges`](Self::edges) of the edges whose dependent is `node`.
    pub fn incoming_ids(&self, node: usize) -> &[usize] {
        &self.incoming[node]
    }

    pub fn text(&self, start: usize, end: usize) -> String {
        self.tokens[start..end]
            .iter()
            .map(|t| t.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Undirected BFS distance between two tokens, if connected.
    pub fn distance(&self, from: usize, to: usize) -> Option<usize> {
        let mut dist = vec![usize::MAX; self.len()];
        let mut queue = VecDeque::from([from]);
        dist[from] = 0;
        while let Some(node) = queue.pop_front() {
            if node == to {
                return Some(dist[node]);
            }
            let next = self
                .outgoing(node)
                .map(|e| e.dependent)
                .chain(self.incoming(node).map(|e| e.head));
            for n in next {
                if dist[n] == usize::MAX {
                    dist[n] = dist[node] + 1;
                    queue.push_back(n);
                }
            }
        }
        None
    }

    pub fn to_record(&self) -> SentenceRecord {
        SentenceRecord {
            id: self.id.clone(),
            tokens: self.tokens.iter().map(|t| t.text.clone()).collect(),
            ner: self.tokens.iter().map(|t| t.ner.clone()).collect(),
            edges: self.edges.clone(),
        }
    }
}

/// Checks every sentence invariant. An empty result means the sentence is
/// well-formed.
pub fn validate_sentence(s: &AnnotatedSentence) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = s.tokens.len();
    for (position, t) in s.tokens.iter().enumerate() {
        if t.text.is_empty() {
            out.push(Violation::EmptyToken(position));
        }
        if t.index != position {
            out.push(Violation::TokenIndex {
                position,
                index: t.index,
            });
        }
    }
    let mut seen = HashSet::new();
    for e in &s.edges {
        if e.head >= n || e.dependent >= n {
            out.push(Violation::EdgeOutOfRange {
                head: e.head,
                dependent: e.dependent,
            });
        } else if e.head == e.dependent {
            out.push(Violation::SelfLoop(e.head));
        }
        if e.label.is_empty() {
            out.push(Violation::EmptyLabel {
                head: e.head,
                dependent: e.dependent,
            });
        }
        if !seen.insert(e) {
            out.push(Violation::DuplicateEdge(e.clone()));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Subject,
    Object,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub etype: String,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, etype: impl Into<String>) -> Self {
        Self {
            start,
            end,
            etype: etype.into(),
        }
    }

    pub fn contains(&self, token: usize) -> bool {
        self.start <= token && token < self.end
    }

    pub fn overlaps(&self, other: &EntitySpan) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

impl Serialize for EntitySpan {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        (self.start, self.end, &self.etype).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for EntitySpan {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let (start, end, etype) = <(usize, usize, String)>::deserialize(deserializer)?;
        Ok(Self { start, end, etype })
    }
}

/// A sentence plus the two entities whose relation is to be classified.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationInstance {
    pub id: String,
    pub sentence: Arc<AnnotatedSentence>,
    pub subj: EntitySpan,
    pub obj: EntitySpan,
    pub relation: Option<String>,
}

impl RelationInstance {
    pub fn new(
        id: impl Into<String>,
        sentence: Arc<AnnotatedSentence>,
        subj: EntitySpan,
        obj: EntitySpan,
        relation: Option<String>,
    ) -> Result<Self, CorpusError> {
        let id = id.into();
        let n = sentence.len();
        for span in [&subj, &obj] {
            if span.start >= span.end || span.end > n {
                return Err(CorpusError::Invalid {
                    id,
                    message: format!("span [{},{}) out of range", span.start, span.end),
                });
            }
            if span.etype.is_empty() {
                return Err(CorpusError::Invalid {
                    id,
                    message: "empty entity type".into(),
                });
            }
        }
        if subj.overlaps(&obj) {
            return Err(CorpusError::OverlappingSpans(id));
        }
        Ok(Self {
            id,
            sentence,
            subj,
            obj,
            relation,
        })
    }

    pub fn span(&self, role: Role) -> &EntitySpan {
        match role {
            Role::Subject => &self.subj,
            Role::Object => &self.obj,
        }
    }

    pub fn subj_text(&self) -> String {
        self.sentence.text(self.subj.start, self.subj.end)
    }

    pub fn obj_text(&self) -> String {
        self.sentence.text(self.obj.start, self.obj.end)
    }

    /// Entity type of a token: the declared span type inside a span, the
    /// token's own NER label elsewhere.
    pub fn effective_ner(&self, token: usize) -> &str {
        if self.subj.contains(token) {
            &self.subj.etype
        } else if self.obj.contains(token) {
            &self.obj.etype
        } else {
            &self.sentence.tokens()[token].ner
        }
    }

    pub fn with_relation(&self, relation: Option<String>) -> Self {
        Self {
            relation,
            ..self.clone()
        }
    }

    pub fn to_record(&self) -> InstanceRecord {
        let sentence = self.sentence.to_record();
        let instance_id = (self.id != sentence.id).then(|| self.id.clone());
        InstanceRecord {
            sentence,
            instance_id,
            subj: self.subj.clone(),
            obj: self.obj.clone(),
            relation: self.relation.clone(),
        }
    }
}

/// Sentence invariants plus instance-level warnings (span/NER disagreement,
/// disconnected entity pair).
pub fn validate_instance(inst: &RelationInstance) -> Vec<Violation> {
    let mut out = validate_sentence(&inst.sentence);
    for span in [&inst.subj, &inst.obj] {
        for t in span.start..span.end {
            let ner = &inst.sentence.tokens()[t].ner;
            if normalize_type(ner) != normalize_type(&span.etype) {
                out.push(Violation::SpanNerMismatch {
                    span: (span.start, span.end),
                    token: t,
                });
            }
        }
    }
    let connected = (inst.subj.start..inst.subj.end).any(|i| {
        (inst.obj.start..inst.obj.end).any(|j| inst.sentence.distance(i, j).is_some())
    });
    if !connected {
        out.push(Violation::Disconnected {
            subj: (inst.subj.start, inst.subj.end),
            obj: (inst.obj.start, inst.obj.end),
        });
    }
    out
}

/// Corpus convention for entity types: lower case, with the long CoNLL/TACRED
/// names for the three core types folded to their short forms.
pub fn normalize_type(t: &str) -> String {
    let lower = t.trim().to_lowercase();
    match lower.as_str() {
        "person" => "per".to_string(),
        "organization" | "organisation" => "org".to_string(),
        "location" => "loc".to_string(),
        _ => lower,
    }
}

/// `(subj type, obj type)`, normalized.
pub fn entity_type_pair(inst: &RelationInstance) -> (String, String) {
    (normalize_type(&inst.subj.etype), normalize_type(&inst.obj.etype))
}

/// Sentence text with both entities wrapped as `# * type * tokens #`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MarkedText {
    pub text: String,
}

/// One `# * type * tokens #` region of a [`MarkedText`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkedRegion {
    pub etype: String,
    pub entity: Vec<String>,
    /// Token offset of the entity in the unmarked sentence.
    pub start: usize,
}

impl MarkedText {
    pub fn as_str(&self) -> &str {
        &self.text
    }

    /// Splits into plain tokens and marked regions.
    pub fn parse(&self) -> Result<(Vec<String>, Vec<MarkedRegion>), CorpusError> {
        let toks: Vec<&str> = self.text.split(' ').collect();
        let mut plain = Vec::new();
        let mut regions = Vec::new();
        let mut i = 0;
        while i < toks.len() {
            if toks[i] == "#" && toks.get(i + 1) == Some(&"*") {
                let mut j = i + 2;
                let type_start = j;
                while j < toks.len() && toks[j] != "*" {
                    j += 1;
                }
                if j >= toks.len() || j == type_start {
                    return Err(CorpusError::Marker(format!(
                        "unterminated entity type at token {i}"
                    )));
                }
                let etype = toks[type_start..j].join(" ");
                j += 1;
                let ent_start = j;
                while j < toks.len() && toks[j] != "#" {
                    j += 1;
                }
                if j >= toks.len() || j == ent_start {
                    return Err(CorpusError::Marker(format!(
                        "unterminated entity at token {i}"
                    )));
                }
                let entity: Vec<String> = toks[ent_start..j].iter().map(|s| s.to_string()).collect();
                regions.push(MarkedRegion {
                    etype,
                    start: plain.len(),
                    entity: entity.clone(),
                });
                plain.extend(entity);
                i = j + 1;
            } else {
                plain.push(toks[i].to_string());
                i += 1;
            }
        }
        if regions.len() != 2 {
            return Err(CorpusError::Marker(format!(
                "expected 2 marked regions, found {}",
                regions.len()
            )));
        }
        Ok((plain, regions))
    }

    /// Strips the markers, recovering the original tokens.
    pub fn unmark(&self) -> Result<Vec<String>, CorpusError> {
        Ok(self.parse()?.0)
    }

    /// Marks two non-overlapping token spans.
    pub fn from_tokens(
        tokens: &[String],
        a: (usize, usize, &str),
        b: (usize, usize, &str),
    ) -> Result<Self, CorpusError> {
        let (first, second) = if a.0 <= b.0 { (a, b) } else { (b, a) };
        if first.1 > second.0 {
            return Err(CorpusError::Marker("overlapping regions".into()));
        }
        let mut parts: Vec<&str> = Vec::with_capacity(tokens.len() + 10);
        let mut i = 0;
        for (start, end, etype) in [first, second] {
            parts.extend(tokens[i..start].iter().map(String::as_str));
            parts.extend(["#", "*", etype, "*"]);
            parts.extend(tokens[start..end].iter().map(String::as_str));
            parts.push("#");
            i = end;
        }
        parts.extend(tokens[i..].iter().map(String::as_str));
        Ok(Self {
            text: parts.join(" "),
        })
    }
}

impl fmt::Display for MarkedText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// Wraps subject and object in entity markers using their declared types.
pub fn mark_entities(inst: &RelationInstance) -> Result<MarkedText, CorpusError> {
    mark_entities_as(inst, &inst.subj.etype, &inst.obj.etype)
}

/// Like [`mark_entities`] but with caller-supplied marker types (used by
/// synonym augmentation).
pub fn mark_entities_as(
    inst: &RelationInstance,
    subj_type: &str,
    obj_type: &str,
) -> Result<MarkedText, CorpusError> {
    if inst.subj.overlaps(&inst.obj) {
        return Err(CorpusError::OverlappingSpans(inst.id.clone()));
    }
    let tokens: Vec<String> = inst.sentence.tokens().iter().map(|t| t.text.clone()).collect();
    MarkedText::from_tokens(
        &tokens,
        (inst.subj.start, inst.subj.end, subj_type),
        (inst.obj.start, inst.obj.end, obj_type),
    )
}

// ---------------------------------------------------------------------------
// JSONL records

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub id: String,
    pub tokens: Vec<String>,
    pub ner: Vec<String>,
    pub edges: Vec<DepEdge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    #[serde(flatten)]
    pub sentence: SentenceRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<String>,
    pub subj: EntitySpan,
    pub obj: EntitySpan,
    #[serde(default)]
    pub relation: Option<String>,
}

impl SentenceRecord {
    /// Converts to a sentence, reporting the first schema violation with the
    /// offending field.
    pub fn into_sentence(self, line: usize) -> Result<AnnotatedSentence, CorpusError> {
        if self.ner.len() != self.tokens.len() {
            return Err(CorpusError::Schema {
                line,
                field: "ner",
                message: format!(
                    "ner has {} labels for {} tokens",
                    self.ner.len(),
                    self.tokens.len()
                ),
            });
        }
        let s = AnnotatedSentence::from_parts(
            self.id,
            self.tokens.into_iter().zip(self.ner).collect(),
            self.edges,
        );
        if let Some(v) = validate_sentence(&s).into_iter().next() {
            let (field, message) = match &v {
                Violation::EmptyToken(_) | Violation::TokenIndex { .. } => {
                    ("tokens", v.to_string())
                }
                Violation::EdgeOutOfRange { .. } => ("edges", "edge index out of range".to_string()),
                _ => ("edges", v.to_string()),
            };
            return Err(CorpusError::Schema {
                line,
                field,
                message,
            });
        }
        Ok(s)
    }
}

impl InstanceRecord {
    pub fn into_instance(self, line: usize) -> Result<RelationInstance, CorpusError> {
        let sentence = Arc::new(self.sentence.into_sentence(line)?);
        let id = self.instance_id.unwrap_or_else(|| sentence.id.clone());
        let n = sentence.len();
        for (field, span) in [("subj", &self.subj), ("obj", &self.obj)] {
            if span.start >= span.end || span.end > n {
                return Err(CorpusError::Schema {
                    line,
                    field,
                    message: format!("span [{},{}) out of range", span.start, span.end),
                });
            }
        }
        if self.subj.overlaps(&self.obj) {
            return Err(CorpusError::Schema {
                line,
                field: "obj",
                message: "subject and object spans overlap".into(),
            });
        }
        let inst = RelationInstance::new(id, sentence, self.subj, self.obj, self.relation)?;
        for v in validate_instance(&inst) {
            tracing::warn!(instance = %inst.id, line, "{v}");
        }
        Ok(inst)
    }
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, CorpusError> {
    let file = fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

/// Parses JSONL sentences from a string. Line numbers are 1-based.
pub fn parse_corpus(text: &str) -> Result<Vec<AnnotatedSentence>, CorpusError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_sentence_line(i + 1, l))
        .collect()
}

fn parse_sentence_line(line: usize, text: &str) -> Result<AnnotatedSentence, CorpusError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|source| CorpusError::Json { line, source })?;
    for field in ["id", "tokens", "ner", "edges"] {
        if value.get(field).is_none() {
            return Err(CorpusError::Schema {
                line,
                field,
                message: format!("missing field `{field}`"),
            });
        }
    }
    let record: SentenceRecord =
        serde_json::from_value(value).map_err(|source| CorpusError::Json { line, source })?;
    record.into_sentence(line)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<AnnotatedSentence>, CorpusError> {
    read_lines(path.as_ref())?
        .into_iter()
        .map(|(line, text)| parse_sentence_line(line, &text))
        .collect()
}

pub fn parse_instances(text: &str) -> Result<Vec<RelationInstance>, CorpusError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_instance_line(i + 1, l))
        .collect()
}

fn parse_instance_line(line: usize, text: &str) -> Result<RelationInstance, CorpusError> {
    let record: InstanceRecord =
        serde_json::from_str(text).map_err(|source| CorpusError::Json { line, source })?;
    record.into_instance(line)
}

pub fn load_instances(path: impl AsRef<Path>) -> Result<Vec<RelationInstance>, CorpusError> {
    read_lines(path.as_ref())?
        .into_iter()
        .map(|(line, text)| parse_instance_line(line, &text))
        .collect()
}

pub fn write_jsonl<T: Serialize>(
    path: impl AsRef<Path>,
    items: impl IntoIterator<Item = T>,
) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = std::io::BufWriter::new(fs::File::create(path).map_err(io_err)?);
    for item in items {
        let line = serde_json::to_string(&item).expect("records serialize");
        writeln!(file, "{line}").map_err(io_err)?;
    }
    file.flush().map_err(io_err)
}

pub fn serialize_corpus(sentences: &[AnnotatedSentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        out.push_str(&serde_json::to_string(&s.to_record()).expect("records serialize"));
        out.push('\n');
    }
    out
}

/// Maximal runs of identical non-`O` NER labels.
pub fn entity_mentions(s: &AnnotatedSentence) -> Vec<EntitySpan> {
    let mut out = Vec::new();
    let toks = s.tokens();
    let mut i = 0;
    while i < toks.len() {
        if toks[i].ner == OUTSIDE {
            i += 1;
            continue;
        }
        let start = i;
        while i + 1 < toks.len() && toks[i + 1].ner == toks[start].ner {
            i += 1;
        }
        i += 1;
        out.push(EntitySpan::new(start, i, toks[start].ner.clone()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gates() -> Arc<AnnotatedSentence> {
        Arc::new(
            AnnotatedSentence::new(
                "s1",
                vec![
                    ("Bill".into(), "per".into()),
                    ("Gates".into(), "per".into()),
                    ("founded".into(), "O".into()),
                    ("Microsoft".into(), "org".into()),
                ],
                vec![
                    DepEdge::new(1, 0, "compound"),
                    DepEdge::new(2, 1, "nsubj"),
                    DepEdge::new(2, 3, "dobj"),
                ],
            )
            .unwrap(),
        )
    }

    #[test]
    fn marks_entities_in_sentence_order() {
        let s = gates();
        let inst = RelationInstance::new(
            "i",
            s,
            EntitySpan::new(0, 2, "per"),
            EntitySpan::new(3, 4, "org"),
            None,
        )
        .unwrap();
        assert_eq!(
            mark_entities(&inst).unwrap().text,
            "# * per * Bill Gates # founded # * org * Microsoft #"
        );
        // object before subject
        let rev = RelationInstance::new(
            "j",
            inst.sentence.clone(),
            EntitySpan::new(3, 4, "org"),
            EntitySpan::new(0, 2, "per"),
            None,
        )
        .unwrap();
        assert_eq!(mark_entities(&rev).unwrap(), mark_entities(&inst).unwrap());
    }

    #[test]
    fn synonym_marker_with_spaces_round_trips() {
        let inst = RelationInstance::new(
            "i",
            gates(),
            EntitySpan::new(0, 2, "per"),
            EntitySpan::new(3, 4, "org"),
            None,
        )
        .unwrap();
        let m = mark_entities_as(&inst, "human being", "org").unwrap();
        assert_eq!(m.text, "# * human being * Bill Gates # founded # * org * Microsoft #");
        let (plain, regions) = m.parse().unwrap();
        assert_eq!(plain, ["Bill", "Gates", "founded", "Microsoft"]);
        assert_eq!(regions[0].etype, "human being");
        assert_eq!(regions[1].start, 3);
    }

    #[test]
    fn overlapping_spans_rejected() {
        let err = RelationInstance::new(
            "i",
            gates(),
            EntitySpan::new(0, 2, "per"),
            EntitySpan::new(1, 3, "org"),
            None,
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::OverlappingSpans(_)));
    }

    #[test]
    fn validation_reports_duplicates_and_self_loops() {
        let words = (0..5).map(|i| (format!("w{i}"), "O".to_string())).collect::<Vec<_>>();
        let ok = AnnotatedSentence::from_parts(
            "ok",
            words.clone(),
            vec![DepEdge::new(1, 0, "det"), DepEdge::new(1, 2, "amod")],
        );
        assert!(validate_sentence(&ok).is_empty());

        let dup = AnnotatedSentence::from_parts(
            "dup",
            words.clone(),
            vec![DepEdge::new(1, 2, "nsubj"), DepEdge::new(1, 2, "nsubj")],
        );
        let v: Vec<String> = validate_sentence(&dup).iter().map(|v| v.to_string()).collect();
        assert_eq!(v, ["duplicate edge (1,2,nsubj)"]);

        let looped = AnnotatedSentence::from_parts("l", words, vec![DepEdge::new(3, 3, "dep")]);
        let v: Vec<String> = validate_sentence(&looped).iter().map(|v| v.to_string()).collect();
        assert_eq!(v, ["self-loop at 3"]);
    }

    #[test]
    fn load_reports_line_numbers() {
        let mut text = String::new();
        for i in 0..6 {
            text.push_str(&format!(
                r#"{{"id":"s{i}","tokens":["a","b"],"ner":["O","O"],"edges":[[0,1,"dep"]]}}"#
            ));
            text.push('\n');
        }
        text.push_str(r#"{"id":"bad","tokens":["a","b"],"ner":["O","O"],"edges":[[2,1,"dep"]]}"#);
        let err = parse_corpus(&text).unwrap_err();
        assert_eq!(err.to_string(), "edge index out of range, line 7 (field `edges`)");

        let err = parse_corpus("{not json}\n").unwrap_err();
        assert!(matches!(err, CorpusError::Json { line: 1, .. }));

        let err = parse_corpus(r#"{"id":"x","tokens":["a"],"edges":[]}"#).unwrap_err();
        assert!(matches!(err, CorpusError::Schema { field: "ner", .. }));

        assert!(parse_corpus("").unwrap().is_empty());
    }

    #[test]
    fn normalizes_type_names() {
        assert_eq!(normalize_type("PERSON"), "per");
        assert_eq!(normalize_type("Organization"), "org");
        assert_eq!(normalize_type("STATE_OR_PROVINCE"), "state_or_province");
        assert_eq!(normalize_type("loc"), "loc");
    }

    #[test]
    fn instance_warnings_for_ner_mismatch_and_disconnection() {
        let s = Arc::new(AnnotatedSentence::from_parts(
            "w",
            vec![
                ("Acme".into(), "org".into()),
                ("Corp".into(), "O".into()),
                ("and".into(), "O".into()),
                ("Bob".into(), "per".into()),
            ],
            vec![DepEdge::new(1, 0, "compound")],
        ));
        let inst = RelationInstance::new(
            "w",
            s,
            EntitySpan::new(0, 2, "org"),
            EntitySpan::new(3, 4, "per"),
            None,
        )
        .unwrap();
        let v = validate_instance(&inst);
        assert!(v.iter().all(Violation::is_warning));
        assert!(v.contains(&Violation::SpanNerMismatch { span: (0, 2), token: 1 }));
        assert!(v.iter().any(|v| matches!(v, Violation::Disconnected { .. })));
    }

    #[test]
    fn finds_entity_mentions() {
        let s = gates();
        let m = entity_mentions(&s);
        assert_eq!(m, vec![EntitySpan::new(0, 2, "per"), EntitySpan::new(3, 4, "org")]);
    }
}
