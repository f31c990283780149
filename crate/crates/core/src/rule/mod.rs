//! Surface and syntactic rule patterns.
//!
//! ```text
//! [ne=per]+ <nsubj founded >dobj [ne=org]+        syntactic
//! [ne=person]+ graduated from [ne=organization]+  surface
//! ```
//!
//! A rule always starts and ends with a quantified entity constraint. A
//! syntactic rule alternates dependency steps and node constraints between
//! them (`E S (N S)* E`); a surface rule lists the tokens found between the
//! two entities (`E N* E`).

mod parser;
mod tsv;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use parser::{parse_rule, ParseError};
pub use tsv::{format_rule_file, parse_rule_file, read_rule_file, write_rule_file, RuleFileError, RuleRow, MANUAL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attr {
    Ne,
    Word,
}

impl Attr {
    pub fn name(self) -> &'static str {
        match self {
            Attr::Ne => "ne",
            Attr::Word => "word",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        match s {
            "ne" => Some(Attr::Ne),
            "word" => Some(Attr::Word),
            _ => None,
        }
    }
}

/// `[attr=value]`, optionally followed by `+`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenConstraint {
    pub attr: Attr,
    pub value: String,
    pub plus: bool,
}

impl TokenConstraint {
    pub fn entity(attr: Attr, value: impl Into<String>) -> Self {
        Self {
            attr,
            value: value.into(),
            plus: true,
        }
    }

    pub fn ne(value: impl Into<String>) -> Self {
        Self::entity(Attr::Ne, value)
    }

    /// Whether `value` can be written between `=` and `]` and read back.
    pub fn representable(value: &str) -> bool {
        if value.is_empty() || value.starts_with(' ') || value.ends_with(' ') {
            return false;
        }
        if value.chars().any(|c| c.is_whitespace() && c != ' ') || value.contains("  ") {
            return false;
        }
        let bytes = value.as_bytes();
        for (i, &b) in bytes.iter().enumerate() {
            if b == b']' {
                match bytes.get(i + 1) {
                    Some(b'+') | Some(b' ') => return false,
                    _ => {}
                }
            }
        }
        true
    }
}

impl fmt::Display for TokenConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}={}]", self.attr.name(), self.value)?;
        if self.plus {
            f.write_str("+")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    /// `<label`: climb from the current node to its head.
    Incoming,
    /// `>label`: descend from the current node to a dependent.
    Outgoing,
}

impl Direction {
    pub fn symbol(self) -> char {
        match self {
            Direction::Incoming => '<',
            Direction::Outgoing => '>',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DepStep {
    pub direction: Direction,
    pub label: String,
}

impl DepStep {
    pub fn incoming(label: impl Into<String>) -> Self {
        Self {
            direction: Direction::Incoming,
            label: label.into(),
        }
    }

    pub fn outgoing(label: impl Into<String>) -> Self {
        Self {
            direction: Direction::Outgoing,
            label: label.into(),
        }
    }
}

impl fmt::Display for DepStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.direction.symbol(), self.label)
    }
}

/// Constraint on a single token between the two entities.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum NodeConstraint {
    /// Bare word, sugar for `[word=w]`.
    Literal(String),
    /// Explicit `[attr=value]` without quantifier.
    Token(TokenConstraint),
}

impl NodeConstraint {
    /// A word constraint for `word`, using the bare form when it parses back.
    pub fn word(word: &str) -> Self {
        if Self::bare_ok(word) {
            NodeConstraint::Literal(word.to_string())
        } else {
            NodeConstraint::Token(TokenConstraint {
                attr: Attr::Word,
                value: word.to_string(),
                plus: false,
            })
        }
    }

    pub(crate) fn bare_ok(word: &str) -> bool {
        !word.is_empty()
            && !word.chars().any(char::is_whitespace)
            && !word.starts_with(['[', '<', '>'])
    }

    pub fn attr(&self) -> Attr {
        match self {
            NodeConstraint::Literal(_) => Attr::Word,
            NodeConstraint::Token(t) => t.attr,
        }
    }

    pub fn value(&self) -> &str {
        match self {
            NodeConstraint::Literal(w) => w,
            NodeConstraint::Token(t) => &t.value,
        }
    }
}

impl fmt::Display for NodeConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeConstraint::Literal(w) => f.write_str(w),
            NodeConstraint::Token(t) => t.fmt(f),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleKind {
    Syntactic,
    Surface,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Body {
    /// `nodes.len() + 1 == steps.len()`; node `i` sits between steps `i` and `i + 1`.
    Syntactic {
        steps: Vec<DepStep>,
        nodes: Vec<NodeConstraint>,
    },
    Surface(Vec<NodeConstraint>),
}

/// Borrowed view of one rule element, in written order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Element<'a> {
    Entity(&'a TokenConstraint),
    Step(&'a DepStep),
    Node(&'a NodeConstraint),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Rule {
    first: TokenConstraint,
    last: TokenConstraint,
    body: Body,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RuleError {
    #[error("entity constraints must carry `+`")]
    UnquantifiedEntity,
    #[error("only entity constraints may carry `+`")]
    QuantifiedNode,
    #[error("syntactic rules need at least one dependency step")]
    NoSteps,
    #[error("expected {expected} node constraints between {steps} steps, got {got}")]
    NodeCount {
        steps: usize,
        expected: usize,
        got: usize,
    },
    #[error("value {0:?} cannot be written in a rule")]
    Unrepresentable(String),
    #[error("empty dependency label")]
    EmptyLabel,
}

fn check_constraint(c: &TokenConstraint) -> Result<(), RuleError> {
    if TokenConstraint::representable(&c.value) {
        Ok(())
    } else {
        Err(RuleError::Unrepresentable(c.value.clone()))
    }
}

fn check_node(n: &NodeConstraint) -> Result<(), RuleError> {
    match n {
        NodeConstraint::Literal(w) if NodeConstraint::bare_ok(w) => Ok(()),
        NodeConstraint::Literal(w) => Err(RuleError::Unrepresentable(w.clone())),
        NodeConstraint::Token(t) if t.plus => Err(RuleError::QuantifiedNode),
        NodeConstraint::Token(t) => check_constraint(t),
    }
}

fn check_entities(first: &TokenConstraint, last: &TokenConstraint) -> Result<(), RuleError> {
    if !first.plus || !last.plus {
        return Err(RuleError::UnquantifiedEntity);
    }
    check_constraint(first)?;
    check_constraint(last)
}

impl Rule {
    pub fn syntactic(
        first: TokenConstraint,
        steps: Vec<DepStep>,
        nodes: Vec<NodeConstraint>,
        last: TokenConstraint,
    ) -> Result<Self, RuleError> {
        check_entities(&first, &last)?;
        if steps.is_empty() {
            return Err(RuleError::NoSteps);
        }
        if nodes.len() + 1 != steps.len() {
            return Err(RuleError::NodeCount {
                steps: steps.len(),
                expected: steps.len() - 1,
                got: nodes.len(),
            });
        }
        for s in &steps {
            if s.label.is_empty() || s.label.chars().any(char::is_whitespace) {
                return Err(RuleError::EmptyLabel);
            }
        }
        nodes.iter().try_for_each(check_node)?;
        Ok(Self {
            first,
            last,
            body: Body::Syntactic { steps, nodes },
        })
    }

    pub fn surface(
        first: TokenConstraint,
        nodes: Vec<NodeConstraint>,
        last: TokenConstraint,
    ) -> Result<Self, RuleError> {
        check_entities(&first, &last)?;
        nodes.iter().try_for_each(check_node)?;
        Ok(Self {
            first,
            last,
            body: Body::Surface(nodes),
        })
    }

    pub fn kind(&self) -> RuleKind {
        match self.body {
            Body::Syntactic { .. } => RuleKind::Syntactic,
            Body::Surface(_) => RuleKind::Surface,
        }
    }

    pub fn first_entity(&self) -> &TokenConstraint {
        &self.first
    }

    pub fn last_entity(&self) -> &TokenConstraint {
        &self.last
    }

    /// Dependency steps; empty for surface rules.
    pub fn steps(&self) -> &[DepStep] {
        match &self.body {
            Body::Syntactic { steps, .. } => steps,
            Body::Surface(_) => &[],
        }
    }

    /// Node constraints between the entities, in order.
    pub fn nodes(&self) -> &[NodeConstraint] {
        match &self.body {
            Body::Syntactic { nodes, .. } => nodes,
            Body::Surface(nodes) => nodes,
        }
    }

    /// Replaces the values of both entity constraints.
    pub fn with_entity_values(&self, first: &str, last: &str) -> Result<Self, RuleError> {
        let mut out = self.clone();
        out.first.value = first.to_string();
        out.last.value = last.to_string();
        check_entities(&out.first, &out.last)?;
        Ok(out)
    }

    /// Appends a dependency step and a node constraint before the final
    /// entity (the previous final hop's target becomes `node`).
    pub fn extended(&self, node: NodeConstraint, step: DepStep) -> Result<Self, RuleError> {
        match &self.body {
            Body::Syntactic { steps, nodes } => {
                let mut steps = steps.clone();
                let mut nodes = nodes.clone();
                nodes.push(node);
                steps.push(step);
                Rule::syntactic(self.first.clone(), steps, nodes, self.last.clone())
            }
            Body::Surface(_) => Err(RuleError::NoSteps),
        }
    }

    pub fn elements(&self) -> Vec<Element<'_>> {
        let mut out = vec![Element::Entity(&self.first)];
        match &self.body {
            Body::Syntactic { steps, nodes } => {
                for (i, step) in steps.iter().enumerate() {
                    if i > 0 {
                        out.push(Element::Node(&nodes[i - 1]));
                    }
                    out.push(Element::Step(step));
                }
            }
            Body::Surface(nodes) => out.extend(nodes.iter().map(Element::Node)),
        }
        out.push(Element::Entity(&self.last));
        out
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, el) in self.elements().into_iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            match el {
                Element::Entity(c) => c.fmt(f)?,
                Element::Step(s) => s.fmt(f)?,
                Element::Node(n) => n.fmt(f)?,
            }
        }
        Ok(())
    }
}

impl std::str::FromStr for Rule {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_rule(s)
    }
}

impl Serialize for Rule {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Rule {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_rule(&text).map_err(serde::de::Error::custom)
    }
}

/// Canonical single-space form.
pub fn serialize_rule(rule: &Rule) -> String {
    rule.to_string()
}

/// Dedup key: equal for structurally equal rules, case-sensitive in words.
///
/// The serialized form is already canonical (whitespace-insensitive through
/// the parser), so it doubles as the signature.
pub fn rule_signature(rule: &Rule) -> String {
    serialize_rule(rule)
}

/// Collapses whitespace runs to single spaces and trims.
pub fn canonical_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}
