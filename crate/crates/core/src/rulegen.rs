//! Rule construction from a relation instance.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedSentence, EntitySpan, RelationInstance};
use crate::rule::{Attr, DepStep, NodeConstraint, Rule, RuleError, RuleKind, TokenConstraint};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleGenConfig {
    /// Use span surface text instead of the type when both entities share a type.
    pub lexicalize_identical_types: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RuleGenError {
    #[error("no dependency path between the entities of instance {0}")]
    NoPath(String),
    #[error("instance {id}: {source}")]
    Rule {
        id: String,
        #[source]
        source: RuleError,
    },
}

/// The span token whose head lies outside the span. Ties and spans with no
/// such token resolve to the rightmost candidate (or the rightmost token).
pub fn head_of_span(s: &AnnotatedSentence, span: &EntitySpan) -> usize {
    let heads: Vec<usize> = (span.start..span.end)
        .filter(|&t| !s.incoming(t).any(|e| span.contains(e.head)))
        .collect();
    heads.last().copied().unwrap_or(span.end - 1)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hop {
    pub step: DepStep,
    pub node: usize,
}

/// Shortest undirected path from `i` to `j`, hop by hop. Among equally short
/// paths the lexicographically smallest `(direction, label, node)` sequence
/// wins, with `<` ordered before `>`.
pub fn shortest_dep_path(s: &AnnotatedSentence, i: usize, j: usize) -> Option<Vec<Hop>> {
    let n = s.len();
    if i >= n || j >= n {
        return None;
    }
    let dist = distances_to(s, j);
    if dist[i] == usize::MAX {
        return None;
    }
    let mut hops = Vec::with_capacity(dist[i]);
    let mut cur = i;
    while cur != j {
        let want = dist[cur] - 1;
        let best = neighbours(s, cur)
            .filter(|(_, to)| dist[*to] == want)
            .min_by(|(a, ta), (b, tb)| {
                (a.direction, &a.label, ta).cmp(&(b.direction, &b.label, tb))
            })
            .expect("a neighbour one step closer exists");
        cur = best.1;
        hops.push(Hop {
            step: best.0,
            node: cur,
        });
    }
    Some(hops)
}

fn neighbours(s: &AnnotatedSentence, node: usize) -> impl Iterator<Item = (DepStep, usize)> + '_ {
    s.incoming(node)
        .map(|e| (DepStep::incoming(e.label.clone()), e.head))
        .chain(s.outgoing(node).map(|e| (DepStep::outgoing(e.label.clone()), e.dependent)))
}

fn distances_to(s: &AnnotatedSentence, target: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; s.len()];
    dist[target] = 0;
    let mut queue = VecDeque::from([target]);
    while let Some(node) = queue.pop_front() {
        for (_, to) in neighbours(s, node) {
            if dist[to] == usize::MAX {
                dist[to] = dist[node] + 1;
                queue.push_back(to);
            }
        }
    }
    dist
}

fn entity_constraints(
    inst: &RelationInstance,
    first: &EntitySpan,
    last: &EntitySpan,
    cfg: &RuleGenConfig,
) -> (TokenConstraint, TokenConstraint) {
    let lex = cfg.lexicalize_identical_types
        && crate::corpus::normalize_type(&first.etype) == crate::corpus::normalize_type(&last.etype);
    let value = |span: &EntitySpan| {
        let text = inst.sentence.text(span.start, span.end);
        if lex && TokenConstraint::representable(&text) {
            text
        } else {
            span.etype.clone()
        }
    };
    (TokenConstraint::ne(value(first)), TokenConstraint::ne(value(last)))
}

pub fn generate_syntactic_rule(inst: &RelationInstance, cfg: &RuleGenConfig) -> Result<Rule, RuleGenError> {
    let s = &inst.sentence;
    let from = head_of_span(s, &inst.subj);
    let to = head_of_span(s, &inst.obj);
    let path = shortest_dep_path(s, from, to).ok_or_else(|| RuleGenError::NoPath(inst.id.clone()))?;
    let (first, last) = entity_constraints(inst, &inst.subj, &inst.obj, cfg);
    let nodes = path[..path.len() - 1]
        .iter()
        .map(|h| NodeConstraint::word(&s.tokens()[h.node].text))
        .collect();
    let steps = path.into_iter().map(|h| h.step).collect();
    Rule::syntactic(first, steps, nodes, last).map_err(|source| RuleGenError::Rule {
        id: inst.id.clone(),
        source,
    })
}

pub fn generate_surface_rule(inst: &RelationInstance, cfg: &RuleGenConfig) -> Result<Rule, RuleGenError> {
    let (a, b) = if inst.subj.start <= inst.obj.start {
        (&inst.subj, &inst.obj)
    } else {
        (&inst.obj, &inst.subj)
    };
    let (first, last) = entity_constraints(inst, a, b, cfg);
    let nodes = inst.sentence.tokens()[a.end..b.start]
        .iter()
        .map(|t| NodeConstraint::word(&t.text))
        .collect();
    Rule::surface(first, nodes, last).map_err(|source| RuleGenError::Rule {
        id: inst.id.clone(),
        source,
    })
}

pub fn generate_rule(inst: &RelationInstance, kind: RuleKind, cfg: &RuleGenConfig) -> Result<Rule, RuleGenError> {
    match kind {
        RuleKind::Syntactic => generate_syntactic_rule(inst, cfg),
        RuleKind::Surface => generate_surface_rule(inst, cfg),
    }
}

/// Whether a rule's entity constraints are lexicalized (surface text rather
/// than a type name) relative to the instance it came from.
pub fn is_lexicalized(rule: &Rule, inst: &RelationInstance) -> bool {
    rule.first_entity().attr == Attr::Ne && rule.first_entity().value != inst.subj.etype
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::corpus::DepEdge;

    fn sentence(words: &[(&str, &str)], edges: &[(usize, usize, &str)]) -> AnnotatedSentence {
        AnnotatedSentence::new(
            "s",
            words.iter().map(|(w, n)| (w.to_string(), n.to_string())).collect(),
            edges.iter().map(|&(h, d, l)| DepEdge::new(h, d, l)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn head_of_multi_token_span() {
        // John moved to New York City
        let s = sentence(
            &[("John", "per"), ("moved", "O"), ("to", "O"), ("New", "loc"), ("York", "loc"), ("City", "loc")],
            &[(1, 0, "nsubj"), (5, 2, "case"), (5, 3, "compound"), (5, 4, "compound"), (1, 5, "nmod_to")],
        );
        assert_eq!(head_of_span(&s, &EntitySpan::new(3, 6, "loc")), 5);
        assert_eq!(head_of_span(&s, &EntitySpan::new(0, 1, "per")), 0);
        // two tokens attached outside: rightmost wins
        let s = sentence(&[("a", "x"), ("b", "x"), ("c", "O")], &[(2, 0, "dep"), (2, 1, "dep")]);
        assert_eq!(head_of_span(&s, &EntitySpan::new(0, 2, "x")), 1);
    }

    #[test]
    fn diamond_tie_break() {
        // 0 and 3 connected via 1 and via 2, both labeled "a"
        let s = sentence(
            &[("w0", "O"), ("w1", "O"), ("w2", "O"), ("w3", "O")],
            &[(2, 0, "a"), (1, 0, "a"), (1, 3, "b"), (2, 3, "b")],
        );
        let p = shortest_dep_path(&s, 0, 3).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[0], Hop { step: DepStep::incoming("a"), node: 1 });
        assert_eq!(p[1], Hop { step: DepStep::outgoing("b"), node: 3 });
        assert!(shortest_dep_path(&sentence(&[("a", "O"), ("b", "O")], &[]), 0, 1).is_none());
    }

    #[test]
    fn lexicalized_identical_types() {
        let s = Arc::new(sentence(
            &[("SoHo", "loc"), (",", "O"), ("Manhattan", "loc")],
            &[(2, 0, "appos"), (2, 1, "punct")],
        ));
        let inst = RelationInstance::new(
            "x",
            s,
            EntitySpan::new(0, 1, "loc"),
            EntitySpan::new(2, 3, "loc"),
            None,
        )
        .unwrap();
        let cfg = RuleGenConfig {
            lexicalize_identical_types: true,
        };
        let r = generate_syntactic_rule(&inst, &cfg).unwrap();
        assert_eq!(r.to_string(), "[ne=SoHo]+ <appos [ne=Manhattan]+");
        assert!(is_lexicalized(&r, &inst));
        let r = generate_syntactic_rule(&inst, &RuleGenConfig::default()).unwrap();
        assert_eq!(r.to_string(), "[ne=loc]+ <appos [ne=loc]+");
    }
}
