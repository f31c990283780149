//! Strict (binary) rule matching against relation instances.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{normalize_type, DepEdge, EntitySpan, RelationInstance};
use crate::synonyms::canonical_type;
use crate::rule::{Attr, Direction, NodeConstraint, Rule, RuleKind, TokenConstraint};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchConfig {
    /// Compare word literals and lexicalized entities without case folding.
    pub case_sensitive: bool,
    /// Treat entity types from the same synonym row as equal.
    #[serde(default)]
    pub synonyms: bool,
}

impl MatchConfig {
    fn same_text(&self, a: &str, b: &str) -> bool {
        if self.case_sensitive {
            a == b
        } else {
            a == b || a.to_lowercase() == b.to_lowercase()
        }
    }

    fn same_type(&self, a: &str, b: &str) -> bool {
        if self.synonyms {
            canonical_type(a) == canonical_type(b)
        } else {
            normalize_type(a) == normalize_type(b)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Binding {
    /// One witness walk: `nodes[0]` in the subject span, `nodes[k + 1]`
    /// reached from `nodes[k]` over `edges[k]`.
    Syntactic {
        nodes: Vec<usize>,
        edges: Vec<DepEdge>,
    },
    /// Token interval `[start, end)` from the first entity to the second.
    Surface { start: usize, end: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    pub matched: bool,
    pub binding: Option<Binding>,
}

impl MatchResult {
    pub fn no_match() -> Self {
        Self {
            matched: false,
            binding: None,
        }
    }

    fn found(binding: Binding) -> Self {
        Self {
            matched: true,
            binding: Some(binding),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MatchError {
    #[error("expected a {expected:?} rule, got {got:?}")]
    KindMismatch { expected: RuleKind, got: RuleKind },
}

/// Whether a declared span satisfies an entity constraint: by type, or by
/// surface text for lexicalized constraints.
pub fn entity_satisfies(
    c: &TokenConstraint,
    inst: &RelationInstance,
    span: &EntitySpan,
    cfg: &MatchConfig,
) -> bool {
    let text = || inst.sentence.text(span.start, span.end);
    match c.attr {
        Attr::Ne => cfg.same_type(&c.value, &span.etype) || cfg.same_text(&c.value, &text()),
        Attr::Word => cfg.same_text(&c.value, &text()),
    }
}

/// Whether the token at `node` satisfies an intermediate node constraint.
pub fn node_satisfies(
    c: &NodeConstraint,
    inst: &RelationInstance,
    node: usize,
    cfg: &MatchConfig,
) -> bool {
    let token = &inst.sentence.tokens()[node];
    match c.attr() {
        Attr::Word => cfg.same_text(c.value(), &token.text),
        Attr::Ne => cfg.same_type(c.value(), inst.effective_ner(node)),
    }
}

pub fn match_syntactic(
    rule: &Rule,
    inst: &RelationInstance,
    cfg: &MatchConfig,
) -> Result<MatchResult, MatchError> {
    if rule.kind() != RuleKind::Syntactic {
        return Err(MatchError::KindMismatch {
            expected: RuleKind::Syntactic,
            got: rule.kind(),
        });
    }
    if !entity_satisfies(rule.first_entity(), inst, &inst.subj, cfg)
        || !entity_satisfies(rule.last_entity(), inst, &inst.obj, cfg)
    {
        return Ok(MatchResult::no_match());
    }
    let s = &inst.sentence;
    let steps = rule.steps();
    let nodes = rule.nodes();

    // layers[k]: node -> (previous node, edge) for walks that consumed k steps
    let mut layers: Vec<HashMap<usize, Option<(usize, usize)>>> = Vec::with_capacity(steps.len() + 1);
    layers.push((inst.subj.start..inst.subj.end).map(|n| (n, None)).collect());
    for (k, step) in steps.iter().enumerate() {
        let mut next: HashMap<usize, Option<(usize, usize)>> = HashMap::new();
        let mut frontier: Vec<usize> = layers[k].keys().copied().collect();
        frontier.sort_unstable();
        for node in frontier {
            let ids = match step.direction {
                Direction::Incoming => s.incoming_ids(node),
                Direction::Outgoing => s.outgoing_ids(node),
            };
            for &idx in ids {
                let edge = &s.edges()[idx];
                let to = match step.direction {
                    Direction::Incoming => edge.head,
                    Direction::Outgoing => edge.dependent,
                };
                if edge.label != step.label || next.contains_key(&to) {
                    continue;
                }
                if let Some(c) = nodes.get(k) {
                    // not the final hop: the reached node must satisfy node k
                    if !node_satisfies(c, inst, to, cfg) {
                        continue;
                    }
                }
                next.insert(to, Some((node, idx)));
            }
        }
        if next.is_empty() {
            return Ok(MatchResult::no_match());
        }
        layers.push(next);
    }
    let last = layers.last().expect("at least one step");
    let Some(end) = (inst.obj.start..inst.obj.end).find(|n| last.contains_key(n)) else {
        return Ok(MatchResult::no_match());
    };

    let mut walk = vec![end];
    let mut used = Vec::with_capacity(steps.len());
    let mut cur = end;
    for layer in layers.iter().skip(1).rev() {
        let (prev, edge) = layer[&cur].expect("non-initial layers record parents");
        used.push(s.edges()[edge].clone());
        walk.push(prev);
        cur = prev;
    }
    walk.reverse();
    used.reverse();
    Ok(MatchResult::found(Binding::Syntactic {
        nodes: walk,
        edges: used,
    }))
}

pub fn match_surface(
    rule: &Rule,
    inst: &RelationInstance,
    cfg: &MatchConfig,
) -> Result<MatchResult, MatchError> {
    if rule.kind() != RuleKind::Surface {
        return Err(MatchError::KindMismatch {
            expected: RuleKind::Surface,
            got: rule.kind(),
        });
    }
    let (a, b) = if inst.subj.start <= inst.obj.start {
        (&inst.subj, &inst.obj)
    } else {
        (&inst.obj, &inst.subj)
    };
    if !entity_satisfies(rule.first_entity(), inst, a, cfg)
        || !entity_satisfies(rule.last_entity(), inst, b, cfg)
    {
        return Ok(MatchResult::no_match());
    }
    let nodes = rule.nodes();
    if b.start - a.end != nodes.len() {
        return Ok(MatchResult::no_match());
    }
    let ok = nodes
        .iter()
        .enumerate()
        .all(|(k, c)| node_satisfies(c, inst, a.end + k, cfg));
    if ok {
        Ok(MatchResult::found(Binding::Surface {
            start: a.start,
            end: b.end,
        }))
    } else {
        Ok(MatchResult::no_match())
    }
}

/// Dispatches on the rule kind.
pub fn matches(rule: &Rule, inst: &RelationInstance, cfg: &MatchConfig) -> MatchResult {
    let r = match rule.kind() {
        RuleKind::Syntactic => match_syntactic(rule, inst, cfg),
        RuleKind::Surface => match_surface(rule, inst, cfg),
    };
    r.expect("kind dispatched")
}

/// Replays a binding step by step; true iff every constraint holds.
pub fn verify_binding(rule: &Rule, inst: &RelationInstance, binding: &Binding, cfg: &MatchConfig) -> bool {
    match binding {
        Binding::Syntactic { nodes, edges } => {
            let steps = rule.steps();
            if rule.kind() != RuleKind::Syntactic || nodes.len() != steps.len() + 1 || edges.len() != steps.len() {
                return false;
            }
            if !inst.subj.contains(nodes[0]) || !inst.obj.contains(*nodes.last().expect("non-empty")) {
                return false;
            }
            if !entity_satisfies(rule.first_entity(), inst, &inst.subj, cfg)
                || !entity_satisfies(rule.last_entity(), inst, &inst.obj, cfg)
            {
                return false;
            }
            for (k, step) in steps.iter().enumerate() {
                let e = &edges[k];
                if e.label != step.label || !inst.sentence.edges().contains(e) {
                    return false;
                }
                let (from, to) = match step.direction {
                    Direction::Incoming => (e.dependent, e.head),
                    Direction::Outgoing => (e.head, e.dependent),
                };
                if from != nodes[k] || to != nodes[k + 1] {
                    return false;
                }
                if let Some(c) = rule.nodes().get(k) {
                    if !node_satisfies(c, inst, to, cfg) {
                        return false;
                    }
                }
            }
            true
        }
        Binding::Surface { start, end } => {
            let m = match_surface(rule, inst, cfg);
            matches!(m, Ok(MatchResult { binding: Some(Binding::Surface { start: s, end: e }), .. }) if s == *start && e == *end)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Slot {
    Subj,
    Obj,
    Earlier,
    Later,
}

/// Read-only index over an instance list for pruning rule scans.
#[derive(Debug)]
pub struct CorpusIndex<'a> {
    instances: &'a [RelationInstance],
    /// lower-cased token text -> instance positions (sorted)
    words: HashMap<String, Vec<usize>>,
    /// (slot, normalized type) -> instance positions
    types: HashMap<(Slot, String), Vec<usize>>,
    /// (slot, lower-cased span text) -> instance positions
    texts: HashMap<(Slot, String), Vec<usize>>,
}

impl<'a> CorpusIndex<'a> {
    pub fn new(instances: &'a [RelationInstance]) -> Self {
        let mut words: HashMap<String, Vec<usize>> = HashMap::new();
        let mut types: HashMap<(Slot, String), Vec<usize>> = HashMap::new();
        let mut texts: HashMap<(Slot, String), Vec<usize>> = HashMap::new();
        for (i, inst) in instances.iter().enumerate() {
            let mut seen = HashSet::new();
            for t in inst.sentence.tokens() {
                let key = t.text.to_lowercase();
                if seen.insert(key.clone()) {
                    words.entry(key).or_default().push(i);
                }
            }
            let (earlier, later) = if inst.subj.start <= inst.obj.start {
                (&inst.subj, &inst.obj)
            } else {
                (&inst.obj, &inst.subj)
            };
            for (slot, span) in [
                (Slot::Subj, &inst.subj),
                (Slot::Obj, &inst.obj),
                (Slot::Earlier, earlier),
                (Slot::Later, later),
            ] {
                types.entry((slot, canonical_type(&span.etype))).or_default().push(i);
                let text = inst.sentence.text(span.start, span.end).to_lowercase();
                texts.entry((slot, text)).or_default().push(i);
            }
        }
        Self {
            instances,
            words,
            types,
            texts,
        }
    }

    pub fn instances(&self) -> &'a [RelationInstance] {
        self.instances
    }

    fn entity_candidates(&self, slot: Slot, c: &TokenConstraint) -> Vec<usize> {
        let text = self
            .texts
            .get(&(slot, c.value.to_lowercase()))
            .cloned()
            .unwrap_or_default();
        if c.attr == Attr::Word {
            return text;
        }
        let by_type = self
            .types
            .get(&(slot, canonical_type(&c.value)))
            .cloned()
            .unwrap_or_default();
        union_sorted(&by_type, &text)
    }

    /// Instance positions that can possibly match `rule`; a superset of the
    /// true matches.
    pub fn candidates(&self, rule: &Rule) -> Vec<usize> {
        let (first, last) = match rule.kind() {
            RuleKind::Syntactic => (Slot::Subj, Slot::Obj),
            RuleKind::Surface => (Slot::Earlier, Slot::Later),
        };
        let mut cand = intersect_sorted(
            &self.entity_candidates(first, rule.first_entity()),
            &self.entity_candidates(last, rule.last_entity()),
        );
        for n in rule.nodes() {
            if cand.is_empty() {
                break;
            }
            if n.attr() == Attr::Word {
                let empty = Vec::new();
                let hits = self.words.get(&n.value().to_lowercase()).unwrap_or(&empty);
                cand = intersect_sorted(&cand, hits);
            }
        }
        cand
    }
}

fn intersect_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

fn union_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = a.iter().chain(b).copied().collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// All matching instances, in corpus order.
pub fn find_matches(rule: &Rule, index: &CorpusIndex<'_>, cfg: &MatchConfig) -> Vec<(String, MatchResult)> {
    let insts = index.instances();
    index
        .candidates(rule)
        .into_par_iter()
        .filter_map(|i| {
            let m = matches(rule, &insts[i], cfg);
            m.matched.then(|| (insts[i].id.clone(), m))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::corpus::AnnotatedSentence;
    use crate::rule::parse_rule;

    fn inst(words: &[(&str, &str)], edges: &[(usize, usize, &str)], subj: (usize, usize), obj: (usize, usize)) -> RelationInstance {
        let s = AnnotatedSentence::new(
            "t",
            words.iter().map(|(w, n)| (w.to_string(), n.to_string())).collect(),
            edges.iter().map(|&(h, d, l)| DepEdge::new(h, d, l)).collect(),
        )
        .unwrap();
        let st = s.tokens()[subj.0].ner.clone();
        let ot = s.tokens()[obj.0].ner.clone();
        RelationInstance::new(
            "t",
            Arc::new(s),
            EntitySpan::new(subj.0, subj.1, st),
            EntitySpan::new(obj.0, obj.1, ot),
            None,
        )
        .unwrap()
    }

    #[test]
    fn syntactic_binding_is_replayable() {
        let i = inst(
            &[("Bill", "per"), ("Gates", "per"), ("founded", "O"), ("Microsoft", "org")],
            &[(1, 0, "compound"), (2, 1, "nsubj"), (2, 3, "dobj")],
            (0, 2),
            (3, 4),
        );
        let r = parse_rule("[ne=per]+ <nsubj FOUNDED >dobj [ne=org]+").unwrap();
        let cfg = MatchConfig::default();
        let m = matches(&r, &i, &cfg);
        assert!(m.matched);
        let b = m.binding.unwrap();
        assert_eq!(
            b,
            Binding::Syntactic {
                nodes: vec![1, 2, 3],
                edges: vec![DepEdge::new(2, 1, "nsubj"), DepEdge::new(2, 3, "dobj")]
            }
        );
        assert!(verify_binding(&r, &i, &b, &cfg));
        assert!(!matches(&r, &i, &MatchConfig { case_sensitive: true, ..MatchConfig::default() }).matched);
    }

    #[test]
    fn lexicalized_entities_and_kind_mismatch() {
        let i = inst(
            &[("Wynwood", "loc"), (",", "O"), ("Miami", "loc")],
            &[(2, 0, "appos"), (2, 1, "punct")],
            (0, 1),
            (2, 3),
        );
        let r = parse_rule("[ne=Wynwood]+ <appos [ne=Miami]+").unwrap();
        assert!(matches(&r, &i, &MatchConfig::default()).matched);
        let r2 = parse_rule("[ne=SoHo]+ <appos [ne=Miami]+").unwrap();
        assert!(!matches(&r2, &i, &MatchConfig::default()).matched);
        assert!(match_surface(&r, &i, &MatchConfig::default()).is_err());
    }

    #[test]
    fn surface_with_empty_gap() {
        let i = inst(&[("Acme", "org"), ("Bob", "per")], &[(0, 1, "dep")], (1, 2), (0, 1));
        let r = parse_rule("[ne=org]+ [ne=per]+").unwrap();
        let m = matches(&r, &i, &MatchConfig::default());
        assert_eq!(m.binding, Some(Binding::Surface { start: 0, end: 2 }));
    }

    #[test]
    fn sorted_set_helpers() {
        assert_eq!(intersect_sorted(&[1, 3, 5, 7], &[3, 4, 7]), vec![3, 7]);
        assert_eq!(union_sorted(&[1, 5], &[2, 5]), vec![1, 2, 5]);
    }
}
