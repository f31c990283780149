//! Random instances and rules, plus a brute-force matcher used as an oracle.
#![allow(dead_code)]

use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::Rng;
use softrules::corpus::{normalize_type, AnnotatedSentence, DepEdge, EntitySpan, RelationInstance};
use softrules::rule::{Attr, DepStep, Direction, NodeConstraint, Rule, RuleKind, TokenConstraint};

pub const WORDS: &[&str] = &[
    "Bill", "Gates", "founded", "Founded", "Microsoft", "of", "the", "moved", "to", "city", "son", "is", "York", "NEW",
];
pub const LABELS: &[&str] = &["nsubj", "dobj", "nmod_of", "amod", "det", "appos"];
pub const NER: &[&str] = &["O", "O", "O", "per", "org", "loc"];
pub const TYPES: &[&str] = &["per", "org", "loc", "PERSON", "Organization"];

fn span_in(rng: &mut impl Rng, n: usize, taken: Option<&EntitySpan>) -> Option<(usize, usize)> {
    for _ in 0..20 {
        let len = rng.random_range(1..=3.min(n));
        let start = rng.random_range(0..=n - len);
        let (s, e) = (start, start + len);
        if taken.is_none_or(|t| e <= t.start || s >= t.end) {
            return Some((s, e));
        }
    }
    None
}

/// A sentence of 2..=`max_tokens` tokens over a random dependency tree with
/// up to two extra edges (so cycles and parallel edges occur), and two
/// disjoint entity spans of 1 to 3 tokens.
pub fn random_instance(rng: &mut impl Rng, id: &str, max_tokens: usize) -> RelationInstance {
    loop {
        let n = rng.random_range(2..=max_tokens.max(2));
        let words: Vec<(String, String)> = (0..n)
            .map(|_| (WORDS.choose(rng).unwrap().to_string(), NER.choose(rng).unwrap().to_string()))
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let mut edges = Vec::new();
        for i in 1..n {
            let head = order[rng.random_range(0..i)];
            edges.push(DepEdge::new(head, order[i], *LABELS.choose(rng).unwrap()));
        }
        for _ in 0..rng.random_range(0..=2) {
            let (h, d) = (rng.random_range(0..n), rng.random_range(0..n));
            let e = DepEdge::new(h, d, *LABELS.choose(rng).unwrap());
            if h != d && !edges.contains(&e) {
                edges.push(e);
            }
        }
        let Ok(sentence) = AnnotatedSentence::new(id, words, edges) else {
            continue;
        };
        let Some((ss, se)) = span_in(rng, n, None) else {
            continue;
        };
        let subj = EntitySpan::new(ss, se, *TYPES.choose(rng).unwrap());
        let Some((os, oe)) = span_in(rng, n, Some(&subj)) else {
            continue;
        };
        let obj = EntitySpan::new(os, oe, *TYPES.choose(rng).unwrap());
        return RelationInstance::new(id, Arc::new(sentence), subj, obj, Some("rel".into())).expect("valid spans");
    }
}

fn vary_case(rng: &mut impl Rng, w: &str) -> String {
    match rng.random_range(0..3) {
        0 => w.to_lowercase(),
        1 => w.to_uppercase(),
        _ => w.to_string(),
    }
}

fn entity_constraint(rng: &mut impl Rng, inst: &RelationInstance, span: &EntitySpan) -> TokenConstraint {
    match rng.random_range(0..10) {
        0..=6 => TokenConstraint::ne(span.etype.clone()),
        7 => TokenConstraint::ne(*TYPES.choose(rng).unwrap()),
        8 => TokenConstraint::ne(vary_case(rng, &inst.sentence.text(span.start, span.end))),
        _ => TokenConstraint::entity(Attr::Word, inst.sentence.text(span.start, span.end)),
    }
}

fn node_constraint(rng: &mut impl Rng, inst: &RelationInstance, node: Option<usize>) -> NodeConstraint {
    match (rng.random_range(0..10), node) {
        (0..=4, Some(n)) => NodeConstraint::word(&vary_case(rng, &inst.sentence.tokens()[n].text)),
        (5..=6, Some(n)) => NodeConstraint::Token(TokenConstraint {
            attr: Attr::Ne,
            value: inst.effective_ner(n).to_string(),
            plus: false,
        }),
        (7, _) => NodeConstraint::Token(TokenConstraint {
            attr: Attr::Ne,
            value: TYPES.choose(rng).unwrap().to_string(),
            plus: false,
        }),
        _ => NodeConstraint::word(WORDS.choose(rng).unwrap()),
    }
}

/// A syntactic rule of 1..=`max_steps` steps. Half of them trace a random
/// walk out of the subject span, so that matches are common.
pub fn random_rule(rng: &mut impl Rng, inst: &RelationInstance, max_steps: usize) -> Rule {
    let s = &inst.sentence;
    let k = rng.random_range(1..=max_steps);
    let mut steps = Vec::with_capacity(k);
    let mut nodes = Vec::new();
    if rng.random_bool(0.5) {
        let mut cur = rng.random_range(inst.subj.start..inst.subj.end);
        for i in 0..k {
            let options: Vec<(Direction, &DepEdge)> = s
                .edges()
                .iter()
                .filter_map(|e| {
                    if e.dependent == cur {
                        Some((Direction::Incoming, e))
                    } else if e.head == cur {
                        Some((Direction::Outgoing, e))
                    } else {
                        None
                    }
                })
                .collect();
            let (dir, label, next) = match options.choose(rng) {
                Some(&(d, e)) => (d, e.label.clone(), Some(if d == Direction::Incoming { e.head } else { e.dependent })),
                None => (Direction::Outgoing, LABELS.choose(rng).unwrap().to_string(), None),
            };
            steps.push(DepStep { direction: dir, label });
            if i + 1 < k {
                nodes.push(node_constraint(rng, inst, next));
            }
            match next {
                Some(n) => cur = n,
                None => break,
            }
        }
        while steps.len() < k {
            steps.push(DepStep::incoming(*LABELS.choose(rng).unwrap()));
            if steps.len() < k {
                nodes.push(node_constraint(rng, inst, None));
            }
        }
        nodes.truncate(k - 1);
        while nodes.len() < k - 1 {
            nodes.push(node_constraint(rng, inst, None));
        }
    } else {
        for i in 0..k {
            let label = *LABELS.choose(rng).unwrap();
            steps.push(if rng.random_bool(0.5) { DepStep::incoming(label) } else { DepStep::outgoing(label) });
            if i + 1 < k {
                let node = rng.random_range(0..s.len());
                nodes.push(node_constraint(rng, inst, Some(node)));
            }
        }
    }
    let first = entity_constraint(rng, inst, &inst.subj);
    let last = entity_constraint(rng, inst, &inst.obj);
    Rule::syntactic(first, steps, nodes, last).expect("well-formed random rule")
}

fn fold(s: &str) -> String {
    s.to_lowercase()
}

fn entity_ok(c: &TokenConstraint, inst: &RelationInstance, span: &EntitySpan) -> bool {
    let text = inst.sentence.text(span.start, span.end);
    match c.attr {
        Attr::Ne => (span.start..span.end).all(|t| normalize_type(inst.effective_ner(t)) == normalize_type(&c.value)) || fold(&c.value) == fold(&text),
        Attr::Word => fold(&c.value) == fold(&text),
    }
}

fn node_ok(c: &NodeConstraint, inst: &RelationInstance, node: usize) -> bool {
    match c.attr() {
        Attr::Word => fold(c.value()) == fold(&inst.sentence.tokens()[node].text),
        Attr::Ne => normalize_type(c.value()) == normalize_type(inst.effective_ner(node)),
    }
}

/// Case-insensitive matching by enumerating every walk of the rule's length
/// from every subject token, scanning the full edge list at each hop.
pub fn oracle_matches(rule: &Rule, inst: &RelationInstance) -> bool {
    match rule.kind() {
        RuleKind::Syntactic => {
            entity_ok(rule.first_entity(), inst, &inst.subj)
                && entity_ok(rule.last_entity(), inst, &inst.obj)
                && (inst.subj.start..inst.subj.end).any(|start| walk(rule, inst, start, 0))
        }
        RuleKind::Surface => {
            let (a, b) = (&inst.subj, &inst.obj);
            let (left, right) = if a.start < b.start { (a, b) } else { (b, a) };
            if !entity_ok(rule.first_entity(), inst, left) || !entity_ok(rule.last_entity(), inst, right) {
                return false;
            }
            let gap: Vec<usize> = (left.end..right.start).collect();
            gap.len() == rule.nodes().len() && gap.iter().zip(rule.nodes()).all(|(&t, c)| node_ok(c, inst, t))
        }
    }
}

fn walk(rule: &Rule, inst: &RelationInstance, node: usize, k: usize) -> bool {
    let steps = rule.steps();
    if k == steps.len() {
        return inst.obj.contains(node);
    }
    inst.sentence.edges().iter().any(|e| {
        if e.label != steps[k].label {
            return false;
        }
        let to = match steps[k].direction {
            Direction::Incoming if e.dependent == node => e.head,
            Direction::Outgoing if e.head == node => e.dependent,
            _ => return false,
        };
        if let Some(c) = rule.nodes().get(k) {
            if !node_ok(c, inst, to) {
                return false;
            }
        }
        walk(rule, inst, to, k + 1)
    })
}

const VALUE_CHARS: &[char] = &['a', 'b', 'Z', '0', '9', '_', ':', '-', '.', '/', '=', '[', ']', '\'', 'é', ' '];

fn random_value(rng: &mut impl Rng) -> String {
    loop {
        let len = rng.random_range(1..=8);
        let v: String = (0..len).map(|_| *VALUE_CHARS.choose(rng).unwrap()).collect();
        if TokenConstraint::representable(&v) {
            return v;
        }
    }
}

fn random_label(rng: &mut impl Rng) -> String {
    let len = rng.random_range(1..=7);
    (0..len).map(|_| *['a', 'm', 'o', 'd', '_', ':', 'x'].choose(rng).unwrap()).collect()
}

fn random_node(rng: &mut impl Rng) -> NodeConstraint {
    if rng.random_bool(0.5) {
        loop {
            let w: String = random_value(rng).replace(' ', "");
            if !w.is_empty() {
                return NodeConstraint::word(&w);
            }
        }
    } else {
        NodeConstraint::Token(TokenConstraint {
            attr: if rng.random_bool(0.5) { Attr::Ne } else { Attr::Word },
            value: random_value(rng),
            plus: false,
        })
    }
}

/// Any well-formed rule, with awkward but writable values.
pub fn random_ast(rng: &mut impl Rng) -> Rule {
    let entity = |rng: &mut _| TokenConstraint::entity(if Rng::random_bool(rng, 0.7) { Attr::Ne } else { Attr::Word }, random_value(rng));
    let first = entity(rng);
    let last = entity(rng);
    if rng.random_bool(0.6) {
        let k = rng.random_range(1..=5);
        let steps = (0..k)
            .map(|_| DepStep {
                direction: if rng.random_bool(0.5) { Direction::Incoming } else { Direction::Outgoing },
                label: random_label(rng),
            })
            .collect();
        let nodes = (1..k).map(|_| random_node(rng)).collect();
        Rule::syntactic(first, steps, nodes, last).expect("well-formed")
    } else {
        let nodes = (0..rng.random_range(0..=4)).map(|_| random_node(rng)).collect();
        Rule::surface(first, nodes, last).expect("well-formed")
    }
}
