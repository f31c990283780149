use std::fmt;

use super::{Attr, DepStep, Direction, NodeConstraint, Rule, RuleError, TokenConstraint};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ParseError {
    /// Byte offset into the input where the problem was detected.
    pub offset: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at byte {}", self.message, self.offset)
    }
}

fn err(offset: usize, message: impl Into<String>) -> ParseError {
    ParseError {
        offset,
        message: message.into(),
    }
}

#[derive(Debug)]
enum Item {
    Constraint(TokenConstraint),
    Step(DepStep),
    Literal(String),
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn bytes(&self) -> &'a [u8] {
        self.src.as_bytes()
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.src[self.pos..].chars().next() {
            if !c.is_whitespace() {
                break;
            }
            self.pos += c.len_utf8();
        }
    }

    fn at_boundary(&self, i: usize) -> bool {
        match self.src[i..].chars().next() {
            None => true,
            Some(c) => c.is_whitespace(),
        }
    }

    fn word_end(&self) -> usize {
        let rest = &self.src[self.pos..];
        self.pos + rest.find(char::is_whitespace).unwrap_or(rest.len())
    }

    fn next(&mut self) -> Result<Option<(usize, Item)>, ParseError> {
        self.skip_ws();
        let start = self.pos;
        let Some(&b) = self.bytes().get(start) else {
            return Ok(None);
        };
        let item = match b {
            b'[' => self.constraint()?,
            b'<' | b'>' => {
                let end = self.word_end();
                let label = &self.src[start + 1..end];
                if label.is_empty() {
                    return Err(err(start, "empty dependency label"));
                }
                self.pos = end;
                let direction = if b == b'<' {
                    Direction::Incoming
                } else {
                    Direction::Outgoing
                };
                Item::Step(DepStep {
                    direction,
                    label: label.to_string(),
                })
            }
            _ => {
                let end = self.word_end();
                let word = &self.src[start..end];
                self.pos = end;
                Item::Literal(word.to_string())
            }
        };
        Ok(Some((start, item)))
    }

    fn constraint(&mut self) -> Result<Item, ParseError> {
        let open = self.pos;
        let rest = &self.src[open + 1..];
        let eq = rest
            .find(|c: char| c == '=' || c == ']' || c.is_whitespace())
            .map(|i| open + 1 + i);
        let Some(eq) = eq.filter(|&i| self.bytes()[i] == b'=') else {
            return Err(err(open, "malformed constraint: expected `[attr=value]`"));
        };
        let name = &self.src[open + 1..eq];
        let attr = Attr::from_name(name)
            .ok_or_else(|| err(open + 1, format!("unknown attribute `{name}`")))?;
        // the closing bracket is the first `]` followed by `+`, whitespace or end
        let value_start = eq + 1;
        let bytes = self.bytes();
        let mut close = None;
        let mut i = value_start;
        while i < bytes.len() {
            if bytes[i] == b']' {
                let next = i + 1;
                if next >= bytes.len() || bytes[next] == b'+' || self.at_boundary(next) {
                    close = Some(i);
                    break;
                }
            }
            i += 1;
        }
        let Some(close) = close else {
            return Err(err(open, "unterminated constraint"));
        };
        let raw = &self.src[value_start..close];
        if raw.is_empty() {
            return Err(err(value_start, "malformed constraint: empty value"));
        }
        if raw.starts_with(char::is_whitespace) || raw.ends_with(char::is_whitespace) {
            return Err(err(value_start, "malformed constraint: whitespace around value"));
        }
        let value = raw.split_whitespace().collect::<Vec<_>>().join(" ");
        let mut end = close + 1;
        let plus = bytes.get(end) == Some(&b'+');
        if plus {
            end += 1;
        }
        if !self.at_boundary(end) {
            return Err(err(end, "expected whitespace after constraint"));
        }
        self.pos = end;
        Ok(Item::Constraint(TokenConstraint { attr, value, plus }))
    }
}

fn node(offset: usize, item: Item) -> Result<NodeConstraint, ParseError> {
    match item {
        Item::Literal(w) => Ok(NodeConstraint::Literal(w)),
        Item::Constraint(c) if c.plus => Err(err(
            offset,
            "quantifier `+` is only allowed on the entity constraints",
        )),
        Item::Constraint(c) => Ok(NodeConstraint::Token(c)),
        Item::Step(_) => Err(err(offset, "expected node constraint between dependency steps")),
    }
}

fn entity(offset: usize, item: Item, which: &str) -> Result<TokenConstraint, ParseError> {
    match item {
        Item::Constraint(c) if c.plus => Ok(c),
        Item::Constraint(_) => Err(err(
            offset,
            format!("{which} entity constraint must carry `+`"),
        )),
        Item::Step(_) if which == "terminal" => Err(err(offset, "dangling dependency step")),
        _ => Err(err(offset, format!("missing {which} entity constraint"))),
    }
}

/// Parses a rule; the kind is inferred from the presence of dependency steps.
pub fn parse_rule(text: &str) -> Result<Rule, ParseError> {
    let mut lexer = Lexer { src: text, pos: 0 };
    let mut items = Vec::new();
    while let Some(item) = lexer.next()? {
        items.push(item);
    }
    if items.is_empty() {
        return Err(err(0, "empty rule"));
    }
    if items.len() == 1 {
        let (off, item) = items.pop().expect("one item");
        entity(off, item, "initial")?;
        return Err(err(text.len(), "missing terminal entity constraint"));
    }
    let (last_off, last_item) = items.pop().expect("len >= 2");
    let mut items = items.into_iter();
    let (first_off, first_item) = items.next().expect("len >= 2");
    let first = entity(first_off, first_item, "initial")?;
    let last = entity(last_off, last_item, "terminal")?;
    let middle: Vec<(usize, Item)> = items.collect();

    let syntactic = middle.iter().any(|(_, i)| matches!(i, Item::Step(_)));
    let built = if syntactic {
        let mut steps = Vec::new();
        let mut nodes = Vec::new();
        for (k, (off, item)) in middle.into_iter().enumerate() {
            if k % 2 == 0 {
                match item {
                    Item::Step(s) => steps.push(s),
                    _ => return Err(err(off, "expected dependency step")),
                }
            } else {
                nodes.push(node(off, item)?);
            }
        }
        if nodes.len() == steps.len() {
            return Err(err(last_off, "expected dependency step before terminal entity"));
        }
        Rule::syntactic(first, steps, nodes, last)
    } else {
        let nodes = middle
            .into_iter()
            .map(|(off, item)| node(off, item))
            .collect::<Result<Vec<_>, _>>()?;
        Rule::surface(first, nodes, last)
    };
    built.map_err(|e: RuleError| err(0, e.to_string()))
}
