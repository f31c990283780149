//! Paraphrase sources: the interface, a deterministic template fixture, and
//! (behind the `http-paraphraser` feature) a chat-completion client.

use std::hash::Hasher;

use crate::synth::{self, clause_tokens, tail_options, Recognized};

#[derive(Debug, thiserror::Error)]
pub enum ParaphraseError {
    #[error("paraphrase request failed: {0}")]
    Transport(String),
    #[error("unusable paraphrase response: {0}")]
    Response(String),
}

/// Produces up to `n` rewrites of `text` that should keep both entity strings.
pub trait Paraphraser: Send + Sync {
    fn paraphrase(&self, text: &str, entity1: &str, entity2: &str, n: usize) -> Result<Vec<String>, ParaphraseError>;
}

/// Prompt sent to a language-model paraphraser.
pub fn paraphrase_prompt(text: &str, entity1: &str, entity2: &str, n: usize) -> String {
    format!(
        "Please generate a number of {n} paraphrases for the following sentence. Please ensure the meaning and the message stays the same and these two entities are preserved in your generations: \"{entity1}\", \"{entity2}\".\nPlease be concise.\n```\n{text}\n```\n1.\n"
    )
}

/// Items of a numbered list. The prompt ends in `1.`, so an unnumbered
/// first line counts as the first item.
pub fn parse_numbered_list(response: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in response.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with("```") {
            continue;
        }
        let digits = line.chars().take_while(char::is_ascii_digit).count();
        let item = if digits > 0 && matches!(line[digits..].chars().next(), Some('.' | ')')) {
            line[digits + 1..].trim()
        } else if out.is_empty() {
            line
        } else {
            continue;
        };
        let item = item.trim_matches('"').trim();
        if !item.is_empty() {
            out.push(item.to_string());
        }
    }
    out
}

/// Splits text into tokens, detaching common punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    const PUNCT: &[char] = &['.', ',', ';', ':', '!', '?', '"', '(', ')'];
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut w = word;
        let mut lead = Vec::new();
        while let Some(c) = w.chars().next().filter(|c| PUNCT.contains(c)) {
            lead.push(c.to_string());
            w = &w[c.len_utf8()..];
        }
        let mut trail = Vec::new();
        while let Some(c) = w.chars().next_back().filter(|c| PUNCT.contains(c)) {
            trail.push(c.to_string());
            w = &w[..w.len() - c.len_utf8()];
        }
        out.extend(lead);
        if !w.is_empty() {
            out.push(w.to_string());
        }
        out.extend(trail.into_iter().rev());
    }
    out
}

fn text_hash(text: &str) -> u64 {
    let mut h = fnv::FnvHasher::default();
    h.write(text.as_bytes());
    h.finish()
}

/// Deterministic fixture paraphraser over the synthetic world.
///
/// Sentences recognised as a lexicon realization are rewritten into other
/// realizations of the same predicate; anything else gets adverb
/// insertions. Some outputs deliberately lose or repeat an entity so that
/// downstream filtering has something to reject.
#[derive(Debug, Clone, Default)]
pub struct TemplateParaphraser {
    /// Emit no deliberately broken variants.
    pub clean: bool,
}

impl TemplateParaphraser {
    pub fn new() -> Self {
        Self::default()
    }

    fn rewrites(rec: &Recognized, tokens: &[String], h: u64) -> Vec<Vec<String>> {
        let ((a0, a1), (b0, b1)) = rec.a_b();
        let a = tokens[a0..a1].join(" ");
        let b = tokens[b0..b1].join(" ");
        let tails = tail_options();
        let alts: Vec<_> = rec
            .predicate
            .realizations
            .iter()
            .filter(|r| **r != rec.realization)
            .collect();
        if alts.is_empty() {
            return Vec::new();
        }
        let start = (h as usize) % alts.len();
        (0..alts.len())
            .map(|k| {
                let r = alts[(start + k) % alts.len()];
                let (x, y) = if r.a_first { (&a, &b) } else { (&b, &a) };
                let tail = if rec.tail.is_empty() {
                    tails[(h as usize + k) % tails.len()].clone()
                } else {
                    rec.tail.clone()
                };
                let mut out = rec.prefix.clone();
                out.extend(clause_tokens(r.frame, x, y, &tail));
                out.extend(rec.rest.iter().cloned());
                out
            })
            .collect()
    }

    fn generic(tokens: &[String], x_end: usize) -> Vec<Vec<String>> {
        ["reportedly", "also", "recently"]
            .iter()
            .map(|adv| {
                let mut out = tokens[..x_end].to_vec();
                out.push(adv.to_string());
                out.extend(tokens[x_end..].iter().cloned());
                out
            })
            .collect()
    }
}

impl Paraphraser for TemplateParaphraser {
    fn paraphrase(&self, text: &str, entity1: &str, entity2: &str, n: usize) -> Result<Vec<String>, ParaphraseError> {
        let tokens: Vec<String> = text.split_whitespace().map(str::to_string).collect();
        let h = text_hash(text);
        let mut outs = Vec::new();
        let mut x_end = None;
        if let Some(rec) = synth::recognize(&tokens, entity1, entity2) {
            x_end = Some(rec.x.1);
            outs = Self::rewrites(&rec, &tokens, h);
        } else {
            let t1: Vec<String> = entity1.split_whitespace().map(str::to_string).collect();
            let t2: Vec<String> = entity2.split_whitespace().map(str::to_string).collect();
            if let (Some(s1), Some(s2)) = (synth::find_unique(&tokens, &t1), synth::find_unique(&tokens, &t2)) {
                x_end = Some(if s1 <= s2 { s1 + t1.len() } else { s2 + t2.len() });
            }
        }
        if outs.len() < n {
            if let Some(x_end) = x_end {
                outs.extend(Self::generic(&tokens, x_end));
            }
        }
        outs.truncate(n);
        if !self.clean && n >= 2 && !outs.is_empty() {
            let last = outs.len() - 1;
            if h.is_multiple_of(5) {
                // lose the second entity
                let joined = outs[last].join(" ");
                outs[last] = joined.replacen(entity2, "them", 1).split(' ').map(str::to_string).collect();
            } else if h % 7 == 1 {
                // repeat the first entity
                let mut v: Vec<String> = ["According", "to"].iter().map(|s| s.to_string()).collect();
                v.extend(entity1.split_whitespace().map(str::to_string));
                v.push(",".into());
                v.extend(outs[last].iter().cloned());
                outs[last] = v;
            }
        }
        Ok(outs.into_iter().map(|t| t.join(" ")).collect())
    }
}

#[cfg(feature = "http-paraphraser")]
pub use http::HttpParaphraser;

#[cfg(feature = "http-paraphraser")]
mod http {
    use serde_json::{json, Value};

    use super::{paraphrase_prompt, parse_numbered_list, ParaphraseError, Paraphraser};

    /// Posts the paraphrase prompt to an OpenAI-style chat-completions
    /// endpoint. Results depend on the remote model and are not reproducible.
    #[derive(Debug, Clone)]
    pub struct HttpParaphraser {
        pub endpoint: String,
        pub model: String,
        pub api_key: Option<String>,
        client: reqwest::blocking::Client,
    }

    impl HttpParaphraser {
        pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
            Self {
                endpoint: endpoint.into(),
                model: model.into(),
                api_key,
                client: reqwest::blocking::Client::new(),
            }
        }
    }

    impl Paraphraser for HttpParaphraser {
        fn paraphrase(&self, text: &str, entity1: &str, entity2: &str, n: usize) -> Result<Vec<String>, ParaphraseError> {
            let body = json!({
                "model": self.model,
                "messages": [{"role": "user", "content": paraphrase_prompt(text, entity1, entity2, n)}],
            });
            let mut req = self.client.post(&self.endpoint).json(&body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let resp = req
                .send()
                .and_then(|r| r.error_for_status())
                .map_err(|e| ParaphraseError::Transport(e.to_string()))?;
            let v: Value = resp.json().map_err(|e| ParaphraseError::Response(e.to_string()))?;
            let content = v["choices"][0]["message"]["content"]
                .as_str()
                .ok_or_else(|| ParaphraseError::Response("missing choices[0].message.content".into()))?;
            Ok(parse_numbered_list(content))
        }
    }
}
