//! Feature-hashed bag-of-n-grams dual encoder.

use std::collections::BTreeMap;
use std::hash::Hasher;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Embedder, EmbedError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    /// Number of hash buckets.
    pub hash_dim: usize,
    /// Width of the bucket embeddings.
    pub d_in: usize,
    /// Projection (output) width.
    pub d_out: usize,
    /// Standard deviation of the initial bucket rows.
    pub row_init_sd: f64,
    /// Start both towers from the same rows and projection.
    pub tied_init: bool,
    /// Pooling weight of entity surface tokens inside `# * type * ... #`
    /// markers, relative to 1.0 for every other feature.
    pub entity_weight: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hash_dim: 1 << 18,
            d_in: 256,
            d_out: 384,
            row_init_sd: 0.1,
            tied_init: false,
            entity_weight: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Rule,
    Sentence,
}

impl Side {
    fn salt(self, tied: bool) -> u64 {
        if tied {
            return 0x5449_4544;
        }
        match self {
            Side::Rule => 0x5255_4c45,
            Side::Sentence => 0x5345_4e54,
        }
    }
}

fn bucket(parts: &[&str], hash_dim: usize) -> u32 {
    let mut h = fnv::FnvHasher::default();
    h.write_u8(parts.len() as u8);
    for p in parts {
        h.write(p.as_bytes());
        h.write_u8(0xff);
    }
    (h.finish() % hash_dim as u64) as u32
}

/// Bucket ids of the lower-cased unigrams and bigrams of `text`.
pub fn features(text: &str, hash_dim: usize) -> Vec<u32> {
    weighted_features(text, hash_dim, 1.0).into_iter().map(|(b, _)| b).collect()
}

/// Features with pooling weights summing to one. Unigrams and bigrams that
/// touch an entity surface token get `entity_weight`, everything else 1.
pub fn weighted_features(text: &str, hash_dim: usize, entity_weight: f64) -> Vec<(u32, f64)> {
    let toks: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
    let inside = entity_tokens(&toks);
    let w = |i: usize| if inside[i] { entity_weight } else { 1.0 };
    let mut out: Vec<(u32, f64)> = toks.iter().enumerate().map(|(i, t)| (bucket(&[t], hash_dim), w(i))).collect();
    out.extend(
        toks.windows(2)
            .enumerate()
            .map(|(i, p)| (bucket(&[&p[0], &p[1]], hash_dim), w(i).min(w(i + 1)))),
    );
    let total: f64 = out.iter().map(|(_, w)| w).sum();
    if total > 0.0 {
        out.iter_mut().for_each(|(_, w)| *w /= total);
    }
    out
}

/// Marks the surface tokens between `# * type *` and the closing `#`.
fn entity_tokens(toks: &[String]) -> Vec<bool> {
    let mut inside = vec![false; toks.len()];
    let mut i = 0;
    while i < toks.len() {
        if toks[i] == "#" && toks.get(i + 1).is_some_and(|t| t == "*") {
            if let Some(close) = (i + 2..toks.len()).find(|&j| toks[j] == "*") {
                if let Some(end) = (close + 1..toks.len()).find(|&j| toks[j] == "#") {
                    inside[close + 1..end].iter_mut().for_each(|x| *x = true);
                    i = end + 1;
                    continue;
                }
            }
        }
        i += 1;
    }
    inside
}

/// One side of the dual encoder: sparse bucket table plus projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tower {
    pub side: Side,
    /// Materialized rows; absent rows equal their seeded initial value.
    pub rows: BTreeMap<u32, Vec<f64>>,
    /// `d_in × d_out`, row-major.
    pub projection: Vec<f64>,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Bucket ids with their pooling weights.
    pub features: Vec<(u32, f64)>,
    /// Mean-pooled bucket embedding (after dropout, if any).
    pub pooled: Vec<f64>,
    /// Projected, not normalized.
    pub raw: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HashedEncoder {
    pub config: EncoderConfig,
    pub seed: u64,
    /// Log of the similarity scale used in training.
    pub logit_scale: f64,
    pub rule: Tower,
    pub sentence: Tower,
}

impl HashedEncoder {
    pub fn new(config: EncoderConfig, seed: u64) -> Self {
        let tower = |side: Side| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ side.salt(config.tied_init).rotate_left(17));
            let sd = 1.0 / (config.d_in as f64).sqrt();
            let projection = (0..config.d_in * config.d_out)
                .map(|_| sd * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect::<Vec<f64>>();
            Tower {
                side,
                rows: BTreeMap::new(),
                projection,
            }
        };
        Self {
            config,
            seed,
            logit_scale: (1.0f64 / 0.07).ln(),
            rule: tower(Side::Rule),
            sentence: tower(Side::Sentence),
        }
    }

    pub fn tower(&self, side: Side) -> &Tower {
        match side {
            Side::Rule => &self.rule,
            Side::Sentence => &self.sentence,
        }
    }

    pub fn tower_mut(&mut self, side: Side) -> &mut Tower {
        match side {
            Side::Rule => &mut self.rule,
            Side::Sentence => &mut self.sentence,
        }
    }

    /// Seeded initial value of a bucket row.
    pub fn initial_row(&self, side: Side, bucket: u32) -> Vec<f64> {
        let mixed = self.seed ^ side.salt(self.config.tied_init) ^ (u64::from(bucket)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut rng = ChaCha8Rng::seed_from_u64(mixed);
        let sd = self.config.row_init_sd;
        (0..self.config.d_in)
            .map(|_| sd * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect()
    }

    pub fn row(&self, side: Side, bucket: u32) -> std::borrow::Cow<'_, [f64]> {
        match self.tower(side).rows.get(&bucket) {
            Some(r) => std::borrow::Cow::Borrowed(r),
            None => std::borrow::Cow::Owned(self.initial_row(side, bucket)),
        }
    }

    /// Forward pass; `dropout_mask`, when given, multiplies the pooled vector.
    pub fn forward(&self, side: Side, text: &str, dropout_mask: Option<&[f64]>) -> Result<Forward, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let d_in = self.config.d_in;
        let d_out = self.config.d_out;
        let feats = weighted_features(text, self.config.hash_dim, self.config.entity_weight);
        let mut pooled = vec![0.0; d_in];
        for &(f, w) in &feats {
            for (p, x) in pooled.iter_mut().zip(self.row(side, f).iter()) {
                *p += w * x;
            }
        }
        if let Some(mask) = dropout_mask {
            pooled.iter_mut().zip(mask).for_each(|(p, m)| *p *= m);
        }
        let proj = &self.tower(side).projection;
        let mut raw = vec![0.0; d_out];
        for (k, &x) in pooled.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let prow = &proj[k * d_out..(k + 1) * d_out];
            for (r, w) in raw.iter_mut().zip(prow) {
                *r += x * w;
            }
        }
        Ok(Forward {
            features: feats,
            pooled,
            raw,
        })
    }

    fn embed(&self, side: Side, text: &str) -> Result<Vec<f64>, EmbedError> {
        let mut v = self.forward(side, text, None)?.raw;
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 {
            return Err(EmbedError::Degenerate);
        }
        v.iter_mut().for_each(|x| *x /= n);
        Ok(v)
    }
}

impl Embedder for HashedEncoder {
    fn dim(&self) -> usize {
        self.config.d_out
    }

    fn embed_rule(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        self.embed(Side::Rule, text)
    }

    fn embed_sentence(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        self.embed(Side::Sentence, text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> HashedEncoder {
        HashedEncoder::new(
            EncoderConfig {
                hash_dim: 1 << 12,
                d_in: 16,
                d_out: 8,
                ..EncoderConfig::default()
            },
            1,
        )
    }

    #[test]
    fn unit_norm_and_deterministic() {
        let e = small();
        let a = e.embed_rule("[ne=per]+ <nsubj founded >dobj [ne=org]+").unwrap();
        let n: f64 = a.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-12);
        assert_eq!(a, small().embed_rule("[ne=per]+ <nsubj founded >dobj [ne=org]+").unwrap());
        assert!(e.embed_sentence("  ").is_err());
    }

    #[test]
    fn tied_init_aligns_sides() {
        let e = small();
        assert_ne!(e.embed_rule("founded").unwrap(), e.embed_sentence("founded").unwrap());
        let mut cfg = e.config;
        cfg.tied_init = true;
        let t = HashedEncoder::new(cfg, 1);
        assert_eq!(t.embed_rule("founded").unwrap(), t.embed_sentence("founded").unwrap());
    }

    #[test]
    fn features_are_unigrams_and_bigrams() {
        assert_eq!(features("a b c", 1 << 20).len(), 5);
        assert_eq!(features("A", 1 << 20), features("a", 1 << 20));
    }

    #[test]
    fn entity_tokens_are_down_weighted() {
        let f = weighted_features("# * per * Bill Gates # founded", 1 << 20, 0.1);
        let total: f64 = f.iter().map(|(_, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-12);
        // "bill", "gates", "* bill", "bill gates", "gates #" are light
        let light = f.iter().filter(|(_, w)| *w < f[0].1).count();
        assert_eq!(light, 5);
        // unterminated markers are ordinary text
        let g = weighted_features("# * per Bill", 1 << 20, 0.1);
        assert!(g.iter().all(|(_, w)| (*w - g[0].1).abs() < 1e-15));
        let a = small().embed_sentence("# * per * Bill # founded # * org * Initech #").unwrap();
        let b = small().embed_sentence("# * per * Ada # founded # * org * Initech #").unwrap();
        assert_ne!(a, b);
    }
}
