//! Mini-batch contrastive training of [`HashedEncoder`] and the retrieval
//! proxy metric.

use std::collections::{BTreeMap, HashSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::encoder::{EncoderConfig, Forward, HashedEncoder, Side};
use super::loss::{dot, loss_gradients, Matrix};
use super::{EmbedError, Embedder};
use crate::pipeline::TrainingPair;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub lr_rule: f64,
    pub lr_sentence: f64,
    pub lr_projection: f64,
    pub lr_logit_scale: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub dropout: f64,
    pub epochs: usize,
    pub seed: u64,
    pub encoder: EncoderConfig,
}

impl TrainingConfig {
    /// Full-scale hyperparameters (meant for a transformer encoder).
    pub fn reference() -> Self {
        Self {
            batch_size: 512,
            lr_rule: 3e-5,
            lr_sentence: 1e-5,
            lr_projection: 1e-4,
            lr_logit_scale: 3e-4,
            weight_decay: 0.001,
            grad_clip: 5.0,
            dropout: 0.1,
            epochs: 1,
            seed: 0,
            encoder: EncoderConfig::default(),
        }
    }

    /// Settings for the hashed encoder on a few thousand pairs. Plain SGD on
    /// a shallow model needs far larger steps than the full-scale values.
    pub fn desk() -> Self {
        Self {
            batch_size: 64,
            lr_rule: 6.0,
            lr_sentence: 6.0,
            lr_projection: 0.25,
            lr_logit_scale: 0.01,
            epochs: 20,
            ..Self::reference()
        }
    }
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("dataset has {pairs} pairs, fewer than the batch size {batch}; use a smaller batch")]
    TooSmall { pairs: usize, batch: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    /// Loss per step, before the update.
    pub losses: Vec<f64>,
    pub steps: usize,
    pub final_logit_scale: f64,
}

impl TrainingLog {
    /// Mean of the first and of the last `n` losses.
    pub fn head_tail_means(&self, n: usize) -> (f64, f64) {
        let n = n.min(self.losses.len()).max(1);
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len().max(1) as f64;
        (mean(&self.losses[..n.min(self.losses.len())]), mean(&self.losses[self.losses.len().saturating_sub(n)..]))
    }
}

/// Batches of `size` indices in which no rule text repeats, so that every
/// in-batch negative is a different rule. Leftovers that cannot fill a batch
/// without a repeat are carried to the next one.
fn distinct_batches<K: Eq + std::hash::Hash>(order: &[usize], size: usize, key: impl Fn(usize) -> K) -> Vec<Vec<usize>> {
    let mut queue: VecDeque<usize> = order.iter().copied().collect();
    let mut out = Vec::new();
    while !queue.is_empty() {
        let mut batch = Vec::with_capacity(size);
        let mut keys = HashSet::new();
        let mut deferred = VecDeque::new();
        while batch.len() < size {
            let Some(i) = queue.pop_front() else { break };
            if keys.insert(key(i)) {
                batch.push(i);
            } else {
                deferred.push_back(i);
            }
        }
        deferred.extend(queue);
        queue = deferred;
        if batch.len() < size && !queue.is_empty() && batch.len() < 2 {
            break;
        }
        out.push(batch);
        if out.last().is_some_and(|b| b.len() < size) {
            break;
        }
    }
    out
}

struct SideGrads {
    rows: BTreeMap<u32, Vec<f64>>,
    projection: Vec<f64>,
}

fn side_grads(enc: &HashedEncoder, side: Side, fwd: &[Forward], masks: &[Vec<f64>], dz: &Matrix) -> SideGrads {
    let d_in = enc.config.d_in;
    let d_out = enc.config.d_out;
    let proj = &enc.tower(side).projection;
    let mut dp = vec![0.0; d_in * d_out];
    dp.par_chunks_mut(d_out).enumerate().for_each(|(k, row)| {
        for (i, f) in fwd.iter().enumerate() {
            let x = f.pooled[k];
            if x != 0.0 {
                for (r, g) in row.iter_mut().zip(dz.row(i)) {
                    *r += x * g;
                }
            }
        }
    });
    let dpooled: Vec<Vec<f64>> = (0..fwd.len())
        .into_par_iter()
        .map(|i| {
            let g = dz.row(i);
            (0..d_in)
                .map(|k| dot(&proj[k * d_out..(k + 1) * d_out], g) * masks[i][k])
                .collect()
        })
        .collect();
    let mut rows: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for (f, dp_i) in fwd.iter().zip(&dpooled) {
        for &(b, w) in &f.features {
            let r = rows.entry(b).or_insert_with(|| vec![0.0; d_in]);
            for (x, g) in r.iter_mut().zip(dp_i) {
                *x += g * w;
            }
        }
    }
    SideGrads { rows, projection: dp }
}

fn sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn apply(enc: &mut HashedEncoder, side: Side, g: SideGrads, lr_rows: f64, lr_proj: f64, wd: f64, clip: f64) {
    for (b, grad) in g.rows {
        let init = if enc.tower(side).rows.contains_key(&b) {
            None
        } else {
            Some(enc.initial_row(side, b))
        };
        let row = enc.tower_mut(side).rows.entry(b).or_insert_with(|| init.expect("initialized"));
        for (p, gk) in row.iter_mut().zip(&grad) {
            *p -= lr_rows * clip * gk;
        }
    }
    let proj = &mut enc.tower_mut(side).projection;
    for (p, gk) in proj.iter_mut().zip(&g.projection) {
        *p -= lr_proj * (clip * gk + wd * *p);
    }
}

/// Contrastive training with per-group SGD, global-norm clipping, weight
/// decay on the projections (not on the sparse bucket tables) and dropout
/// on pooled features. Deterministic in `cfg.seed`.
pub fn train(pairs: &[TrainingPair], cfg: &TrainingConfig) -> Result<(HashedEncoder, TrainingLog), TrainError> {
    let b = cfg.batch_size;
    if b == 0 {
        return Err(TrainError::Config("batch_size must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&cfg.dropout) {
        return Err(TrainError::Config(format!("dropout {} outside [0, 1)", cfg.dropout)));
    }
    if pairs.len() < b {
        return Err(TrainError::TooSmall {
            pairs: pairs.len(),
            batch: b,
        });
    }
    let mut enc = HashedEncoder::new(cfg.encoder, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut log = TrainingLog::default();
    let d_in = cfg.encoder.d_in;
    let keep = 1.0 - cfg.dropout;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng);
        for batch in distinct_batches(&order, b, |i| pairs[i].rule.as_str()) {
            if batch.len() < 2 && epoch > 0 {
                continue;
            }
            let mask = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                (0..d_in)
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect()
            };
            let mu: Vec<Vec<f64>> = batch.iter().map(|_| mask(&mut rng)).collect();
            let mv: Vec<Vec<f64>> = batch.iter().map(|_| mask(&mut rng)).collect();
            let fu = batch
                .par_iter()
                .zip(&mu)
                .map(|(&i, m)| enc.forward(Side::Rule, &pairs[i].rule, Some(m)))
                .collect::<Result<Vec<_>, _>>()?;
            let fv = batch
                .par_iter()
                .zip(&mv)
                .map(|(&i, m)| enc.forward(Side::Sentence, pairs[i].sentence.as_str(), Some(m)))
                .collect::<Result<Vec<_>, _>>()?;
            let zu = Matrix::from_rows(&fu.iter().map(|f| f.raw.clone()).collect::<Vec<_>>());
            let zv = Matrix::from_rows(&fv.iter().map(|f| f.raw.clone()).collect::<Vec<_>>());
            let lg = loss_gradients(&zu, &zv, enc.logit_scale)?;
            log.losses.push(lg.loss);
            let gu = side_grads(&enc, Side::Rule, &fu, &mu, &lg.d_u);
            let gv = side_grads(&enc, Side::Sentence, &fv, &mv, &lg.d_v);
            let norm = (gu.rows.values().map(|r| sq(r)).sum::<f64>()
                + gv.rows.values().map(|r| sq(r)).sum::<f64>()
                + sq(&gu.projection)
                + sq(&gv.projection)
                + lg.d_log_scale * lg.d_log_scale)
                .sqrt();
            let clip = if norm > cfg.grad_clip { cfg.grad_clip / norm } else { 1.0 };
            apply(&mut enc, Side::Rule, gu, cfg.lr_rule, cfg.lr_projection, cfg.weight_decay, clip);
            apply(&mut enc, Side::Sentence, gv, cfg.lr_sentence, cfg.lr_projection, cfg.weight_decay, clip);
            enc.logit_scale = (enc.logit_scale - cfg.lr_logit_scale * clip * lg.d_log_scale).clamp(0.0, 100f64.ln());
            log.steps += 1;
        }
    }
    log.final_logit_scale = enc.logit_scale;
    Ok((enc, log))
}

/// What a rule says regardless of traversal direction: its tokens with
/// `<`/`>` stripped, sorted. Rules that differ only in direction are
/// indistinguishable from the marked sentence alone.
fn content_key(rule: &str) -> Vec<String> {
    let mut toks: Vec<String> = rule
        .split_whitespace()
        .map(|t| t.trim_start_matches(['<', '>']).to_lowercase())
        .collect();
    toks.sort();
    toks
}

/// Full candidate sets of `size` pairs with pairwise-distinct rule content,
/// drawn in a seeded order.
pub fn retrieval_batches(pairs: &[TrainingPair], size: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let keys: Vec<Vec<String>> = pairs.iter().map(|p| content_key(&p.rule)).collect();
    distinct_batches(&order, size, |i| keys[i].clone())
        .into_iter()
        .filter(|b| b.len() == size)
        .collect()
}

/// Fraction of rules whose own sentence is the most similar one within its
/// candidate set.
pub fn retrieval_accuracy(enc: &dyn Embedder, pairs: &[TrainingPair], size: usize, seed: u64) -> Result<f64, EmbedError> {
    let batches = retrieval_batches(pairs, size, seed);
    let mut correct = 0usize;
    let mut total = 0usize;
    for batch in batches {
        let us = batch
            .par_iter()
            .map(|&i| enc.embed_rule(&pairs[i].rule))
            .collect::<Result<Vec<_>, _>>()?;
        let vs = batch
            .par_iter()
            .map(|&i| enc.embed_sentence(pairs[i].sentence.as_str()))
            .collect::<Result<Vec<_>, _>>()?;
        for (i, u) in us.iter().enumerate() {
            let best = vs
                .iter()
                .enumerate()
                .map(|(j, v)| (j, dot(u, v)))
                .fold((usize::MAX, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
            correct += usize::from(best.0 == i);
            total += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { correct as f64 / total as f64 })
}
