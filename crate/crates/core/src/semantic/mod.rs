//! Semantic rule matching: a dual encoder mapping rules and entity-marked
//! sentences to unit vectors compared by cosine similarity.

mod encoder;
mod loss;
mod train;

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

pub use encoder::{features, weighted_features, EncoderConfig, Forward, HashedEncoder, Side, Tower};
pub use loss::{contrastive_loss, dot, loss_gradients, LossGradients, Matrix};
pub use train::{retrieval_accuracy, retrieval_batches, train, TrainError, TrainingConfig, TrainingLog};

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("text embeds to the zero vector")]
    Degenerate,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("model file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported model format {format:?} version {version}")]
    Format { format: String, version: u32 },
}

/// Maps rule text and marked sentence text to unit vectors of width `dim`.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed_rule(&self, text: &str) -> Result<Vec<f64>, EmbedError>;
    fn embed_sentence(&self, text: &str) -> Result<Vec<f64>, EmbedError>;

    /// Cosine similarity of a rule and a marked sentence.
    fn similarity(&self, rule: &str, sentence: &str) -> Result<f64, EmbedError> {
        Ok(dot(&self.embed_rule(rule)?, &self.embed_sentence(sentence)?).clamp(-1.0, 1.0))
    }
}

impl<E: Embedder + ?Sized> Embedder for Arc<E> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn embed_rule(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        (**self).embed_rule(text)
    }

    fn embed_sentence(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        (**self).embed_sentence(text)
    }
}

/// Memoizes embeddings by text. Safe to share across threads.
#[derive(Debug)]
pub struct CachedEmbedder<E> {
    inner: E,
    rules: RwLock<HashMap<String, Arc<Vec<f64>>>>,
    sentences: RwLock<HashMap<String, Arc<Vec<f64>>>>,
}

impl<E: Embedder> CachedEmbedder<E> {
    pub fn new(inner: E) -> Self {
        Self {
            inner,
            rules: RwLock::default(),
            sentences: RwLock::default(),
        }
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    fn cached(
        map: &RwLock<HashMap<String, Arc<Vec<f64>>>>,
        text: &str,
        f: impl FnOnce(&str) -> Result<Vec<f64>, EmbedError>,
    ) -> Result<Arc<Vec<f64>>, EmbedError> {
        if let Some(v) = map.read().expect("cache lock").get(text) {
            return Ok(v.clone());
        }
        let v = Arc::new(f(text)?);
        map.write().expect("cache lock").insert(text.to_string(), v.clone());
        Ok(v)
    }

    pub fn rule_vec(&self, text: &str) -> Result<Arc<Vec<f64>>, EmbedError> {
        Self::cached(&self.rules, text, |t| self.inner.embed_rule(t))
    }

    pub fn sentence_vec(&self, text: &str) -> Result<Arc<Vec<f64>>, EmbedError> {
        Self::cached(&self.sentences, text, |t| self.inner.embed_sentence(t))
    }
}

impl<E: Embedder> Embedder for CachedEmbedder<E> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed_rule(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        Ok(self.rule_vec(text)?.as_ref().clone())
    }

    fn embed_sentence(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        Ok(self.sentence_vec(text)?.as_ref().clone())
    }

    fn similarity(&self, rule: &str, sentence: &str) -> Result<f64, EmbedError> {
        Ok(dot(&self.rule_vec(rule)?, &self.sentence_vec(sentence)?).clamp(-1.0, 1.0))
    }
}

const MODEL_FORMAT: &str = "softrules-hashed-encoder";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    encoder: HashedEncoder,
}

pub fn model_to_json(enc: &HashedEncoder) -> Result<String, EmbedError> {
    Ok(serde_json::to_string(&ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        encoder: enc.clone(),
    })?)
}

pub fn model_from_json(text: &str) -> Result<HashedEncoder, EmbedError> {
    let f: ModelFile = serde_json::from_str(text)?;
    if f.format != MODEL_FORMAT || f.version != MODEL_VERSION {
        return Err(EmbedError::Format {
            format: f.format,
            version: f.version,
        });
    }
    Ok(f.encoder)
}

pub fn save_model(path: impl AsRef<Path>, enc: &HashedEncoder) -> Result<(), EmbedError> {
    let path = path.as_ref();
    fs::write(path, model_to_json(enc)?).map_err(|source| EmbedError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<HashedEncoder, EmbedError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| EmbedError::Io {
        path: path.display().to_string(),
        source,
    })?;
    model_from_json(&text)
}
