use std::collections::HashMap;
use std::path::Path;

use bipo_tensor::{ParamStore, Rng, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{read_file, CoreError, Result};
use crate::nn::{Embedding, Linear};

/// Word list of the text encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct TextVocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl TextVocab {
    pub fn new(words: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(CoreError::invalid(format!("duplicate vocabulary word `{w}`")));
            }
        }
        Ok(Self { words, index })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn encode(&self, words: &[String]) -> Result<Vec<usize>> {
        if words.is_empty() {
            return Err(CoreError::invalid("empty text"));
        }
        words
            .iter()
            .map(|w| {
                self.index
                    .get(w.as_str())
                    .copied()
                    .ok_or_else(|| CoreError::invalid(format!("unknown word `{w}`")))
            })
            .collect()
    }

    /// Lower-cases and splits on whitespace before encoding.
    pub fn encode_str(&self, text: &str) -> Result<Vec<usize>> {
        let words: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
        self.encode(&words)
    }
}

/// Conditioning text for one example.
#[derive(Debug, Clone, PartialEq)]
pub enum TextInput {
    /// Word ids into the model vocabulary.
    Words(Vec<usize>),
    /// A precomputed external sentence embedding.
    Vector(Vec<f64>),
}

/// Precomputed sentence embeddings keyed by text, loaded from JSON
/// `{"dim": d, "entries": {"text": [..], ...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalEmbeddings {
    pub dim: usize,
    pub entries: HashMap<String, Vec<f64>>,
}

impl ExternalEmbeddings {
    pub fn load(path: &Path) -> Result<Self> {
        let e: Self = serde_json::from_slice(&read_file(path)?)?;
        if let Some((t, v)) = e.entries.iter().find(|(_, v)| v.len() != e.dim) {
            return Err(CoreError::Parse(format!(
                "embedding for `{t}` has {} values, expected {}",
                v.len(),
                e.dim
            )));
        }
        Ok(e)
    }

    pub fn lookup(&self, text: &str) -> Result<TextInput> {
        self.entries
            .get(text)
            .map(|v| TextInput::Vector(v.clone()))
            .ok_or_else(|| CoreError::invalid(format!("no external embedding for `{text}`")))
    }
}

/// Word embedding, mean pooling and a linear projection; optionally a second
/// projection for external embeddings.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    words: Embedding,
    proj: Linear,
    external: Option<(usize, Linear)>,
}

impl TextEncoder {
    pub fn new(
        store: &mut ParamStore,
        vocab: usize,
        dim: usize,
        external_dim: Option<usize>,
        rng: &mut Rng,
    ) -> Result<Self> {
        let words = Embedding::new(store, "text.words", vocab, dim, 1.0, rng)?;
        let proj = Linear::new(store, "text.proj", dim, dim, rng)?;
        let external = match external_dim {
            Some(e) => Some((e, Linear::new(store, "text.external", e, dim, rng)?)),
            None => None,
        };
        Ok(Self { words, proj, external })
    }

    /// `[B, dim]`, one row per text. All inputs must be of the same kind.
    pub fn forward(&self, tape: &Tape, store: &ParamStore, texts: &[&TextInput]) -> Result<Var> {
        if texts.is_empty() {
            return Err(CoreError::invalid("no texts to encode"));
        }
        match texts[0] {
            TextInput::Words(_) => {
                let mut ids = Vec::new();
                let mut segments = Vec::with_capacity(texts.len());
                for t in texts {
                    let TextInput::Words(w) = t else {
                        return Err(CoreError::invalid("mixed text input kinds in one batch"));
                    };
                    if w.is_empty() {
                        return Err(CoreError::invalid("empty text"));
                    }
                    segments.push((ids.len(), w.len()));
                    ids.extend_from_slice(w);
                }
                let vocab = store.get(self.words.table).rows();
                if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
                    return Err(CoreError::invalid(format!("word id {bad} outside vocabulary of {vocab}")));
                }
                let e = self.words.forward(tape, store, &ids)?;
                let pooled = tape.segment_mean(e, &segments)?;
                self.proj.forward(tape, store, pooled)
            }
            TextInput::Vector(_) => {
                let Some((dim, lin)) = &self.external else {
                    return Err(CoreError::invalid("model was built without an external text projection"));
                };
                let mut data = Vec::with_capacity(texts.len() * dim);
                for t in texts {
                    let TextInput::Vector(v) = t else {
                        return Err(CoreError::invalid("mixed text input kinds in one batch"));
                    };
                    if v.len() != *dim {
                        return Err(CoreError::invalid(format!("external embedding has {} values, expected {dim}", v.len())));
                    }
                    data.extend_from_slice(v);
                }
                let x = tape.constant(Tensor::new(vec![texts.len(), *dim], data)?);
                lin.forward(tape, store, x)
            }
        }
    }
}
