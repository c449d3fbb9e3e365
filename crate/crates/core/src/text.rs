//! Caption embeddings behind a pluggable encoder interface.
//!
//! The default `hash` encoder is lexical: captions are lowercased, split on
//! whitespace and punctuation, and every token is mapped by seeded XXH64 into
//! a virtual `vocab × dim` table whose rows are drawn from a ChaCha stream
//! keyed by the row index. Nothing depends on process-local hashing, so
//! embeddings are identical across runs and platforms.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh64::xxh64;

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const HASH_ENCODER: &str = "hash";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextConfig {
    pub encoder: String,
    /// Token slots `L`.
    pub slots: usize,
    /// Embedding width `D`.
    pub dim: usize,
    pub table_seed: u64,
    /// Rows in the virtual embedding table.
    pub vocab: u64,
}

impl Default for TextConfig {
    fn default() -> Self {
        Self { encoder: HASH_ENCODER.into(), slots: 32, dim: 64, table_seed: 0x7E57, vocab: 1 << 32 }
    }
}

/// `L×D` token embeddings plus slot validity. Masked slots are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding<F> {
    pub tokens: Matrix<F>,
    pub mask: Vec<bool>,
}

impl<F: Real> TextEmbedding<F> {
    pub fn valid_slots(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Rows of the valid slots only.
    pub fn valid_tokens(&self) -> Matrix<F> {
        let d = self.tokens.cols;
        let mut data = Vec::new();
        for (i, &m) in self.mask.iter().enumerate() {
            if m {
                data.extend_from_slice(self.tokens.row(i));
            }
        }
        Matrix::new(data.len() / d.max(1), d, data)
    }

    pub fn cast<G: Real>(&self) -> TextEmbedding<G> {
        TextEmbedding { tokens: self.tokens.cast(), mask: self.mask.clone() }
    }
}

/// Encoders must return finite `slots×dim` embeddings with zeroed masked slots.
pub trait TextEncoder: Send + Sync {
    fn encode(&self, caption: &str, cfg: &TextConfig) -> Result<TextEmbedding<f64>>;
}

/// Lowercased alphanumeric tokens.
pub fn tokenize(caption: &str) -> Vec<String> {
    caption.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

#[derive(Debug, Default, Clone, Copy)]
pub struct HashEncoder;

impl HashEncoder {
    /// Table row for a token.
    pub fn row_index(token: &str, cfg: &TextConfig) -> u64 {
        xxh64(token.as_bytes(), cfg.table_seed) % cfg.vocab.max(1)
    }

    fn row(index: u64, cfg: &TextConfig) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(xxh64(&index.to_le_bytes(), cfg.table_seed ^ 0x5EED));
        (0..cfg.dim).map(|_| StandardNormal.sample(&mut rng)).collect()
    }
}

impl TextEncoder for HashEncoder {
    fn encode(&self, caption: &str, cfg: &TextConfig) -> Result<TextEmbedding<f64>> {
        let tokens = tokenize(caption);
        if tokens.is_empty() {
            return Err(Error::Input("caption is empty after normalization".into()));
        }
        let mut data = vec![0.0; cfg.slots * cfg.dim];
        let mut mask = vec![false; cfg.slots];
        for (slot, tok) in tokens.iter().take(cfg.slots).enumerate() {
            let row = Self::row(Self::row_index(tok, cfg), cfg);
            data[slot * cfg.dim..(slot + 1) * cfg.dim].copy_from_slice(&row);
            mask[slot] = true;
        }
        Ok(TextEmbedding { tokens: Matrix::new(cfg.slots, cfg.dim, data), mask })
    }
}

/// Name → encoder table, populated at startup and read-only afterwards.
#[derive(Clone)]
pub struct EncoderRegistry {
    encoders: BTreeMap<String, Arc<dyn TextEncoder>>,
}

impl Default for EncoderRegistry {
    fn default() -> Self {
        let mut encoders: BTreeMap<String, Arc<dyn TextEncoder>> = BTreeMap::new();
        encoders.insert(HASH_ENCODER.into(), Arc::new(HashEncoder));
        Self { encoders }
    }
}

impl EncoderRegistry {
    pub fn register(&mut self, name: &str, encoder: Arc<dyn TextEncoder>) -> Result<()> {
        if self.encoders.contains_key(name) {
            return Err(Error::Registration(name.into()));
        }
        self.encoders.insert(name.into(), encoder);
        Ok(())
    }

    pub fn names(&self) -> Vec<&str> {
        self.encoders.keys().map(String::as_str).collect()
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn TextEncoder>> {
        self.encoders.get(name).cloned().ok_or_else(|| Error::UnknownEncoder(name.into()))
    }

    /// Fails fast on an unknown encoder name.
    pub fn check(&self, cfg: &TextConfig) -> Result<()> {
        self.get(&cfg.encoder).map(|_| ())
    }

    pub fn encode_text<F: Real>(&self, caption: &str, cfg: &TextConfig) -> Result<TextEmbedding<F>> {
        let emb = self.get(&cfg.encoder)?.encode(caption, cfg)?;
        if emb.tokens.rows != cfg.slots || emb.tokens.cols != cfg.dim || emb.mask.len() != cfg.slots {
            return Err(Error::Shape(format!("encoder `{}` returned a mis-shaped embedding", cfg.encoder)));
        }
        if emb.tokens.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!("encoder `{}` returned non-finite values", cfg.encoder)));
        }
        Ok(emb.cast())
    }
}

/// Encodes with the default registry.
pub fn encode_text<F: Real>(caption: &str, cfg: &TextConfig) -> Result<TextEmbedding<F>> {
    EncoderRegistry::default().encode_text(caption, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_makes_case_and_spacing_irrelevant() {
        let cfg = TextConfig::default();
        let a: TextEmbedding<f64> = encode_text("A man", &cfg).unwrap();
        let b: TextEmbedding<f64> = encode_text("a  MAN", &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.valid_slots(), 2);
    }

    #[test]
    fn truncates_to_slot_count() {
        let cfg = TextConfig::default();
        let caption = (0..40).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let e: TextEmbedding<f32> = encode_text(&caption, &cfg).unwrap();
        assert_eq!(e.valid_slots(), 32);
    }

    #[test]
    fn masked_slots_are_zero() {
        let cfg = TextConfig::default();
        let e: TextEmbedding<f64> = encode_text("red circle", &cfg).unwrap();
        for (i, &m) in e.mask.iter().enumerate() {
            if !m {
                assert!(e.tokens.row(i).iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn empty_caption_is_rejected() {
        let cfg = TextConfig::default();
        assert!(matches!(encode_text::<f64>("  ,. ", &cfg), Err(Error::Input(_))));
    }

    #[test]
    fn test_vocabulary_has_no_row_collisions() {
        // 2^32 rows: the chance two given tokens share a row is 2^-32.
        let cfg = TextConfig::default();
        let words = [
            "the", "a", "red", "green", "blue", "yellow", "purple", "orange", "white", "cyan", "circle", "square", "diamond", "ring",
            "moving", "left", "right", "up", "down", "in", "place", "man", "woman", "dog",
        ];
        let rows: std::collections::BTreeSet<u64> = words.iter().map(|w| HashEncoder::row_index(w, &cfg)).collect();
        assert_eq!(rows.len(), words.len());
        let a: TextEmbedding<f64> = encode_text("the red circle", &cfg).unwrap();
        let b: TextEmbedding<f64> = encode_text("the blue circle", &cfg).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn embeddings_are_pinned() {
        // Guards cross-platform stability of the hash and the row stream.
        let cfg = TextConfig { slots: 2, dim: 3, ..TextConfig::default() };
        let e: TextEmbedding<f64> = encode_text("x", &cfg).unwrap();
        let again: TextEmbedding<f64> = encode_text("X!", &cfg).unwrap();
        assert_eq!(e, again);
        assert_eq!(HashEncoder::row_index("x", &cfg), xxh64(b"x", cfg.table_seed) % (1 << 32));
    }

    struct Constant;
    impl TextEncoder for Constant {
        fn encode(&self, _: &str, cfg: &TextConfig) -> Result<TextEmbedding<f64>> {
            let mut mask = vec![false; cfg.slots];
            mask[0] = true;
            let mut tokens = Matrix::zeros(cfg.slots, cfg.dim);
            tokens.data[0] = 1.0;
            Ok(TextEmbedding { tokens, mask })
        }
    }

    #[test]
    fn registry_dispatch_and_errors() {
        let mut reg = EncoderRegistry::default();
        assert_eq!(reg.names(), vec![HASH_ENCODER]);
        reg.register("constant", Arc::new(Constant)).unwrap();
        assert!(matches!(reg.register("constant", Arc::new(Constant)), Err(Error::Registration(_))));
        let cfg = TextConfig { encoder: "constant".into(), ..TextConfig::default() };
        let e: TextEmbedding<f64> = reg.encode_text("anything", &cfg).unwrap();
        assert_eq!(e.tokens.data[0], 1.0);
        let bad = TextConfig { encoder: "t5".into(), ..TextConfig::default() };
        assert!(matches!(reg.check(&bad), Err(Error::UnknownEncoder(_))));
    }
}
