//! Hash-embedding text encoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tensor::Matrix;
use super::DiffusionError;
use crate::captioner::MAX_PROMPT_TOKENS;

/// Text conditioning: one row per token plus the mean-pooled row.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    pub tokens: Matrix,
    pub pooled: Matrix,
}

/// Embeds each lower-cased word by seeding a generator with its hash, then
/// adds a sinusoidal position code. A start token is always present, so the
/// empty prompt still yields one row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HashTextEncoder {
    pub dim: usize,
    pub max_tokens: usize,
}

impl Default for HashTextEncoder {
    fn default() -> Self {
        Self {
            dim: 32,
            max_tokens: MAX_PROMPT_TOKENS,
        }
    }
}

pub(crate) fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

impl HashTextEncoder {
    fn word_vector(&self, word: &str) -> Vec<f64> {
        let digest = Sha256::digest(word.as_bytes());
        let mut rng = ChaCha8Rng::from_seed(digest.into());
        Matrix::randn(1, self.dim, 1.0 / (self.dim as f64).sqrt(), &mut rng).data
    }

    pub fn encode(&self, text: &str) -> Result<TextEmbedding, DiffusionError> {
        let words = tokenize(text);
        if words.len() > self.max_tokens {
            return Err(DiffusionError::TooManyTokens {
                tokens: words.len(),
                limit: self.max_tokens,
            });
        }
        let mut rows = vec![self.word_vector("<start>")];
        rows.extend(words.iter().map(|w| self.word_vector(w)));
        let n = rows.len();
        let tokens = Matrix::from_fn(n, self.dim, |p, i| {
            let freq = 1.0 / 10_000f64.powf((i / 2 * 2) as f64 / self.dim as f64);
            let pos = if i % 2 == 0 { (p as f64 * freq).sin() } else { (p as f64 * freq).cos() };
            rows[p][i] + 0.1 * pos
        });
        let pooled = Matrix::from_fn(1, self.dim, |_, i| (0..n).map(|p| tokens.get(p, i)).sum::<f64>() / n as f64);
        Ok(TextEmbedding { tokens, pooled })
    }
}
