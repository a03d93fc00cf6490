//! Deterministic text embeddings: a feature-hash embedder with an optional
//! precomputed token table layered on top.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::math;
use crate::rng::{derive_seed, normal, rng_from_seed};
use crate::text::tokenize;

/// Token used for empty input.
pub const EMPTY_TOKEN: &str = "<empty>";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbedError {
    #[error("line {line}: token {token:?} has {found} values, expected {expected}")]
    Dimension { line: usize, token: String, expected: usize, found: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddingSequence {
    pub tokens: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
    pub pooled: Vec<f64>,
    /// Set when the input had no tokens and the sentinel was emitted.
    pub empty: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedder {
    dim: usize,
    seed: u64,
    table: BTreeMap<String, Vec<f64>>,
}

impl Embedder {
    /// Pure hash embedder. Panics when `dim == 0`.
    pub fn hash(dim: usize, seed: u64) -> Embedder {
        assert!(dim > 0, "embedding dimension must be positive");
        Embedder { dim, seed, table: BTreeMap::new() }
    }

    /// Hash embedder overridden by `entries`; every entry must have `dim` values.
    pub fn with_table(
        dim: usize,
        seed: u64,
        entries: impl IntoIterator<Item = (String, Vec<f64>)>,
    ) -> Result<Embedder, EmbedError> {
        let mut e = Embedder::hash(dim, seed);
        for (i, (token, v)) in entries.into_iter().enumerate() {
            if v.len() != dim {
                return Err(EmbedError::Dimension { line: i + 1, token, expected: dim, found: v.len() });
            }
            e.table.insert(token, v);
        }
        Ok(e)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn table_len(&self) -> usize {
        self.table.len()
    }

    /// Unit vector for `token` from its seeded stream.
    pub fn hash_vector(&self, token: &str) -> Vec<f64> {
        let mut rng = rng_from_seed(derive_seed(self.seed, token));
        let mut v: Vec<f64> = (0..self.dim).map(|_| normal(&mut rng)).collect();
        let n = math::norm(&v);
        v.iter_mut().for_each(|x| *x /= n);
        v
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        match self.table.get(token) {
            Some(v) => v.clone(),
            None => self.hash_vector(token),
        }
    }

    pub fn embed_text(&self, text: &str) -> TokenEmbeddingSequence {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return TokenEmbeddingSequence {
                tokens: vec![EMPTY_TOKEN.to_string()],
                vectors: vec![vec![0.0; self.dim]],
                pooled: vec![0.0; self.dim],
                empty: true,
            };
        }
        let vectors: Vec<Vec<f64>> = tokens.iter().map(|t| self.token_vector(t)).collect();
        let pooled = mean(&vectors, self.dim);
        TokenEmbeddingSequence { tokens, vectors, pooled, empty: false }
    }

    /// Pooled vector only.
    pub fn embed_pooled(&self, text: &str) -> Vec<f64> {
        self.embed_text(text).pooled
    }
}

fn mean(vectors: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for v in vectors {
        for (o, x) in out.iter_mut().zip(v) {
            *o += x;
        }
    }
    let n = vectors.len() as f64;
    out.iter_mut().for_each(|x| *x /= n);
    out
}

/// Parses the precomputed-vector text format: one `token v1 ... vD` line per
/// token, blank lines and `#` comments ignored.
pub fn parse_precomputed(text: &str, dim: usize) -> Result<Vec<(String, Vec<f64>)>, EmbedError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let token = parts.next().unwrap().to_string();
        let values = parts
            .map(|p| p.parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| EmbedError::Parse { line: line_no, message: e.to_string() })?;
        if values.len() != dim {
            return Err(EmbedError::Dimension { line: line_no, token, expected: dim, found: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::Parse { line: line_no, message: "non-finite value".into() });
        }
        out.push((token, values));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_unit_norm() {
        let e = Embedder::hash(32, 3);
        let a = e.embed_text("Good morning!");
        assert_eq!(a, e.embed_text("good   morning"));
        assert_eq!(a.tokens, vec!["good", "morning"]);
        for v in &a.vectors {
            assert!((math::norm(v) - 1.0).abs() < 1e-12);
        }
        assert!(math::norm(&a.pooled) <= 1.0 + 1e-12);
    }

    #[test]
    fn single_token_pools_to_itself() {
        let e = Embedder::hash(16, 1);
        let s = e.embed_text("hello");
        assert_eq!(s.pooled, s.vectors[0]);
    }

    #[test]
    fn empty_text_gives_flagged_sentinel() {
        let s = Embedder::hash(8, 1).embed_text("  ?! ");
        assert!(s.empty);
        assert_eq!(s.tokens, vec![EMPTY_TOKEN]);
        assert_eq!(s.pooled, vec![0.0; 8]);
    }

    #[test]
    fn table_overrides_and_falls_back() {
        let text = "# comment\nhi 1 0 0 0\n\nyo 0 1 0 0\n";
        let entries = parse_precomputed(text, 4).unwrap();
        let e = Embedder::with_table(4, 9, entries).unwrap();
        assert_eq!(e.token_vector("hi"), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(e.token_vector("zz"), Embedder::hash(4, 9).token_vector("zz"));
        let err = parse_precomputed(text, 8).unwrap_err();
        assert!(matches!(err, EmbedError::Dimension { line: 2, expected: 8, found: 4, .. }));
    }
}
