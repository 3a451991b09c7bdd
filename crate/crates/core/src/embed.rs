//! Token embeddings: hashed character n-grams with an optional pretrained table.
//!
//! A token is wrapped as `<token>`, split into character n-grams, and each
//! n-gram is hashed with FNV-1a (64 bit) into one of `bucket_count` buckets.
//! Bucket vectors are pseudo-random but fixed by the embedder seed, and are
//! generated on demand rather than stored. The token vector is the
//! L2-normalized sum of its bucket vectors, so a misspelled token shares most
//! n-grams with the original and ends up close to it.

use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("embedding dimension mismatch: expected {expected}, found {found} (line {line})")]
    DimensionMismatch {
        expected: usize,
        found: usize,
        line: usize,
    },
    #[error("malformed embedding table line {0}")]
    MalformedLine(usize),
    #[error("invalid embedder configuration: {0}")]
    InvalidConfig(String),
}

/// Trims surrounding whitespace and lowercases; everything else is kept.
pub fn normalize_token(text: &str) -> String {
    text.trim().to_lowercase()
}

pub const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
pub const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Pretrained vectors keyed by normalized token.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entries: HashMap<String, Vec<f32>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            entries: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f32]> {
        self.entries.get(token).map(Vec::as_slice)
    }

    /// Inserts under the normalized token; the last insertion wins.
    pub fn insert(&mut self, token: &str, vector: Vec<f32>) -> Result<(), EmbedError> {
        if vector.len() != self.dim {
            return Err(EmbedError::DimensionMismatch {
                expected: self.dim,
                found: vector.len(),
                line: 0,
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::InvalidConfig(format!("non-finite vector for {token:?}")));
        }
        self.entries.insert(normalize_token(token), vector);
        Ok(())
    }
}

/// Parses a word2vec text file: an optional `count dim` header, then
/// `token v1 .. vd` per line.
pub fn parse_embedding_table(text: &str, expected_dim: usize) -> Result<EmbeddingTable, EmbedError> {
    let mut table = EmbeddingTable::new(expected_dim);
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.is_empty() {
            continue;
        }
        if line_no == 1 && parts.len() == 2 && parts.iter().all(|p| p.parse::<usize>().is_ok()) {
            let dim: usize = parts[1].parse().unwrap();
            if dim != expected_dim {
                return Err(EmbedError::DimensionMismatch {
                    expected: expected_dim,
                    found: dim,
                    line: line_no,
                });
            }
            continue;
        }
        let values = parts[1..]
            .iter()
            .map(|v| v.parse::<f32>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<f32>>>()
            .ok_or(EmbedError::MalformedLine(line_no))?;
        if values.len() != expected_dim {
            return Err(EmbedError::DimensionMismatch {
                expected: expected_dim,
                found: values.len(),
                line: line_no,
            });
        }
        table.entries.insert(normalize_token(parts[0]), values);
    }
    Ok(table)
}

pub fn load_embedding_table(path: &Path, expected_dim: usize) -> Result<EmbeddingTable, EmbedError> {
    let text = std::fs::read_to_string(path).map_err(|source| EmbedError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_embedding_table(&text, expected_dim)
}

/// Serializable embedder settings (the table itself is referenced by path).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub dim: usize,
    pub seed: u64,
    pub min_n: usize,
    pub max_n: usize,
    pub bucket_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table_path: Option<String>,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            dim: 32,
            seed: 0x5EED_0E3B,
            min_n: 3,
            max_n: 5,
            bucket_count: 1 << 20,
            table_path: None,
        }
    }
}

impl EmbedderConfig {
    pub fn with_dim(dim: usize) -> Self {
        EmbedderConfig {
            dim,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct Embedder {
    config: EmbedderConfig,
    table: Option<EmbeddingTable>,
}

impl Embedder {
    pub fn new(config: EmbedderConfig) -> Result<Self, EmbedError> {
        if config.dim == 0 {
            return Err(EmbedError::InvalidConfig("dim must be at least 1".into()));
        }
        if config.min_n == 0 || config.min_n > config.max_n {
            return Err(EmbedError::InvalidConfig(format!(
                "bad n-gram range {}..={}",
                config.min_n, config.max_n
            )));
        }
        if config.bucket_count == 0 {
            return Err(EmbedError::InvalidConfig("bucket_count must be positive".into()));
        }
        Ok(Embedder {
            config,
            table: None,
        })
    }

    /// Hashed-only embedder of dimension `dim` with default settings.
    pub fn hashed(dim: usize) -> Result<Self, EmbedError> {
        Embedder::new(EmbedderConfig::with_dim(dim))
    }

    /// Builds the embedder, loading `table_path` if the config names one.
    pub fn from_config(config: EmbedderConfig) -> Result<Self, EmbedError> {
        let table = match &config.table_path {
            Some(p) => Some(load_embedding_table(Path::new(p), config.dim)?),
            None => None,
        };
        let e = Embedder::new(config)?;
        match table {
            Some(t) => e.with_table(t),
            None => Ok(e),
        }
    }

    pub fn with_table(mut self, table: EmbeddingTable) -> Result<Self, EmbedError> {
        if table.dim() != self.config.dim {
            return Err(EmbedError::DimensionMismatch {
                expected: self.config.dim,
                found: table.dim(),
                line: 0,
            });
        }
        self.table = Some(table);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn config(&self) -> &EmbedderConfig {
        &self.config
    }

    pub fn table(&self) -> Option<&EmbeddingTable> {
        self.table.as_ref()
    }

    /// Character n-grams of `<token>` for every n in the configured range.
    pub fn ngrams(&self, normalized: &str) -> Vec<String> {
        let wrapped: Vec<char> = std::iter::once('<')
            .chain(normalized.chars())
            .chain(std::iter::once('>'))
            .collect();
        let mut out = Vec::new();
        for n in self.config.min_n..=self.config.max_n {
            if n > wrapped.len() {
                break;
            }
            for w in wrapped.windows(n) {
                out.push(w.iter().collect());
            }
        }
        out
    }

    pub fn bucket_of(&self, ngram: &str) -> u64 {
        fnv1a64(ngram.as_bytes()) % self.config.bucket_count
    }

    /// Adds the bucket's vector into `acc`.
    fn add_bucket(&self, bucket: u64, acc: &mut [f64]) {
        let scale = 1.0 / (self.config.dim as f64).sqrt();
        let mut rng = Rng::with_stream(self.config.seed, bucket);
        for a in acc.iter_mut() {
            *a += rng.next_signed() * scale;
        }
    }

    /// The (unnormalized) vector of one bucket.
    pub fn bucket_vector(&self, bucket: u64) -> Vec<f64> {
        let mut v = vec![0.0; self.config.dim];
        self.add_bucket(bucket, &mut v);
        v
    }

    pub fn embed_token(&self, text: &str) -> Vec<f32> {
        let token = normalize_token(text);
        let dim = self.config.dim;
        if token.is_empty() {
            return vec![0.0; dim];
        }
        if let Some(v) = self.table.as_ref().and_then(|t| t.get(&token)) {
            return v.to_vec();
        }
        let mut acc = vec![0.0f64; dim];
        for g in self.ngrams(&token) {
            self.add_bucket(self.bucket_of(&g), &mut acc);
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            acc.iter().map(|v| (v / norm) as f32).collect()
        } else {
            vec![0.0; dim]
        }
    }
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
