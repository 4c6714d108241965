//! Sentence encoders.
//!
//! [`Encoder`] is the plug point for embedding models. The bundled
//! [`HashBagEncoder`] ("hash-bag v1") is a signed feature-hashing encoder:
//!
//! 1. lowercase the text and take maximal runs of alphanumerics as tokens;
//! 2. features are the unigrams plus adjacent bigrams keyed `"a_b"`;
//! 3. each feature is hashed with 64-bit FNV-1a over its UTF-8 bytes;
//!    `hash % dim` picks the slot and the top bit picks the sign;
//! 4. the accumulated vector is L2-normalized.
//!
//! Everything is integer arithmetic until the final normalization, so output
//! is bit-identical across runs, threads, and platforms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_DIM: usize = 512;

const FNV_OFFSET_BASIS: u64 = 14_695_981_039_346_656_037;
const FNV_PRIME: u64 = 1_099_511_628_211;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncoderError {
    #[error("text is empty")]
    EmptyText,
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("features cancel to the zero vector")]
    ZeroVector,
    #[error("dimension must be in 1..=65535, got {0}")]
    BadDimension(usize),
}

/// Identity of an embedding model. Vectors from different specs are never
/// compared.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub name: String,
    pub dim: usize,
    pub version: String,
}

/// A unit-norm embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    values: Vec<f32>,
}

impl Embedding {
    /// Wrap raw values. The caller is responsible for unit norm; use
    /// [`Embedding::normalized`] otherwise.
    pub fn from_values(values: Vec<f32>) -> Self {
        Self { values }
    }

    pub fn normalized(values: &[f64]) -> Result<Self, EncoderError> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(EncoderError::ZeroVector);
        }
        Ok(Self { values: values.iter().map(|v| (v / norm) as f32).collect() })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }
}

/// Dot product of two unit vectors.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f32, EncoderError> {
    if a.dim() != b.dim() {
        return Err(EncoderError::DimMismatch { left: a.dim(), right: b.dim() });
    }
    Ok(dot(a.values(), b.values()))
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    let sum: f64 = a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum();
    sum.clamp(-1.0, 1.0) as f32
}

pub trait Encoder: Send + Sync {
    fn spec(&self) -> &EncoderSpec;
    fn embed(&self, text: &str) -> Result<Embedding, EncoderError>;
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET_BASIS, |hash, &b| (hash ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Lowercased maximal alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone)]
pub struct HashBagEncoder {
    spec: EncoderSpec,
}

impl HashBagEncoder {
    pub const NAME: &'static str = "hash-bag";
    pub const VERSION: &'static str = "1";

    pub fn new(dim: usize) -> Result<Self, EncoderError> {
        if dim == 0 || dim > usize::from(u16::MAX) {
            return Err(EncoderError::BadDimension(dim));
        }
        Ok(Self {
            spec: EncoderSpec { name: Self::NAME.into(), dim, version: Self::VERSION.into() },
        })
    }

    fn accumulate(&self, feature: &str, acc: &mut [i64]) {
        let h = fnv1a64(feature.as_bytes());
        let slot = (h % self.spec.dim as u64) as usize;
        acc[slot] += if h >> 63 == 0 { 1 } else { -1 };
    }
}

impl Default for HashBagEncoder {
    fn default() -> Self {
        Self::new(DEFAULT_DIM).expect("default dim is valid")
    }
}

impl Encoder for HashBagEncoder {
    fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    fn embed(&self, text: &str) -> Result<Embedding, EncoderError> {
        if text.trim().is_empty() {
            return Err(EncoderError::EmptyText);
        }
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(EncoderError::EmptyText);
        }
        let mut acc = vec![0i64; self.spec.dim];
        for token in &tokens {
            self.accumulate(token, &mut acc);
        }
        for pair in tokens.windows(2) {
            self.accumulate(&format!("{}_{}", pair[0], pair[1]), &mut acc);
        }
        let values: Vec<f64> = acc.into_iter().map(|v| v as f64).collect();
        Embedding::normalized(&values)
    }
}
