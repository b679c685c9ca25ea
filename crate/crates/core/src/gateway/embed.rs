//! Deterministic token-hashing embedder.
//!
//! Text is lowercased, split on non-alphanumeric characters, and every token
//! is hashed (seeded FNV-1a, 64 bit) into one of `dimension` buckets. Bucket
//! counts are L2-normalized. The seed is stored with the repository so that
//! relevance values are reproducible across runs and machines.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{ProblemFeatures, ProblemStatement};

pub const DEFAULT_DIMENSION: usize = 256;
pub const DEFAULT_SEED: u64 = 0x4d45_5448_4f44;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Embedder {
    pub seed: u64,
    pub dimension: usize,
}

impl Default for Embedder {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            dimension: DEFAULT_DIMENSION,
        }
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn token_bag(text: &str) -> BTreeMap<String, u32> {
    let mut bag = BTreeMap::new();
    for token in tokenize(text) {
        *bag.entry(token).or_insert(0) += 1;
    }
    bag
}

/// Scales `v` to unit length in place. Zero vectors are left untouched.
pub fn l2_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Raw cosine similarity in `[-1, 1]`; 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

impl Embedder {
    pub fn new(seed: u64, dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { seed, dimension }
    }

    pub fn bucket(&self, token: &str) -> usize {
        let mut h = FNV_OFFSET;
        for byte in self.seed.to_le_bytes().iter().chain(token.as_bytes()) {
            h ^= u64::from(*byte);
            h = h.wrapping_mul(FNV_PRIME);
        }
        (h % self.dimension as u64) as usize
    }

    pub fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dimension];
        for token in tokenize(text) {
            v[self.bucket(&token)] += 1.0;
        }
        l2_normalize(&mut v);
        v
    }

    pub fn features(&self, text: &str) -> ProblemFeatures {
        ProblemFeatures {
            vector: self.embed(text),
            tokens: token_bag(text),
        }
    }

    pub fn problem(&self, text: &str) -> ProblemStatement {
        ProblemStatement {
            text: text.to_string(),
            features: self.features(text),
        }
    }
}
