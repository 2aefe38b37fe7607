//! Hashed sparse feature vectors shared by the native scorers.

use std::collections::BTreeMap;

/// Sparse feature vector: sorted, de-duplicated `(index, value)` pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseVec(pub Vec<(u32, f64)>);

impl SparseVec {
    pub fn dot(&self, weights: &[f64]) -> f64 {
        self.0.iter().map(|&(i, v)| weights[i as usize] * v).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|(_, v)| v * v).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(u32, f64)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// 64-bit FNV-1a. Stable across platforms and compiler versions, which keeps
/// saved models valid.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Accumulates named features into a hashed vector of `2^bits` slots.
#[derive(Debug)]
pub struct FeatureHasher {
    bits: u32,
    acc: BTreeMap<u32, f64>,
}

impl FeatureHasher {
    pub fn new(bits: u32) -> Self {
        FeatureHasher {
            bits,
            acc: BTreeMap::new(),
        }
    }

    pub fn dim(bits: u32) -> usize {
        1usize << bits
    }

    pub fn add(&mut self, name: &str, value: f64) {
        let idx = (fnv1a(name.as_bytes()) & ((1u64 << self.bits) - 1)) as u32;
        *self.acc.entry(idx).or_insert(0.0) += value;
    }

    pub fn finish(self) -> SparseVec {
        SparseVec(self.acc.into_iter().filter(|(_, v)| *v != 0.0).collect())
    }

    /// Finishes with unit L2 norm (empty vectors stay empty).
    pub fn finish_normalized(self) -> SparseVec {
        let mut v = self.finish();
        let n = v.norm_sq().sqrt();
        if n > 0.0 {
            for (_, x) in v.0.iter_mut() {
                *x /= n;
            }
        }
        v
    }
}
