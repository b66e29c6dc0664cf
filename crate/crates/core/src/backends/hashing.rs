//! Deterministic feature-hashing text embedder.
//!
//! Maps character trigrams and whole words of the case-folded text into a
//! fixed number of signed buckets. It carries no semantics beyond surface
//! overlap, which is enough for offline runs and fixtures where names either
//! repeat exactly or are scripted explicitly.

use super::{BackendError, EmbedRequest, EmbedTransport};
use crate::types::name_key;

#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim: dim.max(2) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        let key = name_key(text);
        let mut v = vec![0.0; self.dim];
        let padded: Vec<char> = format!(" {key} ").chars().collect();
        for w in padded.windows(3) {
            let s: String = w.iter().collect();
            self.add(&mut v, &s, 1.0);
        }
        for word in key.split_whitespace() {
            self.add(&mut v, &format!("w:{word}"), 2.0);
        }
        if v.iter().all(|x| *x == 0.0) {
            v[0] = 1.0;
        }
        v
    }

    fn add(&self, v: &mut [f64], feature: &str, weight: f64) {
        let h = fnv1a(feature.as_bytes());
        let idx = (h % self.dim as u64) as usize;
        let sign = if (h >> 63) & 1 == 0 { 1.0 } else { -1.0 };
        v[idx] += sign * weight;
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(256)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl EmbedTransport for HashingEmbedder {
    fn embed(&self, request: &EmbedRequest) -> Result<Vec<Vec<f64>>, BackendError> {
        Ok(request.texts.iter().map(|t| self.vector(t)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{cosine, normalize};

    fn unit(e: &HashingEmbedder, s: &str) -> Vec<f64> {
        normalize(e.vector(s)).unwrap()
    }

    #[test]
    fn case_and_spacing_insensitive() {
        let e = HashingEmbedder::default();
        assert_eq!(e.vector("Time of Day"), e.vector("  time   of day "));
    }

    #[test]
    fn overlap_scores_higher_than_unrelated() {
        let e = HashingEmbedder::default();
        let a = unit(&e, "climbing gym");
        let b = unit(&e, "climbing");
        let c = unit(&e, "sunset beach");
        assert!(cosine(&a, &b) > cosine(&a, &c));
    }
}
