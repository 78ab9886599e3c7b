//! Deterministic random number generation.
//!
//! A xoshiro256++ generator seeded through SplitMix64. One root seed fans
//! out to independent per-purpose streams (init, sampling, noise,
//! exploration, ...) keyed by a tag string, so toggling one feature never
//! shifts another feature's draws.

use crate::error::{MladError, Result};

#[derive(Debug, Clone)]
pub struct Rng {
    s: [u64; 4],
    /// Spare Box-Muller deviate.
    cached_normal: Option<f64>,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl Rng {
    pub fn seed_from(seed: u64) -> Self {
        let mut sm = seed;
        let mut s = [0u64; 4];
        for v in s.iter_mut() {
            *v = splitmix64(&mut sm);
        }
        // all-zero state is invalid for xoshiro
        if s.iter().all(|&v| v == 0) {
            s[0] = 0x9E3779B97F4A7C15;
        }
        Rng { s, cached_normal: None }
    }

    /// Stream derived from a root seed and a purpose tag.
    pub fn stream(root_seed: u64, tag: &str) -> Self {
        Rng::seed_from(root_seed ^ fnv1a64(tag.as_bytes()))
    }

    /// Child stream of this generator's root identity; convenience for
    /// deriving sub-streams from an already-derived purpose.
    pub fn substream(root_seed: u64, tag: &str, index: u64) -> Self {
        Rng::seed_from(root_seed ^ fnv1a64(tag.as_bytes()) ^ index.wrapping_mul(0xA24BAED4963EE407))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.s;
        let result = s[0]
            .wrapping_add(s[3])
            .rotate_left(23)
            .wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // rejection-free modulo bias is irrelevant at these ranges, but
        // use Lemire's multiply-shift anyway: it is exact and cheap.
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal deviate via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.cached_normal.take() {
            return z;
        }
        // u1 in (0, 1] so the log is finite
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.cached_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }

    /// Seeded permutation of 0..n.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }

    /// `k` distinct indices from 0..n (permutation prefix).
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut p = self.permutation(n);
        p.truncate(k);
        p
    }
}

/// Elementwise Gaussian draw `mean + std .* N(0, 1)`.
///
/// Always consumes exactly `mean.len()` deviates regardless of the std
/// values, so draw alignment across configurations is stable.
pub fn gaussian_sample(rng: &mut Rng, mean: &[f64], std: &[f64]) -> Result<Vec<f64>> {
    if mean.len() != std.len() {
        return Err(MladError::dim("gaussian_sample mean/std length mismatch"));
    }
    if let Some(s) = std.iter().find(|s| **s < 0.0 || !s.is_finite()) {
        return Err(MladError::validation(format!("negative or non-finite std {s}")));
    }
    Ok(mean
        .iter()
        .zip(std)
        .map(|(&m, &s)| m + s * rng.normal())
        .collect())
}
