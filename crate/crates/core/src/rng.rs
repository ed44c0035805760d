//! Seeded, counter-addressable random streams.
//!
//! Index draws come from ChaCha8 keyed by `(seed, stream)`; element `k` of a
//! stream is the `k`-th 64-bit output, so any position can be read in O(1)
//! and independent Monte Carlo runs simply use different stream ids.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Stream ids at or above this value are reserved for noise generation.
pub const NOISE_STREAM_BASE: u64 = 1 << 63;

fn chacha(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Maps a uniform 64-bit word onto `0..n` by a 128-bit multiply-high.
fn to_index(word: u64, n: usize) -> usize {
    ((word as u128 * n as u128) >> 64) as usize
}

/// Uniform i.i.d. indices in `0..n` (zero-based row indices).
#[derive(Clone, Debug)]
pub struct IndexStream {
    rng: ChaCha8Rng,
    seed: u64,
    stream: u64,
    n: usize,
}

impl IndexStream {
    pub fn new(seed: u64, n: usize) -> Self {
        Self::with_stream(seed, 0, n)
    }

    pub fn with_stream(seed: u64, stream: u64, n: usize) -> Self {
        assert!(n >= 1, "index stream needs n >= 1");
        Self {
            rng: chacha(seed, stream),
            seed,
            stream,
            n,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Element `k` of the stream, independent of the current position.
    pub fn at(&self, k: u64) -> usize {
        let mut r = chacha(self.seed, self.stream);
        r.set_word_pos(2 * k as u128);
        to_index(r.next_u64(), self.n)
    }

    pub fn take_vec(&mut self, len: usize) -> Vec<usize> {
        self.by_ref().take(len).collect()
    }
}

impl Iterator for IndexStream {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        Some(to_index(self.rng.next_u64(), self.n))
    }
}

/// Standard normal samples by the Box–Muller transform on a ChaCha8 stream.
pub struct GaussianStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self {
            rng: chacha(seed, NOISE_STREAM_BASE | stream),
            spare: None,
        }
    }

    fn unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn sample(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.unit();
        let u2 = self.unit();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}
