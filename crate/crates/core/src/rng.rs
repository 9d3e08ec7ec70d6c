//! Seeded, stream-separated random number generation.
//!
//! Every consumer of randomness (data generation, the server's score batch,
//! each worker, fault selection) owns its own stream keyed by
//! `(seed, stream id)`. Streams are ChaCha8 keystreams, so a given
//! `(seed, stream, draw index)` yields the same value on every platform.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Well-known stream ids.
pub mod streams {
    pub const TRAIN_DATA: u64 = 0;
    pub const TEST_DATA: u64 = 1;
    pub const INIT: u64 = 2;
    pub const SERVER: u64 = 3;
    pub const FAULT: u64 = 4;
    pub const ESTIMATE: u64 = 5;
    /// Worker `i` draws from stream `WORKER_BASE + i`.
    pub const WORKER_BASE: u64 = 1 << 16;

    pub fn worker(id: usize) -> u64 {
        WORKER_BASE + id as u64
    }
}

/// A deterministic random stream with a draw counter.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    stream: u64,
    draws: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            draws: 0,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Number of raw words drawn from this stream so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform index in `0..n`. Sampled through `u64` so the result does not
    /// depend on the platform's pointer width.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index() on an empty range");
        self.random_range(0..n as u64) as usize
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(self)
    }

    /// Uniform `k`-subset of `0..n`, returned sorted (partial Fisher-Yates).
    pub fn subset(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.index(n - i);
            pool.swap(i, j);
        }
        let mut chosen = pool[..k].to_vec();
        chosen.sort_unstable();
        chosen
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.draws += 1;
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.draws += 1;
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.draws += 1;
        self.inner.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_and_stream_repeat() {
        let mut a = Rng::new(42, 7);
        let mut b = Rng::new(42, 7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        assert_eq!(a.draws(), 100);
    }

    #[test]
    fn streams_are_distinct() {
        let mut a = Rng::new(42, 0);
        let mut b = Rng::new(42, 1);
        let xs: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        assert_ne!(xs, ys);
    }

    #[test]
    fn keystream_is_pinned() {
        // Changing the generator or stream layout breaks reproducibility of
        // every stored trace.
        let mut rng = Rng::new(0, 0);
        assert_eq!(rng.next_u64(), 13080132717333068652);
        assert_eq!(rng.next_u64(), 8594738769458413623);
        assert_eq!(Rng::new(42, 7).next_u64(), 2370525664269707216);
    }

    #[test]
    fn uniform_range_and_subset() {
        let mut rng = Rng::new(3, 3);
        for _ in 0..1000 {
            let u = rng.uniform();
            assert!((0.0..1.0).contains(&u));
            assert!(rng.index(5) < 5);
        }
        let s = rng.subset(10, 4);
        assert_eq!(s.len(), 4);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(rng.subset(3, 3), vec![0, 1, 2]);
    }
}
