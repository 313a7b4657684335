//! Seeded, stream-addressable random draws.
//!
//! Every random decision in the augmentation and evaluation code goes through
//! an [`RngStream`]. A stream is identified by `(seed, stream_id)`; two streams
//! with the same pair produce the same draw sequence. Training derives the
//! stream id from `(epoch, sample index)` so samples can be processed in any
//! order or in parallel without changing results.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

/// One logged draw: the stage label that was active and the value returned.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub label: &'static str,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
    label: &'static str,
    log: Option<Vec<Draw>>,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, stream, inner, label: "", log: None }
    }

    /// Same as [`RngStream::new`] but records every draw with its stage label.
    pub fn recording(seed: u64, stream: u64) -> Self {
        let mut rng = Self::new(seed, stream);
        rng.log = Some(Vec::new());
        rng
    }

    /// Stream id for a `(major, minor)` pair such as `(epoch, sample index)`.
    pub fn stream_id(major: u64, minor: u64) -> u64 {
        (major << 32) ^ (minor & 0xffff_ffff)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Sets the label attached to subsequent logged draws.
    pub fn set_label(&mut self, label: &'static str) {
        self.label = label;
    }

    pub fn label(&self) -> &'static str {
        self.label
    }

    pub fn log(&self) -> &[Draw] {
        self.log.as_deref().unwrap_or(&[])
    }

    fn record(&mut self, value: f64) {
        if let Some(log) = self.log.as_mut() {
            log.push(Draw { label: self.label, value });
        }
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        let v: f64 = self.inner.random();
        self.record(v);
        v
    }

    /// Uniform draw in `[lo, hi)`; returns `lo` when the interval is empty.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        let u = self.uniform();
        if hi > lo {
            lo + (hi - lo) * u
        } else {
            lo
        }
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below() needs a non-empty range");
        let v = self.inner.random_range(0..n);
        self.record(v as f64);
        v
    }

    /// `true` with probability `p`.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// `+1.0` or `-1.0` with equal probability.
    pub fn sign(&mut self) -> f64 {
        if self.uniform() < 0.5 {
            -1.0
        } else {
            1.0
        }
    }

    /// Draw from `Beta(alpha, alpha)`. `alpha` must be positive and finite.
    pub fn beta_symmetric(&mut self, alpha: f64) -> f64 {
        let dist = Beta::new(alpha, alpha).expect("beta parameter validated by caller");
        let v = dist.sample(&mut self.inner);
        self.record(v);
        v
    }

    /// Derives an independent child stream from one draw of this stream.
    ///
    /// The child does not inherit the draw log; only the seed draw is logged
    /// on the parent.
    pub fn fork(&mut self) -> RngStream {
        let seed = self.inner.next_u64();
        self.record(seed as f64);
        RngStream::new(seed, self.stream)
    }
}
