//! Deterministic, splittable random streams for simulation replications.
//!
//! Every replication owns a small set of counter-based streams derived from
//! `(seed, replication, purpose)`. Streams are random-access addressable by
//! step index, which gives common random numbers across algorithm setups:
//! the environment draws consumed at step `t` of replication `r` are the same
//! no matter which learner is running, even after the policies diverge.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Random words reserved per step slot (8 u64 draws; a step uses at most 3).
const WORDS_PER_STEP: u128 = 16;

/// What a stream is consumed for. Each purpose gets an independent substream
/// so that, e.g., evaluation draws cannot perturb training reproducibility.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamPurpose {
    /// Environment transitions and reward draws during learning.
    EnvLearn = 0,
    /// Exploration coin flips and tie-breaks during learning.
    AgentLearn = 1,
    /// Environment draws during evaluation.
    EnvEval = 2,
    /// Action-selection draws during evaluation.
    AgentEval = 3,
}

const PURPOSES_PER_REPLICATION: u64 = 8;

/// A seeded, counter-based random stream.
///
/// Two streams with equal `(seed, stream)` produce identical sequences;
/// different stream ids are statistically independent. `seek_step` positions
/// the stream at a fixed per-step offset for aligned replay.
#[derive(Clone, Debug)]
pub struct RngStream {
    rng: ChaCha12Rng,
    seed: u64,
    stream: u64,
}

fn splitmix64(x: &mut u64) -> u64 {
    *x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut key = [0u8; 32];
        let mut x = seed;
        for chunk in key.chunks_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut x).to_le_bytes());
        }
        let mut rng = ChaCha12Rng::from_seed(key);
        rng.set_stream(stream);
        Self { rng, seed, stream }
    }

    /// Stream for one `(replication, purpose)` pair of an experiment seed.
    pub fn replication(seed: u64, replication: u64, purpose: StreamPurpose) -> Self {
        Self::new(
            seed,
            replication * PURPOSES_PER_REPLICATION + purpose as u64,
        )
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Position the stream at the slot reserved for step `t`.
    pub fn seek_step(&mut self, t: u64) {
        self.rng.set_word_pos(t as u128 * WORDS_PER_STEP);
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform index in `[0, n)`. Consumes exactly one u64 regardless of `n`.
    pub fn pick(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }
}
