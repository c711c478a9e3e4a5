//! Counter-based random streams keyed by (seed, module, task).
//!
//! Every sample task draws from its own ChaCha stream, so results do not
//! depend on how tasks are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type StreamRng = ChaCha8Rng;

/// Identifies the subsystem drawing randomness; part of the stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u64)]
pub enum ModuleId {
    Brownian = 1,
    Bessel = 2,
    Quadrant = 3,
    Stable = 4,
    Field = 5,
    Sphere = 6,
    Stats = 7,
    Verify = 8,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fold a list of words into one 64-bit key.
pub fn mix_key(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x6a09_e667_f3bc_c908, |acc, &w| splitmix(acc ^ splitmix(w)))
}

/// Root of all randomness for one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamKey {
    pub seed: u64,
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// Stream for task `task` of `module`.
    pub fn rng(&self, module: ModuleId, task: u64) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_key(&[self.seed, module as u64]));
        rng.set_stream(task);
        rng
    }

    /// Stream for a sub-task (e.g. an individual rejection attempt) of a task.
    pub fn sub_rng(&self, module: ModuleId, task: u64, sub: u64) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_key(&[self.seed, module as u64, task]));
        rng.set_stream(sub);
        rng
    }

    /// A derived key, for handing an independent seed to a nested sampler.
    pub fn child(&self, words: &[u64]) -> StreamKey {
        let mut all = Vec::with_capacity(words.len() + 1);
        all.push(self.seed);
        all.extend_from_slice(words);
        StreamKey::new(mix_key(&all))
    }
}

/// Convenience: a stream from a bare seed.
pub fn seeded(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}
