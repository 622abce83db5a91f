//! Seeded, splittable random streams.
//!
//! Every environment owns its own streams, derived from the run seed and a
//! stream id, so results never depend on scheduling order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Position of a stream at the moment a value was drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedTrace {
    pub seed: u64,
    pub stream: u64,
    pub word_pos: u128,
}

#[derive(Debug, Clone)]
pub struct RandomStream {
    rng: ChaCha8Rng,
    seed: u64,
    stream: u64,
}

/// Stream ids for the different consumers inside one environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Embodiment = 1,
    Dynamics = 2,
    Noise = 3,
    Command = 4,
    Policy = 5,
    Shuffle = 6,
    Init = 7,
}

impl RandomStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RandomStream { rng, seed, stream }
    }

    /// Stream for `(group, index, purpose)`, e.g. robot/environment pairs.
    pub fn for_slot(seed: u64, group: u64, index: u64, purpose: Purpose) -> Self {
        let stream = (group << 40) | ((index & 0xFFFF_FFFF) << 8) | purpose as u64;
        RandomStream::new(seed, stream)
    }

    pub fn from_trace(trace: SeedTrace) -> Self {
        let mut s = RandomStream::new(trace.seed, trace.stream);
        s.rng.set_word_pos(trace.word_pos);
        s
    }

    pub fn trace(&self) -> SeedTrace {
        SeedTrace {
            seed: self.seed,
            stream: self.stream,
            word_pos: self.rng.get_word_pos(),
        }
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform in `[-1, 1)`.
    pub fn symmetric(&mut self) -> f64 {
        2.0 * self.unit() - 1.0
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
