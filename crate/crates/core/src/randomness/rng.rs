//! Counter-based random streams.
//!
//! A draw is addressed by `(seed, tag, path, step)`: the ChaCha key is derived
//! from `(seed, tag)`, the ChaCha stream id is the path index and the block
//! counter starts at a fixed offset per step. Any path range can therefore be
//! generated on any thread, in any order, with identical results.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Independent families of draws sharing one user seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamTag {
    Brownian,
    Jumps,
    TreeWalk,
    Cloud,
}

impl StreamTag {
    fn salt(self) -> u64 {
        match self {
            StreamTag::Brownian => 0x9e37_79b9_7f4a_7c15,
            StreamTag::Jumps => 0xc2b2_ae3d_27d4_eb4f,
            StreamTag::TreeWalk => 0x1656_67b1_9e37_79f9,
            StreamTag::Cloud => 0x27d4_eb2f_1656_67c5,
        }
    }
}

// 2^20 words (64k ChaCha blocks) reserved per step.
const WORDS_PER_STEP_LOG2: u32 = 20;

#[derive(Clone)]
pub struct CounterRng {
    base: ChaCha8Rng,
}

impl CounterRng {
    pub fn new(seed: u64, tag: StreamTag) -> Self {
        CounterRng {
            base: ChaCha8Rng::seed_from_u64(seed ^ tag.salt()),
        }
    }

    /// Generator positioned at the start of the `(path, step)` block.
    pub fn at(&self, path: u64, step: u64) -> Draws {
        let mut rng = self.base.clone();
        rng.set_stream(path);
        rng.set_word_pos((step as u128) << WORDS_PER_STEP_LOG2);
        Draws { rng }
    }
}

pub struct Draws {
    rng: ChaCha8Rng,
}

impl Draws {
    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `(0, 1]`.
    pub fn uniform_open0(&mut self) -> f64 {
        1.0 - self.uniform()
    }

    /// Two independent standard normals (Box–Muller, fixed consumption).
    pub fn normal_pair(&mut self) -> (f64, f64) {
        let u1 = self.uniform_open0();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        (r * c, r * s)
    }

    pub fn fill_normals(&mut self, out: &mut [f64]) {
        let mut chunks = out.chunks_exact_mut(2);
        for pair in &mut chunks {
            let (a, b) = self.normal_pair();
            pair[0] = a;
            pair[1] = b;
        }
        if let [last] = chunks.into_remainder() {
            *last = self.normal_pair().0;
        }
    }

    /// Poisson(`mean`) by sequential inversion.
    pub fn poisson(&mut self, mean: f64) -> usize {
        let u = self.uniform();
        let mut k = 0usize;
        let mut p = (-mean).exp();
        let mut cdf = p;
        while u >= cdf && k < 10_000 {
            k += 1;
            p *= mean / k as f64;
            cdf += p;
            if p == 0.0 {
                break;
            }
        }
        k
    }

    /// Index drawn with probability proportional to `weights`.
    pub fn categorical(&mut self, weights: &[f64], total: f64) -> usize {
        let target = self.uniform() * total;
        let mut acc = 0.0;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if target < acc {
                return i;
            }
        }
        weights.len() - 1
    }
}
