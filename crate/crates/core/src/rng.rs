//! Counter-based random streams and the worker fan-out used by every
//! Monte Carlo routine.
//!
//! Sample `i` of a run with seed `s` always reads ChaCha8 stream `i` under the
//! key derived from `s`, so the draws of a sample do not depend on which
//! worker evaluates it. Accumulators are formed per fixed block of samples
//! and merged in block order, so results are bit-identical for any worker
//! count.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Source of uniform deviates on the open interval (0, 1).
pub trait UniformSource {
    fn uniform(&mut self) -> f64;
}

const TWO_POW_MINUS_53: f64 = 1.0 / (1u64 << 53) as f64;

/// Keyed generator of per-sample streams.
#[derive(Clone, Debug)]
pub struct StreamFactory {
    base: ChaCha8Rng,
}

impl StreamFactory {
    pub fn new(seed: u64) -> Self {
        Self {
            base: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn stream(&self, sample_index: u64) -> SampleStream {
        let mut rng = self.base.clone();
        rng.set_stream(sample_index);
        rng.set_word_pos(0);
        SampleStream { rng }
    }
}

/// Random stream owned by a single sample.
#[derive(Clone, Debug)]
pub struct SampleStream {
    rng: ChaCha8Rng,
}

impl UniformSource for SampleStream {
    #[inline]
    fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * TWO_POW_MINUS_53
    }
}

/// Replays a fixed list of deviates; used to pin inverse-transform draws.
#[derive(Clone, Debug)]
pub struct FixedUniforms {
    values: Vec<f64>,
    next: usize,
}

impl FixedUniforms {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values, next: 0 }
    }
}

impl UniformSource for FixedUniforms {
    fn uniform(&mut self) -> f64 {
        let u = self.values[self.next % self.values.len()];
        self.next += 1;
        u
    }
}

/// Derives an independent seed for a labelled sub-computation.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Samples per accumulator block. Blocks are merged in index order, so the
/// result does not depend on how blocks are spread over workers.
const BLOCK: usize = 4096;

/// Runs `step` once per sample index in `0..count`, accumulating each block
/// of [`BLOCK`] consecutive samples separately, and merges the block
/// accumulators in block order.
pub(crate) fn fan_out<A, I, F, M>(
    count: usize,
    workers: usize,
    seed: u64,
    init: I,
    step: F,
    merge: M,
) -> A
where
    A: Send,
    I: Fn() -> A + Sync,
    F: Fn(&mut A, u64, &mut SampleStream) + Sync,
    M: Fn(A, A) -> A,
{
    let factory = StreamFactory::new(seed);
    let blocks = count.div_ceil(BLOCK).max(1);
    let workers = workers.clamp(1, blocks);
    let run_block = |b: usize| {
        let mut acc = init();
        for i in b * BLOCK..((b + 1) * BLOCK).min(count) {
            let mut stream = factory.stream(i as u64);
            step(&mut acc, i as u64, &mut stream);
        }
        acc
    };
    let run_range = |w: usize| -> Vec<A> {
        (w * blocks / workers..(w + 1) * blocks / workers)
            .map(run_block)
            .collect()
    };
    let parts: Vec<A> = if workers == 1 {
        run_range(0)
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (1..workers)
                .map(|w| {
                    let run = &run_range;
                    scope.spawn(move || run(w))
                })
                .collect();
            let mut parts = run_range(0);
            for h in handles {
                parts.extend(h.join().expect("worker panicked"));
            }
            parts
        })
    };
    let mut it = parts.into_iter();
    let first = it.next().expect("at least one block");
    it.fold(first, merge)
}
