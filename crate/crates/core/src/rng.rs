//! Counter-based seeding of per-particle random streams.
//!
//! Every random draw made while updating particle `id` at iteration `t` comes
//! from a ChaCha stream keyed by `(seed, t, id)`, so the parallel update does
//! not depend on scheduling or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags separating independent uses of one run seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Step = 1,
    Init = 2,
    Reference = 3,
    Baseline = 4,
    Repetition = 5,
}

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with a list of counters into a new 64-bit seed.
pub fn derive_seed(seed: u64, stream: Stream, counters: &[u64]) -> u64 {
    let mut h = splitmix(seed ^ splitmix(stream as u64));
    for &c in counters {
        h = splitmix(h ^ splitmix(c.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

pub fn stream_rng(seed: u64, stream: Stream, counters: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, counters))
}

/// Generator for the update of particle `id` at iteration `t`.
pub fn particle_rng(seed: u64, iteration: u64, id: u64) -> ChaCha8Rng {
    stream_rng(seed, Stream::Step, &[iteration, id])
}
