//! Counter-based random streams keyed by `(master_seed, stream_id)`.
//!
//! Every replica owns exactly one stream, so results never depend on how
//! replicas are scheduled across threads.

use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

/// Tags separating the stream-id space of the independent ensembles that
/// make up one experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum StreamFamily {
    Wasep = 1,
    Coupled = 2,
    She = 3,
    Current = 4,
    Speed = 5,
    BufferCheck = 6,
    Bootstrap = 7,
    Pathwise = 8,
}

/// Packs `(family, sub, index)` into a single stream id.
///
/// `sub` distinguishes parallel runs inside one family (e.g. one per density).
pub fn stream_id(family: StreamFamily, sub: u16, index: u64) -> u64 {
    debug_assert!(index < 1 << 40);
    ((family as u64) << 56) | ((sub as u64) << 40) | (index & ((1 << 40) - 1))
}

#[derive(Clone, Debug)]
pub struct RngStream {
    master_seed: u64,
    stream_id: u64,
    rng: Xoshiro256PlusPlus,
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the stream for `(master_seed, stream_id)`.
///
/// The 256-bit xoshiro state is filled by a SplitMix64 sequence whose
/// starting point mixes both inputs, so neighbouring ids land on unrelated
/// states.
pub fn derive_stream(master_seed: u64, stream_id: u64) -> RngStream {
    const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
    let mut x = mix64(master_seed ^ mix64(stream_id.wrapping_add(GOLDEN)));
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        x = x.wrapping_add(GOLDEN);
        chunk.copy_from_slice(&mix64(x).to_le_bytes());
    }
    RngStream {
        master_seed,
        stream_id,
        rng: Xoshiro256PlusPlus::from_seed(seed),
    }
}

impl RngStream {
    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }
}

impl RngCore for RngStream {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    #[inline]
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
