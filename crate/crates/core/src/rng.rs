//! Counter-based random streams.
//!
//! Every random quantity is drawn from a ChaCha8 stream identified by
//! `(seed, tag, index)`: the 64-bit ChaCha stream id is `tag << 56 | index`.
//! A task's data therefore depends only on its dataset and position, never on
//! generation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Which logical dataset or procedure a stream belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum StreamTag {
    Meta = 0,
    Light1 = 1,
    Heavy = 2,
    Light2 = 3,
    Prediction = 4,
    EmInit = 5,
    Auxiliary = 6,
}

const INDEX_BITS: u32 = 56;

/// Independent stream for `(seed, tag, index)`. `index` must be below 2^56.
pub fn stream(seed: u64, tag: StreamTag, index: u64) -> StreamRng {
    assert!(index < (1u64 << INDEX_BITS), "stream index out of range");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((tag as u64) << INDEX_BITS) | index);
    rng
}

/// Derives a child seed (for repeats/trials) by SplitMix64 mixing.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
