//! Seed derivation. One root seed is split into independent ChaCha streams
//! per subsystem, and further keyed by an index (piece, epoch, ...).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Data = 1,
    Init = 2,
    Shuffle = 3,
    Augment = 4,
    Baseline = 5,
    Validation = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    keyed_rng(seed, stream, 0)
}

pub fn keyed_rng(seed: u64, stream: Stream, key: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(key)));
    rng.set_stream(stream as u64);
    rng
}
