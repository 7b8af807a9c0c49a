//! Seeded random streams.
//!
//! Every draw comes from ChaCha8 keyed by (seed, purpose) and positioned on
//! its own 64-bit stream, one per frequency index or per data chunk. Growing
//! m therefore leaves the first draws unchanged.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const FREQUENCIES: u64 = 0x6672_6571;
pub const NOISE: u64 = 0x6e6f_6973;
pub const DATA: u64 = 0x6461_7461;
pub const PROBE: u64 = 0x7072_6f62;
pub const SIGNS: u64 = 0x7369_676e;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn substream(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(purpose)));
    rng.set_stream(index);
    rng
}
