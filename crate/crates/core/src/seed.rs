//! Seed derivation. Every random concern draws from its own ChaCha stream
//! derived from a single master seed, so one component can be re-rolled
//! without disturbing the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type BenchRng = ChaCha8Rng;

/// Independent random concerns of a benchmark run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Data,
    EsnWeights,
    HaarUnitary,
    Shots,
    LstmInit,
    QlstmInit,
    Probe,
    Shuffle,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Data => 1,
            Stream::EsnWeights => 2,
            Stream::HaarUnitary => 3,
            Stream::Shots => 4,
            Stream::LstmInit => 5,
            Stream::QlstmInit => 6,
            Stream::Probe => 7,
            Stream::Shuffle => 8,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed for `stream` from `master`.
pub fn derive_seed(master: u64, stream: Stream) -> u64 {
    splitmix64(splitmix64(master) ^ stream.tag().wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Derives a seed for the `index`-th member of a family (repeat, shot, ...).
pub fn derive_indexed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x6A09_E667_F3BC_C909)))
}

pub fn rng_from_seed(seed: u64) -> BenchRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream_rng(master: u64, stream: Stream) -> BenchRng {
    rng_from_seed(derive_seed(master, stream))
}
