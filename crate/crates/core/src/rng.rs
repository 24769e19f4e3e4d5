//! Keyed random streams.
//!
//! Every consumer of randomness gets its own ChaCha stream derived from the
//! master seed and a `(purpose, client, round)` key, so adding or removing a
//! consumer never shifts the draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Data,
    Partition,
    Split,
    Init,
    Train,
    Attack,
    Attackers,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Data => 0x6461_7461,
            Purpose::Partition => 0x7061_7274,
            Purpose::Split => 0x7370_6c74,
            Purpose::Init => 0x696e_6974,
            Purpose::Train => 0x7472_6e00,
            Purpose::Attack => 0x6174_6b00,
            Purpose::Attackers => 0x6174_6b73,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, purpose: Purpose, client: u64, round: u64) -> u64 {
    let mut h = splitmix64(master);
    for word in [purpose.tag(), client, round] {
        h = splitmix64(h ^ word);
    }
    h
}

pub fn stream(master: u64, purpose: Purpose, client: u64, round: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(derive_seed(master, purpose, client, round))
}

pub fn seeded(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}
