//! Deterministic seed derivation.
//!
//! Every random stream in the crate is keyed by the user's master seed, a
//! stream tag naming the consumer (for example `"forest.tree"`), and an index.
//! The mixing below is fixed so that models reproduce across platforms and
//! crate versions, which rules out `std::hash::DefaultHasher`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `master`, a stream tag and an index.
pub fn derive(master: u64, tag: &str, index: u64) -> u64 {
    let h = splitmix64(master ^ fnv1a(tag.as_bytes()));
    splitmix64(h ^ splitmix64(index.wrapping_add(0x632b_e59b_d9b4_e019)))
}

/// A ChaCha stream for `(master, tag, index)`.
pub fn rng(master: u64, tag: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive(master, tag, index))
}
