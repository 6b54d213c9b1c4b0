//! Named seed derivation. Every random stream is keyed by the master seed and
//! a list of labels, so components can be re-run in isolation and results do
//! not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `master` and an ordered list of labels.
pub fn derive(master: u64, labels: &[&str]) -> u64 {
    let mut h = splitmix(master);
    for label in labels {
        let mut f = FNV_OFFSET;
        for b in label.bytes().chain(std::iter::once(0xff)) {
            f ^= b as u64;
            f = f.wrapping_mul(FNV_PRIME);
        }
        h = splitmix(h ^ f);
    }
    h
}

/// Like [`derive`] with a trailing integer label.
pub fn derive_n(master: u64, labels: &[&str], n: u64) -> u64 {
    splitmix(derive(master, labels) ^ splitmix(n))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
