//! Counter-based seeding.
//!
//! Every node of a realized token tree owns a 64-bit key obtained by chaining
//! a SplitMix64 finalizer over the child indices of its path. The key seeds a
//! ChaCha8 stream, so the child distribution at a node is a pure function of
//! (master seed, namespace, path) no matter in which order nodes are expanded.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// Stream tags separating independent uses of one master seed.
pub mod stream {
    pub const TREE: u64 = 0x7472_6565;
    pub const VERIFY: u64 = 0x7665_7269;
    pub const SPINE: u64 = 0x7370_696e;
    pub const MOMENTS: u64 = 0x6d6f_6d65;
    pub const TRACE: u64 = 0x7472_6163;
}

#[inline]
pub fn mix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Combines a key with further words, in order.
pub fn derive(key: u64, words: &[u64]) -> u64 {
    words
        .iter()
        .fold(mix64(key), |acc, &w| mix64(acc ^ mix64(w.wrapping_mul(GOLDEN))))
}

/// Key of the root of the realization `namespace` under `seed`.
pub fn root_key(seed: u64, namespace: u64) -> u64 {
    derive(seed, &[stream::TREE, namespace])
}

/// Key of child `index` of the node with key `parent`.
#[inline]
pub fn child_key(parent: u64, index: u32) -> u64 {
    mix64(parent ^ mix64(u64::from(index) + 1))
}

/// Key of the node reached by following `path` from `root`.
pub fn path_key(root: u64, path: &[u32]) -> u64 {
    path.iter().fold(root, |k, &i| child_key(k, i))
}

pub fn rng_from_key(key: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(key)
}
