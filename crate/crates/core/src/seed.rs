//! Named random substreams derived from one global seed.

/// Derives an independent seed for the named consumer of `seed`.
///
/// The name is hashed with FNV-1a and mixed with the seed through a
/// splitmix64 finalizer, so `substream(7, "solver")` and
/// `substream(7, "svm")` are unrelated. Results are kept below 2⁶³ so they
/// survive TOML's signed integers in config echoes.
pub fn substream(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(seed ^ h) >> 1
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
