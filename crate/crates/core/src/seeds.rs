//! Deterministic seed derivation.
//!
//! Every stochastic component takes an explicit seed derived from a master
//! seed and a purpose tag, so that independent streams never alias and a run
//! is reproducible bit-for-bit from its master seed alone.

/// FNV-1a over the tag and mix-in values. Stable across platforms.
pub fn derive(master: u64, tag: &str, extra: u64) -> u64 {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    let mut h = OFFSET;
    for &b in master
        .to_le_bytes()
        .iter()
        .chain(tag.as_bytes())
        .chain(extra.to_le_bytes().iter())
    {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Per-example noise seed: fresh draw each epoch for each example.
pub fn example_seed(epoch: usize, example_index: usize) -> u64 {
    derive(epoch as u64, "noise-example", example_index as u64)
}
