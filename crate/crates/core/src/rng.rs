//! Seed derivation shared by the generator and the trainer.

/// SplitMix64 finalizer: a bijective scramble of one word.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream seed for item `index` under `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    seed ^ mix64(index)
}
