use crate::backend::synthetic::splitmix64;

/// Seed of one cell, chained from the master seed through each component
/// with splitmix64.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// FNV-1a hash of a label, used to fold names into a seed.
pub fn label_hash(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
