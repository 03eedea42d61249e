//! Deterministic seed derivation.
//!
//! Every random stream in a session is keyed by the session seed plus a label,
//! so streams never depend on the order in which other streams were consumed.

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the stream named `label` under `seed`.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    label
        .bytes()
        .fold(mix(seed), |acc, b| mix(acc ^ u64::from(b)))
}

/// Seed for a stream indexed by integers, e.g. `(round, id)`.
pub fn derive_indexed(seed: u64, label: &str, indices: &[u64]) -> u64 {
    indices
        .iter()
        .fold(derive_seed(seed, label), |acc, &i| mix(acc ^ i))
}
