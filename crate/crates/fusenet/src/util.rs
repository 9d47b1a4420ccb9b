//! Small deterministic helpers shared across modules: seed mixing, stable
//! name hashing, and the checksum used by the checkpoint format.

/// SplitMix64 finalizer. Bijective on `u64`, good avalanche; used to turn
/// structured inputs (seed, index, name hash) into independent RNG seeds.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes a base seed with a stream index into a fresh seed. Distinct
/// `(seed, stream)` pairs yield decorrelated streams; the mapping is fixed
/// forever because stored runs depend on it.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

/// Mixes a base seed with a name (e.g. a parameter path) into a seed.
pub fn mix_seed_str(seed: u64, name: &str) -> u64 {
    splitmix64(seed ^ fnv1a64(name.as_bytes()))
}

/// FNV-1a 64-bit hash. Also serves as the checkpoint trailer checksum.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv1a64_matches_reference_vectors() {
        // Published FNV-1a test vectors.
        assert_eq!(fnv1a64(b""), 0xCBF2_9CE4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xAF63_DC4C_8601_EC8C);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171F73967E8);
    }

    #[test]
    fn seed_mixing_separates_streams() {
        let s = 42;
        let a = mix_seed(s, 0);
        let b = mix_seed(s, 1);
        assert_ne!(a, b);
        assert_ne!(a, s);
        // Stable forever: stored runs depend on these exact values.
        assert_eq!(mix_seed(42, 0), mix_seed(42, 0));
        assert_ne!(mix_seed_str(7, "conv1.kernel"), mix_seed_str(7, "conv2.kernel"));
    }
}
