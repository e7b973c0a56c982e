//! Seed derivation so every stage draws from its own namespaced stream.

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a per-stage seed from the root seed and a stage tag.
pub fn derive_seed(root: u64, tag: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64; // FNV-1a
    for b in tag.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    mix(root ^ h)
}

/// Derive the seed for one indexed item (frame, repeat, ...) in a stage.
pub fn derive_seed_indexed(root: u64, tag: &str, index: u64) -> u64 {
    mix(derive_seed(root, tag) ^ mix(index))
}
