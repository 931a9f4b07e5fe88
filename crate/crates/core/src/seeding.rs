//! Deterministic sub-seed derivation.
//!
//! Every randomized stage of the pipeline draws from its own ChaCha8 stream
//! whose seed is derived from a master seed, a purpose tag, and an index.
//! Reordering or skipping stages therefore never shifts another stage's
//! random stream.

/// Derives a stable sub-seed from `base` for the stream named `tag`/`index`.
///
/// FNV-1a over the tag bytes, then a splitmix64-style finalizer so that
/// close-by base seeds and indices still map to well-separated streams.
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = base
        .wrapping_add(h)
        .wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
