//! Seed derivation. Every random component draws from its own generator,
//! derived from one root seed and a component label.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent child seed from a parent seed and a stream index.
pub fn child_seed(parent: u64, stream: u64) -> u64 {
    splitmix64(parent ^ splitmix64(stream.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// Derives a child seed from a textual label, e.g. `"mask"` or `"init"`.
pub fn labelled_seed(parent: u64, label: &str) -> u64 {
    // FNV-1a over the label bytes.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    child_seed(parent, h)
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn children_differ() {
        assert_ne!(child_seed(1, 0), child_seed(1, 1));
        assert_ne!(child_seed(1, 0), child_seed(2, 0));
        assert_ne!(labelled_seed(5, "mask"), labelled_seed(5, "init"));
        assert_eq!(labelled_seed(5, "mask"), labelled_seed(5, "mask"));
    }
}
