//! Keyed random streams.
//!
//! Every random draw in the simulator comes from a ChaCha8 stream whose
//! 256-bit seed is derived from `(seed, domain, key)` by SplitMix64 mixing.
//! A stream depends only on its key, never on how many other streams were
//! consumed before it, so steps, layers and tokens can be generated in any
//! order or in parallel with identical results.
//!
//! The derivation is part of the output format: changing it changes every
//! golden file.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Separates streams that share a numeric key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Scores = 1,
    GroupTemplate = 2,
    Embedding = 3,
    Padding = 4,
    Weights = 5,
    Noise = 6,
    MonteCarlo = 7,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the 256-bit seed for a keyed stream.
pub fn derive_seed(seed: u64, domain: Domain, key: [u64; 3]) -> [u8; 32] {
    let mut state = seed;
    let mut h = splitmix64(&mut state);
    for word in [domain as u64, key[0], key[1], key[2]] {
        state ^= word.wrapping_mul(GOLDEN) ^ h;
        h = splitmix64(&mut state);
    }
    let mut out = [0u8; 32];
    for chunk in out.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    out
}

/// Opens the stream for `(seed, domain, key)`.
pub fn stream(seed: u64, domain: Domain, key: [u64; 3]) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(seed, domain, key))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn same_key_same_stream() {
        let mut a = stream(42, Domain::Scores, [1, 2, 3]);
        let mut b = stream(42, Domain::Scores, [1, 2, 3]);
        for _ in 0..16 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn keys_and_domains_separate_streams() {
        let first = |seed, d, k| stream(seed, d, k).next_u64();
        let base = first(42, Domain::Scores, [1, 2, 3]);
        assert_ne!(base, first(43, Domain::Scores, [1, 2, 3]));
        assert_ne!(base, first(42, Domain::Padding, [1, 2, 3]));
        assert_ne!(base, first(42, Domain::Scores, [2, 1, 3]));
        assert_ne!(base, first(42, Domain::Scores, [1, 2, 4]));
    }

    const PINNED: [u8; 8] = [17, 152, 188, 238, 184, 122, 58, 7];
    const PINNED_DRAW: u64 = 1_879_754_498_744_137_208;

    #[test]
    fn derivation_is_pinned() {
        // golden files depend on this exact mapping
        let s = derive_seed(0, Domain::Scores, [0, 0, 0]);
        assert_eq!(&s[..8], &PINNED);
        let mut rng = stream(0, Domain::Scores, [0, 0, 0]);
        assert_eq!(rng.next_u64(), PINNED_DRAW);
    }
}
