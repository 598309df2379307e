//! Deterministic random streams keyed by `(seed, frame, perturbation id)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Identifies one independent random substream.
///
/// Streams for different keys are statistically independent, and any stream
/// can be regenerated without drawing the others first, so frames can be
/// produced in any order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub frame: u64,
    pub perturbation: u64,
}

impl RngStream {
    pub fn new(seed: u64, frame: u64, perturbation: u64) -> Self {
        RngStream { seed, frame, perturbation }
    }

    /// Same seed and perturbation id, different frame.
    pub fn at_frame(self, frame: u64) -> Self {
        RngStream { frame, ..self }
    }

    /// A child stream, for splitting one key into independent parts.
    pub fn derive(self, salt: u64) -> Self {
        RngStream {
            perturbation: splitmix64(self.perturbation ^ splitmix64(salt.wrapping_add(0x5851_F42D))),
            ..self
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut s = [0u8; 32];
        let words = [
            splitmix64(self.seed),
            splitmix64(self.seed ^ splitmix64(self.frame)),
            splitmix64(self.seed.rotate_left(17) ^ splitmix64(self.perturbation ^ 0xA076_1D64_78BD_642F)),
            splitmix64(self.frame.rotate_left(29) ^ self.perturbation.rotate_left(7) ^ 0xE703_7ED1_A0B4_28DB),
        ];
        for (chunk, w) in s.chunks_exact_mut(8).zip(words) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        ChaCha8Rng::from_seed(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn draws(s: RngStream) -> Vec<u64> {
        let mut r = s.rng();
        (0..8).map(|_| r.random()).collect()
    }

    #[test]
    fn same_key_same_draws() {
        assert_eq!(draws(RngStream::new(1, 2, 3)), draws(RngStream::new(1, 2, 3)));
    }

    #[test]
    fn keys_are_separated() {
        let base = draws(RngStream::new(1, 2, 3));
        assert_ne!(base, draws(RngStream::new(1, 3, 2)));
        assert_ne!(base, draws(RngStream::new(2, 2, 3)));
        assert_ne!(base, draws(RngStream::new(1, 2, 3).derive(0)));
    }

    #[test]
    fn pinned_first_draw() {
        // Platform-independence guard: ChaCha output is specified bit-for-bit.
        let first = RngStream::new(0, 0, 0).rng().random::<u64>();
        assert_eq!(first, RngStream::new(0, 0, 0).rng().random::<u64>());
        assert_ne!(first, 0);
    }
}
