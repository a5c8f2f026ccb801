//! Seeded random streams.
//!
//! All randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`), whose
//! output is specified bit-for-bit and is identical on every platform.
//! Independent consumers (subjects, samples, shuffling, dropout) draw from
//! separate streams of the same seed, so per-item work can run in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream namespaces. The upper 16 bits of the stream id select the
/// consumer, the rest carry an item index.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub enum Domain {
    Init = 1,
    Subject = 2,
    Sample = 3,
    Shuffle = 4,
    Dropout = 5,
    GradCheck = 6,
    Misc = 7,
    Augment = 8,
}

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn stream(seed: u64, domain: Domain, index: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(((domain as u64) << 48) | (index & ((1 << 48) - 1)));
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map({
            let mut r = stream(7, Domain::Sample, 3);
            move |_| r.next_u64()
        }).collect();
        let b: Vec<u64> = (0..4).map({
            let mut r = stream(7, Domain::Sample, 3);
            move |_| r.next_u64()
        }).collect();
        assert_eq!(a, b);
        let mut c = stream(7, Domain::Sample, 4);
        assert_ne!(a[0], c.next_u64());
    }

    #[test]
    fn known_first_output() {
        // Pinned so a dependency bump that changes the stream is caught.
        let mut r = seeded(0);
        let first = r.next_u64();
        assert_eq!(first, 13080132717333068652);
        assert_ne!(first, seeded(1).next_u64());
    }
}
