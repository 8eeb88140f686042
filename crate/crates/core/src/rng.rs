//! Reproducible random streams.
//!
//! Every random decision in a run draws from a ChaCha20 stream (20 rounds,
//! counter based) keyed by the run seed. Independent consumers get disjoint
//! streams: the 64-bit ChaCha stream id is the SplitMix64 fold of a path of
//! tags such as `[LOCAL_TRAINING, client, round]`. Because streams are
//! addressed rather than consumed in sequence, a client's draws do not
//! depend on how many other clients ran before it or on thread scheduling.
//!
//! The key is `ChaCha20Rng::seed_from_u64(seed)` (rand_core's PCG32 seed
//! expansion). Test vectors are pinned in the tests below.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub use rand_chacha::ChaCha20Rng as StreamRng;

pub mod tag {
    pub const TASK: u64 = 1;
    pub const PROVIDER: u64 = 2;
    pub const VALIDATION: u64 = 3;
    pub const CLIENT_SAMPLING: u64 = 4;
    pub const LOCAL_TRAINING: u64 = 5;
    pub const NOISE: u64 = 6;
    pub const MODEL_INIT: u64 = 7;
    pub const DUAL_INIT: u64 = 8;
    pub const PROVIDER_SAMPLING: u64 = 9;
    pub const PRETRAIN: u64 = 10;
    pub const LORA_INIT: u64 = 11;
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream id for a tag path.
pub fn stream_id(path: &[u64]) -> u64 {
    path.iter().fold(0x5046_4C4B_4954_0000, |h, t| splitmix64(h ^ t))
}

/// The ChaCha20 stream addressed by `(seed, path)`.
pub fn stream(seed: u64, path: &[u64]) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(path));
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn pinned_test_vectors() {
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        let mut r = stream(0, &[]);
        let first = r.next_u64();
        let mut again = stream(0, &[]);
        assert_eq!(first, again.next_u64());
        // frozen outputs guard against silent changes of the generator
        let v: Vec<u64> = {
            let mut r = stream(42, &[tag::TASK]);
            (0..3).map(|_| r.next_u64()).collect()
        };
        let w: Vec<u64> = {
            let mut r = stream(42, &[tag::TASK]);
            (0..3).map(|_| r.next_u64()).collect()
        };
        assert_eq!(v, w);
        assert_eq!(v, PINNED_42_TASK.to_vec());
    }

    const PINNED_42_TASK: [u64; 3] = [17587069883953688535, 361972878421413893, 5752961123026540468];

    #[test]
    fn paths_are_independent() {
        let a = stream(7, &[tag::LOCAL_TRAINING, 1, 2]).next_u64();
        let b = stream(7, &[tag::LOCAL_TRAINING, 2, 1]).next_u64();
        let c = stream(8, &[tag::LOCAL_TRAINING, 1, 2]).next_u64();
        assert_ne!(a, b);
        assert_ne!(a, c);
    }
}
