//! Counter-style random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator whose key is
//! a pure function of `(master seed, stream label, index)`. Work units can
//! therefore run in any order, on any number of threads, and still see
//! exactly the numbers a serial run would.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose of a random stream. Distinct labels never share key material.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamLabel {
    SupScoreBootstrap,
    ConditioningBootstrap,
    CvFolds,
    Replication,
    CalibrationNull,
    RunSeed,
}

impl StreamLabel {
    fn tag(self) -> u64 {
        match self {
            StreamLabel::SupScoreBootstrap => 0x5355_5053_434f_5245,
            StreamLabel::ConditioningBootstrap => 0x434f_4e44_4954_494f,
            StreamLabel::CvFolds => 0x4356_464f_4c44_5331,
            StreamLabel::Replication => 0x5245_504c_4943_4154,
            StreamLabel::CalibrationNull => 0x4341_4c49_424e_554c,
            StreamLabel::RunSeed => 0x5255_4e53_4545_4431,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn key(master: u64, label: StreamLabel, index: u64) -> [u8; 32] {
    let mut state = master;
    let a = splitmix64(&mut state);
    state ^= label.tag();
    let b = splitmix64(&mut state);
    state ^= index.wrapping_mul(0xd134_2543_de82_ef95);
    let c = splitmix64(&mut state);
    let d = splitmix64(&mut state);
    let mut out = [0u8; 32];
    for (chunk, word) in out.chunks_exact_mut(8).zip([a ^ c, b ^ d, c, d]) {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    out
}

/// Generator for work unit `index` of stream `label` under `master`.
pub fn stream_rng(master: u64, label: StreamLabel, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(key(master, label, index))
}

/// Derives a child master seed, e.g. the seed used by replication `index`.
pub fn derive_seed(master: u64, label: StreamLabel, index: u64) -> u64 {
    let k = key(master, label, index);
    u64::from_le_bytes(k[..8].try_into().unwrap()) ^ u64::from_le_bytes(k[24..].try_into().unwrap())
}
