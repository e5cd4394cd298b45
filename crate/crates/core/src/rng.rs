//! Named random substreams derived from one root seed, and snapshotting of
//! generator state for checkpoints.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Stable 64-bit seed for the substream `name` of `root` (e.g. "data", "init", "actor-2", "eval-0").
pub fn substream_seed(root: u64, name: &str) -> u64 {
    // FNV-1a keeps the mapping stable across toolchains
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(root ^ splitmix64(h))
}

pub fn substream(root: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(root, name))
}

pub const RNG_STATE_LEN: usize = 32 + 8 + 16;

/// Exact generator position: seed, stream and word position.
pub fn rng_state(rng: &ChaCha8Rng) -> Vec<u8> {
    let mut out = Vec::with_capacity(RNG_STATE_LEN);
    out.extend_from_slice(&rng.get_seed());
    out.extend_from_slice(&rng.get_stream().to_le_bytes());
    out.extend_from_slice(&rng.get_word_pos().to_le_bytes());
    out
}

pub fn rng_from_state(bytes: &[u8]) -> Result<ChaCha8Rng> {
    if bytes.len() != RNG_STATE_LEN {
        return Err(Error::Format(format!("rng state must be {RNG_STATE_LEN} bytes, got {}", bytes.len())));
    }
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&bytes[..32]);
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(u64::from_le_bytes(bytes[32..40].try_into().expect("8 bytes")));
    rng.set_word_pos(u128::from_le_bytes(bytes[40..56].try_into().expect("16 bytes")));
    Ok(rng)
}
