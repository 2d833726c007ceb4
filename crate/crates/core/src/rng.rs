//! Deterministic named RNG substreams.
//!
//! Every random draw in the simulator comes from a ChaCha stream keyed by
//! `(global_seed, stream_name, entity_id, salt)`. Identical keys always yield
//! identical sequences, so episodes replay bit-for-bit regardless of how
//! rollouts are scheduled.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

/// Registered substream names. Draw purposes must not share a stream.
pub const STREAM_NAMES: [&str; 5] = ["mobility", "fading", "traffic", "policy", "mac"];

#[derive(Debug, Error)]
pub enum RngError {
    #[error("unknown rng stream `{0}`")]
    UnknownStream(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStreams {
    seed: u64,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        RngStreams { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Generator for `(name, entity)`; same key, same sequence.
    pub fn stream(&self, name: &str, entity: u64) -> Result<ChaCha12Rng, RngError> {
        self.stream_salted(name, entity, 0)
    }

    /// As [`Self::stream`] with an extra salt (episode index and the like).
    pub fn stream_salted(
        &self,
        name: &str,
        entity: u64,
        salt: u64,
    ) -> Result<ChaCha12Rng, RngError> {
        let idx = STREAM_NAMES
            .iter()
            .position(|&n| n == name)
            .ok_or_else(|| RngError::UnknownStream(name.to_string()))?;
        Ok(self.keyed(idx as u64, entity, salt))
    }

    fn keyed(&self, stream_idx: u64, entity: u64, salt: u64) -> ChaCha12Rng {
        let mut key = [0u8; 32];
        let mut state = self.seed;
        for (i, word) in [stream_idx, entity, salt, 0x9e3779b97f4a7c15].into_iter().enumerate() {
            state = splitmix64(state ^ word.rotate_left(i as u32 * 16 + 1));
            key[i * 8..(i + 1) * 8].copy_from_slice(&state.to_le_bytes());
        }
        ChaCha12Rng::from_seed(key)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
