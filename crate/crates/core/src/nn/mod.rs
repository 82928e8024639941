//! Trainable layers built on the tape.

mod dropout;
mod init;
mod layers;

pub use dropout::dropout;
pub use init::{xavier_normal, XAVIER_GAIN};
pub use layers::{BatchNorm1d, Conv1d, Dense, FeatureEmbedding, LayerNorm, PositionalTable, RmsNorm};

use rand_chacha::ChaCha8Rng;

/// Forward-pass mode. Training carries the RNG used for dropout masks.
pub enum Phase<'a> {
    Train(&'a mut ChaCha8Rng),
    Eval,
}

impl Phase<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Phase::Train(_))
    }
}
