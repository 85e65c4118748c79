//! The sequence-to-sequence model: attention, the encoder-decoder stack and
//! greedy decoding.

pub mod attention;
pub mod config;
pub mod decode;
pub mod transformer;

pub use attention::{attention, causal_mask, relative_label, AttentionOutput, AttentionParams, Positions};
pub use config::{ModelConfig, PositionMode};
pub use decode::{argmax, decode_greedy, IncrementalScorer};
pub use transformer::{copy_mix, sinusoidal_positions, Transformer};

#[cfg(test)]
mod tests;
