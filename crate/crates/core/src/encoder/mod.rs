//! Transformer encoder: configuration presets, parameter layout and the
//! forward pass.

mod config;
mod model;
mod weights;

pub use config::{names, EncoderConfig, Preset, DEFAULT_DROPOUT, DEFAULT_MAX_POSITIONS, DEFAULT_VOCAB_SIZE, HEAD_SIZE};
pub use model::{encode, forward, forward_batch, multi_head_attention, EncoderNodes, EncoderOutput, Mode, PackedBatch};
pub use weights::{truncated_normal, EncoderWeights, INIT_STD};
