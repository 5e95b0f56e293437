//! Self-attention encoder over quarterly financial series.
//!
//! `x_t [batch × seq_len × series_dim]` is embedded and offset by a fixed
//! sinusoidal position table, passed through post-norm encoder blocks
//! (multi-head self-attention, add & norm, relu feed-forward, add & norm),
//! and mean-pooled over the real (non-padding) time steps.

mod attention;
mod block;
mod encoder;
mod positional;

pub use attention::{attention, attention_backward, attention_with_weights, AttentionOutput};
pub use block::EncoderBlock;
pub use encoder::{embed_sequence, encode_temporal, TemporalEncoder, TransformerConfig};
pub use positional::PositionalEncoding;
