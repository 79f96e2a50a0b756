//! The learned entropy model.
//!
//! Every transmitted coefficient is conditioned on two context vectors,
//! each an 8-wide embedding:
//!
//! * the initial-coding context `I`: the owning node's depth, weight and
//!   reconstructed values embedded by an MLP (`H`), fused with a
//!   multi-scale pooled view of all nodes on the level (`L`);
//! * the inter-channel context `C`: an MLP over the same node's
//!   already-decoded channel coefficients (`C`), fused with a multi-scale
//!   pooled view of those coefficients across the level (`S`). The first
//!   channel's context is identically zero.
//!
//! A per-channel linear head maps `[I, C]` to bias and log-scale offsets of
//! a monotone cumulative network whose consecutive half-integer differences
//! give the symbol PMF handed to the range coder.

pub mod coding;
pub mod density;
pub mod engine;
pub mod model;
pub mod pool;

pub use coding::{decode_stream, encode_stream, stream_symbol_probs, CodingError, MAX_BOUND};
pub use density::{MonotoneCdf, MonotoneGrad, THETA_DIM, ZERO_THETA};
pub use engine::{ChannelContext, LevelContext, VALUE_NORM};
pub use model::{ComponentMask, DensityModel, ModelGrads, EMBED_DIM, POOL_DIM};
