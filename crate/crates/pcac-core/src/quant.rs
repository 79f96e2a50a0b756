//! Uniform quantization of the high-frequency coefficients and their
//! serialization into transmission order.
//!
//! Transmission order is depth-major from the root level down, channel-minor
//! within a level, Morton order within a channel. The order is a function of
//! the geometry alone, so encoder and decoder agree on it without side
//! information. The DC row is transmitted raw.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::raht::{self, RahtError, RahtTree};

#[derive(Debug, PartialEq, Eq, thiserror::Error)]
pub enum QuantError {
    #[error("quantization step must be positive")]
    NonPositiveStep,
    #[error("stream carries {found} symbols but the tree needs {expected}")]
    SymbolCountMismatch { expected: usize, found: usize },
    #[error("stream has {found} DC channels, tree coding used {expected}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Transform(#[from] RahtError),
}

/// Round-half-away-from-zero of `x / qstep`.
pub fn quantize(x: f64, qstep: f64) -> i64 {
    debug_assert!(qstep > 0.0);
    math::round(x / qstep) as i64
}

pub fn dequantize(r: i64, qstep: f64) -> f64 {
    debug_assert!(qstep > 0.0);
    r as f64 * qstep
}

/// Quantized high-frequency coefficients in transmission order plus the raw
/// DC row.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientStream {
    pub qstep: f64,
    pub n_channels: usize,
    pub dc: Vec<f64>,
    /// Flat symbol sequence in transmission order;
    /// `n_channels * (voxel_count - 1)` entries.
    pub symbols: Vec<i64>,
    /// Max absolute symbol value; the entropy stage codes over `[-B, B]`.
    pub bound: u64,
}

/// One transmitted symbol's location in the tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamSlot {
    /// Tree level the owning high-frequency node lives on.
    pub level: usize,
    pub channel: usize,
    /// Index of the node within `tree.levels[level].nodes`.
    pub node: u32,
    /// Rank of the node within the level's `high_nodes`.
    pub rank: usize,
}

/// Transmission-order walk over the tree: levels root-first, channels within
/// a level, the level's high nodes (Morton order) within a channel.
pub fn stream_order(tree: &RahtTree, n_channels: usize) -> impl Iterator<Item = StreamSlot> + '_ {
    tree.transmission_levels().flat_map(move |level| {
        (0..n_channels).flat_map(move |channel| {
            tree.levels[level]
                .high_nodes
                .iter()
                .enumerate()
                .map(move |(rank, &node)| StreamSlot {
                    level,
                    channel,
                    node,
                    rank,
                })
        })
    })
}

/// Quantizes and serializes transformed coefficients.
pub fn serialize(
    tree: &RahtTree,
    coeffs: &raht::Coefficients,
    qstep: f64,
) -> Result<CoefficientStream, QuantError> {
    if qstep <= 0.0 {
        return Err(QuantError::NonPositiveStep);
    }
    let n = coeffs.n_channels;
    let mut symbols = Vec::with_capacity(tree.high_count() * n);
    let mut bound = 0u64;
    for slot in stream_order(tree, n) {
        let h = coeffs.highs[slot.level][slot.rank * n + slot.channel];
        let r = quantize(h, qstep);
        bound = bound.max(r.unsigned_abs());
        symbols.push(r);
    }
    Ok(CoefficientStream {
        qstep,
        n_channels: n,
        dc: coeffs.dc().to_vec(),
        symbols,
        bound,
    })
}

/// Regroups a flat transmission-order symbol sequence into per-level,
/// node-major high rows of dequantized values, as the inverse transform
/// expects them.
pub fn dequantized_highs_by_level(
    tree: &RahtTree,
    stream: &CoefficientStream,
) -> Result<Vec<Vec<f64>>, QuantError> {
    let n = stream.n_channels;
    let expected = tree.high_count() * n;
    if stream.symbols.len() != expected {
        return Err(QuantError::SymbolCountMismatch {
            expected,
            found: stream.symbols.len(),
        });
    }
    let mut highs: Vec<Vec<f64>> = tree
        .levels
        .iter()
        .map(|l| vec![0.0; l.high_nodes.len() * n])
        .collect();
    for (slot, &r) in stream_order(tree, n).zip(&stream.symbols) {
        highs[slot.level][slot.rank * n + slot.channel] = dequantize(r, stream.qstep);
    }
    Ok(highs)
}

/// Dequantizes the stream and runs the inverse transform; returns per-voxel
/// attribute rows. With quantization step `Q` the per-channel L2 error is
/// bounded by `(Q/2) * sqrt(voxel_count - 1)` because the transform is
/// orthonormal and the DC row is exact.
pub fn reconstruct(tree: &RahtTree, stream: &CoefficientStream) -> Result<Vec<f64>, QuantError> {
    let n = stream.n_channels;
    if stream.dc.len() != n {
        return Err(QuantError::ChannelMismatch {
            expected: n,
            found: stream.dc.len(),
        });
    }
    let highs = dequantized_highs_by_level(tree, stream)?;
    Ok(raht::inverse_transform(tree, &stream.dc, &highs, n)?)
}
