//! Entropy coding of a coefficient stream under the learned model.
//!
//! Symbols are processed level by level from the root, channel by channel
//! within a level. A channel's distributions depend only on already-coded
//! data (higher levels, earlier channels), so the whole channel group is
//! modeled up front, then coded; afterwards the level's symbols are
//! dequantized and pushed through one inverse transform step, yielding the
//! next level's reconstructed lows for the following contexts.

use alloc::vec;
use alloc::vec::Vec;

use super::density::{MonotoneCdf, THETA_DIM, ZERO_THETA};
use super::engine::{ChannelContext, LevelContext};
use super::model::{ComponentMask, DensityModel};
use crate::entropy::{
    EntropyError, RangeDecoder, RangeEncoder, SymbolCdf, PROB_TOTAL,
};
use crate::quant::{self, CoefficientStream};
use crate::raht::{self, RahtTree};

/// Quantized symbols above this magnitude cannot be carved into a
/// 16-bit-precision alphabet; re-encode with a larger quantization step.
pub const MAX_BOUND: u64 = (PROB_TOTAL as u64 - 3) / 2;

#[derive(Debug, PartialEq, Eq, thiserror::Error)]
pub enum CodingError {
    #[error("coefficient bound {0} exceeds the coder limit {MAX_BOUND}; increase the quantization step")]
    BoundTooLarge(u64),
    #[error("model expects {expected} channels, stream has {found}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("stream shape does not match the tree: {0}")]
    StreamMismatch(&'static str),
    #[error("model parameters are not finite")]
    ModelCorrupt,
    #[error("escape suffix exceeds sane length (corrupt payload)")]
    EscapeOverflow,
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error(transparent)]
    Quant(#[from] quant::QuantError),
}

/// Alphabet index of symbol `r` within `{esc_low, -B..=B, esc_high}`.
fn symbol_index(r: i64, bound: u64) -> usize {
    let b = bound as i64;
    if r < -b {
        0
    } else if r > b {
        2 * bound as usize + 2
    } else {
        (r + b + 1) as usize
    }
}

fn encode_with_escape(
    enc: &mut RangeEncoder,
    cdf: &SymbolCdf,
    r: i64,
    bound: u64,
) -> Result<(), CodingError> {
    let idx = symbol_index(r, bound);
    enc.encode_symbol(cdf, idx)?;
    let b = bound as i64;
    if r < -b || r > b {
        // Geometric(1/2) suffix for the magnitude beyond the alphabet edge.
        let extra = r.unsigned_abs() - bound - 1;
        for _ in 0..extra {
            enc.encode_half_bit(true);
        }
        enc.encode_half_bit(false);
    }
    Ok(())
}

fn decode_with_escape(
    dec: &mut RangeDecoder,
    cdf: &SymbolCdf,
    bound: u64,
) -> Result<i64, CodingError> {
    let idx = dec.decode_symbol(cdf)?;
    let b = bound as i64;
    let top = 2 * bound as usize + 2;
    if idx == 0 || idx == top {
        let mut extra = 0u64;
        while dec.decode_half_bit()? {
            extra += 1;
            if extra > 1 << 20 {
                return Err(CodingError::EscapeOverflow);
            }
        }
        let mag = b + 1 + extra as i64;
        Ok(if idx == 0 { -mag } else { mag })
    } else {
        Ok(idx as i64 - b - 1)
    }
}

fn conditioned_cdf(
    base: &MonotoneCdf,
    theta: &[f64; THETA_DIM],
    bound: u64,
) -> Result<SymbolCdf, CodingError> {
    if !theta.iter().all(|v| v.is_finite()) {
        return Err(CodingError::ModelCorrupt);
    }
    let pmf = base.pmf_with_tails(bound, theta);
    if pmf.iter().any(|p| !p.is_finite()) {
        return Err(CodingError::ModelCorrupt);
    }
    Ok(SymbolCdf::from_pmf(&pmf)?)
}

enum ChannelOp<'a> {
    Encode {
        symbols: &'a [i64],
        enc: RangeEncoder,
    },
    Decode {
        dec: RangeDecoder<'a>,
    },
    /// Teacher-forced probability evaluation of given symbols under the
    /// smooth (un-quantized) per-bin densities.
    Probs {
        symbols: &'a [i64],
        probs: Vec<f64>,
    },
}

struct StreamDriver<'a> {
    model: &'a DensityModel,
    mask: ComponentMask,
    tree: &'a RahtTree,
    qstep: f64,
    bound: u64,
    /// Per-channel CDFs for the unconditioned model, built once.
    factorized_cdfs: Option<Vec<SymbolCdf>>,
}

impl<'a> StreamDriver<'a> {
    fn new(
        model: &'a DensityModel,
        use_context: bool,
        tree: &'a RahtTree,
        qstep: f64,
        bound: u64,
        needs_cdfs: bool,
    ) -> Result<Self, CodingError> {
        if !model.all_params_finite() {
            return Err(CodingError::ModelCorrupt);
        }
        if needs_cdfs && bound > MAX_BOUND {
            return Err(CodingError::BoundTooLarge(bound));
        }
        let mask = if use_context {
            model.mask
        } else {
            ComponentMask::NONE
        };
        let factorized_cdfs = if mask.is_empty() && needs_cdfs {
            let mut cdfs = Vec::with_capacity(model.n_channels);
            for base in &model.base {
                cdfs.push(conditioned_cdf(base, &ZERO_THETA, bound)?);
            }
            Some(cdfs)
        } else {
            None
        };
        Ok(Self {
            model,
            mask,
            tree,
            qstep,
            bound,
            factorized_cdfs,
        })
    }

    /// Walks the stream in transmission order, applying `op` per channel
    /// group. Returns all symbols (as coded or decoded) in transmission
    /// order.
    fn run(&self, dc: &[f64], op: &mut ChannelOp) -> Result<Vec<i64>, CodingError> {
        let n = self.model.n_channels;
        let tree = self.tree;
        let mut all_symbols: Vec<i64> = Vec::with_capacity(tree.high_count() * n);
        let mut lows = dc.to_vec();
        let mut offset = 0usize;
        for level in tree.transmission_levels() {
            let high_count = tree.levels[level].high_nodes.len();
            let mut level_symbols: Vec<Vec<i64>> = Vec::with_capacity(n);
            if high_count > 0 {
                let level_ctx = (!self.mask.is_empty()).then(|| {
                    LevelContext::build(self.model, self.mask, tree, level, &lows)
                });
                for channel in 0..n {
                    let chan_ctx: Option<ChannelContext> = level_ctx.as_ref().map(|lc| {
                        ChannelContext::build(
                            self.model,
                            self.mask,
                            tree,
                            lc,
                            channel,
                            &level_symbols,
                            self.qstep,
                        )
                    });
                    let theta_of = |rank: usize| -> &[f64; THETA_DIM] {
                        chan_ctx
                            .as_ref()
                            .map(|t| t.theta(rank))
                            .unwrap_or(&ZERO_THETA)
                    };
                    let shared_cdf = self.factorized_cdfs.as_ref().map(|c| &c[channel]);
                    let base = &self.model.base[channel];
                    let mut decoded = vec![0i64; high_count];
                    match op {
                        ChannelOp::Encode { symbols, enc } => {
                            let group = &symbols[offset..offset + high_count];
                            for rank in 0..high_count {
                                let tmp;
                                let cdf = match shared_cdf {
                                    Some(c) => c,
                                    None => {
                                        tmp = conditioned_cdf(base, theta_of(rank), self.bound)?;
                                        &tmp
                                    }
                                };
                                encode_with_escape(enc, cdf, group[rank], self.bound)?;
                            }
                            decoded.copy_from_slice(group);
                        }
                        ChannelOp::Decode { dec } => {
                            for rank in 0..high_count {
                                let tmp;
                                let cdf = match shared_cdf {
                                    Some(c) => c,
                                    None => {
                                        tmp = conditioned_cdf(base, theta_of(rank), self.bound)?;
                                        &tmp
                                    }
                                };
                                decoded[rank] = decode_with_escape(dec, cdf, self.bound)?;
                            }
                        }
                        ChannelOp::Probs { symbols, probs } => {
                            let group = &symbols[offset..offset + high_count];
                            for rank in 0..high_count {
                                let (p, _, _) = base.bin_prob(group[rank], theta_of(rank));
                                probs.push(p);
                            }
                            decoded.copy_from_slice(group);
                        }
                    }
                    offset += high_count;
                    all_symbols.extend_from_slice(&decoded);
                    level_symbols.push(decoded);
                }
            }
            // Advance the reconstruction one level down using the
            // dequantized symbols of this level (node-major rows).
            let mut node_major = vec![0.0; high_count * n];
            for (channel, syms) in level_symbols.iter().enumerate() {
                for rank in 0..high_count {
                    node_major[rank * n + channel] = quant::dequantize(syms[rank], self.qstep);
                }
            }
            lows = raht::inverse_step(tree, level, &lows, &node_major, n)
                .map_err(quant::QuantError::from)?;
        }
        Ok(all_symbols)
    }
}

fn check_stream(
    model: &DensityModel,
    tree: &RahtTree,
    stream: &CoefficientStream,
) -> Result<(), CodingError> {
    if stream.n_channels != model.n_channels {
        return Err(CodingError::ChannelMismatch {
            expected: model.n_channels,
            found: stream.n_channels,
        });
    }
    if stream.symbols.len() != tree.high_count() * stream.n_channels {
        return Err(CodingError::StreamMismatch("symbol count"));
    }
    if stream.dc.len() != stream.n_channels {
        return Err(CodingError::StreamMismatch("dc channels"));
    }
    Ok(())
}

/// Entropy-codes a coefficient stream. With `use_context` false the model's
/// context networks are bypassed and every symbol of a channel shares the
/// unconditioned density (the factorized baseline).
pub fn encode_stream(
    model: &DensityModel,
    use_context: bool,
    tree: &RahtTree,
    stream: &CoefficientStream,
) -> Result<Vec<u8>, CodingError> {
    check_stream(model, tree, stream)?;
    let driver = StreamDriver::new(model, use_context, tree, stream.qstep, stream.bound, true)?;
    let mut op = ChannelOp::Encode {
        symbols: &stream.symbols,
        enc: RangeEncoder::new(),
    };
    driver.run(&stream.dc, &mut op)?;
    match op {
        ChannelOp::Encode { enc, .. } => Ok(enc.finish()),
        _ => unreachable!(),
    }
}

/// Inverse of [`encode_stream`]; returns the reassembled coefficient
/// stream (symbols in transmission order).
pub fn decode_stream(
    model: &DensityModel,
    use_context: bool,
    tree: &RahtTree,
    dc: &[f64],
    qstep: f64,
    bound: u64,
    payload: &[u8],
) -> Result<CoefficientStream, CodingError> {
    if dc.len() != model.n_channels {
        return Err(CodingError::StreamMismatch("dc channels"));
    }
    let driver = StreamDriver::new(model, use_context, tree, qstep, bound, true)?;
    let mut op = ChannelOp::Decode {
        dec: RangeDecoder::new(payload)?,
    };
    let symbols = driver.run(dc, &mut op)?;
    Ok(CoefficientStream {
        qstep,
        n_channels: model.n_channels,
        dc: dc.to_vec(),
        symbols,
        bound,
    })
}

/// Teacher-forced smooth bin probabilities of every transmitted symbol, in
/// transmission order. This is what the cross-entropy objective sums over
/// and what bitrate telemetry integrates.
pub fn stream_symbol_probs(
    model: &DensityModel,
    use_context: bool,
    tree: &RahtTree,
    stream: &CoefficientStream,
) -> Result<Vec<f64>, CodingError> {
    check_stream(model, tree, stream)?;
    let driver = StreamDriver::new(model, use_context, tree, stream.qstep, stream.bound, false)?;
    let mut op = ChannelOp::Probs {
        symbols: &stream.symbols,
        probs: Vec::with_capacity(stream.symbols.len()),
    };
    driver.run(&stream.dc, &mut op)?;
    match op {
        ChannelOp::Probs { probs, .. } => Ok(probs),
        _ => unreachable!(),
    }
}
