//! Lossless entropy coding: a range coder driven by fixed-point symbol
//! CDFs, and an adaptive run-length Golomb-Rice coder as the classical
//! baseline. Both are exact inverses of their encoders for every input.

mod bits;
mod range;
mod rlgr;

pub use bits::{BitReader, BitWriter};
pub use range::{range_decode, range_encode, RangeDecoder, RangeEncoder};
pub use rlgr::{rlgr_decode, rlgr_encode};

use alloc::vec::Vec;

use crate::math;

/// Probability resolution of the range coder.
pub const PROB_BITS: u32 = 16;
pub const PROB_TOTAL: u32 = 1 << PROB_BITS;

#[derive(Debug, PartialEq, Eq, thiserror::Error)]
pub enum EntropyError {
    #[error("payload ended early (truncated or corrupt)")]
    Truncated,
    #[error("symbol {0} outside the model alphabet of size {1}")]
    SymbolOutOfAlphabet(usize, usize),
    #[error("alphabet of {0} symbols exceeds the coder's probability resolution")]
    AlphabetTooLarge(usize),
    #[error("empty alphabet")]
    EmptyAlphabet,
    #[error("zero probability for a transmitted symbol")]
    ZeroProbability,
    #[error("corrupt payload: {0}")]
    Corrupt(&'static str),
}

/// Cumulative symbol frequencies scaled to [`PROB_TOTAL`]. Every symbol of
/// the alphabet keeps a frequency of at least one, so anything the model
/// deems impossible is still decodable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolCdf {
    cum: Vec<u32>,
}

impl SymbolCdf {
    /// Quantizes a (not necessarily normalized) PMF onto the fixed-point
    /// grid by largest-remainder rounding on top of the per-symbol floor of
    /// one. Deterministic: remainder ties break on the lower symbol index.
    pub fn from_pmf(pmf: &[f64]) -> Result<Self, EntropyError> {
        let k = pmf.len();
        if k == 0 {
            return Err(EntropyError::EmptyAlphabet);
        }
        if k as u32 > PROB_TOTAL {
            return Err(EntropyError::AlphabetTooLarge(k));
        }
        let free = PROB_TOTAL - k as u32;
        let mass: f64 = pmf.iter().map(|p| p.max(0.0)).sum();
        let mut freqs = alloc::vec![1u32; k];
        if free > 0 && mass > 0.0 {
            let mut assigned = 0u32;
            let mut remainders: Vec<(f64, usize)> = Vec::with_capacity(k);
            for (i, p) in pmf.iter().enumerate() {
                let target = p.max(0.0) / mass * free as f64;
                let base = math::floor(target);
                freqs[i] += base as u32;
                assigned += base as u32;
                remainders.push((target - base, i));
            }
            let mut leftover = free - assigned;
            remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for (_, i) in remainders {
                if leftover == 0 {
                    break;
                }
                freqs[i] += 1;
                leftover -= 1;
            }
        } else if free > 0 {
            // Degenerate input: fall back to (nearly) uniform.
            let per = free / k as u32;
            let extra = free % k as u32;
            for (i, f) in freqs.iter_mut().enumerate() {
                *f += per + u32::from((i as u32) < extra);
            }
        }
        let mut cum = Vec::with_capacity(k + 1);
        let mut acc = 0u32;
        cum.push(0);
        for f in freqs {
            acc += f;
            cum.push(acc);
        }
        debug_assert_eq!(acc, PROB_TOTAL);
        Ok(Self { cum })
    }

    pub fn uniform(alphabet: usize) -> Result<Self, EntropyError> {
        Self::from_pmf(&alloc::vec![1.0; alphabet])
    }

    pub fn alphabet_size(&self) -> usize {
        self.cum.len() - 1
    }

    pub fn low(&self, symbol: usize) -> u32 {
        self.cum[symbol]
    }

    pub fn freq(&self, symbol: usize) -> u32 {
        self.cum[symbol + 1] - self.cum[symbol]
    }

    /// Probability implied by the fixed-point frequency.
    pub fn prob(&self, symbol: usize) -> f64 {
        self.freq(symbol) as f64 / PROB_TOTAL as f64
    }

    /// Largest symbol whose cumulative start is at or below `f`.
    pub fn lookup(&self, f: u32) -> usize {
        debug_assert!(f < PROB_TOTAL);
        // partition_point returns the first index with cum > f; the symbol
        // owning f is one before that in cumulative coordinates.
        self.cum.partition_point(|&c| c <= f) - 1
    }
}

/// Information content, in bits, of a sequence whose transmitted symbols
/// had the given modeled probabilities. Errors if any probability is not
/// strictly positive.
pub fn cross_entropy_bits(symbol_probs: &[f64]) -> Result<f64, EntropyError> {
    let mut bits = 0.0;
    for &p in symbol_probs {
        if p <= 0.0 {
            return Err(EntropyError::ZeroProbability);
        }
        bits -= math::log2(p);
    }
    Ok(bits)
}
