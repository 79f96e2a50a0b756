//! Byte-oriented range coder with 32-bit state, 16-bit probability
//! resolution and carry propagation through a cache byte. The encoder and
//! decoder renormalize under identical conditions, so a valid payload is
//! consumed exactly and a truncated one is always detected.

use alloc::vec::Vec;

use super::{EntropyError, SymbolCdf, PROB_BITS, PROB_TOTAL};

const RENORM_THRESHOLD: u32 = 1 << 24;

#[derive(Debug)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
        }
    }

    pub fn encode_symbol(&mut self, cdf: &SymbolCdf, symbol: usize) -> Result<(), EntropyError> {
        if symbol >= cdf.alphabet_size() {
            return Err(EntropyError::SymbolOutOfAlphabet(
                symbol,
                cdf.alphabet_size(),
            ));
        }
        let freq = cdf.freq(symbol);
        if freq == 0 {
            return Err(EntropyError::ZeroProbability);
        }
        let r = self.range >> PROB_BITS;
        self.low += r as u64 * cdf.low(symbol) as u64;
        self.range = r * freq;
        while self.range < RENORM_THRESHOLD {
            self.shift_low();
            self.range <<= 8;
        }
        Ok(())
    }

    /// A fair bit coded straight through the range state; used for the
    /// geometric escape suffix.
    pub fn encode_half_bit(&mut self, bit: bool) {
        let r = self.range >> 1;
        if bit {
            self.low += r as u64;
            self.range -= r;
        } else {
            self.range = r;
        }
        while self.range < RENORM_THRESHOLD {
            self.shift_low();
            self.range <<= 8;
        }
    }

    fn shift_low(&mut self) {
        if self.low < 0xFF00_0000 || self.low > 0xFFFF_FFFF {
            let carry = (self.low >> 32) as u8;
            self.out.push(self.cache.wrapping_add(carry));
            for _ in 1..self.cache_size {
                self.out.push(0xFFu8.wrapping_add(carry));
            }
            self.cache = (self.low >> 24) as u8;
            self.cache_size = 0;
        }
        self.cache_size += 1;
        self.low = (self.low << 8) & 0xFFFF_FFFF;
    }

    pub fn finish(mut self) -> Vec<u8> {
        // After four shifts the 32-bit low is fully drained, so the fifth
        // always flushes the cache; output length is exactly the renorm
        // count plus five.
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

#[derive(Debug)]
pub struct RangeDecoder<'a> {
    code: u32,
    range: u32,
    input: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(input: &'a [u8]) -> Result<Self, EntropyError> {
        let mut dec = Self {
            code: 0,
            range: u32::MAX,
            input,
            pos: 0,
        };
        // The first byte only ever absorbs a carry; its value is above the
        // 32-bit window and falls out of `code` here.
        for _ in 0..5 {
            dec.code = (dec.code << 8) | u32::from(dec.next_byte()?);
        }
        Ok(dec)
    }

    fn next_byte(&mut self) -> Result<u8, EntropyError> {
        let b = *self.input.get(self.pos).ok_or(EntropyError::Truncated)?;
        self.pos += 1;
        Ok(b)
    }

    pub fn decode_symbol(&mut self, cdf: &SymbolCdf) -> Result<usize, EntropyError> {
        let r = self.range >> PROB_BITS;
        let f = (self.code / r).min(PROB_TOTAL - 1);
        let symbol = cdf.lookup(f);
        let freq = cdf.freq(symbol);
        self.code -= r * cdf.low(symbol);
        self.range = r * freq;
        while self.range < RENORM_THRESHOLD {
            self.code = (self.code << 8) | u32::from(self.next_byte()?);
            self.range <<= 8;
        }
        Ok(symbol)
    }

    pub fn decode_half_bit(&mut self) -> Result<bool, EntropyError> {
        let r = self.range >> 1;
        let bit = self.code >= r;
        if bit {
            self.code -= r;
            self.range -= r;
        } else {
            self.range = r;
        }
        while self.range < RENORM_THRESHOLD {
            self.code = (self.code << 8) | u32::from(self.next_byte()?);
            self.range <<= 8;
        }
        Ok(bit)
    }

    /// Bytes consumed so far.
    pub fn consumed(&self) -> usize {
        self.pos
    }
}

/// Encodes `symbols[i]` against `cdfs[i]`.
pub fn range_encode(symbols: &[usize], cdfs: &[SymbolCdf]) -> Result<Vec<u8>, EntropyError> {
    debug_assert_eq!(symbols.len(), cdfs.len());
    let mut enc = RangeEncoder::new();
    for (&s, cdf) in symbols.iter().zip(cdfs) {
        enc.encode_symbol(cdf, s)?;
    }
    Ok(enc.finish())
}

/// Inverse of [`range_encode`] given the identical CDF sequence.
pub fn range_decode(payload: &[u8], cdfs: &[SymbolCdf]) -> Result<Vec<usize>, EntropyError> {
    let mut dec = RangeDecoder::new(payload)?;
    let mut out = Vec::with_capacity(cdfs.len());
    for cdf in cdfs {
        out.push(dec.decode_symbol(cdf)?);
    }
    Ok(out)
}
