//! Adaptive run-length Golomb-Rice coder after Malvar's backward-adaptive
//! scheme (the entropy stage of the classical transform-coding baseline).
//!
//! Two modes, selected by the adaptive run parameter `k`:
//! * `k == 0`: plain Golomb-Rice coding of the zigzag-mapped value with the
//!   adaptive parameter `kr`;
//! * `k > 0`: runs of `2^k` zeros collapse to a single `0` bit; a partial
//!   run is a `1` bit, the run length in `k` bits, then sign and
//!   Golomb-Rice coded magnitude of the terminating value.
//!
//! Both parameters adapt backward (scaled by `1 << LSGR` for fractional
//! steps) exactly as in the published scheme, so the decoder tracks the
//! encoder without side information. Constants below are the published
//! defaults; both parameters start at 1.

use alloc::vec::Vec;

use super::bits::{BitReader, BitWriter};
use super::EntropyError;

const KPMAX: u32 = 80;
const LSGR: u32 = 3;
const UP_GR: u32 = 4;
const DN_GR: u32 = 6;
const UQ_GR: u32 = 3;
const DQ_GR: u32 = 3;

/// Unary quotients are capped; longer ones switch to an explicit
/// bit-length escape so a single outlier cannot blow up the payload.
const QUOTIENT_CAP: u64 = 40;

fn zigzag(v: i64) -> u64 {
    if v >= 0 {
        2 * v as u64
    } else {
        2 * v.unsigned_abs() - 1
    }
}

fn unzigzag(u: u64) -> i64 {
    if u.is_multiple_of(2) {
        (u / 2) as i64
    } else {
        -((u / 2 + 1) as i64)
    }
}

fn significant_bits(v: u64) -> u32 {
    64 - v.leading_zeros()
}

struct GrState {
    krp: u32,
}

impl GrState {
    fn new() -> Self {
        Self { krp: 1 << LSGR }
    }

    fn kr(&self) -> u32 {
        self.krp >> LSGR
    }

    fn encode(&mut self, w: &mut BitWriter, v: u64) {
        let kr = self.kr();
        let vk = v >> kr;
        if vk < QUOTIENT_CAP {
            for _ in 0..vk {
                w.write_bit(true);
            }
            w.write_bit(false);
            w.write_bits(v, kr);
        } else {
            for _ in 0..QUOTIENT_CAP {
                w.write_bit(true);
            }
            let len = significant_bits(v);
            w.write_bits(len as u64 - 1, 6);
            w.write_bits(v, len);
        }
        self.adapt(vk);
    }

    fn decode(&mut self, r: &mut BitReader) -> Result<u64, EntropyError> {
        let kr = self.kr();
        let mut vk = 0u64;
        while r.read_bit()? {
            vk += 1;
            if vk == QUOTIENT_CAP {
                let len = r.read_bits(6)? as u32 + 1;
                let v = r.read_bits(len)?;
                self.adapt(v >> kr);
                return Ok(v);
            }
        }
        let rem = r.read_bits(kr)?;
        let v = (vk << kr) | rem;
        self.adapt(vk);
        Ok(v)
    }

    fn adapt(&mut self, vk: u64) {
        if vk == 0 {
            self.krp = self.krp.saturating_sub(2);
        } else if vk > 1 {
            self.krp = (self.krp + vk.min(KPMAX as u64) as u32).min(KPMAX);
        }
    }
}

/// Encodes any signed integer sequence; self-contained apart from the
/// symbol count, which the caller transmits out of band.
pub fn rlgr_encode(symbols: &[i64]) -> Vec<u8> {
    let mut w = BitWriter::new();
    let mut gr = GrState::new();
    let mut kp = 1u32 << LSGR;
    let mut i = 0usize;
    while i < symbols.len() {
        let k = kp >> LSGR;
        if k > 0 {
            // Run-length mode: gather the pending zero run.
            let mut zeros = 0u64;
            while i < symbols.len() && symbols[i] == 0 {
                zeros += 1;
                i += 1;
            }
            let mut k = k;
            while zeros >= (1 << k) {
                w.write_bit(false);
                zeros -= 1 << k;
                kp = (kp + UP_GR).min(KPMAX);
                k = kp >> LSGR;
            }
            if i < symbols.len() {
                let val = symbols[i];
                i += 1;
                w.write_bit(true);
                w.write_bits(zeros, k);
                w.write_bit(val < 0);
                gr.encode(&mut w, val.unsigned_abs() - 1);
                kp = kp.saturating_sub(DN_GR);
            } else if zeros > 0 {
                // Input ended inside a run; emit the partial count. The
                // decoder stops at the symbol count and never looks for a
                // terminating value.
                w.write_bit(true);
                w.write_bits(zeros, k);
            }
        } else {
            let val = symbols[i];
            i += 1;
            let u = zigzag(val);
            gr.encode(&mut w, u);
            if u == 0 {
                kp = (kp + UQ_GR).min(KPMAX);
            } else {
                kp = kp.saturating_sub(DQ_GR);
            }
        }
    }
    w.finish()
}

/// Inverse of [`rlgr_encode`]; `count` is the number of symbols to produce.
pub fn rlgr_decode(payload: &[u8], count: usize) -> Result<Vec<i64>, EntropyError> {
    let mut r = BitReader::new(payload);
    let mut gr = GrState::new();
    let mut kp = 1u32 << LSGR;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let k = kp >> LSGR;
        if k > 0 {
            let mut k = k;
            loop {
                if r.read_bit()? {
                    break;
                }
                out.extend(core::iter::repeat_n(0i64, 1usize << k));
                kp = (kp + UP_GR).min(KPMAX);
                k = kp >> LSGR;
                if out.len() > count {
                    return Err(EntropyError::Corrupt("zero run exceeds symbol count"));
                }
                if out.len() == count {
                    // Complete runs covered the tail of the stream; the
                    // encoder wrote nothing further.
                    return Ok(out);
                }
            }
            let zeros = r.read_bits(k)?;
            out.extend(core::iter::repeat_n(0i64, zeros as usize));
            if out.len() > count {
                return Err(EntropyError::Corrupt("zero run exceeds symbol count"));
            }
            if out.len() == count {
                break;
            }
            let negative = r.read_bit()?;
            let mag = gr.decode(&mut r)? + 1;
            out.push(if negative {
                -(mag as i64)
            } else {
                mag as i64
            });
            kp = kp.saturating_sub(DN_GR);
        } else {
            let u = gr.decode(&mut r)?;
            out.push(unzigzag(u));
            if u == 0 {
                kp = (kp + UQ_GR).min(KPMAX);
            } else {
                kp = kp.saturating_sub(DQ_GR);
            }
        }
    }
    Ok(out)
}
