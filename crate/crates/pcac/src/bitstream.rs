//! The attribute bitstream container.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "3DAC" | version u8 | entropy_mode u8 | octree_depth u8 |
//! n_channels u8 | qstep f32 | voxel_count u32 | original_point_count u32 |
//! bound i32 | dc f64 * n | payload_len u64 |
//! geometry_checksum u64 | symbols_crc32 u32 | header_crc32 u32 | payload
//! ```
//!
//! The geometry checksum ties the stream to the out-of-band geometry; the
//! symbol checksum covers the decoded quantized coefficients, so decoding
//! with the wrong entropy model (or a damaged payload) is detected even
//! when the arithmetic decoder happens to produce a syntactically valid
//! symbol sequence. The header checksum rejects tampered headers outright.

use std::fmt;

#[derive(Debug, thiserror::Error)]
pub enum BitstreamError {
    #[error("not an attribute bitstream (bad magic)")]
    BadMagic,
    #[error("unsupported bitstream version {0}")]
    BadVersion(u8),
    #[error("unknown entropy mode {0}")]
    BadMode(u8),
    #[error("header checksum mismatch (tampered or corrupt header)")]
    HeaderChecksum,
    #[error("bitstream truncated")]
    Truncated,
    #[error("coefficient bound {0} does not fit the header field")]
    BoundOverflow(u64),
    #[error("decoded symbols fail the stream checksum (wrong model or corrupt payload)")]
    SymbolChecksum,
    #[error("geometry does not match the bitstream (checksum mismatch)")]
    GeometryMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntropyMode {
    Rlgr,
    Factorized,
    Context,
}

impl EntropyMode {
    pub fn code(self) -> u8 {
        match self {
            EntropyMode::Rlgr => 0,
            EntropyMode::Factorized => 1,
            EntropyMode::Context => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, BitstreamError> {
        match code {
            0 => Ok(EntropyMode::Rlgr),
            1 => Ok(EntropyMode::Factorized),
            2 => Ok(EntropyMode::Context),
            other => Err(BitstreamError::BadMode(other)),
        }
    }
}

impl fmt::Display for EntropyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntropyMode::Rlgr => "rlgr",
            EntropyMode::Factorized => "factorized",
            EntropyMode::Context => "context",
        })
    }
}

pub const MAGIC: [u8; 4] = *b"3DAC";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub mode: EntropyMode,
    pub octree_depth: u8,
    pub n_channels: u8,
    pub qstep: f32,
    pub voxel_count: u32,
    pub original_point_count: u32,
    pub bound: i32,
    pub dc: Vec<f64>,
    pub geometry_checksum: u64,
    pub symbols_crc32: u32,
}

/// CRC32 over the symbol sequence's little-endian bytes.
pub fn symbols_checksum(symbols: &[i64]) -> u32 {
    let mut hasher = crc32fast::Hasher::new();
    for s in symbols {
        hasher.update(&s.to_le_bytes());
    }
    hasher.finalize()
}

pub fn write_bitstream(header: &Header, payload: &[u8]) -> Result<Vec<u8>, BitstreamError> {
    let mut out = Vec::with_capacity(64 + payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(header.mode.code());
    out.push(header.octree_depth);
    out.push(header.n_channels);
    out.extend_from_slice(&header.qstep.to_le_bytes());
    out.extend_from_slice(&header.voxel_count.to_le_bytes());
    out.extend_from_slice(&header.original_point_count.to_le_bytes());
    out.extend_from_slice(&header.bound.to_le_bytes());
    for dc in &header.dc {
        out.extend_from_slice(&dc.to_le_bytes());
    }
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&header.geometry_checksum.to_le_bytes());
    out.extend_from_slice(&header.symbols_crc32.to_le_bytes());
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out.extend_from_slice(payload);
    Ok(out)
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], BitstreamError> {
        if self.pos + n > self.data.len() {
            return Err(BitstreamError::Truncated);
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, BitstreamError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, BitstreamError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32, BitstreamError> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, BitstreamError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, BitstreamError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, BitstreamError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_bitstream(data: &[u8]) -> Result<(Header, &[u8]), BitstreamError> {
    let mut c = Cursor { data, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(BitstreamError::BadMagic);
    }
    let version = c.u8()?;
    if version != VERSION {
        return Err(BitstreamError::BadVersion(version));
    }
    let mode = EntropyMode::from_code(c.u8()?)?;
    let octree_depth = c.u8()?;
    let n_channels = c.u8()?;
    let qstep = c.f32()?;
    let voxel_count = c.u32()?;
    let original_point_count = c.u32()?;
    let bound = c.i32()?;
    let mut dc = Vec::with_capacity(n_channels as usize);
    for _ in 0..n_channels {
        dc.push(c.f64()?);
    }
    let payload_len = c.u64()? as usize;
    let geometry_checksum = c.u64()?;
    let symbols_crc32 = c.u32()?;
    let header_end = c.pos;
    let stored_crc = c.u32()?;
    if crc32fast::hash(&data[..header_end]) != stored_crc {
        return Err(BitstreamError::HeaderChecksum);
    }
    let payload = c.take(payload_len)?;
    Ok((
        Header {
            mode,
            octree_depth,
            n_channels,
            qstep,
            voxel_count,
            original_point_count,
            bound,
            dc,
            geometry_checksum,
            symbols_crc32,
        },
        payload,
    ))
}
