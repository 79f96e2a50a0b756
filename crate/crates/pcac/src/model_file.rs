//! On-disk entropy model format.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "3DACNN" | version u8 | n_channels u8 | component_mask u8 |
//! tensor_count u16 | tensor lengths u32 * count |
//! parameters f32 * total (canonical declaration order) | crc32 u32
//! ```
//!
//! Parameters are stored as f32; loading re-expands them to f64. Coding
//! always goes through a loaded model, so encoder and decoder share the
//! exact same rounded parameters.

use std::path::Path;

use pcac_core::context::{ComponentMask, DensityModel};

pub const MAGIC: [u8; 6] = *b"3DACNN";
pub const VERSION: u8 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ModelFileError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not an entropy model file (bad magic)")]
    BadMagic,
    #[error("unsupported model version {0}")]
    BadVersion(u8),
    #[error("model file corrupt: {0}")]
    Corrupt(&'static str),
    #[error("model declares {found} tensors, expected {expected}")]
    TensorCount { expected: usize, found: usize },
}

pub fn to_bytes(model: &DensityModel) -> Vec<u8> {
    let groups = model.param_groups();
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(model.n_channels as u8);
    out.push(model.mask.bits());
    out.extend_from_slice(&(groups.len() as u16).to_le_bytes());
    for (_, range) in &groups {
        out.extend_from_slice(&(range.len() as u32).to_le_bytes());
    }
    model.visit_params(|v| out.extend_from_slice(&(v as f32).to_le_bytes()));
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn from_bytes(data: &[u8]) -> Result<DensityModel, ModelFileError> {
    if data.len() < MAGIC.len() + 5 {
        return Err(ModelFileError::Corrupt("file too short"));
    }
    if data[..6] != MAGIC {
        return Err(ModelFileError::BadMagic);
    }
    let version = data[6];
    if version != VERSION {
        return Err(ModelFileError::BadVersion(version));
    }
    let body = &data[..data.len() - 4];
    let stored = u32::from_le_bytes(data[data.len() - 4..].try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(ModelFileError::Corrupt("checksum mismatch"));
    }
    let n_channels = data[7] as usize;
    if n_channels == 0 {
        return Err(ModelFileError::Corrupt("zero channels"));
    }
    let mask = ComponentMask::from_bits(data[8]);
    let tensor_count = u16::from_le_bytes(data[9..11].try_into().unwrap()) as usize;

    // Parameter layout is fully determined by (n_channels, mask); start
    // from a deterministic skeleton and overwrite every parameter.
    let mut model = DensityModel::init(n_channels, mask, 0);
    let groups = model.param_groups();
    if tensor_count != groups.len() {
        return Err(ModelFileError::TensorCount {
            expected: groups.len(),
            found: tensor_count,
        });
    }
    let mut pos = 11;
    let mut total = 0usize;
    for (_, range) in &groups {
        if pos + 4 > body.len() {
            return Err(ModelFileError::Corrupt("tensor table truncated"));
        }
        let len = u32::from_le_bytes(data[pos..pos + 4].try_into().unwrap()) as usize;
        if len != range.len() {
            return Err(ModelFileError::Corrupt("tensor shape mismatch"));
        }
        total += len;
        pos += 4;
    }
    if body.len() != pos + total * 4 {
        return Err(ModelFileError::Corrupt("parameter payload length"));
    }
    let mut params = Vec::with_capacity(total);
    for i in 0..total {
        let at = pos + i * 4;
        params.push(f32::from_le_bytes(data[at..at + 4].try_into().unwrap()) as f64);
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(ModelFileError::Corrupt("non-finite parameter"));
    }
    model.set_params_from(&params);
    Ok(model)
}

pub fn save_model(model: &DensityModel, path: &Path) -> Result<(), ModelFileError> {
    std::fs::write(path, to_bytes(model)).map_err(|e| ModelFileError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn load_model(path: &Path) -> Result<DensityModel, ModelFileError> {
    let data = std::fs::read(path).map_err(|e| ModelFileError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    from_bytes(&data)
}

/// Rounds a model through the file representation, yielding exactly what a
/// decoder loading the saved file will compute with.
pub fn round_trip(model: &DensityModel) -> DensityModel {
    from_bytes(&to_bytes(model)).expect("in-memory model serializes cleanly")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_f32_values() {
        let model = DensityModel::init(3, ComponentMask::ALL, 11);
        let bytes = to_bytes(&model);
        let loaded = from_bytes(&bytes).unwrap();
        assert_eq!(loaded.n_channels, 3);
        assert_eq!(loaded.mask, ComponentMask::ALL);
        // Twice through the file is a fixed point.
        assert_eq!(to_bytes(&loaded), bytes);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let model = DensityModel::init(2, ComponentMask::NONE, 1);
        let bytes = to_bytes(&model);
        let mut bad = bytes.clone();
        let len = bad.len();
        bad[len / 2] ^= 0x55;
        assert!(from_bytes(&bad).is_err());
        assert!(matches!(from_bytes(&bytes[..10]), Err(ModelFileError::Corrupt(_))));
        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'Z';
        assert!(matches!(from_bytes(&wrong_magic), Err(ModelFileError::BadMagic)));
    }
}
