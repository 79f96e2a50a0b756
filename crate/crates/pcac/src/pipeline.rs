//! End-to-end pipelines: cloud -> bitstream, bitstream + geometry ->
//! cloud, metric evaluation and rate-distortion sweeps.
//!
//! Color clouds (R, G, B channels) are converted to YUV before the
//! transform and back after reconstruction; the luminance channel then
//! carries the PSNR_Y metric. Scalar clouds pass through unchanged.

use std::path::{Path, PathBuf};

use pcac_core::cloud::{
    geometry_checksum, morton_encode, rgb_to_yuv, voxelize, yuv_to_rgb, CloudError, PointCloud,
    VoxelizedCloud,
};
use pcac_core::context::{self, CodingError, ComponentMask, DensityModel};
use pcac_core::entropy::{rlgr_decode, rlgr_encode, EntropyError};
use pcac_core::metrics;
use pcac_core::quant::{self, CoefficientStream};
use pcac_core::raht::{self, RahtError};
use pcac_core::trainer::TrainItem;

use crate::bitstream::{
    read_bitstream, symbols_checksum, write_bitstream, BitstreamError, EntropyMode, Header,
};
use crate::model_file::ModelFileError;
use crate::ply::{load_ply, PlyError};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Transform(#[from] RahtError),
    #[error(transparent)]
    Quant(#[from] quant::QuantError),
    #[error(transparent)]
    Coding(#[from] CodingError),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error(transparent)]
    Bitstream(#[from] BitstreamError),
    #[error(transparent)]
    Ply(#[from] PlyError),
    #[error(transparent)]
    ModelFile(#[from] ModelFileError),
    #[error("context mode requires an entropy model file (--model)")]
    ModelRequired,
    #[error("model trained for {model} channels, cloud has {cloud}")]
    ModelChannelMismatch { model: usize, cloud: usize },
    #[error("coefficient bound {0} does not fit the bitstream header")]
    BoundOverflow(u64),
    #[error("geometry voxel count {geometry} does not match bitstream ({header})")]
    VoxelCountMismatch { geometry: usize, header: u32 },
    #[error("geometry coordinates invalid: {0}")]
    BadGeometry(String),
    #[error("clouds differ in shape: {0}")]
    ShapeMismatch(String),
    #[error("training corpus empty or unusable: {0}")]
    Corpus(String),
    #[error(transparent)]
    Train(#[from] pcac_core::trainer::TrainError),
}

/// Converts color clouds to the coding domain and voxelizes.
pub fn prepare_cloud(cloud: &PointCloud, depth: u8) -> Result<VoxelizedCloud, PipelineError> {
    let coding_domain = if cloud.channel_names == ["R", "G", "B"] {
        rgb_to_yuv(cloud)?
    } else {
        cloud.clone()
    };
    Ok(voxelize(&coding_domain, depth)?)
}

pub struct EncodeOutput {
    pub bitstream: Vec<u8>,
    pub header: Header,
    /// The coding-domain cloud the stream was built from (YUV for color).
    pub voxelized: VoxelizedCloud,
    pub stream: CoefficientStream,
}

/// Picks the model a coding mode actually uses. Factorized mode falls back
/// to the deterministic default initialization when no model is supplied.
fn resolve_model(
    mode: EntropyMode,
    model: Option<&DensityModel>,
    n_channels: usize,
) -> Result<Option<DensityModel>, PipelineError> {
    match mode {
        EntropyMode::Rlgr => Ok(None),
        EntropyMode::Factorized => Ok(Some(match model {
            Some(m) => m.clone(),
            None => DensityModel::init(n_channels, ComponentMask::NONE, 0),
        })),
        EntropyMode::Context => model.cloned().map(Some).ok_or(PipelineError::ModelRequired),
    }
}

pub fn encode_voxelized(
    voxelized: &VoxelizedCloud,
    qstep: f64,
    mode: EntropyMode,
    model: Option<&DensityModel>,
) -> Result<EncodeOutput, PipelineError> {
    let n = voxelized.channel_count();
    let model = resolve_model(mode, model, n)?;
    if let Some(m) = &model {
        if m.n_channels != n {
            return Err(PipelineError::ModelChannelMismatch {
                model: m.n_channels,
                cloud: n,
            });
        }
    }
    let tree = raht::build_tree(voxelized)?;
    let coeffs = raht::forward_transform(&tree, &voxelized.attributes, n);
    let stream = quant::serialize(&tree, &coeffs, qstep)?;
    if stream.bound > i32::MAX as u64 {
        return Err(PipelineError::BoundOverflow(stream.bound));
    }
    let payload = match mode {
        EntropyMode::Rlgr => rlgr_encode(&stream.symbols),
        EntropyMode::Factorized => {
            context::encode_stream(model.as_ref().unwrap(), false, &tree, &stream)?
        }
        EntropyMode::Context => {
            context::encode_stream(model.as_ref().unwrap(), true, &tree, &stream)?
        }
    };
    let header = Header {
        mode,
        octree_depth: voxelized.depth,
        n_channels: n as u8,
        qstep: qstep as f32,
        voxel_count: voxelized.len() as u32,
        original_point_count: voxelized.original_point_count as u32,
        bound: stream.bound as i32,
        dc: stream.dc.clone(),
        geometry_checksum: geometry_checksum(voxelized)?,
        symbols_crc32: symbols_checksum(&stream.symbols),
    };
    let bitstream = write_bitstream(&header, &payload)?;
    Ok(EncodeOutput {
        bitstream,
        header,
        voxelized: voxelized.clone(),
        stream,
    })
}

pub fn encode_cloud(
    cloud: &PointCloud,
    depth: u8,
    qstep: f64,
    mode: EntropyMode,
    model: Option<&DensityModel>,
) -> Result<EncodeOutput, PipelineError> {
    let voxelized = prepare_cloud(cloud, depth)?;
    encode_voxelized(&voxelized, qstep, mode, model)
}

fn coding_channel_names(n: usize) -> Vec<String> {
    if n == 3 {
        vec!["Y".into(), "U".into(), "V".into()]
    } else {
        (0..n).map(|i| format!("A{i}")).collect()
    }
}

/// Builds the voxel geometry from out-of-band positions and validates it
/// against the header.
fn geometry_to_voxels(
    positions: &[[f64; 3]],
    header: &Header,
) -> Result<VoxelizedCloud, PipelineError> {
    let depth = header.octree_depth;
    let grid = 1u64 << depth;
    let mut keyed: Vec<(u64, [u32; 3])> = Vec::with_capacity(positions.len());
    for p in positions {
        let mut v = [0u32; 3];
        for a in 0..3 {
            let r = p[a].round();
            if r < 0.0 || r >= grid as f64 || (p[a] - r).abs() > 1e-6 {
                return Err(PipelineError::BadGeometry(format!(
                    "coordinate {} is not an integer voxel below {grid}",
                    p[a]
                )));
            }
            v[a] = r as u32;
        }
        keyed.push((
            morton_encode(v[0], v[1], v[2], depth).map_err(PipelineError::Cloud)?,
            v,
        ));
    }
    keyed.sort_unstable_by_key(|(k, _)| *k);
    if keyed.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(PipelineError::BadGeometry("duplicate voxels".into()));
    }
    if keyed.len() != header.voxel_count as usize {
        return Err(PipelineError::VoxelCountMismatch {
            geometry: keyed.len(),
            header: header.voxel_count,
        });
    }
    let n = header.n_channels as usize;
    let voxels: Vec<[u32; 3]> = keyed.into_iter().map(|(_, v)| v).collect();
    let cloud = VoxelizedCloud {
        depth,
        voxels,
        attributes: vec![0.0; header.voxel_count as usize * n],
        channel_names: coding_channel_names(n),
        original_point_count: header.original_point_count as u64,
    };
    if geometry_checksum(&cloud)? != header.geometry_checksum {
        return Err(PipelineError::Bitstream(BitstreamError::GeometryMismatch));
    }
    Ok(cloud)
}

pub struct DecodeOutput {
    pub header: Header,
    /// Reconstruction in the coding domain (YUV for color clouds).
    pub voxelized: VoxelizedCloud,
    pub stream: CoefficientStream,
}

pub fn decode_bitstream(
    data: &[u8],
    geometry: &[[f64; 3]],
    model: Option<&DensityModel>,
) -> Result<DecodeOutput, PipelineError> {
    let (header, payload) = read_bitstream(data)?;
    let mut cloud = geometry_to_voxels(geometry, &header)?;
    let n = header.n_channels as usize;
    let model = resolve_model(header.mode, model, n)?;
    if let Some(m) = &model {
        if m.n_channels != n {
            return Err(PipelineError::ModelChannelMismatch {
                model: m.n_channels,
                cloud: n,
            });
        }
    }
    let tree = raht::build_tree(&cloud)?;
    let qstep = header.qstep as f64;
    let bound = header.bound.max(0) as u64;
    let stream = match header.mode {
        EntropyMode::Rlgr => {
            let count = tree.high_count() * n;
            let symbols = rlgr_decode(payload, count)?;
            CoefficientStream {
                qstep,
                n_channels: n,
                dc: header.dc.clone(),
                symbols,
                bound,
            }
        }
        EntropyMode::Factorized => context::decode_stream(
            model.as_ref().unwrap(),
            false,
            &tree,
            &header.dc,
            qstep,
            bound,
            payload,
        )?,
        EntropyMode::Context => context::decode_stream(
            model.as_ref().unwrap(),
            true,
            &tree,
            &header.dc,
            qstep,
            bound,
            payload,
        )?,
    };
    if symbols_checksum(&stream.symbols) != header.symbols_crc32 {
        return Err(PipelineError::Bitstream(BitstreamError::SymbolChecksum));
    }
    cloud.attributes = quant::reconstruct(&tree, &stream)?;
    Ok(DecodeOutput {
        header,
        voxelized: cloud,
        stream,
    })
}

/// Turns a coding-domain voxel cloud back into an output point cloud
/// (positions = voxel coordinates; YUV converted back to RGB).
pub fn voxelized_to_point_cloud(cloud: &VoxelizedCloud) -> Result<PointCloud, PipelineError> {
    let positions: Vec<[f64; 3]> = cloud
        .voxels
        .iter()
        .map(|v| [v[0] as f64, v[1] as f64, v[2] as f64])
        .collect();
    let pc = PointCloud::new(
        positions,
        cloud.attributes.clone(),
        cloud.channel_names.clone(),
    )?;
    if pc.channel_names == ["Y", "U", "V"] {
        Ok(yuv_to_rgb(&pc)?)
    } else {
        Ok(pc)
    }
}

/// Reconstruction quality plus rate, as reported by `eval` and `rd-sweep`.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub psnr_per_channel: Vec<f64>,
    /// Luminance PSNR; present for 3-channel color clouds.
    pub psnr_y: Option<f64>,
    /// Bits per original point, when a bitstream is available.
    pub bpp: Option<f64>,
}

pub fn evaluate(
    original: &PointCloud,
    recon: &PointCloud,
    bitstream_bits: Option<u64>,
    original_point_count: Option<u64>,
) -> Result<Metrics, PipelineError> {
    if original.len() != recon.len() {
        return Err(PipelineError::ShapeMismatch(format!(
            "point counts {} vs {}",
            original.len(),
            recon.len()
        )));
    }
    if original.channel_count() != recon.channel_count() {
        return Err(PipelineError::ShapeMismatch(format!(
            "channel counts {} vs {}",
            original.channel_count(),
            recon.channel_count()
        )));
    }
    let n = original.channel_count();
    let m = original.len();
    let mut psnr_per_channel = Vec::with_capacity(n);
    for ch in 0..n {
        let a: Vec<f64> = (0..m).map(|i| original.attr(i)[ch]).collect();
        let b: Vec<f64> = (0..m).map(|i| recon.attr(i)[ch]).collect();
        psnr_per_channel.push(metrics::psnr(&a, &b));
    }
    let psnr_y = if n == 3 {
        let ya = rgb_to_yuv(original)?;
        let yb = rgb_to_yuv(recon)?;
        let a: Vec<f64> = (0..m).map(|i| ya.attr(i)[0]).collect();
        let b: Vec<f64> = (0..m).map(|i| yb.attr(i)[0]).collect();
        Some(metrics::psnr(&a, &b))
    } else {
        None
    };
    let bpp = match (bitstream_bits, original_point_count) {
        (Some(bits), Some(points)) if points > 0 => Some(bits as f64 / points as f64),
        _ => None,
    };
    Ok(Metrics {
        psnr_per_channel,
        psnr_y,
        bpp,
    })
}

/// Metrics of a coding-domain reconstruction against the coding-domain
/// original (PSNR_Y straight off the luminance channel).
pub fn coding_domain_metrics(
    original: &VoxelizedCloud,
    recon: &VoxelizedCloud,
    bitstream_bits: u64,
) -> Metrics {
    let n = original.channel_count();
    let m = original.len();
    let mut psnr_per_channel = Vec::with_capacity(n);
    for ch in 0..n {
        let a: Vec<f64> = (0..m).map(|i| original.attr(i)[ch]).collect();
        let b: Vec<f64> = (0..m).map(|i| recon.attr(i)[ch]).collect();
        psnr_per_channel.push(metrics::psnr(&a, &b));
    }
    let psnr_y = (n == 3).then(|| psnr_per_channel[0]);
    Metrics {
        psnr_per_channel,
        psnr_y,
        bpp: Some(bitstream_bits as f64 / original.original_point_count.max(1) as f64),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RdPoint {
    pub qstep: f64,
    pub mode: EntropyMode,
    pub metrics: Metrics,
}

/// Encodes and decodes the cloud at every quantization step, measuring
/// rate and coding-domain distortion. Worker parallelism is capped by
/// `threads` (each step is an independent pipeline).
pub fn rd_sweep(
    cloud: &PointCloud,
    depth: u8,
    qsteps: &[f64],
    mode: EntropyMode,
    model: Option<&DensityModel>,
    threads: usize,
) -> Result<Vec<RdPoint>, PipelineError> {
    let voxelized = prepare_cloud(cloud, depth)?;
    let run_one = |&qstep: &f64| -> Result<RdPoint, PipelineError> {
        let encoded = encode_voxelized(&voxelized, qstep, mode, model)?;
        let positions: Vec<[f64; 3]> = voxelized
            .voxels
            .iter()
            .map(|v| [v[0] as f64, v[1] as f64, v[2] as f64])
            .collect();
        let decoded = decode_bitstream(&encoded.bitstream, &positions, model)?;
        let metrics = coding_domain_metrics(
            &voxelized,
            &decoded.voxelized,
            encoded.bitstream.len() as u64 * 8,
        );
        Ok(RdPoint {
            qstep,
            mode,
            metrics,
        })
    };

    let workers = threads.clamp(1, qsteps.len().max(1));
    if workers <= 1 || qsteps.len() <= 1 {
        return qsteps.iter().map(run_one).collect();
    }
    let mut results: Vec<Option<Result<RdPoint, PipelineError>>> =
        (0..qsteps.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunks: Vec<(usize, &f64)> = qsteps.iter().enumerate().collect();
        let mut handles = Vec::new();
        for w in 0..workers {
            let mine: Vec<(usize, &f64)> = chunks
                .iter()
                .filter(|(i, _)| i % workers == w)
                .map(|(i, q)| (*i, *q))
                .collect();
            let run = &run_one;
            handles.push(scope.spawn(move || {
                mine.into_iter()
                    .map(|(i, q)| (i, run(q)))
                    .collect::<Vec<_>>()
            }));
        }
        for handle in handles {
            for (i, r) in handle.join().expect("rd-sweep worker panicked") {
                results[i] = Some(r);
            }
        }
    });
    results
        .into_iter()
        .map(|r| r.expect("every qstep processed"))
        .collect()
}

/// Loads every `.ply` in a directory (sorted by file name) into training
/// items; unreadable files are skipped and reported.
pub struct CorpusReport {
    pub items: Vec<TrainItem>,
    pub skipped: Vec<(PathBuf, String)>,
    pub n_channels: usize,
}

pub fn load_corpus(dir: &Path, depth: u8, qstep: f64) -> Result<CorpusReport, PipelineError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| PipelineError::Corpus(format!("{}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "ply"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(PipelineError::Corpus(format!(
            "no .ply files in {}",
            dir.display()
        )));
    }
    let mut items = Vec::new();
    let mut skipped = Vec::new();
    let mut n_channels = None;
    for path in paths {
        let result = (|| -> Result<TrainItem, PipelineError> {
            let cloud = load_ply(&path)?;
            let voxelized = prepare_cloud(&cloud, depth)?;
            Ok(TrainItem::prepare(&voxelized, qstep)?)
        })();
        match result {
            Ok(item) => {
                let n = item.stream.n_channels;
                match n_channels {
                    None => n_channels = Some(n),
                    Some(expected) if expected != n => {
                        skipped.push((path, format!("has {n} channels, corpus uses {expected}")));
                        continue;
                    }
                    _ => {}
                }
                items.push(item);
            }
            Err(e) => skipped.push((path, e.to_string())),
        }
    }
    match n_channels {
        Some(n) if !items.is_empty() => Ok(CorpusReport {
            items,
            skipped,
            n_channels: n,
        }),
        _ => Err(PipelineError::Corpus(
            "every corpus file failed to load".into(),
        )),
    }
}
