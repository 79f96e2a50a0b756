//! Command-line driver for the point cloud attribute codec.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use pcac::bitstream::EntropyMode;
use pcac::model_file;
use pcac::pipeline::{self, PipelineError};
use pcac::ply::{self, PlyFormat};
use pcac_core::context::{ComponentMask, DensityModel};
use pcac_core::trainer::{self, TrainConfig};

#[derive(Parser)]
#[command(
    name = "pcac",
    about = "Point cloud attribute codec: hierarchical transform coding with learned entropy models",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Rlgr,
    Factorized,
    Context,
}

impl From<Mode> for EntropyMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Rlgr => EntropyMode::Rlgr,
            Mode::Factorized => EntropyMode::Factorized,
            Mode::Context => EntropyMode::Context,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Compress a point cloud's attributes into a bitstream.
    Encode {
        /// Input PLY (positions + RGB or scalar attribute).
        #[arg(long)]
        input: PathBuf,
        /// Where to write the voxelized geometry the decoder needs.
        #[arg(long, value_name = "FILE")]
        geometry_out: PathBuf,
        /// Output bitstream file.
        #[arg(long)]
        output: PathBuf,
        /// Octree depth (voxel grid is 2^depth per axis).
        #[arg(long, default_value_t = 9)]
        depth: u8,
        /// Uniform quantization step.
        #[arg(long, default_value_t = 10.0)]
        qstep: f64,
        /// Entropy coding mode.
        #[arg(long, value_enum)]
        mode: Mode,
        /// Entropy model file (required for context mode).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Optional PLY of the voxelized original attributes, written for
        /// later `eval` against the decoded output.
        #[arg(long, value_name = "FILE")]
        reference_out: Option<PathBuf>,
    },
    /// Reconstruct attributes from a bitstream and its geometry.
    Decode {
        /// Input bitstream file.
        #[arg(long)]
        input: PathBuf,
        /// Geometry PLY produced at encode time.
        #[arg(long)]
        geometry: PathBuf,
        /// Output PLY with reconstructed attributes.
        #[arg(long)]
        output: PathBuf,
        /// Entropy model file (required for context mode).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Train the entropy model on a directory of PLY files.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output model file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 9)]
        depth: u8,
        #[arg(long, default_value_t = 10.0)]
        qstep: f64,
        /// Context components to enable: any of h, l, c, s (or "none").
        #[arg(long, default_value = "hlcs")]
        components: String,
        /// Loss log CSV path (defaults to <out>.loss.csv).
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Compare a reconstruction against the original.
    Eval {
        #[arg(long)]
        original: PathBuf,
        #[arg(long)]
        recon: PathBuf,
        /// Bitstream file, for bits-per-point reporting.
        #[arg(long)]
        bitstream: Option<PathBuf>,
    },
    /// Rate-distortion sweep over quantization steps; writes a CSV.
    RdSweep {
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated quantization steps.
        #[arg(long, value_delimiter = ',')]
        qsteps: Vec<f64>,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value_t = 9)]
        depth: u8,
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

fn load_model_arg(path: &Option<PathBuf>) -> Result<Option<DensityModel>, PipelineError> {
    match path {
        Some(p) => Ok(Some(model_file::load_model(p)?)),
        None => Ok(None),
    }
}

/// Worker cap for rd-sweep, from the THREADS environment variable.
fn thread_cap() -> usize {
    std::env::var("THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&t| t >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|p| p.get())
                .unwrap_or(1)
        })
}

fn run() -> Result<(), Box<dyn std::error::Error>> {
    match Cli::parse().command {
        Command::Encode {
            input,
            geometry_out,
            output,
            depth,
            qstep,
            mode,
            model,
            reference_out,
        } => {
            let cloud = ply::load_ply(&input)?;
            let model = load_model_arg(&model)?;
            let start = Instant::now();
            let encoded = pipeline::encode_cloud(&cloud, depth, qstep, mode.into(), model.as_ref())?;
            let seconds = start.elapsed().as_secs_f64();
            let positions: Vec<[f64; 3]> = encoded
                .voxelized
                .voxels
                .iter()
                .map(|v| [v[0] as f64, v[1] as f64, v[2] as f64])
                .collect();
            ply::save_ply_positions(&positions, &geometry_out)?;
            if let Some(ref_path) = &reference_out {
                let reference = pipeline::voxelized_to_point_cloud(&encoded.voxelized)?;
                ply::save_ply(&reference, ref_path, PlyFormat::BinaryLittleEndian)?;
            }
            std::fs::write(&output, &encoded.bitstream)?;
            let bits = encoded.bitstream.len() as f64 * 8.0;
            println!(
                "encoded {} points -> {} voxels, {} bytes, bpp {:.4}, encode_seconds {:.3}",
                cloud.len(),
                encoded.voxelized.len(),
                encoded.bitstream.len(),
                bits / cloud.len() as f64,
                seconds
            );
        }
        Command::Decode {
            input,
            geometry,
            output,
            model,
        } => {
            let data = std::fs::read(&input)?;
            let positions = ply::load_ply_positions(&geometry)?;
            let model = load_model_arg(&model)?;
            let start = Instant::now();
            let decoded = pipeline::decode_bitstream(&data, &positions, model.as_ref())?;
            let seconds = start.elapsed().as_secs_f64();
            let cloud = pipeline::voxelized_to_point_cloud(&decoded.voxelized)?;
            ply::save_ply(&cloud, &output, PlyFormat::BinaryLittleEndian)?;
            println!(
                "decoded {} voxels ({} mode), decode_seconds {:.3}",
                decoded.voxelized.len(),
                decoded.header.mode,
                seconds
            );
        }
        Command::Train {
            corpus,
            epochs,
            lr,
            seed,
            out,
            depth,
            qstep,
            components,
            loss_csv,
        } => {
            let mask = ComponentMask::from_letters(&components)
                .ok_or("--components accepts letters h, l, c, s or 'none'")?;
            let report = pipeline::load_corpus(&corpus, depth, qstep)?;
            for (path, reason) in &report.skipped {
                eprintln!("warning: skipping {}: {reason}", path.display());
            }
            let cfg = TrainConfig {
                epochs,
                learning_rate: lr,
                seed,
                ..TrainConfig::default()
            };
            let start = Instant::now();
            let outcome = trainer::train(&report.items, report.n_channels, mask, &cfg)?;
            let seconds = start.elapsed().as_secs_f64();
            model_file::save_model(&outcome.model, &out)?;

            let csv_path = loss_csv.unwrap_or_else(|| {
                let mut p = out.clone().into_os_string();
                p.push(".loss.csv");
                PathBuf::from(p)
            });
            let mut csv = String::from("epoch,nats,bits_per_point\n");
            for row in &outcome.log {
                csv.push_str(&format!(
                    "{},{:.6},{:.6}\n",
                    row.epoch, row.nats, row.bits_per_point
                ));
            }
            std::fs::write(&csv_path, csv)?;
            for row in &outcome.log {
                println!(
                    "epoch {:>3}  nats {:>12.3}  bits/point {:>8.4}",
                    row.epoch, row.nats, row.bits_per_point
                );
            }
            println!(
                "trained {} clouds x {} epochs ({} components) in {:.1}s -> {}",
                report.items.len(),
                epochs,
                mask,
                seconds,
                out.display()
            );
        }
        Command::Eval {
            original,
            recon,
            bitstream,
        } => {
            let a = ply::load_ply(&original)?;
            let b = ply::load_ply(&recon)?;
            let (bits, points) = match &bitstream {
                Some(p) => {
                    let data = std::fs::read(p)?;
                    let (header, _) = pcac::bitstream::read_bitstream(&data)?;
                    (
                        Some(data.len() as u64 * 8),
                        Some(header.original_point_count as u64),
                    )
                }
                None => (None, None),
            };
            let m = pipeline::evaluate(&a, &b, bits, points)?;
            if let Some(y) = m.psnr_y {
                println!("psnr_y {:.4} dB", y);
            }
            for (ch, p) in m.psnr_per_channel.iter().enumerate() {
                println!("psnr[{}] {:.4} dB", a.channel_names.get(ch).map(String::as_str).unwrap_or("?"), p);
            }
            if let Some(bpp) = m.bpp {
                println!("bpp {:.4}", bpp);
            }
        }
        Command::RdSweep {
            input,
            qsteps,
            mode,
            csv,
            depth,
            model,
        } => {
            if qsteps.is_empty() {
                return Err("need at least one qstep".into());
            }
            let cloud = ply::load_ply(&input)?;
            let model = load_model_arg(&model)?;
            let points = pipeline::rd_sweep(
                &cloud,
                depth,
                &qsteps,
                mode.into(),
                model.as_ref(),
                thread_cap(),
            )?;
            let n = points
                .first()
                .map(|p| p.metrics.psnr_per_channel.len())
                .unwrap_or(0);
            let mut out = String::from("qstep,bpp,psnr_y");
            for ch in 0..n {
                out.push_str(&format!(",psnr_c{ch}"));
            }
            out.push_str(",mode\n");
            for p in &points {
                out.push_str(&format!(
                    "{},{:.6},{:.4}",
                    p.qstep,
                    p.metrics.bpp.unwrap_or(0.0),
                    p.metrics.psnr_y.unwrap_or(f64::NAN)
                ));
                for v in &p.metrics.psnr_per_channel {
                    out.push_str(&format!(",{v:.4}"));
                }
                out.push_str(&format!(",{}\n", p.mode));
            }
            std::fs::write(&csv, &out)?;
            print!("{out}");
            std::io::stdout().flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
