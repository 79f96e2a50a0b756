//! Core algorithms for point cloud attribute compression.
//!
//! The pipeline implemented here turns per-voxel attributes (color,
//! reflectance) into a compact symbol stream and back:
//!
//! 1. [`cloud`] — voxelization, Morton ordering and color conversion;
//! 2. [`raht`] — the region-adaptive hierarchical (Haar) transform over the
//!    voxel octree;
//! 3. [`quant`] — uniform quantization and serialization of the
//!    high-frequency coefficients into transmission order;
//! 4. [`entropy`] — a 16-bit-precision range coder plus an adaptive
//!    run-length Golomb-Rice coder;
//! 5. [`context`] — the learned entropy model: per-coefficient context
//!    features conditioning a monotone factorized density;
//! 6. [`trainer`] — cross-entropy training of the density model with
//!    manual reverse-mode gradients and Adam.
//!
//! The crate is `no_std`-compatible (`alloc` required); all file formats,
//! I/O and the CLI live in the companion `pcac` crate.

#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::needless_range_loop)]

extern crate alloc;

pub mod cloud;
pub mod context;
pub mod entropy;
pub mod math;
pub mod metrics;
pub mod nn;
pub mod quant;
pub mod raht;
pub mod synth;
pub mod trainer;
