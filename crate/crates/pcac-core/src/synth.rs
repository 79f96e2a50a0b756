//! Deterministic synthetic point clouds for tests, fixtures and training
//! corpora.
//!
//! The smooth generator grows a connected voxel blob by random walk and
//! colors it with low-frequency fields plus spatially varying texture:
//! channels share structure (so inter-channel context has something to
//! learn) and texture intensity varies across the blob (so neighborhood
//! contexts do too).

use alloc::collections::BTreeSet;
use alloc::string::ToString;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cloud::{morton_decode, morton_encode, VoxelizedCloud};
use crate::math;

/// A sum of a few random low-frequency sinusoids over the grid.
struct Field {
    waves: Vec<([f64; 3], f64, f64)>,
}

impl Field {
    fn new(rng: &mut ChaCha8Rng, grid: f64, amplitude: f64) -> Self {
        let waves = (0..4)
            .map(|j| {
                let freq = core::array::from_fn(|_| {
                    rng.random_range(0.5..2.5) * core::f64::consts::TAU / grid
                });
                let phase = rng.random_range(0.0..core::f64::consts::TAU);
                let amp = amplitude / (1.0 + j as f64);
                (freq, phase, amp)
            })
            .collect();
        Self { waves }
    }

    fn at(&self, p: [u32; 3]) -> f64 {
        self.waves
            .iter()
            .map(|(freq, phase, amp)| {
                let arg = freq[0] * p[0] as f64 + freq[1] * p[1] as f64 + freq[2] * p[2] as f64;
                amp * math::sin(arg + phase)
            })
            .sum()
    }
}

fn walk_blob(rng: &mut ChaCha8Rng, voxel_count: usize, depth: u8) -> Vec<u64> {
    let grid = 1u32 << depth;
    let mut keys = BTreeSet::new();
    let mut pos = [grid / 2; 3];
    keys.insert(morton_encode(pos[0], pos[1], pos[2], depth).unwrap());
    let mut steps = 0usize;
    let cap = voxel_count * 200;
    while keys.len() < voxel_count && steps < cap {
        let axis = rng.random_range(0..3usize);
        let delta: i64 = if rng.random_bool(0.5) { 1 } else { -1 };
        let moved = pos[axis] as i64 + delta;
        if (0..grid as i64).contains(&moved) {
            pos[axis] = moved as u32;
            keys.insert(morton_encode(pos[0], pos[1], pos[2], depth).unwrap());
        }
        // Occasionally jump back towards the center to thicken the blob.
        if rng.random_bool(0.02) {
            for c in pos.iter_mut() {
                let target = grid as i64 / 2;
                let step = (target - *c as i64).signum();
                *c = (*c as i64 + step).clamp(0, grid as i64 - 1) as u32;
            }
        }
        steps += 1;
    }
    // Degenerate walks (tiny grids) top up with uniform samples.
    while keys.len() < voxel_count {
        let p: [u32; 3] = core::array::from_fn(|_| rng.random_range(0..grid));
        keys.insert(morton_encode(p[0], p[1], p[2], depth).unwrap());
    }
    keys.into_iter().collect()
}

/// Connected blob with three correlated color channels in [0, 255].
pub fn smooth_color_cloud(seed: u64, voxel_count: usize, depth: u8) -> VoxelizedCloud {
    smooth_color_cloud_textured(seed, voxel_count, depth, 1.0)
}

/// [`smooth_color_cloud`] with the high-frequency content scaled by
/// `texture`; values below one give gentler, more compressible clouds.
pub fn smooth_color_cloud_textured(
    seed: u64,
    voxel_count: usize,
    depth: u8,
    texture: f64,
) -> VoxelizedCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = (1u32 << depth) as f64;
    let keys = walk_blob(&mut rng, voxel_count, depth);
    let structure = Field::new(&mut rng, grid, 28.0);
    let texture_gate = Field::new(&mut rng, grid, 6.0);
    let detail: [Field; 3] = core::array::from_fn(|_| Field::new(&mut rng, grid, 7.0));
    let base = rng.random_range(90.0..150.0);
    let mix = [0.95, 0.75, 0.55];

    let mut voxels = Vec::with_capacity(keys.len());
    let mut attributes = Vec::with_capacity(keys.len() * 3);
    for key in keys {
        let p = morton_decode(key, depth);
        let s = structure.at(p);
        // Texture amplitude varies smoothly between quiet and busy areas.
        let gate = math::sigmoid(texture_gate.at(p) / 2.0);
        let noise: f64 = rng.random_range(-1.0..1.0) * 9.0 * gate * texture;
        for ch in 0..3 {
            let v = base + mix[ch] * (s + noise) + texture * detail[ch].at(p);
            attributes.push(v.clamp(0.0, 255.0));
        }
        voxels.push(p);
    }

    VoxelizedCloud {
        depth,
        voxels,
        attributes,
        channel_names: ["R", "G", "B"].iter().map(|s| s.to_string()).collect(),
        original_point_count: voxel_count as u64,
    }
}

/// Uniformly random voxels and attributes; the stress-test counterpart of
/// the smooth generator.
pub fn random_cloud(seed: u64, voxel_count: usize, depth: u8, channels: usize) -> VoxelizedCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = 1u32 << depth;
    let mut keys = BTreeSet::new();
    let cap = (1u64 << (3 * depth as u64)).min(voxel_count as u64) as usize;
    while keys.len() < cap {
        let p: [u32; 3] = core::array::from_fn(|_| rng.random_range(0..grid));
        keys.insert(morton_encode(p[0], p[1], p[2], depth).unwrap());
    }
    let voxels: Vec<[u32; 3]> = keys.iter().map(|&k| morton_decode(k, depth)).collect();
    let attributes = (0..voxels.len() * channels)
        .map(|_| rng.random_range(0.0..255.0))
        .collect();
    VoxelizedCloud {
        depth,
        voxels,
        attributes,
        channel_names: (0..channels)
            .map(|i| {
                if channels == 3 {
                    ["R", "G", "B"][i].to_string()
                } else {
                    alloc::format!("A{i}")
                }
            })
            .collect(),
        original_point_count: cap as u64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_cloud_is_valid_and_deterministic() {
        let a = smooth_color_cloud(3, 256, 5);
        let b = smooth_color_cloud(3, 256, 5);
        assert_eq!(a, b);
        assert_eq!(a.len(), 256);
        assert_eq!(a.channel_count(), 3);
        let keys = a.morton_keys().unwrap();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
        assert!(a.attributes.iter().all(|v| (0.0..=255.0).contains(v)));
        let c = smooth_color_cloud(4, 256, 5);
        assert_ne!(a, c);
    }

    #[test]
    fn random_cloud_respects_grid() {
        let c = random_cloud(1, 500, 4, 2);
        assert!(c.len() <= 500);
        assert!(c.voxels.iter().all(|v| v.iter().all(|&x| x < 16)));
    }
}
