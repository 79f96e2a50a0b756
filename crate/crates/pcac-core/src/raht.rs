//! Region-adaptive hierarchical transform over the voxel octree.
//!
//! Voxels are merged pairwise along the x, then y, then z axis, repeating
//! until one root remains, so an octree of depth `D` yields `3*D` binary
//! merge levels. Each two-way merge turns the children's low-frequency
//! coefficients into one low- and one high-frequency coefficient through an
//! orthonormal 2x2 kernel weighted by subtree sizes; unpaired nodes pass
//! their low coefficient through unchanged. Only the root low coefficient
//! (the DC) and the high coefficients need to be transmitted.

use alloc::vec;
use alloc::vec::Vec;

use crate::cloud::VoxelizedCloud;
use crate::math;

#[derive(Debug, PartialEq, Eq, thiserror::Error)]
pub enum RahtError {
    #[error("cannot build a transform tree from an empty cloud")]
    EmptyCloud,
    #[error("level {level}: expected {expected} high-frequency coefficient rows, got {found}")]
    HighCountMismatch {
        level: usize,
        expected: usize,
        found: usize,
    },
    #[error("expected {expected} DC channels, got {found}")]
    DcChannelMismatch { expected: usize, found: usize },
}

/// One node of the merge tree. `first_child`/`child_count` index into the
/// previous level's node array; children of a two-way merge are adjacent,
/// with the even-key (lower active coordinate) child first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RahtNode {
    /// Morton key on this level's grid (the original key shifted right once
    /// per completed merge level).
    pub key: u64,
    /// Cell index on this level's (anisotropic) grid.
    pub pos: [u32; 3],
    /// Number of leaf voxels under this node.
    pub weight: u32,
    pub first_child: u32,
    pub child_count: u8,
}

impl RahtNode {
    /// A node is high-frequency iff it was produced by a two-way merge.
    pub fn is_high(&self) -> bool {
        self.child_count == 2
    }
}

/// Nodes of one tree level, sorted by `key`.
#[derive(Debug, Clone, Default)]
pub struct RahtLevel {
    pub nodes: Vec<RahtNode>,
    /// Indices (into `nodes`) of the two-child nodes, ascending.
    pub high_nodes: Vec<u32>,
}

/// The full merge tree. `levels[0]` holds the leaves (one per voxel),
/// `levels[3 * octree_depth]` the single root.
#[derive(Debug, Clone)]
pub struct RahtTree {
    pub octree_depth: u8,
    pub levels: Vec<RahtLevel>,
}

impl RahtTree {
    pub fn binary_depth(&self) -> usize {
        3 * self.octree_depth as usize
    }

    pub fn voxel_count(&self) -> usize {
        self.levels[0].nodes.len()
    }

    pub fn root(&self) -> &RahtNode {
        &self.levels[self.binary_depth()].nodes[0]
    }

    /// Merge dimension (0 = x, 1 = y, 2 = z) applied when building
    /// `levels[upper]` from `levels[upper - 1]`.
    pub fn merge_dim(upper: usize) -> usize {
        (upper + 2) % 3
    }

    /// Total number of transmitted high-frequency coefficients per channel.
    pub fn high_count(&self) -> usize {
        self.levels.iter().map(|l| l.high_nodes.len()).sum()
    }

    /// Levels in transmission order: root level first, leaves last. The
    /// leaf level itself carries no high nodes and is skipped.
    pub fn transmission_levels(&self) -> impl Iterator<Item = usize> {
        (1..self.levels.len()).rev()
    }
}

/// The orthonormal merge kernel:
/// `l = (sqrt(w1) l1 + sqrt(w2) l2) / sqrt(w1 + w2)`,
/// `h = (-sqrt(w2) l1 + sqrt(w1) l2) / sqrt(w1 + w2)`,
/// applied per channel.
pub fn kernel(w1: f64, w2: f64, l1: &[f64], l2: &[f64]) -> (Vec<f64>, Vec<f64>) {
    debug_assert_eq!(l1.len(), l2.len());
    let inv = 1.0 / math::sqrt(w1 + w2);
    let a = math::sqrt(w1) * inv;
    let b = math::sqrt(w2) * inv;
    let low = l1.iter().zip(l2).map(|(x, y)| a * x + b * y).collect();
    let high = l1.iter().zip(l2).map(|(x, y)| -b * x + a * y).collect();
    (low, high)
}

/// Transpose of [`kernel`]; recovers the children's low coefficients.
pub fn inverse_kernel(w1: f64, w2: f64, low: &[f64], high: &[f64]) -> (Vec<f64>, Vec<f64>) {
    debug_assert_eq!(low.len(), high.len());
    let inv = 1.0 / math::sqrt(w1 + w2);
    let a = math::sqrt(w1) * inv;
    let b = math::sqrt(w2) * inv;
    let l1 = low.iter().zip(high).map(|(l, h)| a * l - b * h).collect();
    let l2 = low.iter().zip(high).map(|(l, h)| b * l + a * h).collect();
    (l1, l2)
}

/// Builds the merge tree for a voxelized cloud. Levels with no mergeable
/// pair still advance the dimension cycle, so the tree always has exactly
/// `3 * depth` merge levels.
pub fn build_tree(cloud: &VoxelizedCloud) -> Result<RahtTree, RahtError> {
    if cloud.is_empty() {
        return Err(RahtError::EmptyCloud);
    }
    let keys = cloud
        .morton_keys()
        .expect("voxelized cloud coordinates are in range");

    let leaves: Vec<RahtNode> = cloud
        .voxels
        .iter()
        .zip(&keys)
        .map(|(v, &key)| RahtNode {
            key,
            pos: *v,
            weight: 1,
            first_child: 0,
            child_count: 0,
        })
        .collect();
    debug_assert!(leaves.windows(2).all(|w| w[0].key < w[1].key));

    let mut levels = vec![RahtLevel {
        nodes: leaves,
        high_nodes: Vec::new(),
    }];

    for upper in 1..=3 * cloud.depth as usize {
        let dim = RahtTree::merge_dim(upper);
        let prev = &levels[upper - 1];
        let mut level = RahtLevel::default();
        let mut i = 0usize;
        while i < prev.nodes.len() {
            let a = &prev.nodes[i];
            let paired = prev
                .nodes
                .get(i + 1)
                .is_some_and(|b| b.key >> 1 == a.key >> 1);
            let mut pos = a.pos;
            pos[dim] >>= 1;
            if paired {
                let b = &prev.nodes[i + 1];
                level.high_nodes.push(level.nodes.len() as u32);
                level.nodes.push(RahtNode {
                    key: a.key >> 1,
                    pos,
                    weight: a.weight + b.weight,
                    first_child: i as u32,
                    child_count: 2,
                });
                i += 2;
            } else {
                level.nodes.push(RahtNode {
                    key: a.key >> 1,
                    pos,
                    weight: a.weight,
                    first_child: i as u32,
                    child_count: 1,
                });
                i += 1;
            }
        }
        levels.push(level);
    }

    debug_assert_eq!(levels.last().unwrap().nodes.len(), 1);
    Ok(RahtTree {
        octree_depth: cloud.depth,
        levels,
    })
}

/// Per-level coefficients produced by [`forward_transform`].
///
/// `lows[d]` has one `n_channels`-row per node of `levels[d]`;
/// `highs[d]` one row per entry of `levels[d].high_nodes`.
#[derive(Debug, Clone)]
pub struct Coefficients {
    pub n_channels: usize,
    pub lows: Vec<Vec<f64>>,
    pub highs: Vec<Vec<f64>>,
}

impl Coefficients {
    /// The DC coefficient: the root's low-frequency row.
    pub fn dc(&self) -> &[f64] {
        self.lows.last().expect("tree has a root level")
    }
}

/// Runs the transform bottom-up. The leaf attribute rows are the level-0
/// low coefficients; every two-child node applies [`kernel`] to its
/// children, every one-child node copies its child's low row.
pub fn forward_transform(tree: &RahtTree, leaf_attributes: &[f64], n_channels: usize) -> Coefficients {
    assert_eq!(leaf_attributes.len(), tree.voxel_count() * n_channels);
    let mut lows: Vec<Vec<f64>> = Vec::with_capacity(tree.levels.len());
    let mut highs: Vec<Vec<f64>> = Vec::with_capacity(tree.levels.len());
    lows.push(leaf_attributes.to_vec());
    highs.push(Vec::new());

    for upper in 1..tree.levels.len() {
        let level = &tree.levels[upper];
        let children = &tree.levels[upper - 1];
        let prev_lows = &lows[upper - 1];
        let mut low = Vec::with_capacity(level.nodes.len() * n_channels);
        let mut high = Vec::with_capacity(level.high_nodes.len() * n_channels);
        for node in &level.nodes {
            let c = node.first_child as usize;
            let l1 = &prev_lows[c * n_channels..(c + 1) * n_channels];
            if node.is_high() {
                let w1 = children.nodes[c].weight as f64;
                let w2 = children.nodes[c + 1].weight as f64;
                let l2 = &prev_lows[(c + 1) * n_channels..(c + 2) * n_channels];
                let (l, h) = kernel(w1, w2, l1, l2);
                low.extend_from_slice(&l);
                high.extend_from_slice(&h);
            } else {
                low.extend_from_slice(l1);
            }
        }
        lows.push(low);
        highs.push(high);
    }

    Coefficients {
        n_channels,
        lows,
        highs,
    }
}

/// One top-down reconstruction step: given the low rows of `levels[upper]`
/// and that level's high rows (node-major, channel-minor, in
/// `high_nodes` order), recovers the low rows of `levels[upper - 1]`.
pub fn inverse_step(
    tree: &RahtTree,
    upper: usize,
    upper_lows: &[f64],
    upper_highs: &[f64],
    n_channels: usize,
) -> Result<Vec<f64>, RahtError> {
    let level = &tree.levels[upper];
    let children = &tree.levels[upper - 1];
    let expected = level.high_nodes.len() * n_channels;
    if upper_highs.len() != expected {
        return Err(RahtError::HighCountMismatch {
            level: upper,
            expected: level.high_nodes.len(),
            found: upper_highs.len() / n_channels.max(1),
        });
    }
    let mut lower = vec![0.0; children.nodes.len() * n_channels];
    let mut rank = 0usize;
    for (i, node) in level.nodes.iter().enumerate() {
        let c = node.first_child as usize;
        let low = &upper_lows[i * n_channels..(i + 1) * n_channels];
        if node.is_high() {
            let w1 = children.nodes[c].weight as f64;
            let w2 = children.nodes[c + 1].weight as f64;
            let high = &upper_highs[rank * n_channels..(rank + 1) * n_channels];
            rank += 1;
            let (l1, l2) = inverse_kernel(w1, w2, low, high);
            lower[c * n_channels..(c + 1) * n_channels].copy_from_slice(&l1);
            lower[(c + 1) * n_channels..(c + 2) * n_channels].copy_from_slice(&l2);
        } else {
            lower[c * n_channels..(c + 1) * n_channels].copy_from_slice(low);
        }
    }
    Ok(lower)
}

/// Full top-down inverse transform. `highs_by_level[d]` must hold the high
/// rows of `levels[d]` (node-major, channel-minor); entries for levels
/// without high nodes may be empty. Returns the leaf attribute rows.
pub fn inverse_transform(
    tree: &RahtTree,
    dc: &[f64],
    highs_by_level: &[Vec<f64>],
    n_channels: usize,
) -> Result<Vec<f64>, RahtError> {
    if dc.len() != n_channels {
        return Err(RahtError::DcChannelMismatch {
            expected: n_channels,
            found: dc.len(),
        });
    }
    let empty = Vec::new();
    let mut lows = dc.to_vec();
    for upper in (1..tree.levels.len()).rev() {
        let highs = highs_by_level.get(upper).unwrap_or(&empty);
        lows = inverse_step(tree, upper, &lows, highs, n_channels)?;
    }
    Ok(lows)
}
