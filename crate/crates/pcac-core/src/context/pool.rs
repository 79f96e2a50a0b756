//! Multi-scale feature pooling over a level's node grid.
//!
//! Node features are linearly projected per scale, mean-pooled into cubic
//! cells of side 2, 4, 8 and 16, and read back by trilinear interpolation
//! among the eight cell centers surrounding a query point. Interpolation
//! weights are renormalized over occupied cells, so an isolated node reads
//! back its own projected feature and a constant feature field reads back
//! unchanged at every scale.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::nn::{Linear, LinearGrad};

/// Projection widths per scale; their sum is the query feature size.
pub const SCALE_DIMS: [usize; 4] = [3, 3, 6, 8];
pub const SCALE_COUNT: usize = 4;
/// Total width of a concatenated multi-scale query.
pub const QUERY_DIM: usize = 20;

struct Scale {
    dim: usize,
    side: f64,
    /// Cell coordinate -> index into `means` / `counts` / `members`.
    cells: BTreeMap<[i64; 3], usize>,
    means: Vec<f64>,
    counts: Vec<f64>,
    members: Vec<Vec<u32>>,
}

/// One query's interpolation footprint: per scale, the touched occupied
/// cells with their renormalized weights.
#[derive(Debug, Clone, Default)]
pub struct QueryCache {
    corners: [Vec<(u32, f64)>; SCALE_COUNT],
}

pub struct Pyramid {
    scales: Vec<Scale>,
    feat_dim: usize,
}

impl Pyramid {
    /// `features` is node-major with `feat_dim` entries per node;
    /// `positions` are the nodes' cells on the level grid.
    pub fn build(
        projections: &[Linear; SCALE_COUNT],
        features: &[f64],
        feat_dim: usize,
        positions: &[[u32; 3]],
    ) -> Self {
        let count = positions.len();
        debug_assert_eq!(features.len(), count * feat_dim);
        let mut scales = Vec::with_capacity(SCALE_COUNT);
        for (s, proj) in projections.iter().enumerate() {
            let dim = SCALE_DIMS[s];
            debug_assert_eq!(proj.in_dim, feat_dim);
            debug_assert_eq!(proj.out_dim, dim);
            let side = (1u64 << (s + 1)) as f64;
            let mut projected = vec![0.0; count * dim];
            for i in 0..count {
                proj.forward(
                    &features[i * feat_dim..(i + 1) * feat_dim],
                    &mut projected[i * dim..(i + 1) * dim],
                );
            }
            let mut cells: BTreeMap<[i64; 3], usize> = BTreeMap::new();
            let mut sums: Vec<f64> = Vec::new();
            let mut counts: Vec<f64> = Vec::new();
            let mut members: Vec<Vec<u32>> = Vec::new();
            for (i, pos) in positions.iter().enumerate() {
                let cell = [
                    (pos[0] as i64) >> (s + 1),
                    (pos[1] as i64) >> (s + 1),
                    (pos[2] as i64) >> (s + 1),
                ];
                let idx = *cells.entry(cell).or_insert_with(|| {
                    sums.extend(core::iter::repeat_n(0.0, dim));
                    counts.push(0.0);
                    members.push(Vec::new());
                    counts.len() - 1
                });
                for d in 0..dim {
                    sums[idx * dim + d] += projected[i * dim + d];
                }
                counts[idx] += 1.0;
                members[idx].push(i as u32);
            }
            for (idx, c) in counts.iter().enumerate() {
                for d in 0..dim {
                    sums[idx * dim + d] /= c;
                }
            }
            scales.push(Scale {
                dim,
                side,
                cells,
                means: sums,
                counts,
                members,
            });
        }
        Self { scales, feat_dim }
    }

    /// Reads the concatenated multi-scale feature at a node position
    /// (interpreted at the cell center). Returns the 20-wide feature and
    /// the interpolation footprint for the backward pass.
    pub fn query(&self, pos: [u32; 3]) -> (Vec<f64>, QueryCache) {
        let mut out = vec![0.0; QUERY_DIM];
        let mut cache = QueryCache::default();
        let mut offset = 0usize;
        for (s, scale) in self.scales.iter().enumerate() {
            // Continuous query coordinate in cell units, shifted so that
            // integer values land on cell centers.
            let mut base = [0i64; 3];
            let mut frac = [0.0f64; 3];
            for a in 0..3 {
                let q = (pos[a] as f64 + 0.5) / scale.side - 0.5;
                let f = math::floor(q);
                base[a] = f as i64;
                frac[a] = q - f;
            }
            let mut corners: Vec<(u32, f64)> = Vec::new();
            let mut total = 0.0;
            for corner in 0..8u32 {
                let mut cell = [0i64; 3];
                let mut weight = 1.0;
                for a in 0..3 {
                    let hi = (corner >> a) & 1 == 1;
                    cell[a] = base[a] + i64::from(hi);
                    weight *= if hi { frac[a] } else { 1.0 - frac[a] };
                }
                if weight == 0.0 {
                    continue;
                }
                if let Some(&idx) = scale.cells.get(&cell) {
                    corners.push((idx as u32, weight));
                    total += weight;
                }
            }
            if total > 0.0 {
                for (idx, weight) in corners.iter_mut() {
                    *weight /= total;
                    for d in 0..scale.dim {
                        out[offset + d] += *weight * scale.means[*idx as usize * scale.dim + d];
                    }
                }
                cache.corners[s] = corners;
            }
            offset += scale.dim;
        }
        (out, cache)
    }

    /// Pushes query gradients back to the projection layers. `queries`
    /// pairs each recorded footprint with the gradient of its 20-wide
    /// output; `features` must be the array the pyramid was built from.
    pub fn backward(
        &self,
        queries: &[(&QueryCache, &[f64])],
        features: &[f64],
        grads: &mut [LinearGrad; SCALE_COUNT],
        projections: &[Linear; SCALE_COUNT],
    ) {
        let mut offset = 0usize;
        for (s, scale) in self.scales.iter().enumerate() {
            let dim = scale.dim;
            let mut dmeans = vec![0.0; scale.means.len()];
            let mut touched = vec![false; scale.counts.len()];
            for (cache, dq) in queries {
                for &(idx, weight) in &cache.corners[s] {
                    let idx = idx as usize;
                    touched[idx] = true;
                    for d in 0..dim {
                        dmeans[idx * dim + d] += weight * dq[offset + d];
                    }
                }
            }
            // Mean pooling: each member node receives dmean / count, then
            // the shared projection accumulates over nodes.
            let mut dproj = vec![0.0; dim];
            for (idx, members) in scale.members.iter().enumerate() {
                if !touched[idx] {
                    continue;
                }
                let inv = 1.0 / scale.counts[idx];
                for d in 0..dim {
                    dproj[d] = dmeans[idx * dim + d] * inv;
                }
                if dproj.iter().all(|v| *v == 0.0) {
                    continue;
                }
                for &node in members {
                    let i = node as usize;
                    projections[s].backward(
                        &features[i * self.feat_dim..(i + 1) * self.feat_dim],
                        &dproj,
                        None,
                        &mut grads[s],
                    );
                }
            }
            offset += dim;
        }
    }
}
