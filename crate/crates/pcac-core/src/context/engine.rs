//! Per-level context computation shared by the encoder, the decoder and
//! the trainer.
//!
//! Everything here is a function of decode-time data only: the level's
//! reconstructed low coefficients (from the DC row and already-decoded
//! symbols) and earlier channels of the same level. The encoder feeds the
//! same reconstructed values, so both sides compute bit-identical contexts
//! and therefore bit-identical symbol distributions.

use alloc::vec;
use alloc::vec::Vec;

use super::density::THETA_DIM;
use super::model::{ComponentMask, DensityModel, ModelGrads, EMBED_DIM, POOL_DIM};
use super::pool::{Pyramid, QueryCache};
use crate::math;
use crate::nn::MlpCache;
use crate::raht::RahtTree;

/// Reconstructed attribute values are divided by this before entering any
/// network.
pub const VALUE_NORM: f64 = 255.0;

/// Initial-coding context of one tree level: per-high-node embeddings plus
/// the caches the backward pass needs.
pub struct LevelContext {
    pub level: usize,
    pub high_count: usize,
    node_ctx: Vec<f64>,
    l_pyramid: Option<Pyramid>,
    l_queries: Vec<QueryCache>,
    h_caches: Vec<MlpCache>,
    i_embeds: Vec<f64>,
    i_caches: Vec<MlpCache>,
}

/// Builds the per-node context rows for a whole level:
/// `[depth/binary_depth, log2(weight), recon_low/255 .., recon_attr/255 ..]`.
pub fn node_context_rows(
    tree: &RahtTree,
    level: usize,
    level_lows: &[f64],
    n_channels: usize,
) -> Vec<f64> {
    let nodes = &tree.levels[level].nodes;
    let depth_norm = level as f64 / tree.binary_depth() as f64;
    let ctx_dim = DensityModel::node_ctx_dim(n_channels);
    let mut rows = Vec::with_capacity(nodes.len() * ctx_dim);
    for (i, node) in nodes.iter().enumerate() {
        rows.push(depth_norm);
        rows.push(math::log2(node.weight as f64));
        let lows = &level_lows[i * n_channels..(i + 1) * n_channels];
        for l in lows {
            rows.push(l / VALUE_NORM);
        }
        let inv_sqrt_w = 1.0 / math::sqrt(node.weight as f64);
        for l in lows {
            rows.push(l * inv_sqrt_w / VALUE_NORM);
        }
    }
    rows
}

impl LevelContext {
    pub fn build(
        model: &DensityModel,
        mask: ComponentMask,
        tree: &RahtTree,
        level: usize,
        level_lows: &[f64],
    ) -> Self {
        let n = model.n_channels;
        let lvl = &tree.levels[level];
        let high_count = lvl.high_nodes.len();
        let ctx_dim = DensityModel::node_ctx_dim(n);
        let node_ctx = node_context_rows(tree, level, level_lows, n);

        let mut l_pyramid = None;
        let mut l_queries = Vec::new();
        let mut l_feats = vec![0.0; high_count * POOL_DIM];
        if mask.has_l() && high_count > 0 {
            let positions: Vec<[u32; 3]> = lvl.nodes.iter().map(|nd| nd.pos).collect();
            let pyramid = Pyramid::build(&model.proj_l, &node_ctx, ctx_dim, &positions);
            l_queries.reserve(high_count);
            for (rank, &node) in lvl.high_nodes.iter().enumerate() {
                let (feat, cache) = pyramid.query(lvl.nodes[node as usize].pos);
                l_feats[rank * POOL_DIM..(rank + 1) * POOL_DIM].copy_from_slice(&feat);
                l_queries.push(cache);
            }
            l_pyramid = Some(pyramid);
        }

        let mut h_embeds = vec![0.0; high_count * EMBED_DIM];
        let mut h_caches = Vec::new();
        if mask.has_h() {
            h_caches.reserve(high_count);
            for (rank, &node) in lvl.high_nodes.iter().enumerate() {
                let i = node as usize;
                let (embed, cache) = model.mlp_h.forward(&node_ctx[i * ctx_dim..(i + 1) * ctx_dim]);
                h_embeds[rank * EMBED_DIM..(rank + 1) * EMBED_DIM].copy_from_slice(&embed);
                h_caches.push(cache);
            }
        }

        let mut i_embeds = vec![0.0; high_count * EMBED_DIM];
        let mut i_caches = Vec::new();
        if mask.uses_initial() {
            i_caches.reserve(high_count);
            let mut input = vec![0.0; EMBED_DIM + POOL_DIM];
            for rank in 0..high_count {
                input[..EMBED_DIM]
                    .copy_from_slice(&h_embeds[rank * EMBED_DIM..(rank + 1) * EMBED_DIM]);
                input[EMBED_DIM..]
                    .copy_from_slice(&l_feats[rank * POOL_DIM..(rank + 1) * POOL_DIM]);
                let (embed, cache) = model.mlp_i.forward(&input);
                i_embeds[rank * EMBED_DIM..(rank + 1) * EMBED_DIM].copy_from_slice(&embed);
                i_caches.push(cache);
            }
        }

        Self {
            level,
            high_count,
            node_ctx,
            l_pyramid,
            l_queries,
            h_caches,
            i_embeds,
            i_caches,
        }
    }

    pub fn initial_context(&self, rank: usize) -> &[f64] {
        &self.i_embeds[rank * EMBED_DIM..(rank + 1) * EMBED_DIM]
    }

    /// Backpropagates the accumulated initial-context gradients (one
    /// `EMBED_DIM` row per high node, summed over channels) into the
    /// level's networks.
    pub fn backward(
        &self,
        model: &DensityModel,
        mask: ComponentMask,
        d_initial: &[f64],
        grads: &mut ModelGrads,
    ) {
        if !mask.uses_initial() || self.high_count == 0 {
            return;
        }
        let mut d_l_feats = vec![0.0; self.high_count * POOL_DIM];
        let mut d_input = vec![0.0; EMBED_DIM + POOL_DIM];
        for rank in 0..self.high_count {
            d_input.iter_mut().for_each(|v| *v = 0.0);
            model.mlp_i.backward(
                &self.i_caches[rank],
                &d_initial[rank * EMBED_DIM..(rank + 1) * EMBED_DIM],
                Some(&mut d_input),
                &mut grads.mlp_i,
            );
            if mask.has_h() {
                model.mlp_h.backward(
                    &self.h_caches[rank],
                    &d_input[..EMBED_DIM],
                    None,
                    &mut grads.mlp_h,
                );
            }
            if mask.has_l() {
                d_l_feats[rank * POOL_DIM..(rank + 1) * POOL_DIM]
                    .copy_from_slice(&d_input[EMBED_DIM..]);
            }
        }
        if let Some(pyramid) = &self.l_pyramid {
            let queries: Vec<(&QueryCache, &[f64])> = self
                .l_queries
                .iter()
                .enumerate()
                .map(|(rank, cache)| {
                    (cache, &d_l_feats[rank * POOL_DIM..(rank + 1) * POOL_DIM])
                })
                .collect();
            pyramid.backward(&queries, &self.node_ctx, &mut grads.proj_l, &model.proj_l);
        }
    }
}

/// Inter-channel context for one (level, channel) group plus the head
/// outputs conditioning the density.
pub struct ChannelContext {
    pub channel: usize,
    prev_feats: Vec<f64>,
    active_inter: bool,
    use_head: bool,
    c_caches: Vec<MlpCache>,
    s_pyramid: Option<Pyramid>,
    s_queries: Vec<QueryCache>,
    cc_caches: Vec<MlpCache>,
    head_inputs: Vec<f64>,
    thetas: Vec<[f64; THETA_DIM]>,
}

impl ChannelContext {
    /// `prev_symbols[ch]` holds the already-coded symbols of earlier
    /// channels on this level (one per high node, Morton order).
    pub fn build(
        model: &DensityModel,
        mask: ComponentMask,
        tree: &RahtTree,
        level_ctx: &LevelContext,
        channel: usize,
        prev_symbols: &[Vec<i64>],
        qstep: f64,
    ) -> Self {
        debug_assert_eq!(prev_symbols.len(), channel);
        let high_count = level_ctx.high_count;
        let prev_dim = DensityModel::prev_dim(model.n_channels);
        let active_inter = channel > 0 && mask.uses_inter_channel();
        let use_head = !mask.is_empty();

        let mut prev_feats = vec![0.0; high_count * prev_dim];
        if active_inter {
            for (ch, syms) in prev_symbols.iter().enumerate() {
                for rank in 0..high_count {
                    prev_feats[rank * prev_dim + ch] =
                        crate::quant::dequantize(syms[rank], qstep) / VALUE_NORM;
                }
            }
        }

        let mut c_embeds = vec![0.0; high_count * EMBED_DIM];
        let mut c_caches = Vec::new();
        if active_inter && mask.has_c() {
            c_caches.reserve(high_count);
            for rank in 0..high_count {
                let (embed, cache) = model
                    .mlp_c
                    .forward(&prev_feats[rank * prev_dim..(rank + 1) * prev_dim]);
                c_embeds[rank * EMBED_DIM..(rank + 1) * EMBED_DIM].copy_from_slice(&embed);
                c_caches.push(cache);
            }
        }

        let mut s_pyramid = None;
        let mut s_queries = Vec::new();
        let mut s_feats = vec![0.0; high_count * POOL_DIM];
        if active_inter && mask.has_s() && high_count > 0 {
            let lvl = &tree.levels[level_ctx.level];
            let positions: Vec<[u32; 3]> = lvl
                .high_nodes
                .iter()
                .map(|&node| lvl.nodes[node as usize].pos)
                .collect();
            let pyramid = Pyramid::build(&model.proj_s, &prev_feats, prev_dim, &positions);
            s_queries.reserve(high_count);
            for (rank, pos) in positions.iter().enumerate() {
                let (feat, cache) = pyramid.query(*pos);
                s_feats[rank * POOL_DIM..(rank + 1) * POOL_DIM].copy_from_slice(&feat);
                s_queries.push(cache);
            }
            s_pyramid = Some(pyramid);
        }

        let mut cc_embeds = vec![0.0; high_count * EMBED_DIM];
        let mut cc_caches = Vec::new();
        if active_inter {
            cc_caches.reserve(high_count);
            let mut input = vec![0.0; EMBED_DIM + POOL_DIM];
            for rank in 0..high_count {
                input[..EMBED_DIM]
                    .copy_from_slice(&c_embeds[rank * EMBED_DIM..(rank + 1) * EMBED_DIM]);
                input[EMBED_DIM..]
                    .copy_from_slice(&s_feats[rank * POOL_DIM..(rank + 1) * POOL_DIM]);
                let (embed, cache) = model.mlp_cc.forward(&input);
                cc_embeds[rank * EMBED_DIM..(rank + 1) * EMBED_DIM].copy_from_slice(&embed);
                cc_caches.push(cache);
            }
        }

        let mut head_inputs = vec![0.0; high_count * 2 * EMBED_DIM];
        let mut thetas = vec![[0.0; THETA_DIM]; high_count];
        if use_head {
            let head = &model.heads[channel];
            let mut out = vec![0.0; THETA_DIM];
            for rank in 0..high_count {
                let row = &mut head_inputs[rank * 2 * EMBED_DIM..(rank + 1) * 2 * EMBED_DIM];
                row[..EMBED_DIM].copy_from_slice(level_ctx.initial_context(rank));
                row[EMBED_DIM..]
                    .copy_from_slice(&cc_embeds[rank * EMBED_DIM..(rank + 1) * EMBED_DIM]);
                head.forward(row, &mut out);
                thetas[rank].copy_from_slice(&out);
            }
        }

        Self {
            channel,
            prev_feats,
            active_inter,
            use_head,
            c_caches,
            s_pyramid,
            s_queries,
            cc_caches,
            head_inputs,
            thetas,
        }
    }

    pub fn theta(&self, rank: usize) -> &[f64; THETA_DIM] {
        &self.thetas[rank]
    }

    /// Backpropagates per-node conditioning gradients through the head and
    /// the inter-channel networks; initial-context gradients are added to
    /// `d_initial` for the level-wide backward pass.
    pub fn backward(
        &self,
        model: &DensityModel,
        mask: ComponentMask,
        d_thetas: &[[f64; THETA_DIM]],
        grads: &mut ModelGrads,
        d_initial: &mut [f64],
    ) {
        if !self.use_head {
            return;
        }
        let high_count = self.thetas.len();
        let head = &model.heads[self.channel];
        let mut d_s_feats = vec![0.0; high_count * POOL_DIM];
        let mut d_head_input = vec![0.0; 2 * EMBED_DIM];
        let mut d_cc_input = vec![0.0; EMBED_DIM + POOL_DIM];
        for rank in 0..high_count {
            d_head_input.iter_mut().for_each(|v| *v = 0.0);
            head.backward(
                &self.head_inputs[rank * 2 * EMBED_DIM..(rank + 1) * 2 * EMBED_DIM],
                &d_thetas[rank],
                Some(&mut d_head_input),
                &mut grads.heads[self.channel],
            );
            for (acc, d) in d_initial[rank * EMBED_DIM..(rank + 1) * EMBED_DIM]
                .iter_mut()
                .zip(&d_head_input[..EMBED_DIM])
            {
                *acc += d;
            }
            if self.active_inter {
                d_cc_input.iter_mut().for_each(|v| *v = 0.0);
                model.mlp_cc.backward(
                    &self.cc_caches[rank],
                    &d_head_input[EMBED_DIM..],
                    Some(&mut d_cc_input),
                    &mut grads.mlp_cc,
                );
                if mask.has_c() {
                    model.mlp_c.backward(
                        &self.c_caches[rank],
                        &d_cc_input[..EMBED_DIM],
                        None,
                        &mut grads.mlp_c,
                    );
                }
                if mask.has_s() {
                    d_s_feats[rank * POOL_DIM..(rank + 1) * POOL_DIM]
                        .copy_from_slice(&d_cc_input[EMBED_DIM..]);
                }
            }
        }
        if let Some(pyramid) = &self.s_pyramid {
            let queries: Vec<(&QueryCache, &[f64])> = self
                .s_queries
                .iter()
                .enumerate()
                .map(|(rank, cache)| {
                    (cache, &d_s_feats[rank * POOL_DIM..(rank + 1) * POOL_DIM])
                })
                .collect();
            pyramid.backward(&queries, &self.prev_feats, &mut grads.proj_s, &model.proj_s);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raht::build_tree;
    use alloc::string::ToString;
    use alloc::vec;
    use alloc::vec::Vec;

    /// Six x-paired voxels: three high-frequency nodes on level 1. Built
    /// directly (voxelize would rescale the handcrafted layout).
    fn three_pair_tree() -> (crate::raht::RahtTree, usize) {
        let voxels = vec![
            [0u32, 0, 0],
            [1, 0, 0],
            [2, 2, 0],
            [3, 2, 0],
            [4, 4, 4],
            [5, 4, 4],
        ];
        let cloud = crate::cloud::VoxelizedCloud {
            depth: 3,
            voxels,
            attributes: (0..12).map(|i| 10.0 * i as f64).collect(),
            channel_names: vec!["A".to_string(), "B".to_string()],
            original_point_count: 6,
        };
        let tree = build_tree(&cloud).unwrap();
        assert_eq!(tree.levels[1].high_nodes.len(), 3);
        (tree, 2)
    }

    #[test]
    fn node_embedding_change_is_bounded_by_its_jacobian() {
        // Perturbing a reconstructed low by eps moves the node embedding by
        // at most L * eps, with L taken from the finite-difference Jacobian.
        let (tree, n) = three_pair_tree();
        let model = DensityModel::init(n, ComponentMask::ALL, 3);
        let level = 1;
        let node_count = tree.levels[level].nodes.len();
        let lows: Vec<f64> = (0..node_count * n).map(|i| 40.0 + i as f64).collect();
        let ctx_dim = DensityModel::node_ctx_dim(n);

        let embed_of = |lows: &[f64]| -> Vec<f64> {
            let rows = node_context_rows(&tree, level, lows, n);
            model.mlp_h.forward(&rows[..ctx_dim]).0
        };
        let base = embed_of(&lows);

        // Finite-difference Jacobian w.r.t. the first node's low values.
        let h = 1e-5;
        let mut frob = 0.0;
        for c in 0..n {
            let mut plus = lows.clone();
            plus[c] += h;
            let mut minus = lows.clone();
            minus[c] -= h;
            let hi = embed_of(&plus);
            let lo = embed_of(&minus);
            for (a, b) in hi.iter().zip(&lo) {
                let d = (a - b) / (2.0 * h);
                frob += d * d;
            }
        }
        let lipschitz = crate::math::sqrt(frob);

        let eps = 1e-4;
        let mut perturbed = lows.clone();
        perturbed[0] += eps;
        let moved = embed_of(&perturbed);
        let delta: f64 = crate::math::sqrt(
            moved
                .iter()
                .zip(&base)
                .map(|(a, b)| (a - b) * (a - b))
                .sum(),
        );
        assert!(
            delta <= lipschitz * eps * 1.01 + 1e-12,
            "delta {delta} vs L*eps {}",
            lipschitz * eps
        );
        assert!(delta > 0.0, "embedding must actually respond");
    }

    #[test]
    fn neighbor_coefficients_reach_spatial_but_not_coefficient_context() {
        // On the three-node toy level, perturbing a NEIGHBOR's first-channel
        // coefficient flows into a node's conditioning through the spatial
        // pooling path only; the per-node coefficient path ignores it.
        let (tree, n) = three_pair_tree();
        let level = 1;
        let node_count = tree.levels[level].nodes.len();
        let lows = vec![10.0; node_count * n];

        let theta_for = |mask_letters: &str, prev: &[i64]| -> Vec<f64> {
            let mut model = DensityModel::init(n, ComponentMask::from_letters(mask_letters).unwrap(), 3);
            // Live heads so conditioning reflects the context inputs.
            for head in model.heads.iter_mut() {
                head.w.iter_mut().enumerate().for_each(|(i, w)| {
                    *w = 0.01 * (1 + i % 7) as f64;
                });
            }
            let lc = LevelContext::build(&model, model.mask, &tree, level, &lows);
            let cc = ChannelContext::build(
                &model,
                model.mask,
                &tree,
                &lc,
                1,
                &[prev.to_vec()],
                10.0,
            );
            cc.theta(0).to_vec()
        };

        let original = [5i64, 7, 9];
        let tampered = [5i64, 7, 42]; // change a different node's channel-0 symbol

        // Coefficient-only context: node 0 keeps its conditioning.
        assert_eq!(theta_for("hc", &original), theta_for("hc", &tampered));
        // Spatial context: the neighborhood changed, so must the theta.
        assert_ne!(theta_for("hs", &original), theta_for("hs", &tampered));
    }
}
