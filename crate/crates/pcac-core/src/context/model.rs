//! The trainable entropy model: context networks plus per-channel monotone
//! densities, with canonical parameter ordering for the optimizer, the
//! gradient checker and the on-disk format.

use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::density::{MonotoneCdf, MonotoneGrad};
use super::pool::{SCALE_COUNT, SCALE_DIMS};
use crate::nn::{Linear, LinearGrad, Mlp, MlpGrad};

/// Embedding width shared by all context features.
pub const EMBED_DIM: usize = 8;
/// Width of the concatenated multi-scale pooling query.
pub const POOL_DIM: usize = super::pool::QUERY_DIM;

/// Which context components feed the density. The progression
/// none -> H -> HL -> HLC -> HLCS mirrors the model ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComponentMask(u8);

impl ComponentMask {
    pub const NONE: Self = Self(0);
    /// High-frequency node context (depth, weight, reconstructed values).
    pub const H: u8 = 1;
    /// Multi-scale low-frequency neighborhood context.
    pub const L: u8 = 2;
    /// Previously decoded channels at the same node.
    pub const C: u8 = 4;
    /// Spatial neighborhood of previously decoded channel coefficients.
    pub const S: u8 = 8;
    pub const ALL: Self = Self(Self::H | Self::L | Self::C | Self::S);

    pub fn from_bits(bits: u8) -> Self {
        Self(bits & Self::ALL.0)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    /// Parses letters `h`, `l`, `c`, `s` (any case, any order); an empty
    /// string or "none" is the bare factorized model.
    pub fn from_letters(s: &str) -> Option<Self> {
        if s.eq_ignore_ascii_case("none") {
            return Some(Self::NONE);
        }
        let mut bits = 0;
        for ch in s.chars() {
            bits |= match ch.to_ascii_lowercase() {
                'h' => Self::H,
                'l' => Self::L,
                'c' => Self::C,
                's' => Self::S,
                _ => return None,
            };
        }
        Some(Self(bits))
    }

    pub fn has_h(self) -> bool {
        self.0 & Self::H != 0
    }

    pub fn has_l(self) -> bool {
        self.0 & Self::L != 0
    }

    pub fn has_c(self) -> bool {
        self.0 & Self::C != 0
    }

    pub fn has_s(self) -> bool {
        self.0 & Self::S != 0
    }

    /// Any initial-coding context at all.
    pub fn uses_initial(self) -> bool {
        self.has_h() || self.has_l()
    }

    /// Any inter-channel context at all.
    pub fn uses_inter_channel(self) -> bool {
        self.has_c() || self.has_s()
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

impl core::fmt::Display for ComponentMask {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        if self.is_empty() {
            return f.write_str("none");
        }
        if self.has_h() {
            f.write_str("h")?;
        }
        if self.has_l() {
            f.write_str("l")?;
        }
        if self.has_c() {
            f.write_str("c")?;
        }
        if self.has_s() {
            f.write_str("s")?;
        }
        Ok(())
    }
}

/// Context networks and per-channel densities. See the module docs of
/// [`crate::context`] for how the pieces connect.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityModel {
    pub n_channels: usize,
    pub mask: ComponentMask,
    /// Embeds a high-frequency node's own context.
    pub mlp_h: Mlp,
    /// Per-scale projections feeding the level-wide pooling pyramid.
    pub proj_l: [Linear; SCALE_COUNT],
    /// Fuses node embedding and pooled neighborhood into the
    /// initial-coding context.
    pub mlp_i: Mlp,
    /// Embeds previously decoded channel coefficients at the same node.
    pub mlp_c: Mlp,
    /// Per-scale projections for the previous-channel coefficient pyramid.
    pub proj_s: [Linear; SCALE_COUNT],
    /// Fuses coefficient and spatial inter-channel context.
    pub mlp_cc: Mlp,
    /// Per-channel linear head mapping `[I_j, C_j]` to density
    /// conditioning; zero-initialized so an untrained model matches the
    /// unconditioned density exactly.
    pub heads: Vec<Linear>,
    /// Per-channel unconditioned density parameters.
    pub base: Vec<MonotoneCdf>,
}

impl DensityModel {
    /// Dimension of a node context vector: normalized depth, log2 weight,
    /// and per-channel reconstructed low coefficient and attribute.
    pub fn node_ctx_dim(n_channels: usize) -> usize {
        2 + 2 * n_channels
    }

    /// Dimension of the previous-channel coefficient vector (zero padded
    /// for early channels; at least one slot so single-channel models have
    /// a fixed shape).
    pub fn prev_dim(n_channels: usize) -> usize {
        n_channels.saturating_sub(1).max(1)
    }

    pub fn init(n_channels: usize, mask: ComponentMask, seed: u64) -> Self {
        assert!(n_channels >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ctx_dim = Self::node_ctx_dim(n_channels);
        let prev_dim = Self::prev_dim(n_channels);
        let mlp_h = Mlp::init(ctx_dim, &mut rng);
        let proj_l = core::array::from_fn(|s| Linear::init(ctx_dim, SCALE_DIMS[s], &mut rng));
        let mlp_i = Mlp::init(EMBED_DIM + POOL_DIM, &mut rng);
        let mlp_c = Mlp::init(prev_dim, &mut rng);
        let proj_s = core::array::from_fn(|s| Linear::init(prev_dim, SCALE_DIMS[s], &mut rng));
        let mlp_cc = Mlp::init(EMBED_DIM + POOL_DIM, &mut rng);
        let heads = (0..n_channels)
            .map(|_| Linear::zeros(2 * EMBED_DIM, super::density::THETA_DIM))
            .collect();
        let base = (0..n_channels).map(|_| MonotoneCdf::init(&mut rng)).collect();
        Self {
            n_channels,
            mask,
            mlp_h,
            proj_l,
            mlp_i,
            mlp_c,
            proj_s,
            mlp_cc,
            heads,
            base,
        }
    }

    /// Visits every parameter in canonical (declaration) order.
    pub fn visit_params(&self, mut f: impl FnMut(f64)) {
        let visit_linear = |l: &Linear, f: &mut dyn FnMut(f64)| {
            l.w.iter().for_each(|v| f(*v));
            l.b.iter().for_each(|v| f(*v));
        };
        let visit_mlp = |m: &Mlp, f: &mut dyn FnMut(f64)| {
            for l in &m.layers {
                visit_linear(l, f);
            }
        };
        visit_mlp(&self.mlp_h, &mut f);
        for l in &self.proj_l {
            visit_linear(l, &mut f);
        }
        visit_mlp(&self.mlp_i, &mut f);
        visit_mlp(&self.mlp_c, &mut f);
        for l in &self.proj_s {
            visit_linear(l, &mut f);
        }
        visit_mlp(&self.mlp_cc, &mut f);
        for l in &self.heads {
            visit_linear(l, &mut f);
        }
        for b in &self.base {
            b.visit(&mut f);
        }
    }

    pub fn visit_params_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        let visit_linear = |l: &mut Linear, f: &mut dyn FnMut(&mut f64)| {
            l.w.iter_mut().for_each(&mut *f);
            l.b.iter_mut().for_each(&mut *f);
        };
        let visit_mlp = |m: &mut Mlp, f: &mut dyn FnMut(&mut f64)| {
            for l in m.layers.iter_mut() {
                visit_linear(l, f);
            }
        };
        visit_mlp(&mut self.mlp_h, &mut f);
        for l in self.proj_l.iter_mut() {
            visit_linear(l, &mut f);
        }
        visit_mlp(&mut self.mlp_i, &mut f);
        visit_mlp(&mut self.mlp_c, &mut f);
        for l in self.proj_s.iter_mut() {
            visit_linear(l, &mut f);
        }
        visit_mlp(&mut self.mlp_cc, &mut f);
        for l in self.heads.iter_mut() {
            visit_linear(l, &mut f);
        }
        for b in self.base.iter_mut() {
            b.visit_mut(&mut f);
        }
    }

    pub fn param_count(&self) -> usize {
        let mut count = 0;
        self.visit_params(|_| count += 1);
        count
    }

    pub fn to_param_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit_params(|v| out.push(v));
        out
    }

    pub fn set_params_from(&mut self, params: &[f64]) {
        let mut it = params.iter();
        self.visit_params_mut(|v| *v = *it.next().expect("parameter count mismatch"));
        assert!(it.next().is_none(), "parameter count mismatch");
    }

    /// Named parameter groups with their ranges in canonical order; the
    /// unit the gradient checker iterates over.
    pub fn param_groups(&self) -> Vec<(String, core::ops::Range<usize>)> {
        use alloc::format;
        let mut sizes: Vec<(String, usize)> = Vec::new();
        let mlp_sizes = |mlp: &Mlp, name: &str, sizes: &mut Vec<(String, usize)>| {
            for (i, l) in mlp.layers.iter().enumerate() {
                sizes.push((format!("{name}.l{i}"), l.param_count()));
            }
        };
        mlp_sizes(&self.mlp_h, "high_freq_embed", &mut sizes);
        for (s, l) in self.proj_l.iter().enumerate() {
            sizes.push((format!("low_freq_proj.s{s}"), l.param_count()));
        }
        mlp_sizes(&self.mlp_i, "initial_fuse", &mut sizes);
        mlp_sizes(&self.mlp_c, "prev_coeff_embed", &mut sizes);
        for (s, l) in self.proj_s.iter().enumerate() {
            sizes.push((format!("spatial_proj.s{s}"), l.param_count()));
        }
        mlp_sizes(&self.mlp_cc, "inter_channel_fuse", &mut sizes);
        for (ch, l) in self.heads.iter().enumerate() {
            sizes.push((format!("head.ch{ch}"), l.param_count()));
        }
        for ch in 0..self.base.len() {
            sizes.push((format!("density.ch{ch}"), MonotoneCdf::PARAM_COUNT));
        }
        let mut offset = 0;
        let groups: Vec<(String, core::ops::Range<usize>)> = sizes
            .into_iter()
            .map(|(name, len)| {
                let range = offset..offset + len;
                offset += len;
                (name, range)
            })
            .collect();
        debug_assert_eq!(offset, self.param_count());
        groups
    }

    pub fn all_params_finite(&self) -> bool {
        let mut ok = true;
        self.visit_params(|v| ok &= v.is_finite());
        ok
    }
}

/// Gradient accumulator mirroring [`DensityModel`]'s shape and canonical
/// parameter order.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub mlp_h: MlpGrad,
    pub proj_l: [LinearGrad; SCALE_COUNT],
    pub mlp_i: MlpGrad,
    pub mlp_c: MlpGrad,
    pub proj_s: [LinearGrad; SCALE_COUNT],
    pub mlp_cc: MlpGrad,
    pub heads: Vec<LinearGrad>,
    pub base: Vec<MonotoneGrad>,
}

impl ModelGrads {
    pub fn zeros_like(model: &DensityModel) -> Self {
        Self {
            mlp_h: MlpGrad::zeros_like(&model.mlp_h),
            proj_l: core::array::from_fn(|s| LinearGrad::zeros_like(&model.proj_l[s])),
            mlp_i: MlpGrad::zeros_like(&model.mlp_i),
            mlp_c: MlpGrad::zeros_like(&model.mlp_c),
            proj_s: core::array::from_fn(|s| LinearGrad::zeros_like(&model.proj_s[s])),
            mlp_cc: MlpGrad::zeros_like(&model.mlp_cc),
            heads: model.heads.iter().map(LinearGrad::zeros_like).collect(),
            base: model.base.iter().map(|_| MonotoneGrad::zeros()).collect(),
        }
    }

    /// Flattens in the same canonical order as
    /// [`DensityModel::visit_params`].
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let visit_linear = |l: &LinearGrad, out: &mut Vec<f64>| {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        };
        let visit_mlp = |m: &MlpGrad, out: &mut Vec<f64>| {
            for l in &m.layers {
                visit_linear(l, out);
            }
        };
        visit_mlp(&self.mlp_h, &mut out);
        for l in &self.proj_l {
            visit_linear(l, &mut out);
        }
        visit_mlp(&self.mlp_i, &mut out);
        visit_mlp(&self.mlp_c, &mut out);
        for l in &self.proj_s {
            visit_linear(l, &mut out);
        }
        visit_mlp(&self.mlp_cc, &mut out);
        for l in &self.heads {
            visit_linear(l, &mut out);
        }
        for b in &self.base {
            b.visit(|v| out.push(v));
        }
        out
    }
}
