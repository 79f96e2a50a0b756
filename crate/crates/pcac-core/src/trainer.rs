//! Cross-entropy training of the density model.
//!
//! The objective is the summed negative log probability of every
//! transmitted symbol under the teacher-forced decode-path contexts — the
//! exact distribution the coder will use — minimized with Adam, one
//! optimizer step per cloud.

use alloc::vec;
use alloc::vec::Vec;

use crate::cloud::VoxelizedCloud;
use crate::context::coding::CodingError;
use crate::context::{
    ChannelContext, ComponentMask, DensityModel, LevelContext, ModelGrads, EMBED_DIM, THETA_DIM,
    ZERO_THETA,
};
use crate::math;
use crate::quant::{self, CoefficientStream};
use crate::raht::{self, RahtTree};

/// Probabilities are floored at this value inside the loss so outlier
/// symbols cannot produce an infinite objective.
pub const PROB_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Debug, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("corpus item {item} has {found} channels, expected {expected}")]
    ChannelMismatch {
        item: usize,
        expected: usize,
        found: usize,
    },
    #[error("loss diverged at epoch {epoch}: {loss:.3} nats vs initial {initial:.3}")]
    Diverged {
        epoch: usize,
        loss: f64,
        initial: f64,
    },
    #[error(transparent)]
    Coding(#[from] CodingError),
    #[error("config invalid: {0}")]
    BadConfig(&'static str),
}

/// One prepared training cloud: the geometry tree plus its quantized
/// coefficient stream.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub tree: RahtTree,
    pub stream: CoefficientStream,
    pub original_point_count: u64,
}

impl TrainItem {
    pub fn prepare(cloud: &VoxelizedCloud, qstep: f64) -> Result<Self, quant::QuantError> {
        let tree = raht::build_tree(cloud).map_err(quant::QuantError::from)?;
        let coeffs = raht::forward_transform(&tree, &cloud.attributes, cloud.channel_count());
        let stream = quant::serialize(&tree, &coeffs, qstep)?;
        Ok(Self {
            tree,
            stream,
            original_point_count: cloud.original_point_count,
        })
    }
}

/// Loss of one stream in nats: `-sum ln max(q, floor)` over all symbols,
/// contexts teacher-forced from the quantized stream.
pub fn loss(model: &DensityModel, tree: &RahtTree, stream: &CoefficientStream) -> Result<f64, CodingError> {
    let probs = crate::context::stream_symbol_probs(model, true, tree, stream)?;
    Ok(probs.iter().map(|p| -math::ln(p.max(PROB_FLOOR))).sum())
}

/// Loss plus gradients w.r.t. every model parameter, accumulated with the
/// same evaluation order as [`loss`].
pub fn loss_and_grads(
    model: &DensityModel,
    tree: &RahtTree,
    stream: &CoefficientStream,
) -> Result<(f64, ModelGrads), CodingError> {
    if stream.n_channels != model.n_channels {
        return Err(CodingError::ChannelMismatch {
            expected: model.n_channels,
            found: stream.n_channels,
        });
    }
    if stream.symbols.len() != tree.high_count() * stream.n_channels {
        return Err(CodingError::StreamMismatch("symbol count"));
    }
    let mask = model.mask;
    let n = model.n_channels;
    let mut grads = ModelGrads::zeros_like(model);
    let mut nats = 0.0;
    let mut lows = stream.dc.clone();
    let mut offset = 0usize;

    for level in tree.transmission_levels() {
        let high_count = tree.levels[level].high_nodes.len();
        let mut level_symbols: Vec<Vec<i64>> = Vec::with_capacity(n);
        if high_count > 0 {
            let level_ctx = (!mask.is_empty())
                .then(|| LevelContext::build(model, mask, tree, level, &lows));
            let mut d_initial = vec![0.0; high_count * EMBED_DIM];
            for channel in 0..n {
                let group = &stream.symbols[offset..offset + high_count];
                offset += high_count;
                let chan_ctx = level_ctx.as_ref().map(|lc| {
                    ChannelContext::build(model, mask, tree, lc, channel, &level_symbols, stream.qstep)
                });
                let base = &model.base[channel];
                let mut d_thetas = vec![[0.0; THETA_DIM]; high_count];
                for (rank, &r) in group.iter().enumerate() {
                    let theta = chan_ctx
                        .as_ref()
                        .map(|c| c.theta(rank))
                        .unwrap_or(&ZERO_THETA);
                    let (p, hi, lo) = base.bin_prob(r, theta);
                    let clamped = p.max(PROB_FLOOR);
                    nats -= math::ln(clamped);
                    if p >= PROB_FLOOR {
                        let dldp = -1.0 / clamped;
                        base.backward(&hi, dldp, &mut grads.base[channel], &mut d_thetas[rank]);
                        base.backward(&lo, -dldp, &mut grads.base[channel], &mut d_thetas[rank]);
                    }
                }
                if let Some(ctx) = &chan_ctx {
                    ctx.backward(model, mask, &d_thetas, &mut grads, &mut d_initial);
                }
                level_symbols.push(group.to_vec());
            }
            if let Some(ctx) = &level_ctx {
                ctx.backward(model, mask, &d_initial, &mut grads);
            }
        }
        let mut node_major = vec![0.0; high_count * n];
        for (channel, syms) in level_symbols.iter().enumerate() {
            for rank in 0..high_count {
                node_major[rank * n + channel] = quant::dequantize(syms[rank], stream.qstep);
            }
        }
        lows = raht::inverse_step(tree, level, &lows, &node_major, n)
            .map_err(quant::QuantError::from)?;
    }
    Ok((nats, grads))
}

/// Outcome of verifying one parameter group against central finite
/// differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckGroup {
    pub group: alloc::string::String,
    /// Worst `|analytic - fd|` in the group, relative to the group's
    /// gradient scale (the largest magnitude either side reports).
    pub max_rel_err: f64,
    pub params: usize,
}

/// Compares the analytic gradient of [`loss`] against central finite
/// differences (`step` perturbation) for every parameter, reported per
/// parameter group.
pub fn gradient_check(
    model: &DensityModel,
    tree: &RahtTree,
    stream: &CoefficientStream,
    step: f64,
) -> Result<Vec<GradCheckGroup>, CodingError> {
    let (_, grads) = loss_and_grads(model, tree, stream)?;
    let analytic = grads.to_vec();
    let base_params = model.to_param_vec();
    let mut probe = model.clone();
    let mut reports = Vec::new();
    for (group, range) in model.param_groups() {
        let mut scale = 0.0f64;
        let mut worst_abs = 0.0f64;
        for idx in range.clone() {
            let mut params = base_params.clone();
            params[idx] += step;
            probe.set_params_from(&params);
            let hi = loss(&probe, tree, stream)?;
            params[idx] -= 2.0 * step;
            probe.set_params_from(&params);
            let lo = loss(&probe, tree, stream)?;
            let fd = (hi - lo) / (2.0 * step);
            let an = analytic[idx];
            scale = scale.max(an.abs()).max(fd.abs());
            worst_abs = worst_abs.max((an - fd).abs());
        }
        reports.push(GradCheckGroup {
            group,
            max_rel_err: if scale > 0.0 { worst_abs / scale } else { 0.0 },
            params: range.len(),
        });
    }
    Ok(reports)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    fn step(&mut self, cfg: &TrainConfig, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let b1t = 1.0 - math::powf(cfg.beta1, self.t as f64);
        let b2t = 1.0 - math::powf(cfg.beta2, self.t as f64);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let mhat = *m / b1t;
            let vhat = *v / b2t;
            *p -= cfg.learning_rate * mhat / (math::sqrt(vhat) + cfg.epsilon);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub nats: f64,
    pub bits_per_point: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: DensityModel,
    pub log: Vec<EpochStats>,
}

/// Trains a freshly initialized model on the corpus: one Adam step per
/// cloud, `epochs` passes in corpus order. Deterministic for a fixed seed
/// and corpus order. Aborts if the epoch loss exceeds ten times the first
/// epoch's.
pub fn train(
    corpus: &[TrainItem],
    n_channels: usize,
    mask: ComponentMask,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    if cfg.learning_rate <= 0.0 {
        return Err(TrainError::BadConfig("learning rate must be positive"));
    }
    if cfg.epochs == 0 {
        return Err(TrainError::BadConfig("need at least one epoch"));
    }
    for (i, item) in corpus.iter().enumerate() {
        if item.stream.n_channels != n_channels {
            return Err(TrainError::ChannelMismatch {
                item: i,
                expected: n_channels,
                found: item.stream.n_channels,
            });
        }
    }
    let total_points: u64 = corpus.iter().map(|c| c.original_point_count).sum();
    let mut model = DensityModel::init(n_channels, mask, cfg.seed);
    let mut adam = Adam::new(model.param_count());
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut initial = None;

    for epoch in 0..cfg.epochs {
        for item in corpus {
            let (_, grads) = loss_and_grads(&model, &item.tree, &item.stream)?;
            let gvec = grads.to_vec();
            let mut params = model.to_param_vec();
            adam.step(cfg, &mut params, &gvec);
            model.set_params_from(&params);
        }
        // Log the corpus loss under the post-epoch model, so the trajectory
        // reflects model quality rather than mid-epoch churn.
        let mut epoch_nats = 0.0;
        for item in corpus {
            epoch_nats += loss(&model, &item.tree, &item.stream)?;
        }
        let bits_per_point = epoch_nats / core::f64::consts::LN_2 / total_points.max(1) as f64;
        log.push(EpochStats {
            epoch,
            nats: epoch_nats,
            bits_per_point,
        });
        let first = *initial.get_or_insert(epoch_nats);
        check_divergence(epoch, epoch_nats, first)?;
    }
    Ok(TrainOutcome { model, log })
}

/// The runaway-training guard: abort once an epoch's loss exceeds ten
/// times the first epoch's (or stops being finite).
fn check_divergence(epoch: usize, loss: f64, initial: f64) -> Result<(), TrainError> {
    if !loss.is_finite() || loss > 10.0 * initial.abs().max(1.0) {
        return Err(TrainError::Diverged {
            epoch,
            loss,
            initial,
        });
    }
    Ok(())
}
