//! Dense layers and a small tanh MLP with hand-written reverse-mode
//! gradients. The context model is tiny (a few thousand parameters), so
//! explicit forward/backward pairs beat pulling in an autodiff framework
//! and keep the coding path allocation-light and deterministic.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::math;

/// Fully connected layer, weights row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            w: vec![0.0; in_dim * out_dim],
            b: vec![0.0; out_dim],
            in_dim,
            out_dim,
        }
    }

    /// Uniform(-0.5, 0.5) / fan-in weights, zero biases.
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let mut layer = Self::zeros(in_dim, out_dim);
        let scale = 1.0 / in_dim as f64;
        for w in layer.w.iter_mut() {
            *w = rng.random_range(-0.5..0.5) * scale;
        }
        layer
    }

    pub fn forward(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(y.len(), self.out_dim);
        for (o, (row, b)) in self.w.chunks_exact(self.in_dim).zip(&self.b).enumerate() {
            let mut acc = *b;
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            y[o] = acc;
        }
    }

    /// Accumulates parameter gradients and, when `dx` is given, adds the
    /// input gradient into it.
    pub fn backward(&self, x: &[f64], dy: &[f64], mut dx: Option<&mut [f64]>, grad: &mut LinearGrad) {
        debug_assert_eq!(dy.len(), self.out_dim);
        for (o, &g) in dy.iter().enumerate() {
            grad.b[o] += g;
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut grad.w[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += g * x[i];
            }
            if let Some(dx) = dx.as_deref_mut() {
                for i in 0..self.in_dim {
                    dx[i] += g * row[i];
                }
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

#[derive(Debug, Clone)]
pub struct LinearGrad {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl LinearGrad {
    pub fn zeros_like(layer: &Linear) -> Self {
        Self {
            w: vec![0.0; layer.w.len()],
            b: vec![0.0; layer.b.len()],
        }
    }
}

/// Three dense layers with tanh after the first two; the final layer is
/// linear so embeddings and regression heads keep full range.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: [Linear; 3],
}

/// Per-evaluation activations needed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct MlpCache {
    x: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
}

impl Mlp {
    /// Hidden widths follow the context networks: `in -> 8 -> 16 -> 8`.
    pub const HIDDEN: [usize; 3] = [8, 16, 8];

    pub fn init(in_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            layers: [
                Linear::init(in_dim, Self::HIDDEN[0], rng),
                Linear::init(Self::HIDDEN[0], Self::HIDDEN[1], rng),
                Linear::init(Self::HIDDEN[1], Self::HIDDEN[2], rng),
            ],
        }
    }

    pub fn out_dim(&self) -> usize {
        self.layers[2].out_dim
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, MlpCache) {
        let mut a1 = vec![0.0; self.layers[0].out_dim];
        self.layers[0].forward(x, &mut a1);
        a1.iter_mut().for_each(|v| *v = math::tanh(*v));
        let mut a2 = vec![0.0; self.layers[1].out_dim];
        self.layers[1].forward(&a1, &mut a2);
        a2.iter_mut().for_each(|v| *v = math::tanh(*v));
        let mut y = vec![0.0; self.layers[2].out_dim];
        self.layers[2].forward(&a2, &mut y);
        (
            y,
            MlpCache {
                x: x.to_vec(),
                a1,
                a2,
            },
        )
    }

    pub fn backward(
        &self,
        cache: &MlpCache,
        dy: &[f64],
        dx: Option<&mut [f64]>,
        grad: &mut MlpGrad,
    ) {
        let mut da2 = vec![0.0; self.layers[1].out_dim];
        self.layers[2].backward(&cache.a2, dy, Some(&mut da2), &mut grad.layers[2]);
        for (d, a) in da2.iter_mut().zip(&cache.a2) {
            *d *= 1.0 - a * a;
        }
        let mut da1 = vec![0.0; self.layers[0].out_dim];
        self.layers[1].backward(&cache.a1, &da2, Some(&mut da1), &mut grad.layers[1]);
        for (d, a) in da1.iter_mut().zip(&cache.a1) {
            *d *= 1.0 - a * a;
        }
        self.layers[0].backward(&cache.x, &da1, dx, &mut grad.layers[0]);
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Linear::param_count).sum()
    }
}

#[derive(Debug, Clone)]
pub struct MlpGrad {
    pub layers: [LinearGrad; 3],
}

impl MlpGrad {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            layers: [
                LinearGrad::zeros_like(&mlp.layers[0]),
                LinearGrad::zeros_like(&mlp.layers[1]),
                LinearGrad::zeros_like(&mlp.layers[2]),
            ],
        }
    }
}
