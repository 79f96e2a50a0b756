//! Univariate monotone cumulative network and the integer-bin PMFs carved
//! out of it.
//!
//! The cumulative `c(x)` is a three-layer composition with
//! softplus-positive weights and bounded elementwise curvature, finished by
//! a sigmoid, so it is nondecreasing with `c(-inf) = 0` and `c(+inf) = 1`.
//! A context vector conditions the layer biases and the input log-scale;
//! with all biases zero the network is odd in `x` and the implied PMF is
//! exactly symmetric.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::math;

/// Hidden width of the monotone network.
pub const MONO_R: usize = 3;
/// Conditioning vector width: per-layer bias offsets plus an input
/// log-scale offset.
pub const THETA_DIM: usize = 2 * MONO_R + 2;
/// The effective input log-scale is squashed into (-LS_MAX, LS_MAX) so the
/// cumulative saturates within 1e-6 by |x| = 1e6 for any parameters.
const LS_MAX: f64 = 8.0;

/// Per-channel base parameters. Weight entries are raw (softplus
/// reparameterized), curvature entries raw (tanh reparameterized).
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneCdf {
    pub w1: [f64; MONO_R],
    pub a1: [f64; MONO_R],
    pub w2: [f64; MONO_R * MONO_R],
    pub a2: [f64; MONO_R],
    pub w3: [f64; MONO_R],
    pub b1: [f64; MONO_R],
    pub b2: [f64; MONO_R],
    pub b3: f64,
    pub log_scale: f64,
}

#[derive(Debug, Clone)]
pub struct MonotoneGrad {
    pub w1: [f64; MONO_R],
    pub a1: [f64; MONO_R],
    pub w2: [f64; MONO_R * MONO_R],
    pub a2: [f64; MONO_R],
    pub w3: [f64; MONO_R],
    pub b1: [f64; MONO_R],
    pub b2: [f64; MONO_R],
    pub b3: f64,
    pub log_scale: f64,
}

impl MonotoneGrad {
    pub fn zeros() -> Self {
        Self {
            w1: [0.0; MONO_R],
            a1: [0.0; MONO_R],
            w2: [0.0; MONO_R * MONO_R],
            a2: [0.0; MONO_R],
            w3: [0.0; MONO_R],
            b1: [0.0; MONO_R],
            b2: [0.0; MONO_R],
            b3: 0.0,
            log_scale: 0.0,
        }
    }
}

/// Forward activations of one cumulative evaluation.
#[derive(Debug, Clone)]
pub struct CdfCache {
    u: f64,
    ls_raw: f64,
    t1: [f64; MONO_R],
    y1: [f64; MONO_R],
    t2: [f64; MONO_R],
    y2: [f64; MONO_R],
    c: f64,
}

impl MonotoneCdf {
    /// Raw weights scatter around softplus^-1(1) so the initial map is
    /// close to linear but the hidden units are not symmetric; biases stay
    /// exactly zero, which keeps the initial PMF symmetric around zero.
    pub fn init(rng: &mut impl Rng) -> Self {
        let w0 = math::ln(core::f64::consts::E - 1.0);
        let mut jitter = |spread: f64| w0 + rng.random_range(-spread..spread);
        let w1 = core::array::from_fn(|_| jitter(0.25));
        let w2 = core::array::from_fn(|_| jitter(0.25));
        let w3 = core::array::from_fn(|_| jitter(0.25));
        let a1 = core::array::from_fn(|_| rng.random_range(-0.1..0.1));
        let a2 = core::array::from_fn(|_| rng.random_range(-0.1..0.1));
        Self {
            w1,
            a1,
            w2,
            a2,
            w3,
            b1: [0.0; MONO_R],
            b2: [0.0; MONO_R],
            b3: 0.0,
            log_scale: -2.0,
        }
    }

    /// Cumulative value at `x` under conditioning `theta`
    /// (`[db1, db2, db3, dls]`); pass zeros for the unconditioned density.
    pub fn eval(&self, x: f64, theta: &[f64; THETA_DIM]) -> (f64, CdfCache) {
        let ls_raw = self.log_scale + theta[2 * MONO_R + 1];
        let ls = LS_MAX * math::tanh(ls_raw / LS_MAX);
        let u = x * math::exp(ls);

        let mut t1 = [0.0; MONO_R];
        let mut y1 = [0.0; MONO_R];
        for k in 0..MONO_R {
            t1[k] = math::softplus(self.w1[k]) * u + self.b1[k] + theta[k];
            y1[k] = t1[k] + math::tanh(self.a1[k]) * math::tanh(t1[k]);
        }
        let mut t2 = [0.0; MONO_R];
        let mut y2 = [0.0; MONO_R];
        for i in 0..MONO_R {
            let mut acc = self.b2[i] + theta[MONO_R + i];
            for k in 0..MONO_R {
                acc += math::softplus(self.w2[i * MONO_R + k]) * y1[k];
            }
            t2[i] = acc;
            y2[i] = acc + math::tanh(self.a2[i]) * math::tanh(acc);
        }
        let mut t3 = self.b3 + theta[2 * MONO_R];
        for i in 0..MONO_R {
            t3 += math::softplus(self.w3[i]) * y2[i];
        }
        let c = math::sigmoid(t3);
        (
            c,
            CdfCache {
                u,
                ls_raw,
                t1,
                y1,
                t2,
                y2,
                c,
            },
        )
    }

    /// Accumulates `dc * d c / d params` into `grad` and
    /// `dc * d c / d theta` into `dtheta`.
    pub fn backward(
        &self,
        cache: &CdfCache,
        dc: f64,
        grad: &mut MonotoneGrad,
        dtheta: &mut [f64; THETA_DIM],
    ) {
        let dt3 = dc * cache.c * (1.0 - cache.c);
        grad.b3 += dt3;
        dtheta[2 * MONO_R] += dt3;

        let mut dy2 = [0.0; MONO_R];
        for i in 0..MONO_R {
            grad.w3[i] += dt3 * cache.y2[i] * math::sigmoid(self.w3[i]);
            dy2[i] = dt3 * math::softplus(self.w3[i]);
        }

        let mut dt2 = [0.0; MONO_R];
        for i in 0..MONO_R {
            let th = math::tanh(cache.t2[i]);
            let ta = math::tanh(self.a2[i]);
            dt2[i] = dy2[i] * (1.0 + ta * (1.0 - th * th));
            grad.a2[i] += dy2[i] * th * (1.0 - ta * ta);
            grad.b2[i] += dt2[i];
            dtheta[MONO_R + i] += dt2[i];
        }

        let mut dy1 = [0.0; MONO_R];
        for i in 0..MONO_R {
            for k in 0..MONO_R {
                grad.w2[i * MONO_R + k] +=
                    dt2[i] * cache.y1[k] * math::sigmoid(self.w2[i * MONO_R + k]);
                dy1[k] += dt2[i] * math::softplus(self.w2[i * MONO_R + k]);
            }
        }

        let mut du = 0.0;
        for k in 0..MONO_R {
            let th = math::tanh(cache.t1[k]);
            let ta = math::tanh(self.a1[k]);
            let dt1 = dy1[k] * (1.0 + ta * (1.0 - th * th));
            grad.a1[k] += dy1[k] * th * (1.0 - ta * ta);
            grad.b1[k] += dt1;
            dtheta[k] += dt1;
            grad.w1[k] += dt1 * cache.u * math::sigmoid(self.w1[k]);
            du += dt1 * math::softplus(self.w1[k]);
        }

        // u = x * exp(ls), ls = LS_MAX * tanh(ls_raw / LS_MAX).
        let tls = math::tanh(cache.ls_raw / LS_MAX);
        let dls_raw = du * cache.u * (1.0 - tls * tls);
        grad.log_scale += dls_raw;
        dtheta[2 * MONO_R + 1] += dls_raw;
    }

    /// Probability of the integer bin `r`, i.e. `c(r+1/2) - c(r-1/2)`.
    pub fn bin_prob(&self, r: i64, theta: &[f64; THETA_DIM]) -> (f64, CdfCache, CdfCache) {
        let (hi, hi_cache) = self.eval(r as f64 + 0.5, theta);
        let (lo, lo_cache) = self.eval(r as f64 - 0.5, theta);
        ((hi - lo).max(0.0), hi_cache, lo_cache)
    }

    /// Full PMF over the alphabet `{escape_low, -B..=B, escape_high}`:
    /// index 0 is the mass below `-B - 1/2`, index `2B + 2` the mass above
    /// `B + 1/2`. Sums to one by telescoping.
    pub fn pmf_with_tails(&self, bound: u64, theta: &[f64; THETA_DIM]) -> Vec<f64> {
        let b = bound as i64;
        let mut edges = Vec::with_capacity(2 * bound as usize + 2);
        for r in -b..=b + 1 {
            edges.push(self.eval(r as f64 - 0.5, theta).0);
        }
        let mut pmf = vec![0.0; 2 * bound as usize + 3];
        pmf[0] = edges[0];
        for (i, pair) in edges.windows(2).enumerate() {
            pmf[i + 1] = (pair[1] - pair[0]).max(0.0);
        }
        pmf[2 * bound as usize + 2] = (1.0 - edges[edges.len() - 1]).max(0.0);
        pmf
    }

    pub fn visit(&self, mut f: impl FnMut(f64)) {
        self.w1.iter().for_each(|v| f(*v));
        self.a1.iter().for_each(|v| f(*v));
        self.w2.iter().for_each(|v| f(*v));
        self.a2.iter().for_each(|v| f(*v));
        self.w3.iter().for_each(|v| f(*v));
        self.b1.iter().for_each(|v| f(*v));
        self.b2.iter().for_each(|v| f(*v));
        f(self.b3);
        f(self.log_scale);
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        self.w1.iter_mut().for_each(&mut f);
        self.a1.iter_mut().for_each(&mut f);
        self.w2.iter_mut().for_each(&mut f);
        self.a2.iter_mut().for_each(&mut f);
        self.w3.iter_mut().for_each(&mut f);
        self.b1.iter_mut().for_each(&mut f);
        self.b2.iter_mut().for_each(&mut f);
        f(&mut self.b3);
        f(&mut self.log_scale);
    }

    pub const PARAM_COUNT: usize = 4 * MONO_R + MONO_R * MONO_R + 2 * MONO_R + 2;

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.visit(|v| ok &= v.is_finite());
        ok
    }
}

impl MonotoneGrad {
    pub fn visit(&self, mut f: impl FnMut(f64)) {
        self.w1.iter().for_each(|v| f(*v));
        self.a1.iter().for_each(|v| f(*v));
        self.w2.iter().for_each(|v| f(*v));
        self.a2.iter().for_each(|v| f(*v));
        self.w3.iter().for_each(|v| f(*v));
        self.b1.iter().for_each(|v| f(*v));
        self.b2.iter().for_each(|v| f(*v));
        f(self.b3);
        f(self.log_scale);
    }
}

pub const ZERO_THETA: [f64; THETA_DIM] = [0.0; THETA_DIM];

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn random_theta(rng: &mut impl Rng) -> [f64; THETA_DIM] {
        core::array::from_fn(|_| rng.random_range(-0.5..0.5))
    }

    #[test]
    fn cumulative_is_monotone_for_random_parameters() {
        // 100k random parameter draws, each probed at an ordered input pair.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut cdf = MonotoneCdf::init(&mut rng);
        for i in 0..100_000 {
            if i % 10 == 0 {
                cdf = MonotoneCdf::init(&mut rng);
            }
            cdf.visit_mut(|v| *v += rng.random_range(-0.5..0.5));
            let theta = random_theta(&mut rng);
            let a = rng.random_range(-100.0..100.0);
            let b = a + rng.random_range(0.0..50.0);
            let (ca, _) = cdf.eval(a, &theta);
            let (cb, _) = cdf.eval(b, &theta);
            assert!(cb >= ca - 1e-12, "non-monotone: c({a})={ca} > c({b})={cb}");
        }
    }

    #[test]
    fn cumulative_saturates_at_the_extremes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let mut cdf = MonotoneCdf::init(&mut rng);
            cdf.visit_mut(|v| *v += rng.random_range(-1.0..1.0));
            let theta = random_theta(&mut rng);
            let (lo, _) = cdf.eval(-1e6, &theta);
            let (hi, _) = cdf.eval(1e6, &theta);
            assert!(lo < 1e-6, "c(-1e6) = {lo}");
            assert!(hi > 1.0 - 1e-6, "c(1e6) = {hi}");
        }
    }

    #[test]
    fn zero_bias_pmf_is_symmetric()
    {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let cdf = MonotoneCdf::init(&mut rng);
        for r in 0..=30i64 {
            let (p_pos, _, _) = cdf.bin_prob(r, &ZERO_THETA);
            let (p_neg, _, _) = cdf.bin_prob(-r, &ZERO_THETA);
            assert!((p_pos - p_neg).abs() < 1e-6, "r={r}: {p_pos} vs {p_neg}");
        }
    }

    #[test]
    fn pmf_with_tails_telescopes_to_one() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let mut cdf = MonotoneCdf::init(&mut rng);
            cdf.visit_mut(|v| *v += rng.random_range(-0.5..0.5));
            let theta = random_theta(&mut rng);
            let pmf = cdf.pmf_with_tails(rng.random_range(0..40), &theta);
            let total: f64 = pmf.iter().sum();
            assert!((total - 1.0).abs() < 1e-9, "sum {total}");
            assert!(pmf.iter().all(|p| *p >= 0.0));
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut cdf = MonotoneCdf::init(&mut rng);
        cdf.visit_mut(|v| *v += rng.random_range(-0.3..0.3));
        let theta: [f64; THETA_DIM] = random_theta(&mut rng);
        let x = 1.7;

        let (_, cache) = cdf.eval(x, &theta);
        let mut grad = MonotoneGrad::zeros();
        let mut dtheta = [0.0; THETA_DIM];
        cdf.backward(&cache, 1.0, &mut grad, &mut dtheta);

        let h = 1e-5;
        // Parameter gradients.
        let mut idx = 0;
        let mut analytic = Vec::new();
        grad.visit(|g| analytic.push(g));
        let count = analytic.len();
        for i in 0..count {
            let mut plus = cdf.clone();
            let mut j = 0;
            plus.visit_mut(|v| {
                if j == i {
                    *v += h;
                }
                j += 1;
            });
            let mut minus = cdf.clone();
            j = 0;
            minus.visit_mut(|v| {
                if j == i {
                    *v -= h;
                }
                j += 1;
            });
            let fd = (plus.eval(x, &theta).0 - minus.eval(x, &theta).0) / (2.0 * h);
            let an = analytic[i];
            let denom = an.abs().max(fd.abs()).max(1e-7);
            assert!(((an - fd) / denom).abs() < 1e-4, "param {i}: {an} vs {fd}");
            idx += 1;
        }
        assert_eq!(idx, MonotoneCdf::PARAM_COUNT);

        // Theta gradients.
        for i in 0..THETA_DIM {
            let mut tp = theta;
            tp[i] += h;
            let mut tm = theta;
            tm[i] -= h;
            let fd = (cdf.eval(x, &tp).0 - cdf.eval(x, &tm).0) / (2.0 * h);
            let an = dtheta[i];
            let denom = an.abs().max(fd.abs()).max(1e-7);
            assert!(((an - fd) / denom).abs() < 1e-4, "theta {i}: {an} vs {fd}");
        }
    }
}
