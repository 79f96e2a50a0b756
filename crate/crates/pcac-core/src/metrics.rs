//! Reconstruction quality metrics.

use crate::math;

/// PSNR is reported as this sentinel when the MSE is exactly zero.
pub const PSNR_CAP_DB: f64 = 999.0;

/// Mean squared error between two equally long sequences.
pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 0.0;
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64
}

/// Peak signal-to-noise ratio against a fixed peak of 255, capped at
/// [`PSNR_CAP_DB`] for exact reconstructions.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    let v = 10.0 * math::log10(255.0 * 255.0 / mse);
    v.min(PSNR_CAP_DB)
}

pub fn psnr(a: &[f64], b: &[f64]) -> f64 {
    psnr_from_mse(mse(a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_signals_hit_the_cap() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(psnr(&a, &a), PSNR_CAP_DB);
    }

    #[test]
    fn full_scale_error_is_zero_db() {
        assert!((psnr_from_mse(255.0 * 255.0)).abs() < 1e-12);
    }

    #[test]
    fn uniform_coefficient_noise_matches_hand_mse() {
        // One coefficient perturbed by Q/2 in an n-sample signal gives
        // MSE = (Q/2)^2 / n exactly.
        let n = 64;
        let q = 10.0;
        let a = alloc::vec![0.0; n];
        let mut b = a.clone();
        b[17] = q / 2.0;
        let expected_mse = (q / 2.0) * (q / 2.0) / n as f64;
        assert!((mse(&a, &b) - expected_mse).abs() < 1e-12);
        let expected_psnr = 10.0 * (255.0f64 * 255.0 / expected_mse).log10();
        assert!((psnr(&a, &b) - expected_psnr).abs() < 0.01);
    }
}
