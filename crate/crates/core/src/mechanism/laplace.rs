use rand::distr::Open01;
use rand::Rng;

/// Zero-mean Laplace draw with scale `scale`, by inverting the CDF.
///
/// Panics if `scale` is not positive and finite.
pub fn sample_laplace<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    assert!(scale > 0.0 && scale.is_finite(), "laplace scale must be positive, got {scale}");
    let u: f64 = rng.sample(Open01);
    let v = u - 0.5;
    -scale * v.signum() * (-2.0 * v.abs()).ln_1p()
}

pub fn laplace_log_density(x: f64, location: f64, scale: f64) -> f64 {
    -(x - location).abs() / scale - (2.0 * scale).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn moments_over_a_million_draws() {
        for &b in &[0.1, 1.0, 4.0] {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let n = 1_000_000;
            let xs: Vec<f64> = (0..n).map(|_| sample_laplace(b, &mut rng)).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!(mean.abs() < 4.0 * b / 1000.0, "b={b} mean={mean}");
            assert!((var / (2.0 * b * b) - 1.0).abs() < 0.03, "b={b} var={var}");
        }
    }

    #[test]
    fn median_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut xs: Vec<f64> = (0..1_000_000).map(|_| sample_laplace(1.0, &mut rng)).collect();
        xs.sort_by(f64::total_cmp);
        assert!(xs[xs.len() / 2].abs() < 0.005);
    }

    #[test]
    fn fixed_seed_reproduces_the_sequence() {
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..64).map(|_| sample_laplace(0.5, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
        assert_ne!(draw(3), draw(4));
    }

    #[test]
    fn density_integrates_to_one() {
        let b = 0.7;
        let h = 1e-3;
        let total: f64 = (-40_000..40_000)
            .map(|i| laplace_log_density((i as f64 + 0.5) * h, 0.0, b).exp() * h)
            .sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    #[should_panic]
    fn zero_scale_panics() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        sample_laplace(0.0, &mut rng);
    }
}
