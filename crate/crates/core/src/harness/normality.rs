use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

pub const MIN_NORMALITY_SAMPLES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalityReport {
    pub samples: usize,
    pub ks_statistic: f64,
    pub p_value: f64,
    pub mean: f64,
    pub variance: f64,
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Asymptotic Kolmogorov tail `P(K > lambda)`.
fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov-Smirnov test against N(0, 1). The p-value uses the
/// asymptotic distribution with Stephens' finite-sample correction.
pub fn normality_test(samples: &[f64]) -> Result<NormalityReport, HarnessError> {
    let n = samples.len();
    if n < MIN_NORMALITY_SAMPLES {
        return Err(HarnessError::TooFewSamples { needed: MIN_NORMALITY_SAMPLES, got: n });
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(HarnessError::InvalidParameter("non-finite sample".into()));
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let variance = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    if variance == 0.0 {
        return Err(HarnessError::DegenerateSample);
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let mut d = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let f = normal_cdf(x);
        d = d.max((i + 1) as f64 / nf - f).max(f - i as f64 / nf);
    }
    let sq = nf.sqrt();
    let p_value = kolmogorov_tail((sq + 0.12 + 0.11 / sq) * d);
    Ok(NormalityReport { samples: n, ks_statistic: d, p_value, mean, variance })
}
