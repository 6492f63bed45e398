use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::InstanceError;

/// Reward distribution of one (feature, arm) pair. Every variant is supported on [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum RewardDist {
    Bernoulli { mean: f64 },
    /// Gaussian with location `mean` and scale `sd`, clipped to [0, 1].
    /// Mass outside the interval piles up on the endpoints, so the true mean
    /// differs from `mean` unless the location sits at 1/2.
    TruncatedGaussian { mean: f64, sd: f64 },
    PointMass { value: f64 },
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// First two raw moments of clamp(N(mu, sd^2), 0, 1).
fn clipped_gaussian_moments(mu: f64, sd: f64) -> (f64, f64) {
    let a = (0.0 - mu) / sd;
    let b = (1.0 - mu) / sd;
    let (pa, pb) = (std_normal_cdf(a), std_normal_cdf(b));
    let (da, db) = (std_normal_pdf(a), std_normal_pdf(b));
    let inside = pb - pa;
    let upper = 1.0 - pb;
    let ez = da - db;
    let ez2 = inside + a * da - b * db;
    let m1 = upper + mu * inside + sd * ez;
    let m2 = upper + mu * mu * inside + 2.0 * mu * sd * ez + sd * sd * ez2;
    (m1, m2)
}

impl RewardDist {
    pub fn validate(&self) -> Result<(), String> {
        let in_unit = |x: f64| x.is_finite() && (0.0..=1.0).contains(&x);
        match *self {
            RewardDist::Bernoulli { mean } if !in_unit(mean) => Err(format!("bernoulli mean {mean}")),
            RewardDist::TruncatedGaussian { mean, .. } if !in_unit(mean) => {
                Err(format!("truncated gaussian location {mean}"))
            }
            RewardDist::TruncatedGaussian { sd, .. } if !(sd.is_finite() && sd >= 0.0) => {
                Err(format!("truncated gaussian sd {sd}"))
            }
            RewardDist::PointMass { value } if !in_unit(value) => Err(format!("point mass {value}")),
            _ => Ok(()),
        }
    }

    /// The offending parameter value when `validate` fails on a mean-like field.
    pub(crate) fn location(&self) -> f64 {
        match *self {
            RewardDist::Bernoulli { mean } => mean,
            RewardDist::TruncatedGaussian { mean, .. } => mean,
            RewardDist::PointMass { value } => value,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            RewardDist::Bernoulli { mean } => mean,
            RewardDist::TruncatedGaussian { mean, sd } if sd == 0.0 => mean,
            RewardDist::TruncatedGaussian { mean, sd } => clipped_gaussian_moments(mean, sd).0,
            RewardDist::PointMass { value } => value,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            RewardDist::Bernoulli { mean } => mean * (1.0 - mean),
            RewardDist::TruncatedGaussian { sd, .. } if sd == 0.0 => 0.0,
            RewardDist::TruncatedGaussian { mean, sd } => {
                let (m1, m2) = clipped_gaussian_moments(mean, sd);
                (m2 - m1 * m1).max(0.0)
            }
            RewardDist::PointMass { .. } => 0.0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            RewardDist::Bernoulli { mean } => {
                if rng.random::<f64>() < mean {
                    1.0
                } else {
                    0.0
                }
            }
            RewardDist::TruncatedGaussian { mean, sd } => {
                if sd == 0.0 {
                    return mean;
                }
                // sd was validated as finite and positive
                let x = Normal::new(mean, sd).expect("valid normal").sample(rng);
                x.clamp(0.0, 1.0)
            }
            RewardDist::PointMass { value } => value,
        }
    }
}

pub(crate) fn check(dist: &RewardDist, feature: usize, arm: usize) -> Result<(), InstanceError> {
    dist.validate().map_err(|msg| {
        let value = dist.location();
        if value.is_finite() && !(0.0..=1.0).contains(&value) {
            InstanceError::MeanOutOfRange { feature, arm, value }
        } else {
            InstanceError::Malformed(msg)
        }
    })
}
