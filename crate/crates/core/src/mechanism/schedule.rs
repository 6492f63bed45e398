use serde::Serialize;

use crate::error::MechanismError;

/// Epoch quantities for batched elimination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Schedule {
    pub epoch: u32,
    pub horizon: u64,
    pub epsilon: Option<f64>,
    /// Target gap `2^-epoch`.
    pub delta: f64,
    /// Nominal batch length; saturates at `u64::MAX` for absurdly deep epochs.
    pub length: u64,
    /// Confidence half-width.
    pub half_width: f64,
    /// Extra width covering the Laplace noise on batch means (private variant only).
    pub privacy_slack: Option<f64>,
}

/// Builds the epoch-`epoch` schedule for horizon `n`, optionally for privacy level `epsilon`.
///
/// `length = ceil(max(32 ln(16 n e^2) / delta^2, 8 ln(8 n e^2) / (eps delta))) + 1`, with the
/// `eps` factor dropped in the non-private case. Widths are computed from the integer length.
pub fn schedule(epoch: u32, n: u64, epsilon: Option<f64>) -> Result<Schedule, MechanismError> {
    if epoch == 0 {
        return Err(MechanismError::ZeroEpoch);
    }
    if n < 3 {
        return Err(MechanismError::HorizonTooShort(n));
    }
    if let Some(eps) = epsilon {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(MechanismError::NonPositiveEpsilon(eps));
        }
    }
    let e = epoch as f64;
    let delta = (-e).exp2();
    let log16 = (16.0 * n as f64 * e * e).ln();
    let log8 = (8.0 * n as f64 * e * e).ln();
    let gap_term = 32.0 * log16 / (delta * delta);
    let noise_term = 8.0 * log8 / (epsilon.unwrap_or(1.0) * delta);
    let nominal = gap_term.max(noise_term).ceil() + 1.0;
    let half_width = (log16 / (2.0 * nominal)).sqrt();
    let privacy_slack = epsilon.map(|eps| 2.0 * log8 / (nominal * eps));
    Ok(Schedule {
        epoch,
        horizon: n,
        epsilon,
        delta,
        length: nominal as u64,
        half_width,
        privacy_slack,
    })
}

impl Schedule {
    /// Threshold a batch-mean gap must exceed for elimination.
    pub fn elimination_threshold(&self) -> f64 {
        2.0 * self.half_width + 2.0 * self.privacy_slack.unwrap_or(0.0)
    }
}
