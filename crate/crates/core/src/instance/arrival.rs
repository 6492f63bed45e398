use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::InstanceError;

/// Inputs closer than this to a unit sum are renormalized; anything further is rejected.
const SUM_TOLERANCE: f64 = 1e-9;

/// One block of a seasonal arrival pattern: `length` consecutive periods
/// drawing features from `probs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonBlock {
    pub length: u64,
    pub probs: Vec<f64>,
}

/// How features arrive over time. Feature indices are zero-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum ArrivalKind {
    /// The same distribution every period.
    Stationary { probs: Vec<f64> },
    /// Blocks cycled over the horizon; the last cycle is cut off at the horizon.
    SeasonalBlock { blocks: Vec<SeasonBlock> },
    /// An explicit feature per period (a degenerate distribution each period).
    ObliviousSequence { sequence: Vec<usize> },
}

/// A validated feature-arrival process over periods `1..=horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalProcess {
    horizon: u64,
    features: usize,
    kind: ArrivalKind,
    /// Cumulative distribution per block (a single block when stationary).
    cumulative: Vec<Vec<f64>>,
    /// Start offset of each block inside one cycle.
    block_starts: Vec<u64>,
    cycle: u64,
}

fn normalize(probs: &[f64], features: usize) -> Result<Vec<f64>, InstanceError> {
    if probs.len() != features {
        return Err(InstanceError::Malformed(format!(
            "probability vector has {} entries, expected {features}",
            probs.len()
        )));
    }
    if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0) {
        return Err(InstanceError::Malformed(format!(
            "probability {p} outside [0, 1]"
        )));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(InstanceError::NotNormalized { sum });
    }
    Ok(probs.iter().map(|p| p / sum).collect())
}

fn cumulative(probs: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    probs
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect()
}

impl ArrivalProcess {
    pub fn new(horizon: u64, features: usize, kind: ArrivalKind) -> Result<Self, InstanceError> {
        if horizon == 0 {
            return Err(InstanceError::Malformed("horizon must be positive".into()));
        }
        if features == 0 {
            return Err(InstanceError::Malformed("at least one feature is required".into()));
        }
        let (kind, cumulative, block_starts, cycle) = match kind {
            ArrivalKind::Stationary { probs } => {
                let probs = normalize(&probs, features)?;
                let cum = cumulative(&probs);
                (ArrivalKind::Stationary { probs }, vec![cum], vec![0], 1)
            }
            ArrivalKind::SeasonalBlock { blocks } => {
                if blocks.is_empty() {
                    return Err(InstanceError::Malformed("seasonal process needs at least one block".into()));
                }
                let mut normalized = Vec::with_capacity(blocks.len());
                let mut cums = Vec::with_capacity(blocks.len());
                let mut starts = Vec::with_capacity(blocks.len());
                let mut offset = 0u64;
                for b in blocks {
                    if b.length == 0 {
                        return Err(InstanceError::Malformed("block length must be positive".into()));
                    }
                    let probs = normalize(&b.probs, features)?;
                    cums.push(cumulative(&probs));
                    starts.push(offset);
                    offset += b.length;
                    normalized.push(SeasonBlock { length: b.length, probs });
                }
                (ArrivalKind::SeasonalBlock { blocks: normalized }, cums, starts, offset)
            }
            ArrivalKind::ObliviousSequence { sequence } => {
                if sequence.len() as u64 != horizon {
                    return Err(InstanceError::Malformed(format!(
                        "sequence has {} periods, horizon is {horizon}",
                        sequence.len()
                    )));
                }
                if let Some(&j) = sequence.iter().find(|&&j| j >= features) {
                    return Err(InstanceError::FeatureOutOfRange { feature: j, features });
                }
                (ArrivalKind::ObliviousSequence { sequence }, Vec::new(), Vec::new(), 1)
            }
        };
        Ok(Self { horizon, features, kind, cumulative, block_starts, cycle })
    }

    pub fn stationary(horizon: u64, probs: Vec<f64>) -> Result<Self, InstanceError> {
        let m = probs.len();
        Self::new(horizon, m, ArrivalKind::Stationary { probs })
    }

    pub fn uniform(horizon: u64, features: usize) -> Result<Self, InstanceError> {
        Self::new(horizon, features, ArrivalKind::Stationary { probs: vec![1.0 / features as f64; features] })
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn kind(&self) -> &ArrivalKind {
        &self.kind
    }

    fn check_period(&self, t: u64) -> Result<(), InstanceError> {
        if t == 0 || t > self.horizon {
            return Err(InstanceError::PeriodOutOfRange { t, horizon: self.horizon });
        }
        Ok(())
    }

    fn block_of(&self, t: u64) -> usize {
        let pos = (t - 1) % self.cycle;
        self.block_starts.partition_point(|&s| s <= pos) - 1
    }

    /// The distribution `P_X^t` over features at period `t`.
    pub fn probs_at(&self, t: u64) -> Result<Vec<f64>, InstanceError> {
        self.check_period(t)?;
        Ok(match &self.kind {
            ArrivalKind::Stationary { probs } => probs.clone(),
            ArrivalKind::SeasonalBlock { blocks } => blocks[self.block_of(t)].probs.clone(),
            ArrivalKind::ObliviousSequence { sequence } => {
                let mut p = vec![0.0; self.features];
                p[sequence[(t - 1) as usize]] = 1.0;
                p
            }
        })
    }

    /// Draws the feature arriving at period `t`.
    pub fn sample<R: Rng + ?Sized>(&self, t: u64, rng: &mut R) -> Result<usize, InstanceError> {
        self.check_period(t)?;
        let cum = match &self.kind {
            ArrivalKind::ObliviousSequence { sequence } => return Ok(sequence[(t - 1) as usize]),
            ArrivalKind::Stationary { .. } => &self.cumulative[0],
            ArrivalKind::SeasonalBlock { .. } => &self.cumulative[self.block_of(t)],
        };
        let u: f64 = rng.random();
        let idx = cum.partition_point(|&c| c <= u);
        Ok(idx.min(self.features - 1))
    }

    /// Expected number of arrivals of feature `j` over periods `1..=m`, i.e. `f_j(m)`.
    pub fn expected_count(&self, j: usize, m: u64) -> f64 {
        let m = m.min(self.horizon);
        match &self.kind {
            ArrivalKind::Stationary { probs } => m as f64 * probs[j],
            ArrivalKind::SeasonalBlock { blocks } => {
                let per_cycle: f64 = blocks.iter().map(|b| b.length as f64 * b.probs[j]).sum();
                let full = m / self.cycle;
                let mut rem = m % self.cycle;
                let mut total = full as f64 * per_cycle;
                for b in blocks {
                    if rem == 0 {
                        break;
                    }
                    let take = rem.min(b.length);
                    total += take as f64 * b.probs[j];
                    rem -= take;
                }
                total
            }
            ArrivalKind::ObliviousSequence { sequence } => {
                sequence[..m as usize].iter().filter(|&&x| x == j).count() as f64
            }
        }
    }

    pub fn expected_counts(&self, m: u64) -> Vec<f64> {
        (0..self.features).map(|j| self.expected_count(j, m)).collect()
    }
}
