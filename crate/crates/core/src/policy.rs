//! Shared policy plumbing: the act/update protocol, events, estimates and
//! the per-feature batch bookkeeping used by the elimination policies.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arm::Arm;
use crate::error::{MechanismError, PolicyError};
use crate::mechanism::{schedule, Schedule};

/// What a pull was for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Coin-flip exploration while both arms are viable.
    Explore,
    /// The single surviving arm in the first half.
    Commit,
    /// Coin-flip pull inside the second-half randomized trial.
    Rct,
    /// Exploitation after the trial ends.
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateFlag {
    /// Emitted when the trial reached its planned length.
    Final,
    /// The trial was cut short by the horizon; computed from what was collected.
    UnderSampled,
    /// No usable sample for at least one arm; the value is 0.
    Missing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureEstimate {
    pub feature: usize,
    pub value: f64,
    pub flag: EstimateFlag,
    /// Pulls per arm that entered the estimate.
    pub counts: [u64; 2],
}

impl FeatureEstimate {
    pub fn missing(feature: usize, counts: [u64; 2]) -> Self {
        Self { feature, value: 0.0, flag: EstimateFlag::Missing, counts }
    }

    pub fn samples(&self) -> u64 {
        self.counts[0] + self.counts[1]
    }
}

/// The four kinds of randomized release made by the private policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Laplace noise on a batch mean, scale `2 / (eps R_e)`.
    BatchMean,
    /// Lap+ draw of the next batch length around `R_e`.
    BatchLength,
    /// Lap+ draw of a feature's trial length around the common trial length.
    RctLength,
    /// Laplace noise on the released estimate, scale `2 / (eps T_j)`.
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecord {
    pub noise_kind: NoiseKind,
    pub feature: usize,
    /// Laplace scale for the continuous kinds, epsilon for the Lap+ kinds.
    pub scale_or_eps: f64,
    /// Centre of a Lap+ draw, or the length the Laplace scale was computed from.
    pub nominal: f64,
    pub draw: f64,
    pub epoch: Option<u32>,
    pub arm: Option<Arm>,
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Pull { t: u64, feature: usize, arm: Arm, reward: f64, stage: Stage },
    Eliminate { t: u64, feature: usize, arm: Arm, epoch: u32, gap: f64, threshold: f64 },
    /// A feature entered `epoch`; `length` is the batch length it must now collect.
    Epoch { t: u64, feature: usize, epoch: u32, length: u64 },
    Phase { t: u64, t_min: u64, f_hat: Vec<u64> },
    Estimate { t: u64, feature: usize, value: f64, flag: EstimateFlag, counts: [u64; 2] },
    Noise {
        t: u64,
        #[serde(flatten)]
        record: NoiseRecord,
    },
}

impl Event {
    pub fn t(&self) -> u64 {
        match self {
            Event::Pull { t, .. }
            | Event::Eliminate { t, .. }
            | Event::Epoch { t, .. }
            | Event::Phase { t, .. }
            | Event::Estimate { t, .. }
            | Event::Noise { t, .. } => *t,
        }
    }
}

/// A sequential allocation policy over `M` features and two arms.
///
/// Each period the caller invokes `act` then `update` exactly once, with
/// `t = 1, 2, ..., n`.
pub trait Policy {
    fn horizon(&self) -> u64;

    fn features(&self) -> usize;

    fn act<R: Rng + ?Sized>(&mut self, t: u64, feature: usize, rng: &mut R) -> Result<Arm, PolicyError>;

    fn update<R: Rng + ?Sized>(
        &mut self,
        t: u64,
        feature: usize,
        arm: Arm,
        reward: f64,
        rng: &mut R,
        events: &mut Vec<Event>,
    ) -> Result<(), PolicyError>;

    /// Per-feature estimates after the horizon; may release noise (logged to `events`).
    fn finalize<R: Rng + ?Sized>(&mut self, rng: &mut R, events: &mut Vec<Event>) -> Vec<FeatureEstimate>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Pending {
    pub t: u64,
    pub feature: usize,
    pub arm: Arm,
    pub stage: Stage,
}

/// Enforces the act/update alternation and the period counter.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Clock {
    next: u64,
    horizon: u64,
    features: usize,
    pending: Option<Pending>,
}

impl Clock {
    pub fn new(horizon: u64, features: usize) -> Self {
        Self { next: 1, horizon, features, pending: None }
    }

    pub fn check_act(&self, t: u64, feature: usize) -> Result<(), PolicyError> {
        if self.pending.is_some() {
            return Err(PolicyError::PendingAct { t });
        }
        if t != self.next || t > self.horizon {
            return Err(PolicyError::ClockMismatch { expected: self.next, got: t });
        }
        if feature >= self.features {
            return Err(PolicyError::FeatureOutOfRange { feature, features: self.features });
        }
        Ok(())
    }

    pub fn set_pending(&mut self, p: Pending) {
        self.pending = Some(p);
    }

    pub fn take(&mut self, t: u64, feature: usize, arm: Arm, reward: f64) -> Result<Pending, PolicyError> {
        if !(0.0..=1.0).contains(&reward) {
            return Err(PolicyError::RewardOutOfRange(reward));
        }
        match self.pending {
            Some(p) if p.t == t && p.feature == feature && p.arm == arm => {
                self.pending = None;
                self.next += 1;
                Ok(p)
            }
            _ => Err(PolicyError::UnmatchedUpdate { t }),
        }
    }

    pub fn next_period(&self) -> u64 {
        self.next
    }
}

/// Running sums and counts for the two arms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct ArmStats {
    sum: [f64; 2],
    count: [u64; 2],
}

impl ArmStats {
    #[inline]
    pub fn add(&mut self, arm: Arm, reward: f64) {
        self.sum[arm.index()] += reward;
        self.count[arm.index()] += 1;
    }

    /// Empty arms report a mean of 0.
    #[inline]
    pub fn mean(&self, arm: Arm) -> f64 {
        let i = arm.index();
        if self.count[i] == 0 {
            0.0
        } else {
            self.sum[i] / self.count[i] as f64
        }
    }

    pub fn means(&self) -> [f64; 2] {
        [self.mean(Arm::Control), self.mean(Arm::Treatment)]
    }

    pub fn counts(&self) -> [u64; 2] {
        self.count
    }

    pub fn total(&self) -> u64 {
        self.count[0] + self.count[1]
    }

    pub fn both_sampled(&self) -> bool {
        self.count[0] > 0 && self.count[1] > 0
    }

    pub fn difference(&self) -> f64 {
        self.mean(Arm::Treatment) - self.mean(Arm::Control)
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

/// Arms still in play for one feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Viable {
    Both,
    Only(Arm),
}

impl Viable {
    pub fn len(&self) -> usize {
        match self {
            Viable::Both => 2,
            Viable::Only(_) => 1,
        }
    }

    pub fn contains(&self, arm: Arm) -> bool {
        match self {
            Viable::Both => true,
            Viable::Only(a) => *a == arm,
        }
    }
}

/// Batched successive elimination for one feature. Epoch 0 has an empty batch,
/// so the first pull closes it and opens epoch 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct EliminationState {
    pub viable: Viable,
    pub epoch: u32,
    pub pulls: u64,
    pub batch: ArmStats,
}

impl Default for EliminationState {
    fn default() -> Self {
        Self { viable: Viable::Both, epoch: 0, pulls: 0, batch: ArmStats::default() }
    }
}

impl EliminationState {
    pub fn push(&mut self, arm: Arm, reward: f64) {
        self.batch.add(arm, reward);
        self.pulls += 1;
    }

    /// Removes every arm whose mean trails the best by more than `threshold`.
    pub fn eliminate(&mut self, means: [f64; 2], threshold: f64) -> Option<(Arm, f64)> {
        if self.viable != Viable::Both {
            return None;
        }
        let best = means[0].max(means[1]);
        for arm in Arm::BOTH {
            let gap = best - means[arm.index()];
            if gap > threshold {
                self.viable = Viable::Only(arm.other());
                return Some((arm, gap));
            }
        }
        None
    }

    pub fn advance(&mut self) {
        self.epoch += 1;
        self.pulls = 0;
        self.batch.reset();
    }
}

/// Lazily computed schedules for epochs 1, 2, ...
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ScheduleCache {
    horizon: u64,
    epsilon: Option<f64>,
    items: Vec<Schedule>,
}

impl ScheduleCache {
    pub fn new(horizon: u64, epsilon: Option<f64>) -> Result<Self, MechanismError> {
        let first = schedule(1, horizon, epsilon)?;
        Ok(Self { horizon, epsilon, items: vec![first] })
    }

    pub fn get(&mut self, epoch: u32) -> Schedule {
        debug_assert!(epoch >= 1);
        while self.items.len() < epoch as usize {
            let e = self.items.len() as u32 + 1;
            let s = schedule(e, self.horizon, self.epsilon).expect("validated at construction");
            self.items.push(s);
        }
        self.items[epoch as usize - 1]
    }
}

/// Common trial length: `ceil(max(floor, min_j f_j^(1 - alpha)))`, with `0^0 = 1`.
pub fn trial_length(alpha: f64, first_half_counts: &[u64], floor: f64) -> u64 {
    let inner = first_half_counts
        .iter()
        .map(|&f| (f as f64).powf(1.0 - alpha))
        .fold(f64::INFINITY, f64::min);
    floor.max(inner).ceil() as u64
}

pub(crate) fn check_alpha(alpha: f64) -> Result<(), PolicyError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(PolicyError::AlphaOutOfRange(alpha));
    }
    Ok(())
}

pub(crate) fn check_shape(horizon: u64, features: usize) -> Result<(), PolicyError> {
    if horizon < 4 {
        return Err(PolicyError::HorizonTooShort(horizon));
    }
    if features == 0 {
        return Err(PolicyError::NoFeatures);
    }
    Ok(())
}
