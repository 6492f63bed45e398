//! Reference policies: a pure randomized trial, UCB, and successive
//! elimination run over the whole horizon.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arm::Arm;
use crate::error::PolicyError;
use crate::policy::{
    check_shape, ArmStats, Clock, EliminationState, EstimateFlag, Event, FeatureEstimate, Pending, Policy,
    ScheduleCache, Stage, Viable,
};

pub const DEFAULT_UCB_C: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BaselineKind {
    Rct,
    Ucb { c: f64 },
    SeOnly,
}

impl BaselineKind {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineKind::Rct => "rct",
            BaselineKind::Ucb { .. } => "ucb",
            BaselineKind::SeOnly => "se-only",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineState {
    kind: BaselineKind,
    horizon: u64,
    clock: Clock,
    stats: Vec<ArmStats>,
    elim: Vec<EliminationState>,
    schedules: Option<ScheduleCache>,
}

impl BaselineState {
    pub fn new(kind: BaselineKind, horizon: u64, features: usize) -> Result<Self, PolicyError> {
        check_shape(horizon, features)?;
        if let BaselineKind::Ucb { c } = kind {
            if !(c > 0.0) || !c.is_finite() {
                return Err(PolicyError::InvalidParameter(format!("ucb constant must be positive, got {c}")));
            }
        }
        let schedules = match kind {
            BaselineKind::SeOnly => Some(ScheduleCache::new(horizon, None)?),
            _ => None,
        };
        Ok(Self {
            kind,
            horizon,
            clock: Clock::new(horizon, features),
            stats: vec![ArmStats::default(); features],
            elim: vec![EliminationState::default(); features],
            schedules,
        })
    }

    pub fn kind(&self) -> BaselineKind {
        self.kind
    }

    pub fn count(&self, feature: usize, arm: Arm) -> u64 {
        self.stats[feature].counts()[arm.index()]
    }

    pub fn mean(&self, feature: usize, arm: Arm) -> f64 {
        self.stats[feature].mean(arm)
    }

    pub fn viable(&self, feature: usize) -> Viable {
        self.elim[feature].viable
    }

    fn ucb_arm(&self, t: u64, feature: usize, c: f64) -> Arm {
        let s = &self.stats[feature];
        let counts = s.counts();
        if counts[0] == 0 {
            return Arm::Control;
        }
        if counts[1] == 0 {
            return Arm::Treatment;
        }
        let bonus = |k: u64| c * ((t as f64).ln() / k as f64).sqrt();
        let u0 = s.mean(Arm::Control) + bonus(counts[0]);
        let u1 = s.mean(Arm::Treatment) + bonus(counts[1]);
        if u1 >= u0 {
            Arm::Treatment
        } else {
            Arm::Control
        }
    }
}

impl Policy for BaselineState {
    fn horizon(&self) -> u64 {
        self.horizon
    }

    fn features(&self) -> usize {
        self.stats.len()
    }

    fn act<R: Rng + ?Sized>(&mut self, t: u64, feature: usize, rng: &mut R) -> Result<Arm, PolicyError> {
        self.clock.check_act(t, feature)?;
        let (arm, stage) = match self.kind {
            BaselineKind::Rct => (Arm::from_coin(rng.random_bool(0.5)), Stage::Rct),
            BaselineKind::Ucb { c } => (self.ucb_arm(t, feature, c), Stage::Explore),
            BaselineKind::SeOnly => match self.elim[feature].viable {
                Viable::Both => (Arm::from_coin(rng.random_bool(0.5)), Stage::Explore),
                Viable::Only(a) => (a, Stage::Commit),
            },
        };
        self.clock.set_pending(Pending { t, feature, arm, stage });
        Ok(arm)
    }

    fn update<R: Rng + ?Sized>(
        &mut self,
        t: u64,
        feature: usize,
        arm: Arm,
        reward: f64,
        _rng: &mut R,
        events: &mut Vec<Event>,
    ) -> Result<(), PolicyError> {
        let p = self.clock.take(t, feature, arm, reward)?;
        events.push(Event::Pull { t, feature, arm, reward, stage: p.stage });
        self.stats[feature].add(arm, reward);
        if p.stage != Stage::Explore {
            return Ok(());
        }
        if let Some(cache) = self.schedules.as_mut() {
            let e = &mut self.elim[feature];
            e.push(arm, reward);
            let length = if e.epoch == 0 { 0 } else { cache.get(e.epoch).length };
            if e.pulls >= length {
                if e.epoch >= 1 {
                    let epoch = e.epoch;
                    let threshold = cache.get(epoch).elimination_threshold();
                    if let Some((arm, gap)) = e.eliminate(e.batch.means(), threshold) {
                        events.push(Event::Eliminate { t, feature, arm, epoch, gap, threshold });
                    }
                }
                e.advance();
                events.push(Event::Epoch { t, feature, epoch: e.epoch, length: cache.get(e.epoch).length });
            }
        }
        Ok(())
    }

    /// Difference of overall means per feature; biased for the adaptive kinds.
    fn finalize<R: Rng + ?Sized>(&mut self, _rng: &mut R, _events: &mut Vec<Event>) -> Vec<FeatureEstimate> {
        self.stats
            .iter()
            .enumerate()
            .map(|(j, s)| {
                if s.both_sampled() {
                    FeatureEstimate { feature: j, value: s.difference(), flag: EstimateFlag::Final, counts: s.counts() }
                } else {
                    FeatureEstimate::missing(j, s.counts())
                }
            })
            .collect()
    }
}
