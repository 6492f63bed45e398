//! The private variant of the elimination-then-trial policy: noisy batch means,
//! randomized batch and trial lengths, and a noisy released estimate.

use rand::Rng;

use crate::arm::Arm;
use crate::conse::Phase;
use crate::error::{MechanismError, PolicyError};
use crate::mechanism::{sample_laplace, LapPlus};
use crate::policy::{
    check_alpha, check_shape, trial_length, ArmStats, Clock, EliminationState, EstimateFlag, Event, FeatureEstimate,
    NoiseKind, NoiseRecord, Pending, Policy, ScheduleCache, Stage, Viable,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpConseConfig {
    pub alpha: f64,
    pub epsilon: f64,
    /// Trial lengths are drawn around `rct_multiplier * T_min`.
    pub rct_multiplier: f64,
}

impl DpConseConfig {
    pub fn new(alpha: f64, epsilon: f64) -> Self {
        Self { alpha, epsilon, rct_multiplier: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct FeatureState {
    elim: EliminationState,
    /// Realized length of the current batch.
    batch_length: u64,
    /// Most recent privatized batch means; used to break ties in the greedy tail.
    last_noisy: Option<[f64; 2]>,
    occurrences: u64,
    trial_length: Option<u64>,
    rct: ArmStats,
    estimate: Option<FeatureEstimate>,
}

impl FeatureState {
    fn new() -> Self {
        Self {
            elim: EliminationState::default(),
            batch_length: 0,
            last_noisy: None,
            occurrences: 0,
            trial_length: None,
            rct: ArmStats::default(),
            estimate: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpConsePolicyState {
    config: DpConseConfig,
    horizon: u64,
    half: u64,
    phase: Phase,
    clock: Clock,
    schedules: ScheduleCache,
    features: Vec<FeatureState>,
    f_hat: Vec<u64>,
    t_min: Option<u64>,
    noise: Vec<NoiseRecord>,
}

impl DpConsePolicyState {
    pub fn new(config: DpConseConfig, horizon: u64, features: usize) -> Result<Self, PolicyError> {
        check_alpha(config.alpha)?;
        if !(config.epsilon > 0.0) || !config.epsilon.is_finite() {
            return Err(MechanismError::NonPositiveEpsilon(config.epsilon).into());
        }
        if !(config.rct_multiplier > 0.0) || !config.rct_multiplier.is_finite() {
            return Err(PolicyError::InvalidParameter(format!(
                "rct multiplier must be positive, got {}",
                config.rct_multiplier
            )));
        }
        check_shape(horizon, features)?;
        Ok(Self {
            config,
            horizon,
            half: horizon / 2,
            phase: Phase::FirstHalf,
            clock: Clock::new(horizon, features),
            schedules: ScheduleCache::new(horizon, Some(config.epsilon))?,
            features: (0..features).map(|_| FeatureState::new()).collect(),
            f_hat: Vec::new(),
            t_min: None,
            noise: Vec::new(),
        })
    }

    pub fn config(&self) -> DpConseConfig {
        self.config
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn viable(&self, feature: usize) -> Viable {
        self.features[feature].elim.viable
    }

    pub fn epoch(&self, feature: usize) -> u32 {
        self.features[feature].elim.epoch
    }

    pub fn occurrences(&self, feature: usize) -> u64 {
        self.features[feature].occurrences
    }

    pub fn f_hat(&self) -> &[u64] {
        &self.f_hat
    }

    pub fn t_min(&self) -> Option<u64> {
        self.t_min
    }

    /// Realized trial length of `feature`, drawn at the phase transition.
    pub fn trial_length(&self, feature: usize) -> Option<u64> {
        self.features[feature].trial_length
    }

    /// Every randomized release made so far, in order.
    pub fn noise_log(&self) -> &[NoiseRecord] {
        &self.noise
    }

    fn record(&mut self, t: u64, rec: NoiseRecord, events: &mut Vec<Event>) {
        self.noise.push(rec);
        events.push(Event::Noise { t, record: rec });
    }

    fn tail_arm(&self, feature: usize) -> Arm {
        let f = &self.features[feature];
        match f.elim.viable {
            Viable::Only(a) => a,
            Viable::Both => match f.last_noisy {
                Some([m0, m1]) if m0 > m1 => Arm::Control,
                _ => Arm::Treatment,
            },
        }
    }

    fn lap_plus<R: Rng + ?Sized>(&self, centre: f64, rng: &mut R) -> u64 {
        LapPlus::new(centre, self.config.epsilon).expect("validated centre and epsilon").sample(rng)
    }

    fn explore_step<R: Rng + ?Sized>(
        &mut self,
        t: u64,
        feature: usize,
        arm: Arm,
        reward: f64,
        rng: &mut R,
        events: &mut Vec<Event>,
    ) {
        let eps = self.config.epsilon;
        {
            let f = &mut self.features[feature];
            f.elim.push(arm, reward);
            if f.elim.pulls < f.batch_length {
                return;
            }
        }
        let epoch = self.features[feature].elim.epoch;
        if epoch >= 1 && self.features[feature].batch_length > 0 {
            let sched = self.schedules.get(epoch);
            let scale = 2.0 / (eps * sched.length as f64);
            let means = self.features[feature].elim.batch.means();
            let mut noisy = [0.0; 2];
            for a in Arm::BOTH {
                let draw = sample_laplace(scale, rng);
                noisy[a.index()] = means[a.index()] + draw;
                let rec = NoiseRecord {
                    noise_kind: NoiseKind::BatchMean,
                    feature,
                    scale_or_eps: scale,
                    nominal: sched.length as f64,
                    draw,
                    epoch: Some(epoch),
                    arm: Some(a),
                };
                self.record(t, rec, events);
            }
            let threshold = sched.elimination_threshold();
            let f = &mut self.features[feature];
            f.last_noisy = Some(noisy);
            if let Some((arm, gap)) = f.elim.eliminate(noisy, threshold) {
                events.push(Event::Eliminate { t, feature, arm, epoch, gap, threshold });
            }
        }
        self.features[feature].elim.advance();
        let next = self.features[feature].elim.epoch;
        let nominal = self.schedules.get(next).length as f64;
        let length = self.lap_plus(nominal, rng);
        self.features[feature].batch_length = length;
        let rec = NoiseRecord {
            noise_kind: NoiseKind::BatchLength,
            feature,
            scale_or_eps: eps,
            nominal,
            draw: length as f64,
            epoch: Some(next),
            arm: None,
        };
        self.record(t, rec, events);
        events.push(Event::Epoch { t, feature, epoch: next, length });
    }

    /// Difference of trial means plus Laplace noise of scale `2 / (eps k)`.
    fn release<R: Rng + ?Sized>(
        &mut self,
        t: u64,
        feature: usize,
        flag: EstimateFlag,
        rng: &mut R,
        events: &mut Vec<Event>,
    ) -> FeatureEstimate {
        let f = &self.features[feature];
        let counts = f.rct.counts();
        if !f.rct.both_sampled() {
            return FeatureEstimate::missing(feature, counts);
        }
        let k = f.rct.total() as f64;
        let raw = f.rct.difference();
        let scale = 2.0 / (self.config.epsilon * k);
        let draw = sample_laplace(scale, rng);
        let rec = NoiseRecord {
            noise_kind: NoiseKind::Output,
            feature,
            scale_or_eps: scale,
            nominal: k,
            draw,
            epoch: None,
            arm: None,
        };
        self.record(t, rec, events);
        FeatureEstimate { feature, value: raw + draw, flag, counts }
    }

    fn emit<R: Rng + ?Sized>(&mut self, t: u64, feature: usize, rng: &mut R, events: &mut Vec<Event>) {
        let est = self.release(t, feature, EstimateFlag::Final, rng, events);
        self.features[feature].estimate = Some(est);
        events.push(Event::Estimate { t, feature, value: est.value, flag: est.flag, counts: est.counts });
    }

    fn transition<R: Rng + ?Sized>(&mut self, t: u64, rng: &mut R, events: &mut Vec<Event>) {
        let eps = self.config.epsilon;
        self.f_hat = self.features.iter().map(|f| f.occurrences).collect();
        let floor = (self.horizon as f64).ln() / eps;
        let t_min = trial_length(self.config.alpha, &self.f_hat, floor);
        self.t_min = Some(t_min);
        self.phase = Phase::SecondHalf;
        events.push(Event::Phase { t, t_min, f_hat: self.f_hat.clone() });
        let centre = self.config.rct_multiplier * t_min as f64;
        for j in 0..self.features.len() {
            let tj = self.lap_plus(centre, rng);
            let f = &mut self.features[j];
            f.occurrences = 0;
            f.trial_length = Some(tj);
            let rec = NoiseRecord {
                noise_kind: NoiseKind::RctLength,
                feature: j,
                scale_or_eps: eps,
                nominal: centre,
                draw: tj as f64,
                epoch: None,
                arm: None,
            };
            self.record(t, rec, events);
            if tj == 0 {
                self.emit(t, j, rng, events);
            }
        }
    }
}

impl Policy for DpConsePolicyState {
    fn horizon(&self) -> u64 {
        self.horizon
    }

    fn features(&self) -> usize {
        self.features.len()
    }

    fn act<R: Rng + ?Sized>(&mut self, t: u64, feature: usize, rng: &mut R) -> Result<Arm, PolicyError> {
        self.clock.check_act(t, feature)?;
        let f = &self.features[feature];
        let (arm, stage) = match self.phase {
            Phase::FirstHalf => match f.elim.viable {
                Viable::Both => (Arm::from_coin(rng.random_bool(0.5)), Stage::Explore),
                Viable::Only(a) => (a, Stage::Commit),
            },
            Phase::SecondHalf => {
                let tj = f.trial_length.expect("drawn at the transition");
                if f.occurrences < tj {
                    (Arm::from_coin(rng.random_bool(0.5)), Stage::Rct)
                } else {
                    (self.tail_arm(feature), Stage::Greedy)
                }
            }
        };
        self.features[feature].occurrences += 1;
        self.clock.set_pending(Pending { t, feature, arm, stage });
        Ok(arm)
    }

    fn update<R: Rng + ?Sized>(
        &mut self,
        t: u64,
        feature: usize,
        arm: Arm,
        reward: f64,
        rng: &mut R,
        events: &mut Vec<Event>,
    ) -> Result<(), PolicyError> {
        let p = self.clock.take(t, feature, arm, reward)?;
        events.push(Event::Pull { t, feature, arm, reward, stage: p.stage });
        match p.stage {
            Stage::Explore => self.explore_step(t, feature, arm, reward, rng, events),
            Stage::Rct => {
                let f = &mut self.features[feature];
                f.rct.add(arm, reward);
                if Some(f.occurrences) == f.trial_length {
                    self.emit(t, feature, rng, events);
                }
            }
            Stage::Commit | Stage::Greedy => {}
        }
        if t == self.half {
            self.transition(t, rng, events);
        }
        Ok(())
    }

    fn finalize<R: Rng + ?Sized>(&mut self, rng: &mut R, events: &mut Vec<Event>) -> Vec<FeatureEstimate> {
        let t = self.clock.next_period().saturating_sub(1);
        (0..self.features.len())
            .map(|j| match self.features[j].estimate {
                Some(e) => e,
                None => {
                    let e = self.release(t, j, EstimateFlag::UnderSampled, rng, events);
                    self.features[j].estimate = Some(e);
                    e
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{sample_feature, sample_reward, InstanceSpec};
    use crate::mechanism::{lap_plus_pmf, schedule};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn drive(p: &mut DpConsePolicyState, inst: &InstanceSpec, seed: u64) -> (Vec<Event>, Vec<FeatureEstimate>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut events = Vec::new();
        for t in 1..=inst.horizon() {
            let j = sample_feature(inst.arrival(), t, &mut rng).unwrap();
            let a = p.act(t, j, &mut rng).unwrap();
            let r = sample_reward(inst, j, a, &mut rng).unwrap();
            p.update(t, j, a, r, &mut rng, &mut events).unwrap();
        }
        let est = p.finalize(&mut rng, &mut events);
        (events, est)
    }

    #[test]
    fn construction() {
        let p = DpConsePolicyState::new(DpConseConfig::new(0.5, 1.0), 10_000, 2).unwrap();
        assert_eq!(p.features(), 2);
        assert_eq!(p.viable(1), Viable::Both);
        assert!(matches!(
            DpConsePolicyState::new(DpConseConfig::new(0.5, 0.0), 10_000, 2),
            Err(PolicyError::Mechanism(MechanismError::NonPositiveEpsilon(_)))
        ));
        assert!(DpConsePolicyState::new(DpConseConfig::new(0.5, -1.0), 10_000, 2).is_err());
        assert!(DpConsePolicyState::new(DpConseConfig::new(2.0, 1.0), 10_000, 2).is_err());
        let mut c = DpConseConfig::new(0.5, 1.0);
        c.rct_multiplier = 0.0;
        assert!(DpConsePolicyState::new(c, 10_000, 2).is_err());
    }

    #[test]
    fn exploring_coin_is_fair() {
        let n = 100_000u64;
        let mut p = DpConsePolicyState::new(DpConseConfig::new(0.5, 1.0), 4 * n, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut ev = Vec::new();
        let mut ones = 0u64;
        for t in 1..=n {
            let a = p.act(t, 0, &mut rng).unwrap();
            ones += a.index() as u64;
            // the reward is independent of the arm, so elimination would need a noise event
            p.update(t, 0, a, 0.5, &mut rng, &mut ev).unwrap();
            ev.clear();
        }
        assert_eq!(p.viable(0), Viable::Both);
        assert!((ones as f64 / n as f64 - 0.5).abs() < 0.005);
    }

    #[test]
    fn deterministic_gap_is_removed_at_the_first_check() {
        let n = 10_000;
        let inst = InstanceSpec::uniform_bernoulli(n, 1, 0.0, 1.0).unwrap();
        let runs = 500;
        let hits = (0..runs)
            .filter(|&s| {
                let mut p = DpConsePolicyState::new(DpConseConfig::new(0.5, 1.0), n, 1).unwrap();
                let (ev, _) = drive(&mut p, &inst, 500 + s);
                ev.iter().any(|e| matches!(e, Event::Eliminate { epoch: 1, arm: Arm::Control, .. }))
            })
            .count();
        assert!(hits as f64 >= 0.95 * runs as f64, "{hits}");
    }

    #[test]
    fn batch_mean_noise_has_laplace_variance() {
        // pool standardized draws: draw / scale has variance 2
        let n = 1 << 15;
        let inst = InstanceSpec::uniform_bernoulli(n, 4, 0.5, 0.5).unwrap();
        let mut pooled = Vec::new();
        let mut s = 0;
        while pooled.len() < 10_000 {
            let mut p = DpConsePolicyState::new(DpConseConfig::new(0.5, 1.0), n, 4).unwrap();
            drive(&mut p, &inst, 9000 + s);
            for r in p.noise_log() {
                if r.noise_kind == NoiseKind::BatchMean {
                    let e = r.epoch.unwrap();
                    let sched = schedule(e, n, Some(1.0)).unwrap();
                    assert_eq!(r.scale_or_eps, 2.0 / sched.length as f64);
                    pooled.push(r.draw / r.scale_or_eps);
                }
            }
            s += 1;
        }
        let m = pooled.len() as f64;
        let mean = pooled.iter().sum::<f64>() / m;
        let var = pooled.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
        assert!((var / 2.0 - 1.0).abs() < 0.05, "var {var} over {m}");
    }

    #[test]
    fn trial_lengths_follow_lap_plus() {
        // M = 1, n = 100, alpha = 0: f_hat = 50 always, so T_min = 50
        let reps = 100_000;
        let mut counts = std::collections::HashMap::<u64, usize>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut ev = Vec::new();
        for _ in 0..reps {
            let mut p = DpConsePolicyState::new(DpConseConfig::new(0.0, 1.0), 100, 1).unwrap();
            for t in 1..=50 {
                let a = p.act(t, 0, &mut rng).unwrap();
                p.update(t, 0, a, 0.5, &mut rng, &mut ev).unwrap();
                ev.clear();
            }
            assert_eq!(p.t_min(), Some(50));
            *counts.entry(p.trial_length(0).unwrap()).or_default() += 1;
        }
        let top = *counts.keys().max().unwrap();
        let mut tv = 0.0;
        let mut covered = 0.0;
        for v in 0..=top {
            let q = lap_plus_pmf(50.0, 1.0, v as i64).unwrap();
            covered += q;
            tv += (counts.get(&v).copied().unwrap_or(0) as f64 / reps as f64 - q).abs();
        }
        let tv = (tv + 1.0 - covered) / 2.0;
        assert!(tv <= 0.01, "{tv}");
    }

    #[test]
    fn every_release_is_classified() {
        let n = 1 << 14;
        let eps = 0.7;
        let inst = InstanceSpec::uniform_bernoulli(n, 3, 0.2, 0.7).unwrap();
        let mut p = DpConsePolicyState::new(DpConseConfig::new(0.4, eps), n, 3).unwrap();
        let (events, est) = drive(&mut p, &inst, 31);
        let noise_events = events.iter().filter(|e| matches!(e, Event::Noise { .. })).count();
        assert_eq!(noise_events, p.noise_log().len());
        let mut by_kind = std::collections::HashMap::<NoiseKind, usize>::new();
        for r in p.noise_log() {
            *by_kind.entry(r.noise_kind).or_default() += 1;
            match r.noise_kind {
                NoiseKind::BatchMean => {
                    let s = schedule(r.epoch.unwrap(), n, Some(eps)).unwrap();
                    assert_eq!(r.scale_or_eps, 2.0 / (eps * s.length as f64));
                    assert!(r.arm.is_some());
                }
                NoiseKind::BatchLength => {
                    let s = schedule(r.epoch.unwrap(), n, Some(eps)).unwrap();
                    assert_eq!(r.scale_or_eps, eps);
                    assert_eq!(r.nominal, s.length as f64);
                    assert_eq!(r.draw.fract(), 0.0);
                }
                NoiseKind::RctLength => {
                    assert_eq!(r.scale_or_eps, eps);
                    assert_eq!(r.nominal, p.t_min().unwrap() as f64);
                    assert_eq!(Some(r.draw as u64), p.trial_length(r.feature));
                }
                NoiseKind::Output => {
                    let k = est[r.feature].samples() as f64;
                    assert_eq!(r.nominal, k);
                    assert_eq!(r.scale_or_eps, 2.0 / (eps * k));
                }
            }
        }
        assert_eq!(by_kind[&NoiseKind::RctLength], 3);
        assert_eq!(by_kind.get(&NoiseKind::Output).copied().unwrap_or(0), est.iter().filter(|e| e.flag != EstimateFlag::Missing).count());
        // two batch-mean draws per completed non-empty epoch
        assert_eq!(by_kind[&NoiseKind::BatchMean] % 2, 0);
    }

    #[test]
    fn large_epsilon_matches_non_private_schedule() {
        let p = DpConsePolicyState::new(DpConseConfig::new(0.5, 1e3), 10_000, 1).unwrap();
        let mut cache = p.schedules.clone();
        for e in 1..10 {
            assert_eq!(cache.get(e).length, schedule(e, 10_000, None).unwrap().length);
        }
    }

    #[test]
    fn finalize_releases_noise_on_partial_trials() {
        // feature 1 arrives five times in the second half against a trial of about 100
        let n = 400;
        let mut p = DpConsePolicyState::new(DpConseConfig::new(0.0, 1.0), n, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut ev = Vec::new();
        for t in 1..=n {
            let j = if t <= n / 2 { (t % 2) as usize } else if t % 40 == 0 { 1 } else { 0 };
            let a = p.act(t, j, &mut rng).unwrap();
            let r = if a == Arm::Treatment { 1.0 } else { 0.0 };
            p.update(t, j, a, r, &mut rng, &mut ev).unwrap();
        }
        assert!(p.trial_length(1).unwrap() > 5);
        let before = p.noise_log().len();
        let est = p.finalize(&mut rng, &mut ev);
        if est[1].counts[0] > 0 && est[1].counts[1] > 0 {
            assert_eq!(est[1].flag, EstimateFlag::UnderSampled);
            let last = p.noise_log().last().unwrap();
            assert_eq!(p.noise_log().len(), before + 1);
            assert_eq!(last.noise_kind, NoiseKind::Output);
            assert_eq!(last.scale_or_eps, 2.0 / 5.0);
            assert_eq!(est[1].value, 1.0 + last.draw);
        } else {
            assert_eq!(est[1].flag, EstimateFlag::Missing);
        }
        // finalize is idempotent
        let again = p.finalize(&mut rng, &mut ev);
        assert_eq!(again, est);
    }

    #[test]
    fn zero_trial_length_is_missing_at_once() {
        // a centre of 0.5 at eps = 10 puts almost all Lap+ mass on 0
        let mut c = DpConseConfig::new(1.0, 10.0);
        c.rct_multiplier = 0.5;
        let mut p = DpConsePolicyState::new(c, 8, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ev = Vec::new();
        for t in 1..=4 {
            let a = p.act(t, 0, &mut rng).unwrap();
            p.update(t, 0, a, 0.5, &mut rng, &mut ev).unwrap();
        }
        assert_eq!(p.t_min(), Some(1));
        assert_eq!(p.trial_length(0), Some(0));
        assert!(matches!(ev.last(), Some(Event::Estimate { t: 4, flag: EstimateFlag::Missing, .. })));
        let a = p.act(5, 0, &mut rng).unwrap();
        p.update(5, 0, a, 0.5, &mut rng, &mut ev).unwrap();
        assert!(matches!(ev.last(), Some(Event::Pull { stage: Stage::Greedy, .. })));
        let est = p.finalize(&mut rng, &mut ev);
        assert_eq!(est[0].flag, EstimateFlag::Missing);
        assert_eq!(est[0].value, 0.0);
    }

    #[test]
    fn unbiased_under_release_noise() {
        let n = 1 << 13;
        let inst = InstanceSpec::uniform_bernoulli(n, 1, 0.3, 0.6).unwrap();
        let mut vals = Vec::new();
        for s in 0..1000 {
            let mut p = DpConsePolicyState::new(DpConseConfig::new(0.0, 1.0), n, 1).unwrap();
            let (_, est) = drive(&mut p, &inst, 40_000 + s);
            if est[0].flag == EstimateFlag::Final {
                vals.push(est[0].value);
            }
        }
        let m = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / m;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
        assert!((mean - 0.3).abs() < 3.0 * sd / m.sqrt(), "mean {mean} se {}", sd / m.sqrt());
    }
}
