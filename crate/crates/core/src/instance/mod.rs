//! Bandit instances: feature arrivals, per-(feature, arm) reward distributions
//! and the seasonal-balance check on arrivals.
//!
//! Instances are usually loaded from a JSON document:
//!
//! ```json
//! {
//!   "horizon": 1000,
//!   "features": 2,
//!   "arrival": {"kind": "stationary", "params": {"probs": [0.5, 0.5]}},
//!   "rewards": [
//!     [{"kind": "bernoulli", "params": {"mean": 0.3}}, {"kind": "bernoulli", "params": {"mean": 0.8}}],
//!     [{"kind": "point_mass", "params": {"value": 0.5}}, {"kind": "truncated_gaussian", "params": {"mean": 0.4, "sd": 0.1}}]
//!   ]
//! }
//! ```

mod arrival;
mod assumption;
mod reward;

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use arrival::{ArrivalKind, ArrivalProcess, SeasonBlock};
pub use assumption::{validate_assumption, AssumptionReport, FeatureBalance, FeatureVerdict};
pub use reward::RewardDist;

use crate::arm::Arm;
use crate::error::InstanceError;

/// Serialized form of an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDoc {
    pub horizon: u64,
    pub features: usize,
    pub arrival: ArrivalKind,
    /// One `[control, treatment]` pair per feature.
    pub rewards: Vec<[RewardDist; 2]>,
}

impl InstanceDoc {
    pub fn from_json(text: &str) -> Result<Self, InstanceError> {
        serde_json::from_str(text).map_err(|e| InstanceError::Malformed(e.to_string()))
    }
}

/// A validated instance with derived gaps and variances.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSpec {
    arrival: ArrivalProcess,
    rewards: Vec<[RewardDist; 2]>,
    means: Vec<[f64; 2]>,
    variances: Vec<[f64; 2]>,
    gaps: Vec<f64>,
}

pub fn build_instance(doc: &InstanceDoc) -> Result<InstanceSpec, InstanceError> {
    let arrival = ArrivalProcess::new(doc.horizon, doc.features, doc.arrival.clone())?;
    InstanceSpec::new(arrival, doc.rewards.clone())
}

impl InstanceSpec {
    pub fn new(arrival: ArrivalProcess, rewards: Vec<[RewardDist; 2]>) -> Result<Self, InstanceError> {
        if rewards.len() != arrival.features() {
            return Err(InstanceError::Malformed(format!(
                "{} reward pairs for {} features",
                rewards.len(),
                arrival.features()
            )));
        }
        for (j, pair) in rewards.iter().enumerate() {
            for (a, d) in pair.iter().enumerate() {
                reward::check(d, j, a)?;
            }
        }
        let means: Vec<[f64; 2]> = rewards.iter().map(|p| [p[0].mean(), p[1].mean()]).collect();
        let variances = rewards.iter().map(|p| [p[0].variance(), p[1].variance()]).collect();
        let gaps = means.iter().map(|m| m[1] - m[0]).collect();
        Ok(Self { arrival, rewards, means, variances, gaps })
    }

    /// Same reward pair for every feature under uniform stationary arrivals.
    pub fn uniform_bernoulli(horizon: u64, features: usize, control: f64, treatment: f64) -> Result<Self, InstanceError> {
        let arrival = ArrivalProcess::uniform(horizon, features)?;
        let pair = [RewardDist::Bernoulli { mean: control }, RewardDist::Bernoulli { mean: treatment }];
        Self::new(arrival, vec![pair; features])
    }

    pub fn from_json(text: &str) -> Result<Self, InstanceError> {
        build_instance(&InstanceDoc::from_json(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, InstanceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| InstanceError::Malformed(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_doc(&self) -> InstanceDoc {
        InstanceDoc {
            horizon: self.horizon(),
            features: self.features(),
            arrival: self.arrival.kind().clone(),
            rewards: self.rewards.clone(),
        }
    }

    /// Same rewards, different horizon. Oblivious sequences cannot be resized.
    pub fn with_horizon(&self, horizon: u64) -> Result<Self, InstanceError> {
        let arrival = ArrivalProcess::new(horizon, self.features(), self.arrival.kind().clone())?;
        Self::new(arrival, self.rewards.clone())
    }

    pub fn arrival(&self) -> &ArrivalProcess {
        &self.arrival
    }

    pub fn horizon(&self) -> u64 {
        self.arrival.horizon()
    }

    pub fn features(&self) -> usize {
        self.arrival.features()
    }

    pub fn reward_dist(&self, j: usize, arm: Arm) -> &RewardDist {
        &self.rewards[j][arm.index()]
    }

    pub fn mean(&self, j: usize, arm: Arm) -> f64 {
        self.means[j][arm.index()]
    }

    pub fn variance(&self, j: usize, arm: Arm) -> f64 {
        self.variances[j][arm.index()]
    }

    /// Treatment effect `mu_j1 - mu_j0`.
    pub fn gap(&self, j: usize) -> f64 {
        self.gaps[j]
    }

    pub fn gaps(&self) -> &[f64] {
        &self.gaps
    }

    /// `None` when both arms share the same mean.
    pub fn optimal_arm(&self, j: usize) -> Option<Arm> {
        let g = self.gaps[j];
        if g > 0.0 {
            Some(Arm::Treatment)
        } else if g < 0.0 {
            Some(Arm::Control)
        } else {
            None
        }
    }

    /// Pseudo-regret incurred by pulling `arm` for feature `j`.
    #[inline]
    pub fn regret_of(&self, j: usize, arm: Arm) -> f64 {
        match self.optimal_arm(j) {
            Some(best) if best != arm => self.gaps[j].abs(),
            _ => 0.0,
        }
    }

    fn check_feature(&self, j: usize) -> Result<(), InstanceError> {
        if j >= self.features() {
            return Err(InstanceError::FeatureOutOfRange { feature: j, features: self.features() });
        }
        Ok(())
    }
}

/// Draws the feature arriving at period `t` (1-based).
pub fn sample_feature<R: Rng + ?Sized>(arrival: &ArrivalProcess, t: u64, rng: &mut R) -> Result<usize, InstanceError> {
    arrival.sample(t, rng)
}

pub fn sample_reward<R: Rng + ?Sized>(inst: &InstanceSpec, j: usize, arm: Arm, rng: &mut R) -> Result<f64, InstanceError> {
    inst.check_feature(j)?;
    Ok(inst.rewards[j][arm.index()].sample(rng))
}

/// Two single-feature Bernoulli instances sharing the control distribution,
/// with treatment effects `xi` and `xi + 2 phi`. The control mean is placed so
/// that both treatment means fit in [0, 1].
pub fn make_hard_pair(xi: f64, phi: f64, horizon: u64) -> Result<(InstanceSpec, InstanceSpec), InstanceError> {
    if !(xi > 0.0 && xi <= 1.0) {
        return Err(InstanceError::InvalidParameter(format!("xi must lie in (0, 1], got {xi}")));
    }
    if !(0.0..=0.25).contains(&phi) {
        return Err(InstanceError::InvalidParameter(format!("phi must lie in [0, 1/4], got {phi}")));
    }
    let widest = xi + 2.0 * phi;
    if widest > 1.0 {
        return Err(InstanceError::InvalidParameter(format!(
            "gap {widest} cannot be realized by rewards in [0, 1]"
        )));
    }
    let control = RewardDist::Bernoulli { mean: (1.0 - widest) / 2.0 };
    let base = control.location();
    let first = [control, RewardDist::Bernoulli { mean: base + xi }];
    let second = [control, RewardDist::Bernoulli { mean: (base + widest).min(1.0) }];
    let arrival = ArrivalProcess::stationary(horizon, vec![1.0])?;
    Ok((
        InstanceSpec::new(arrival.clone(), vec![first])?,
        InstanceSpec::new(arrival, vec![second])?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bern(m0: f64, m1: f64) -> [RewardDist; 2] {
        [RewardDist::Bernoulli { mean: m0 }, RewardDist::Bernoulli { mean: m1 }]
    }

    #[test]
    fn bernoulli_gap_and_variances() {
        let inst = InstanceSpec::new(ArrivalProcess::stationary(10, vec![1.0]).unwrap(), vec![bern(0.3, 0.8)]).unwrap();
        assert_eq!(inst.gap(0), 0.8 - 0.3);
        assert!((inst.gap(0) - 0.5).abs() < 1e-15);
        assert!((inst.variance(0, Arm::Control) - 0.21).abs() < 1e-15);
        assert!((inst.variance(0, Arm::Treatment) - 0.16).abs() < 1e-15);
    }

    #[test]
    fn identical_arms_have_zero_gap() {
        let inst = InstanceSpec::uniform_bernoulli(10, 2, 0.5, 0.5).unwrap();
        assert_eq!(inst.gaps(), &[0.0, 0.0]);
        assert_eq!(inst.optimal_arm(1), None);
        assert_eq!(inst.regret_of(1, Arm::Control), 0.0);
    }

    #[test]
    fn point_masses_at_the_endpoints() {
        let pair = [RewardDist::PointMass { value: 0.0 }, RewardDist::PointMass { value: 1.0 }];
        let inst = InstanceSpec::new(ArrivalProcess::stationary(4, vec![1.0]).unwrap(), vec![pair]).unwrap();
        assert_eq!(inst.gap(0), 1.0);
        assert_eq!(inst.variance(0, Arm::Control), 0.0);
        assert_eq!(inst.variance(0, Arm::Treatment), 0.0);
    }

    #[test]
    fn document_round_trip_and_errors() {
        let text = r#"{
            "horizon": 100, "features": 2,
            "arrival": {"kind": "stationary", "params": {"probs": [0.25, 0.75]}},
            "rewards": [
              [{"kind": "bernoulli", "params": {"mean": 0.3}}, {"kind": "bernoulli", "params": {"mean": 0.8}}],
              [{"kind": "point_mass", "params": {"value": 0.5}}, {"kind": "truncated_gaussian", "params": {"mean": 0.4, "sd": 0.1}}]
            ]}"#;
        let inst = InstanceSpec::from_json(text).unwrap();
        assert_eq!(inst.features(), 2);
        let again = build_instance(&inst.to_doc()).unwrap();
        assert_eq!(again, inst);

        let bad_mean = text.replace("0.8", "1.8");
        assert!(matches!(InstanceSpec::from_json(&bad_mean), Err(InstanceError::MeanOutOfRange { feature: 0, arm: 1, .. })));
        let bad_probs = text.replace("0.75", "0.85");
        assert!(matches!(InstanceSpec::from_json(&bad_probs), Err(InstanceError::NotNormalized { .. })));
        assert!(matches!(InstanceSpec::from_json("{\"horizon\": 3}"), Err(InstanceError::Malformed(_))));
    }

    #[test]
    fn sample_reward_checks_feature_bounds() {
        let inst = InstanceSpec::uniform_bernoulli(10, 2, 0.2, 0.4).unwrap();
        let mut rng = rand::rng();
        assert!(sample_reward(&inst, 2, Arm::Control, &mut rng).is_err());
    }

    #[test]
    fn hard_pair_gaps() {
        let (a, b) = make_hard_pair(0.5, 0.0, 100).unwrap();
        assert_eq!(a, b);

        let (a, b) = make_hard_pair(0.5, 0.1, 100).unwrap();
        assert!((a.gap(0) - 0.5).abs() < 1e-12);
        assert!((b.gap(0) - 0.7).abs() < 1e-12);
        // shared control distribution, bit for bit
        assert_eq!(
            a.reward_dist(0, Arm::Control).location().to_bits(),
            b.reward_dist(0, Arm::Control).location().to_bits()
        );

        assert!(make_hard_pair(1.0, 0.25, 100).is_err());
        assert!(make_hard_pair(0.0, 0.1, 100).is_err());
        assert!(make_hard_pair(0.5, 0.3, 100).is_err());
    }
}
