use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{replication_seed, splitmix64};
use crate::arm::Arm;
use crate::dpconse::{DpConseConfig, DpConsePolicyState};
use crate::error::{HarnessError, MechanismError};
use crate::mechanism::{laplace_log_density, schedule, LapPlus};
use crate::policy::Policy;

/// A fixed input stream: the feature of every period and the reward each arm
/// would return in that period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditDataset {
    pub features: Vec<usize>,
    pub rewards: Vec<[f64; 2]>,
}

impl AuditDataset {
    fn horizon(&self) -> u64 {
        self.features.len() as u64
    }

    /// Periods (1-based) where the two datasets differ.
    fn differences(&self, other: &AuditDataset) -> Vec<u64> {
        (0..self.features.len())
            .filter(|&i| self.features[i] != other.features[i] || self.rewards[i] != other.rewards[i])
            .map(|i| i as u64 + 1)
            .collect()
    }
}

/// "Every action taken in periods `from..=to` (restricted to `feature` when
/// given) equals `arm`."
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub feature: Option<usize>,
    pub from: u64,
    pub to: u64,
    pub arm: Arm,
}

impl AuditEvent {
    fn occurs(&self, features: &[usize], actions: &[Arm]) -> bool {
        (self.from..=self.to).all(|t| {
            let i = t as usize - 1;
            self.feature.is_some_and(|f| f != features[i]) || actions[i] == self.arm
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditTriple {
    pub name: String,
    pub d: AuditDataset,
    pub d_prime: AuditDataset,
    pub event: AuditEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSpec {
    pub epsilon: f64,
    pub alpha: f64,
    pub features: usize,
    pub trials: usize,
    pub seed: u64,
    pub parallel: usize,
    pub triples: Vec<AuditTriple>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplaceCheck {
    pub length: u64,
    pub scale: f64,
    pub shift: f64,
    pub max_log_ratio: f64,
    pub bound: f64,
    /// The maximum equals the bound up to rounding.
    pub attained: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LapPlusCheck {
    pub m: f64,
    pub max_ratio: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventCheck {
    pub name: String,
    pub differs_at: Option<u64>,
    pub trials: usize,
    pub p_d: f64,
    pub p_d_prime: f64,
    pub delta: f64,
    /// Three pooled standard errors of the two frequencies.
    pub slack: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub epsilon: f64,
    pub laplace: Vec<LaplaceCheck>,
    pub lap_plus: Vec<LapPlusCheck>,
    pub events: Vec<EventCheck>,
    pub note: String,
    pub pass: bool,
}

const NOTE: &str = "The event checks are a statistical falsification test: a failure exposes a violation, \
a pass does not prove the privacy guarantee.";

fn laplace_check(length: u64, eps: f64) -> LaplaceCheck {
    let scale = 2.0 / (eps * length as f64);
    let shift = 1.0 / length as f64;
    let bound = eps / 2.0;
    let mut max = 0.0f64;
    let steps = 4000;
    for i in 0..=steps {
        let x = -20.0 * scale + 40.0 * scale * i as f64 / steps as f64;
        let lr = laplace_log_density(x, 0.0, scale) - laplace_log_density(x, shift, scale);
        max = max.max(lr.abs());
    }
    LaplaceCheck {
        length,
        scale,
        shift,
        max_log_ratio: max,
        bound,
        attained: (max - bound).abs() <= 1e-9 * bound,
        pass: max <= bound * (1.0 + 1e-9),
    }
}

fn lap_plus_check(m: f64, eps: f64) -> Result<LapPlusCheck, MechanismError> {
    let a = LapPlus::new(m, eps)?;
    let b = LapPlus::new(m + 1.0, eps)?;
    // stop before the pmf underflows
    let top = b.center() as i64 + (1200.0 / eps) as i64;
    let mut max = 0.0f64;
    for v in 0..=top {
        let (pa, pb) = (a.pmf(v), b.pmf(v));
        if pa > 0.0 && pb > 0.0 {
            max = max.max(pa / pb).max(pb / pa);
        }
    }
    let bound = eps.exp();
    Ok(LapPlusCheck { m, max_ratio: max, bound, pass: max <= bound * (1.0 + 1e-12) })
}

fn actions_on<R: Rng>(ds: &AuditDataset, cfg: DpConseConfig, features: usize, rng: &mut R) -> Result<Vec<Arm>, HarnessError> {
    let n = ds.horizon();
    let mut p = DpConsePolicyState::new(cfg, n, features)?;
    let mut buf = Vec::new();
    let mut out = Vec::with_capacity(n as usize);
    for t in 1..=n {
        let i = t as usize - 1;
        let j = ds.features[i];
        let a = p.act(t, j, rng)?;
        p.update(t, j, a, ds.rewards[i][a.index()], rng, &mut buf)?;
        buf.clear();
        out.push(a);
    }
    Ok(out)
}

fn event_frequency(
    ds: &AuditDataset,
    ev: &AuditEvent,
    cfg: DpConseConfig,
    features: usize,
    trials: usize,
    seed: u64,
) -> Result<f64, HarnessError> {
    let hits: Result<Vec<bool>, HarnessError> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(replication_seed(seed, i));
            rng.set_stream(1);
            Ok(ev.occurs(&ds.features, &actions_on(ds, cfg, features, &mut rng)?))
        })
        .collect();
    Ok(hits?.iter().filter(|&&h| h).count() as f64 / trials as f64)
}

fn validate_triple(tr: &AuditTriple, features: usize) -> Result<Option<u64>, HarnessError> {
    let n = tr.d.horizon();
    for ds in [&tr.d, &tr.d_prime] {
        if ds.features.len() != ds.rewards.len() || ds.horizon() != n || n < 4 {
            return Err(HarnessError::InvalidParameter(format!("{}: datasets must share a horizon of at least 4", tr.name)));
        }
        if ds.features.iter().any(|&j| j >= features) {
            return Err(HarnessError::InvalidParameter(format!("{}: feature index out of range", tr.name)));
        }
        if ds.rewards.iter().flatten().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(HarnessError::InvalidParameter(format!("{}: rewards must lie in [0, 1]", tr.name)));
        }
    }
    let diff = tr.d.differences(&tr.d_prime);
    if diff.len() > 1 {
        return Err(HarnessError::InvalidParameter(format!("{}: datasets differ in {} periods", tr.name, diff.len())));
    }
    let at = diff.first().copied();
    let ev = &tr.event;
    if ev.from < 1 || ev.to > n || ev.from > ev.to || at.is_some_and(|t| ev.from <= t) {
        return Err(HarnessError::InvalidParameter(format!(
            "{}: the event must cover periods strictly after the differing step",
            tr.name
        )));
    }
    Ok(at)
}

/// Mechanism-level checks (a) and (b) plus the statistical event test (c).
pub fn privacy_audit(spec: &AuditSpec) -> Result<AuditReport, HarnessError> {
    let eps = spec.epsilon;
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(MechanismError::NonPositiveEpsilon(eps).into());
    }
    let n = spec.triples.first().map(|t| t.d.horizon()).unwrap_or(64);
    let mut lengths: Vec<u64> = (1..=4).map(|e| schedule(e, n.max(3), Some(eps)).map(|s| s.length)).collect::<Result<_, _>>()?;
    lengths.extend([1, 7, 1000]);
    let laplace: Vec<LaplaceCheck> = lengths.iter().map(|&r| laplace_check(r, eps)).collect();

    let mut centres = vec![1.0, 3.7, 5.0, 16.0, 100.5];
    centres.push(schedule(1, n.max(3), Some(eps))?.length as f64);
    let lap_plus: Vec<LapPlusCheck> = centres.iter().map(|&m| lap_plus_check(m, eps)).collect::<Result<_, _>>()?;

    let cfg = DpConseConfig::new(spec.alpha, eps);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.parallel.max(1))
        .build()
        .map_err(|e| HarnessError::ThreadPool(e.to_string()))?;
    let mut events = Vec::new();
    for (k, tr) in spec.triples.iter().enumerate() {
        let at = validate_triple(tr, spec.features)?;
        let trials = spec.trials.max(1);
        // independent randomness for the two datasets
        let s1 = splitmix64(spec.seed ^ (2 * k as u64));
        let s2 = splitmix64(spec.seed ^ (2 * k as u64 + 1));
        let (p, q) = pool.install(|| -> Result<(f64, f64), HarnessError> {
            Ok((
                event_frequency(&tr.d, &tr.event, cfg, spec.features, trials, s1)?,
                event_frequency(&tr.d_prime, &tr.event, cfg, spec.features, trials, s2)?,
            ))
        })?;
        let delta = 1.0 / tr.d.horizon() as f64;
        let pooled = (p + q) / 2.0;
        let slack = 3.0 * (pooled * (1.0 - pooled) * 2.0 / trials as f64).sqrt();
        let e = eps.exp();
        let pass = p <= e * q + delta + slack && q <= e * p + delta + slack;
        events.push(EventCheck { name: tr.name.clone(), differs_at: at, trials, p_d: p, p_d_prime: q, delta, slack, pass });
    }
    let pass = laplace.iter().all(|c| c.pass && c.attained)
        && lap_plus.iter().all(|c| c.pass)
        && events.iter().all(|c| c.pass);
    Ok(AuditReport { epsilon: eps, laplace, lap_plus, events, note: NOTE.to_string(), pass })
}

/// Neighbouring datasets over a horizon of 64 with two features: a first-half
/// feature swap, a second-half feature swap, a first-half reward change, and an
/// identical pair as a control.
///
/// In the first half feature 1 arrives six times, so with `alpha = 0` the common
/// trial length is 6 and the first swap moves it to 5. The second half alternates
/// the features.
pub fn default_audit_triples() -> Vec<AuditTriple> {
    let n = 64usize;
    let rare = [5usize, 9, 14, 20, 25, 30];
    let mut features = vec![0usize; n];
    for t in 1..=n {
        features[t - 1] = if t <= n / 2 {
            usize::from(rare.contains(&t))
        } else {
            usize::from(t % 2 == 0)
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0xA0D1);
    let rewards: Vec<[f64; 2]> = (0..n)
        .map(|_| [f64::from(u8::from(rng.random_bool(0.4))), f64::from(u8::from(rng.random_bool(0.7)))])
        .collect();
    let d = AuditDataset { features, rewards };

    let mut swap_first = d.clone();
    swap_first.features[4] = 0;
    let mut swap_second = d.clone();
    swap_second.features[39] = 0;
    let mut reward_change = d.clone();
    reward_change.rewards[2] = [1.0 - d.rewards[2][0], 1.0 - d.rewards[2][1]];

    vec![
        AuditTriple {
            name: "first-half feature swap at t=5".into(),
            d: d.clone(),
            d_prime: swap_first,
            event: AuditEvent { feature: Some(1), from: 46, to: 64, arm: Arm::Treatment },
        },
        AuditTriple {
            name: "second-half feature swap at t=40".into(),
            d: d.clone(),
            d_prime: swap_second,
            event: AuditEvent { feature: Some(1), from: 41, to: 64, arm: Arm::Treatment },
        },
        AuditTriple {
            name: "first-half reward change at t=3".into(),
            d: d.clone(),
            d_prime: reward_change,
            event: AuditEvent { feature: None, from: 49, to: 64, arm: Arm::Treatment },
        },
        AuditTriple {
            name: "identical datasets".into(),
            d: d.clone(),
            d_prime: d,
            event: AuditEvent { feature: Some(0), from: 41, to: 64, arm: Arm::Treatment },
        },
    ]
}

impl AuditSpec {
    /// The default audit at horizon 64 with two features and `alpha = 0`.
    pub fn standard(epsilon: f64, trials: usize, seed: u64, parallel: usize) -> Self {
        Self { epsilon, alpha: 0.0, features: 2, trials, seed, parallel, triples: default_audit_triples() }
    }
}
