//! Monte Carlo engine: replications, metrics, Pareto sweeps, normality checks
//! and privacy audits.

mod audit;
mod normality;
mod sweep;

pub use audit::{
    default_audit_triples, privacy_audit, AuditDataset, AuditEvent, AuditReport, AuditSpec, AuditTriple, EventCheck,
    LapPlusCheck, LaplaceCheck,
};
pub use normality::{normal_cdf, normality_test, NormalityReport, MIN_NORMALITY_SAMPLES};
pub use sweep::{pareto_sweep, ParetoPoint};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arm::Arm;
use crate::baselines::{BaselineKind, BaselineState};
use crate::conse::ConsePolicyState;
use crate::dpconse::{DpConseConfig, DpConsePolicyState};
use crate::error::{HarnessError, PolicyError};
use crate::instance::{sample_feature, sample_reward, InstanceSpec};
use crate::policy::{EstimateFlag, Event, FeatureEstimate, Policy};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `index` under `master`: one SplitMix64 step from
/// `master + index * golden_gamma`.
pub fn replication_seed(master: u64, index: usize) -> u64 {
    splitmix64(master.wrapping_add((index as u64).wrapping_mul(GOLDEN_GAMMA)))
}

/// Environment and policy draws use separate streams of the same seed, so a
/// policy change never perturbs the arrival and reward sequence it faces.
pub(crate) fn stream_rngs(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut env = ChaCha8Rng::seed_from_u64(seed);
    env.set_stream(0);
    let mut pol = ChaCha8Rng::seed_from_u64(seed);
    pol.set_stream(1);
    (env, pol)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum PolicyConfig {
    Conse { alpha: f64 },
    Dpconse { alpha: f64, epsilon: f64, rct_multiplier: f64 },
    Rct,
    Ucb { c: f64 },
    SeOnly,
}

impl PolicyConfig {
    pub fn dpconse(alpha: f64, epsilon: f64) -> Self {
        PolicyConfig::Dpconse { alpha, epsilon, rct_multiplier: 1.0 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PolicyConfig::Conse { .. } => "conse",
            PolicyConfig::Dpconse { .. } => "dpconse",
            PolicyConfig::Rct => "rct",
            PolicyConfig::Ucb { .. } => "ucb",
            PolicyConfig::SeOnly => "se-only",
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match *self {
            PolicyConfig::Conse { alpha } | PolicyConfig::Dpconse { alpha, .. } => Some(alpha),
            _ => None,
        }
    }

    pub fn epsilon(&self) -> Option<f64> {
        match *self {
            PolicyConfig::Dpconse { epsilon, .. } => Some(epsilon),
            _ => None,
        }
    }

    /// Same policy with a different trade-off parameter; baselines are unchanged.
    pub fn with_alpha(self, a: f64) -> Self {
        match self {
            PolicyConfig::Conse { .. } => PolicyConfig::Conse { alpha: a },
            PolicyConfig::Dpconse { epsilon, rct_multiplier, .. } => {
                PolicyConfig::Dpconse { alpha: a, epsilon, rct_multiplier }
            }
            other => other,
        }
    }

    pub fn build(&self, horizon: u64, features: usize) -> Result<AnyPolicy, PolicyError> {
        Ok(match *self {
            PolicyConfig::Conse { alpha } => AnyPolicy::Conse(ConsePolicyState::new(alpha, horizon, features)?),
            PolicyConfig::Dpconse { alpha, epsilon, rct_multiplier } => AnyPolicy::DpConse(DpConsePolicyState::new(
                DpConseConfig { alpha, epsilon, rct_multiplier },
                horizon,
                features,
            )?),
            PolicyConfig::Rct => AnyPolicy::Baseline(BaselineState::new(BaselineKind::Rct, horizon, features)?),
            PolicyConfig::Ucb { c } => AnyPolicy::Baseline(BaselineState::new(BaselineKind::Ucb { c }, horizon, features)?),
            PolicyConfig::SeOnly => AnyPolicy::Baseline(BaselineState::new(BaselineKind::SeOnly, horizon, features)?),
        })
    }
}

#[derive(Debug, Clone)]
pub enum AnyPolicy {
    Conse(ConsePolicyState),
    DpConse(DpConsePolicyState),
    Baseline(BaselineState),
}

macro_rules! dispatch {
    ($self:expr, $p:ident => $body:expr) => {
        match $self {
            AnyPolicy::Conse($p) => $body,
            AnyPolicy::DpConse($p) => $body,
            AnyPolicy::Baseline($p) => $body,
        }
    };
}

impl Policy for AnyPolicy {
    fn horizon(&self) -> u64 {
        dispatch!(self, p => p.horizon())
    }

    fn features(&self) -> usize {
        dispatch!(self, p => p.features())
    }

    fn act<R: Rng + ?Sized>(&mut self, t: u64, feature: usize, rng: &mut R) -> Result<Arm, PolicyError> {
        dispatch!(self, p => p.act(t, feature, rng))
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
        dispatch!(self, p => p.update(t, feature, arm, reward, rng, events))
    }

    fn finalize<R: Rng + ?Sized>(&mut self, rng: &mut R, events: &mut Vec<Event>) -> Vec<FeatureEstimate> {
        dispatch!(self, p => p.finalize(rng, events))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOptions {
    /// Keep the full event log in the trace.
    pub log_events: bool,
    /// Number of evenly spaced regret checkpoints (the final period is always included).
    pub checkpoints: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { log_events: false, checkpoints: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub index: usize,
    pub seed: u64,
    /// `(t, cumulative pseudo-regret after period t)`.
    pub regret_path: Vec<(u64, f64)>,
    pub regret: f64,
    pub first_half_regret: f64,
    /// Suboptimal pulls per feature over the whole horizon.
    pub bad_pulls: Vec<u64>,
    /// Suboptimal pulls per feature with `t <= n/2`.
    pub first_half_bad_pulls: Vec<u64>,
    pub estimates: Vec<FeatureEstimate>,
    pub events: Option<Vec<Event>>,
}

impl RunTrace {
    pub fn rct_counts(&self) -> Vec<[u64; 2]> {
        self.estimates.iter().map(|e| e.counts).collect()
    }
}

/// Plays one replication: each period the environment draws a feature, the
/// policy picks an arm, the environment draws that arm's reward.
pub fn run_replication(
    inst: &InstanceSpec,
    policy: &PolicyConfig,
    seed: u64,
    opts: RunOptions,
) -> Result<RunTrace, HarnessError> {
    run_indexed(inst, policy, 0, seed, opts)
}

fn run_indexed(
    inst: &InstanceSpec,
    cfg: &PolicyConfig,
    index: usize,
    seed: u64,
    opts: RunOptions,
) -> Result<RunTrace, HarnessError> {
    let n = inst.horizon();
    let m = inst.features();
    let mut policy = cfg.build(n, m)?;
    if policy.horizon() != n {
        return Err(HarnessError::HorizonMismatch { instance: n, policy: policy.horizon() });
    }
    let (mut env, mut prng) = stream_rngs(seed);
    let every = if opts.checkpoints == 0 { u64::MAX } else { (n / opts.checkpoints as u64).max(1) };
    let half = n / 2;
    let mut log = opts.log_events.then(Vec::new);
    let mut buf = Vec::new();
    let mut regret = 0.0;
    let mut first_half_regret = 0.0;
    let mut bad = vec![0u64; m];
    let mut first_bad = vec![0u64; m];
    let mut path = Vec::new();
    for t in 1..=n {
        let j = sample_feature(inst.arrival(), t, &mut env)?;
        let a = policy.act(t, j, &mut prng)?;
        let r = sample_reward(inst, j, a, &mut env)?;
        policy.update(t, j, a, r, &mut prng, &mut buf)?;
        let inc = inst.regret_of(j, a);
        if inc > 0.0 {
            regret += inc;
            bad[j] += 1;
            if t <= half {
                first_bad[j] += 1;
            }
        }
        if t == half {
            first_half_regret = regret;
        }
        if t % every == 0 || t == n {
            path.push((t, regret));
        }
        match log.as_mut() {
            Some(l) => l.append(&mut buf),
            None => buf.clear(),
        }
    }
    let estimates = policy.finalize(&mut prng, &mut buf);
    if let Some(l) = log.as_mut() {
        l.append(&mut buf);
    }
    Ok(RunTrace {
        index,
        seed,
        regret_path: path,
        regret,
        first_half_regret,
        bad_pulls: bad,
        first_half_bad_pulls: first_bad,
        estimates,
        events: log,
    })
}

/// Runs `reps` replications on a pool of `parallel` threads. Results are in
/// replication order regardless of scheduling.
pub fn run_replications(
    inst: &InstanceSpec,
    policy: &PolicyConfig,
    reps: usize,
    master_seed: u64,
    parallel: usize,
    opts: RunOptions,
) -> Result<Vec<RunTrace>, HarnessError> {
    // fail fast on a bad configuration before spinning up the pool
    policy.build(inst.horizon(), inst.features())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .map_err(|e| HarnessError::ThreadPool(e.to_string()))?;
    pool.install(|| {
        (0..reps)
            .into_par_iter()
            .map(|i| run_indexed(inst, policy, i, replication_seed(master_seed, i), opts))
            .collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AggregateOptions {
    /// Score missing estimates as `(0 - gap)^2` instead of excluding them.
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMetrics {
    pub feature: usize,
    pub gap: f64,
    pub mse: f64,
    pub se_mse: f64,
    /// Estimates entering the MSE.
    pub used: usize,
    pub missing: usize,
    pub under_sampled: usize,
    /// Mean and standard error of the final-flagged estimates.
    pub final_count: usize,
    pub final_mean: f64,
    pub final_se: f64,
    /// `(estimate - gap) / sqrt(var0 / N0 + var1 / N1)` for each final estimate.
    pub standardized: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub reps: usize,
    pub features: usize,
    pub horizon: u64,
    pub mean_regret: f64,
    pub se_regret: f64,
    pub per_feature: Vec<FeatureMetrics>,
    pub max_mse: f64,
    pub se_max_mse: f64,
    pub product: f64,
    pub normalized_product: f64,
    pub strict: bool,
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let k = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / k;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Reduces traces to regret and error metrics; standard errors need at least two traces. Traces are ordered by their
/// replication index first, so the result does not depend on input order.
pub fn aggregate(traces: &[RunTrace], inst: &InstanceSpec, opts: AggregateOptions) -> Result<MetricsReport, HarnessError> {
    if traces.is_empty() {
        return Err(HarnessError::TooFewTraces { needed: 1, got: 0 });
    }
    let mut order: Vec<&RunTrace> = traces.iter().collect();
    order.sort_by_key(|t| (t.index, t.seed));
    let m = inst.features();
    for t in &order {
        if t.estimates.len() != m {
            return Err(HarnessError::InvalidParameter(format!(
                "trace {} has {} estimates for {} features",
                t.index,
                t.estimates.len(),
                m
            )));
        }
    }
    let regrets: Vec<f64> = order.iter().map(|t| t.regret).collect();
    let (mean_regret, se_regret) = mean_se(&regrets);
    let mut per_feature = Vec::with_capacity(m);
    for j in 0..m {
        let gap = inst.gap(j);
        let var = [inst.variance(j, Arm::Control), inst.variance(j, Arm::Treatment)];
        let mut sq = Vec::new();
        let mut finals = Vec::new();
        let mut standardized = Vec::new();
        let (mut missing, mut under) = (0, 0);
        for t in &order {
            let e = &t.estimates[j];
            match e.flag {
                EstimateFlag::Missing => {
                    missing += 1;
                    if opts.strict {
                        sq.push(gap * gap);
                    }
                    continue;
                }
                EstimateFlag::UnderSampled => under += 1,
                EstimateFlag::Final => {
                    finals.push(e.value);
                    let sd = (var[0] / e.counts[0] as f64 + var[1] / e.counts[1] as f64).sqrt();
                    if sd > 0.0 {
                        standardized.push((e.value - gap) / sd);
                    }
                }
            }
            sq.push((e.value - gap).powi(2));
        }
        let (mse, se_mse) = if sq.is_empty() { (f64::NAN, f64::NAN) } else { mean_se(&sq) };
        let (final_mean, final_se) = mean_se(&finals);
        per_feature.push(FeatureMetrics {
            feature: j,
            gap,
            mse,
            se_mse,
            used: sq.len(),
            missing,
            under_sampled: under,
            final_count: finals.len(),
            final_mean,
            final_se,
            standardized,
        });
    }
    let worst = per_feature
        .iter()
        .filter(|f| !f.mse.is_nan())
        .max_by(|a, b| a.mse.total_cmp(&b.mse));
    let (max_mse, se_max_mse) = worst.map(|f| (f.mse, f.se_mse)).unwrap_or((f64::NAN, f64::NAN));
    let product = max_mse * mean_regret;
    Ok(MetricsReport {
        reps: order.len(),
        features: m,
        horizon: inst.horizon(),
        mean_regret,
        se_regret,
        per_feature,
        max_mse,
        se_max_mse,
        product,
        normalized_product: product / m as f64,
        strict: opts.strict,
    })
}
