use thiserror::Error;

/// Errors raised while building or querying a bandit instance.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum InstanceError {
    #[error("malformed instance document: {0}")]
    Malformed(String),
    #[error("reward mean {value} for feature {feature}, arm {arm} lies outside [0, 1]")]
    MeanOutOfRange { feature: usize, arm: usize, value: f64 },
    #[error("probability vector sums to {sum}, expected 1")]
    NotNormalized { sum: f64 },
    #[error("period {t} outside horizon 1..={horizon}")]
    PeriodOutOfRange { t: u64, horizon: u64 },
    #[error("feature index {feature} out of range (M = {features})")]
    FeatureOutOfRange { feature: usize, features: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Errors from the noise primitives and epoch schedules.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MechanismError {
    #[error("privacy parameter epsilon must be positive, got {0}")]
    NonPositiveEpsilon(f64),
    #[error("epoch must be at least 1")]
    ZeroEpoch,
    #[error("horizon must be at least 3, got {0}")]
    HorizonTooShort(u64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Errors raised by a policy when the act/update protocol is violated.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("alpha must lie in [0, 1], got {0}")]
    AlphaOutOfRange(f64),
    #[error("horizon must be at least 4, got {0}")]
    HorizonTooShort(u64),
    #[error("at least one feature is required")]
    NoFeatures,
    #[error("expected period {expected}, got {got}")]
    ClockMismatch { expected: u64, got: u64 },
    #[error("update for period {t} has no matching act")]
    UnmatchedUpdate { t: u64 },
    #[error("act for period {t} issued while a previous act is pending")]
    PendingAct { t: u64 },
    #[error("feature index {feature} out of range (M = {features})")]
    FeatureOutOfRange { feature: usize, features: usize },
    #[error("reward {0} outside [0, 1]")]
    RewardOutOfRange(f64),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Errors from the Monte Carlo harness.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("instance horizon {instance} does not match policy horizon {policy}")]
    HorizonMismatch { instance: u64, policy: u64 },
    #[error("need at least {needed} traces, got {got}")]
    TooFewTraces { needed: usize, got: usize },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("degenerate sample: zero variance")]
    DegenerateSample,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}
