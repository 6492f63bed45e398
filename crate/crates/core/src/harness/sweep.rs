use serde::{Deserialize, Serialize};

use super::{aggregate, run_replications, AggregateOptions, PolicyConfig, RunOptions};
use crate::error::HarnessError;
use crate::instance::InstanceSpec;

pub const MIN_SWEEP_REPS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub policy: String,
    pub alpha: f64,
    pub epsilon: Option<f64>,
    #[serde(rename = "M")]
    pub features: usize,
    pub n: u64,
    pub mean_regret: f64,
    pub se_regret: f64,
    pub max_mse: f64,
    pub se_mse: f64,
    pub product: f64,
}

/// One Pareto point per alpha, sorted by alpha. Every grid point reuses the same
/// master seed, so the points differ only through the policy.
pub fn pareto_sweep(
    inst: &InstanceSpec,
    policy: &PolicyConfig,
    alpha_grid: &[f64],
    reps: usize,
    seed: u64,
    parallel: usize,
) -> Result<Vec<ParetoPoint>, HarnessError> {
    if policy.alpha().is_none() {
        return Err(HarnessError::InvalidParameter(format!("{} has no alpha to sweep", policy.name())));
    }
    if alpha_grid.is_empty() {
        return Err(HarnessError::InvalidParameter("alpha grid is empty".into()));
    }
    if reps < MIN_SWEEP_REPS {
        return Err(HarnessError::TooFewTraces { needed: MIN_SWEEP_REPS, got: reps });
    }
    let mut grid = alpha_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid.iter()
        .map(|&a| {
            let cfg = policy.with_alpha(a);
            let traces = run_replications(inst, &cfg, reps, seed, parallel, RunOptions { log_events: false, checkpoints: 0 })?;
            let r = aggregate(&traces, inst, AggregateOptions::default())?;
            Ok(ParetoPoint {
                policy: cfg.name().to_string(),
                alpha: a,
                epsilon: cfg.epsilon(),
                features: inst.features(),
                n: inst.horizon(),
                mean_regret: r.mean_regret,
                se_regret: r.se_regret,
                max_mse: r.max_mse,
                se_mse: r.se_max_mse,
                product: r.product,
            })
        })
        .collect()
}
