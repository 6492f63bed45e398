//! Simulation toolkit for adaptive experiments that trade off regret against
//! the accuracy of per-feature treatment-effect estimates, with an optional
//! differentially private variant.

pub mod arm;
pub mod baselines;
pub mod cli;
pub mod conse;
pub mod dpconse;
pub mod error;
pub mod harness;
pub mod instance;
pub mod mechanism;
pub mod policy;

pub use arm::Arm;
pub use policy::{EstimateFlag, Event, FeatureEstimate, Policy};
