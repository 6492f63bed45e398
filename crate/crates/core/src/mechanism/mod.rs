//! Epoch schedules and the two noise primitives shared by both elimination policies.

mod lap_plus;
mod laplace;
mod schedule;

pub use lap_plus::{lap_plus_pmf, sample_lap_plus, LapPlus};
pub use laplace::{laplace_log_density, sample_laplace};
pub use schedule::{schedule, Schedule};
