//! Linear critics over observable features.

pub mod features;
pub mod lspe;
pub mod td;

pub use features::{weighted_projection, weighted_sq_distance, FeatureLevel, FeatureMap};
pub use lspe::{lspe_batch, LspeOutput};
pub use td::{average_cost_td_step, discounted_td_step, run_td, Criterion, CriticState, StepSchedule};
