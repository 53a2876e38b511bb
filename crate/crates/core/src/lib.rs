//! Thompson-sampling adaptive control for unknown linear-quadratic regulators.
//!
//! The crate covers the Riccati numerics, online least-squares estimation,
//! rejection-sampled Thompson draws, the learning controllers, a seeded plant
//! simulator and a benchmark harness.

pub mod control;
pub mod controllers;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod linalg;
pub mod sampling;
pub mod schedule;
pub mod sim;

pub use control::{
    closed_loop, grad_l_at_optimum, membership_in_s, solve_dare, CostMatrices, DareOptions,
    Membership, MembershipReason, RiccatiSolution, StabilizabilityParams, SystemParams,
};
pub use controllers::{Algorithm, AdaptiveController, Controller, LinearFeedback, TsacConfig};
pub use error::{Error, Result};
pub use estimation::{ConfidenceRadii, RlsState};
pub use linalg::spectral_radius;
pub use sampling::{ts_sample, TsSample};
pub use sim::{run_episode, PlantConfig, RunLog};
