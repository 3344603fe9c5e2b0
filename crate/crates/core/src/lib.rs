//! Disturbance response control with adaptive gradient steps for known,
//! stable, partially observed linear systems.

pub mod adaptive_learner;
pub mod adversary;
pub mod drc_policy;
pub mod error;
pub mod linalg;
pub mod lti_system;
pub mod regret_lab;
pub mod selftest;
pub mod truncated_loss;

pub use error::{DrcError, Result};
