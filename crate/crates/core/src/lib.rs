//! Trajectory optimization for floating-base robots through contact, using
//! dynamics projected onto the null space of the contact constraints.

pub mod error;
pub mod model;
pub mod nlpsolver;
pub mod projection;
pub mod rbd;
pub mod simulate;
pub mod spatial;
pub mod text;
pub mod transcription;
pub mod tvlqr;

#[cfg(any(test, feature = "testing"))]
pub mod testing;

pub use error::{Error, Result};
pub use model::RobotModel;
