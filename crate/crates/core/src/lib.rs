//! Learning null-space projections from observations of constrained motion.
//!
//! Observed actions are modelled as `u = A†b + N π` with `N = I - A†A`.
//! The crate learns the null-space component `N π` from raw `(x, u)` pairs,
//! then recovers the constraint rows `A` (or the task-space selection of a
//! known kinematic model) and evaluates the resulting projection.

pub mod arm;
pub mod constraint;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod io;
pub mod lm;
pub mod nullspace;
pub mod policies;
pub mod projection;
pub mod rbf;

pub use error::{Error, Result};
