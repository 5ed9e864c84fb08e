//! Forward and inverse stochastic optimal control for linear-quadratic
//! sensorimotor (LQS) models.
//!
//! The forward side computes control and filter gains by alternating
//! optimization ([`soc`]) and the exact closed-loop moments ([`moments`]),
//! with a seeded Monte-Carlo simulator as an independent check
//! ([`simulator`]). The inverse side scores a parameter vector θ against
//! ground-truth moments with a VAF-based objective ([`objective`]) and
//! searches the feasible box with multi-start global optimization
//! ([`optimizer`]).

pub mod error;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod model;
pub mod moments;
pub mod objective;
pub mod optimizer;
pub mod reaching;
pub mod simulator;
pub mod soc;

pub use error::{Error, Result};
