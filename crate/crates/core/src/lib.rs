//! Two-type time-synchronization particle system.
//!
//! Particles of type 1 and 2 drift along the line with constant velocities
//! `v1` and `v2`. A type-`i` particle jumps onto a uniformly chosen particle of
//! the other type at rate `alpha_ij`. The crate provides
//!
//! * [`model`]: exact event-driven simulation of the continuous-time dynamics
//!   and of its embedded jump chain,
//! * [`moments`]: the closed linear recursions for expected means, variances
//!   and squared mean gap of the embedded chain,
//! * [`spectral`]: closed-form and numeric spectral constants of the
//!   recursion matrix,
//! * [`regimes`]: variance predictions on the three time scales and Monte Carlo
//!   ensembles that check them,
//! * [`cli`]: configuration parsing and serialization used by the `timesync`
//!   binary.

pub mod cli;
mod error;
pub mod linalg;
pub mod model;
pub mod moments;
pub mod regimes;
pub mod spectral;

pub use error::{Error, Result};
pub use model::{EmpiricalStats, InitDist, InitSpec, JumpEvent, ModelParams, ParticleType, SystemState};
pub use moments::{Closure, MeanState, MomentSystem, MomentVectorW};
pub use regimes::{EnsembleReport, ExperimentConfig, Regime};
pub use spectral::{ScalingParams, SpectralSummary};
