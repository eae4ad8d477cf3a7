//! Joint antenna-placement and beamforming optimization for a movable-antenna
//! base station that serves ground users, controlled aerial vehicles and
//! sensing targets at the same time.
//!
//! The crate is organised bottom-up:
//!
//! * [`scenario`] holds configuration, unit conversions and seeded randomness.
//! * [`channel`] builds steering vectors and Rician channels for a placement.
//! * [`metrics`] evaluates SINRs, rates, beam-pattern gains and power.
//! * [`control`] solves the Riccati equations behind the control-rate threshold.
//! * [`pso`] searches antenna placements with a penalised particle swarm.
//! * [`sdp`] is a small interior-point solver over Hermitian PSD blocks.
//! * [`beamforming`] runs the SCA / semidefinite-relaxation beamformer.
//! * [`driver`] alternates placement and beamforming, plus the baselines.
//! * [`harness`] runs sweeps and writes CSV / SVG outputs.

pub mod beamforming;
pub mod channel;
pub mod control;
pub mod driver;
mod error;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod pso;
pub mod scenario;
pub mod sdp;

pub use error::{Error, Result};
