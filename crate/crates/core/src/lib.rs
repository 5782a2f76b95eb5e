//! Leapfrog Hamiltonian Monte Carlo for Bayesian feed-forward networks, with
//! every crossing of an activation kink instrumented.
//!
//! The crate is organised bottom-up:
//!
//! * [`bnn`] evaluates networks, the posterior potential and its reverse-mode
//!   gradient, including gradients with a forced activation pattern.
//! * [`potential`] defines the [`Potential`] abstraction shared by the
//!   network posterior and the analytic proxy targets.
//! * [`symplectic`] is the leapfrog integrator with Hamiltonian bookkeeping
//!   and crossing detection along each drift segment.
//! * [`analysis`] compares measured energy errors against the first-order
//!   kink prediction and fits error orders.
//! * [`sampler`] runs Metropolis-adjusted HMC chains.
//! * [`proxy`] holds the i.i.d. piecewise-affine proxy model and the limiting
//!   acceptance/efficiency curves.
//! * [`harness`] generates data and runs seeded experiment grids.

pub mod analysis;
pub mod bnn;
pub mod error;
pub mod harness;
pub mod potential;
pub mod proxy;
pub mod sampler;
pub mod stats;
pub mod symplectic;

pub use error::{Error, Result};
pub use potential::{CrossingEvent, Potential, Sign, SurfaceHit, SurfaceId};
pub use symplectic::{PhasePoint, StepRecord, TrajectoryTrace};
