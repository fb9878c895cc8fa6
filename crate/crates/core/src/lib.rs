//! Simulation laboratory for continuous-time random walks among random
//! conductances on finite boxes of Z^d.
//!
//! The crate is organized around the objects of the theory:
//!
//! * [`lattice`]: boxes, conductance fields mu_{x,y}, balls, clusters.
//! * [`walk`]: the variable-speed walk with jump rates mu_{x,y}/mu_x
//!   (total jump rate 1 at every non-isolated vertex), exit times,
//!   displacement-confined walks.
//! * [`spectral`]: exact heat kernels q_t(x,y) = P_x(Y_t = y)/mu_y via
//!   uniformization, Gaussian bound fits, Poincaré constants, parabolic
//!   Harnack constants and the oscillation decay they imply, good/very-good
//!   ball scans.
//! * [`mixing`]: Poisson particle clouds, subcube density certificates,
//!   displacement-confined transition kernels, and the soft-local-time
//!   coupling that extracts an independent Poisson cloud from an evolved
//!   dense configuration.
//! * [`epidemic`]: infection among the moving particles (SI and SIS),
//!   front-speed measurement, space-time cell events and their
//!   collision/coverage statistics, Poisson Chernoff bounds.
//! * [`surface`]: two-sided Lipschitz surfaces of good space-time cells,
//!   minimal-surface construction and the blocking (surrounding) predicate.
//! * [`experiments`]: the named experiment registry behind the
//!   `conductance-lab` binary, with deterministic per-replica seeding and
//!   manifest/digest bookkeeping.

pub mod config;
pub mod epidemic;
pub mod error;
pub mod experiments;
pub mod lattice;
pub mod manifest;
pub mod mixing;
pub mod report;
pub mod rng;
pub mod spectral;
pub mod stats;
pub mod surface;
pub mod walk;

pub use error::{Error, Result};
