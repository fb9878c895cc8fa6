//! Heat kernels, functional inequalities, and regularity estimates.

pub mod kernel;
pub mod gaussian;
pub mod poincare;
pub mod harnack;
pub mod goodness;

pub use gaussian::{gaussian_bound_fit, GaussianFit};
pub use goodness::{goodness_scan, reference_constants, GoodnessConstants};
pub use harnack::{
    harnack_constant, oscillation_decay_check, phi_time_grid, HarnackOptions, HarnackReport,
    SpaceTimeFunction,
};
pub use kernel::{kernel_row, kernel_series, KernelTable};
pub use poincare::{poincare_constant, poincare_solution, PoincareResult};
