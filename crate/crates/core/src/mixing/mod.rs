//! Particle clouds, density certificates, confined kernels, and the
//! soft-local-times mixing coupling.

pub mod cloud;
pub mod confined;
pub mod experiment;
pub mod slt;
pub mod tess;

pub use cloud::{evolve_cloud, sample_cloud, stationarity_chi_square, Particle, ParticleCloud};
pub use confined::{confined_kernel, kernel_oscillation_check, ConfinedKernel};
pub use experiment::{mixing_experiment, ConfinementMode, MixingParams, MixingReport};
pub use slt::{soft_local_time_coupling, CouplingReport, DenseKernels, TranslatedKernels};
pub use tess::{density_check, DensityCertificate, Tessellation};
