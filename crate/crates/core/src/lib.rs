//! Simulation and analysis toolkit for a two-transmon autonomous
//! error-correction code with engineered resonator dissipation.
//!
//! The space is `Q1(3) ⊗ Q2(3) ⊗ R1(2) ⊗ R2(2)`. Frequencies are in MHz
//! (ordinary frequency) and times in µs.

pub mod analysis;
pub mod circuit;
pub mod model;
pub mod operators;
pub mod solver;
pub mod tomography;

pub use analysis::{
    coherence_metric, dispersive_shift, error_population, error_transparency_residual, fit_exponential, DecayFit,
    LevelSpec, SidebandKind,
};
pub use model::{
    build_full_hamiltonian, build_lab_hamiltonian, build_rotating_hamiltonian, build_static_hamiltonian,
    collapse_operators, error_projector, logical_state, DeviceParams, DriveConfig, HamiltonianSpec, LogicalLabel,
    NoiseModel, StateLabel, SweepAxis,
};
pub use operators::{
    expectation, partial_trace, tensor, validate_state, DensityMatrix, LabeledOperator, StateReport, StateVector,
};
pub use solver::{evolve, observable_series, refill_rate, sweep_chevron, SolverOptions, Trajectory};
