//! Density of states of lattice Schrödinger operators `H = -Δ + V`.
//!
//! Three numeric routes estimate the DOS measure (or its Laplace
//! transform): inertia-based eigenvalue counts, heat-kernel ball averages
//! and the weighted-trace residue `lim_{r↓d} (r-d) Tr(e^{-sH}⟨x⟩^{-r})`.
//! Closed forms for homogeneous potentials, Dixmier partial sums and
//! Cwikel quasinorms serve as cross-checks.

pub mod banded;
pub mod closedform;
pub mod dos;
pub mod error;
pub mod experiment;
pub mod heat;
pub mod lattice;
pub mod spectral;

pub use error::{Error, Result};
pub use experiment::{preset, run, ExperimentConfig, Method, Report, PRESETS, VERSION};
pub use faer::Mat;
pub use lattice::{
    assemble_hamiltonian, build_grid, sample_potential, Boundary, Grid, GridParams,
    PotentialField, PotentialSpec, SparseOperator,
};
