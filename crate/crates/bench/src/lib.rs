//! Fixtures shared by the kernel benchmarks.

use doslab_core::{assemble_hamiltonian, build_grid, sample_potential, Boundary, PotentialSpec, Result, SparseOperator};

/// Dirichlet `-Δ + V` with a seeded random potential of amplitude 2.
pub fn random_operator(dim: usize, half_width: f64, spacing: f64) -> Result<SparseOperator> {
    let grid = build_grid(dim, half_width, spacing, Boundary::Dirichlet)?;
    let spec = PotentialSpec::Random {
        seed: 7,
        amplitude: 2.0,
        cell: 1.0,
    };
    let field = sample_potential(&spec, &grid)?;
    assemble_hamiltonian(&grid, &field)
}
