use thiserror::Error;

/// Errors produced by the lattice, spectral, heat and DOS routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid potential: {0}")]
    InvalidPotential(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "dense path is capped at {cap} rows but the operator has {rows}; \
         use a windowed count or raise the cap explicitly"
    )]
    DenseCap { rows: usize, cap: usize },

    #[error(
        "Chebyshev order {order} exceeds the cap {cap} for s*(width) = {spread:.1}; \
         retry with tol >= {suggested_tol:.1e} or a smaller time"
    )]
    OrderCap {
        order: usize,
        cap: usize,
        spread: f64,
        suggested_tol: f64,
    },

    #[error(
        "residue adequacy gate violated: (r-d)*ln(L) = {product:.3} < 2 at r-d = {r_minus_d}; \
         need L >= {min_half_width:.1}"
    )]
    Adequacy {
        r_minus_d: f64,
        product: f64,
        min_half_width: f64,
    },

    #[error("no admissible radius: {0}")]
    NoAdmissibleRadius(String),

    #[error("no radial limit at quadrature node {node} (direction {direction:?}): {detail}")]
    NoRadialLimit {
        node: usize,
        direction: Vec<f64>,
        detail: String,
    },

    #[error("linear algebra failure: {0}")]
    LinAlg(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
