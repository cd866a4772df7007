use thiserror::Error;

/// Errors raised across the solver.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular kernel evaluation: source and field point coincide")]
    Singularity,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-conforming interface between patches {patch_a} and {patch_b} (gap {gap:.3e})")]
    NonConforming {
        patch_a: usize,
        patch_b: usize,
        gap: f64,
    },

    #[error("quadrature failure: {0}")]
    Quadrature(String),

    #[error("linear solve failed: {0}")]
    Solver(String),

    #[error("knot multiplicity {multiplicity} at u = {u} would exceed degree {degree}")]
    Multiplicity {
        u: f64,
        multiplicity: usize,
        degree: usize,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
