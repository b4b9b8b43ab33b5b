use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid cluster dimensions: {0}")]
    Dims(String),

    #[error("non-uniform users per cell {0:?}; use the per-cell (generalized) checker instead")]
    NonUniformUsers(Vec<usize>),

    #[error("instance too large to enumerate: {0}")]
    TooLarge(String),

    #[error("co-located base station {bs} and user ({cell},{user})")]
    CoLocated { bs: usize, cell: usize, user: usize },

    #[error("degenerate drop: intra-cell matrix of cell {cell} has condition number {condition:.3e}")]
    DegenerateDrop { cell: usize, condition: f64 },

    #[error("non-finite value in {what} at iteration {iteration}")]
    NonFinite { what: &'static str, iteration: usize },

    #[error("inner feasibility solve failed at t = {t:.6e}: {reason}")]
    InnerSolver { t: f64, reason: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Dims(_)
                | Error::NonUniformUsers(_)
                | Error::TooLarge(_)
                | Error::Io(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
