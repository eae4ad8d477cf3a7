use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("points coincide; direction is undefined")]
    CoincidentPoints,

    #[error("{0}")]
    Shape(String),

    #[error("riccati iteration for the {which} equation did not converge in {iters} iterations (residual {residual:.3e})")]
    RiccatiDivergence {
        which: &'static str,
        iters: usize,
        residual: f64,
    },

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("LQR budget {budget} does not exceed the minimum achievable cost {minimum}")]
    InfeasibleBudget { budget: f64, minimum: f64 },

    #[error("matrix is not Hermitian (deviation {0:.3e})")]
    NotHermitian(f64),

    #[error("matrix is not positive semidefinite (min eigenvalue {0:.3e})")]
    NotPsd(f64),

    #[error("malformed subproblem: {0}")]
    Subproblem(String),

    #[error("scenario is infeasible: {reason}")]
    Infeasible { reason: String, slacks: Vec<f64> },

    #[error("no feasible rank-one beamformer found (rank-one ratios {ratios:?})")]
    Extraction { ratios: Vec<f64> },

    #[error("could not place {antennas} antennas with spacing {spacing} after {attempts} attempts")]
    PlacementExhausted {
        antennas: usize,
        spacing: f64,
        attempts: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for errors caused by the input document rather than the run.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Shape(_))
    }
}
