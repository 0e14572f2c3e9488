use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("out of bounds: {0}")]
    OutOfBounds(String),
    #[error("equilibrium solve did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("singular system matrix")]
    Singular,
    #[error("solver failed at step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("solver failed at step {step}, perturbation axis {axis}: {source}")]
    AtPerturbation {
        step: usize,
        axis: char,
        #[source]
        source: Box<Error>,
    },
    #[error("MMA subproblem failed: {0}")]
    Subproblem(String),
    #[error("disconnected mechanism: {0}")]
    Disconnected(String),
    #[error("singular configuration: {0}")]
    SingularConfiguration(String),
    #[error("joint separation of {separation:.3e} at joint {joint}")]
    JointSeparation { joint: usize, separation: f64 },
    #[error("unknown case study {0}")]
    UnknownCase(u32),
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
