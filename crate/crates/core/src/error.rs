use thiserror::Error;

use crate::certification::NBest;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid plant: {0}")]
    InvalidPlant(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "spectral grid too coarse: estimated relative error {estimate:.3e} of eigenvalue {mode} exceeds {tolerance:.1e}"
    )]
    Resolution {
        mode: usize,
        estimate: f64,
        tolerance: f64,
    },

    #[error("tail series diverges: effective decay exponent {0} must exceed 1/2")]
    DivergenceGuard(f64),

    #[error("no computed mode satisfies -lambda_n + q_c < -{delta} among {n_modes} modes")]
    SpectrumTooShort { delta: f64, n_modes: usize },

    #[error("degenerate spectrum: modes {0} and {1} have coinciding eigenvalues")]
    DegenerateSpectrum(usize, usize),

    #[error("pair is not controllable: input coefficient of mode {0} vanishes")]
    NotControllable(usize),

    #[error("controllability matrix is ill-conditioned (condition number {0:.3e})")]
    IllConditioned(f64),

    #[error("invalid pole targets: {0}")]
    InvalidTargets(String),

    #[error("Lyapunov solve failed: {0}")]
    LyapunovFailure(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("no feasible certificate for N <= {n_max}")]
    NotFeasibleWithinBudget { n_max: usize, best: Vec<NBest> },

    #[error("simulation blew up at t = {time}: L2 norm {norm:.3e}")]
    BlowupDetected { time: f64, norm: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing history: {0}")]
    MissingHistory(String),

    #[error("decay fit needs strictly positive data in the window")]
    NonPositiveData,

    #[error("source projections have not been computed")]
    MissingSources,
}

pub type Result<T> = std::result::Result<T, Error>;
