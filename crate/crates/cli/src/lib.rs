//! Batch front-end: config parsing, the pipeline verbs and their artifacts.

pub mod commands;
pub mod config;

use std::io::Write as _;
use std::path::{Path, PathBuf};

use delaystab_core::Error;

pub use commands::{run, Options, Verb};
pub use config::JobConfig;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("missing artifact from the {stage} stage: {}", path.display())]
    MissingArtifact { stage: &'static str, path: PathBuf },

    #[error("{0}")]
    Infeasible(String),

    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::MissingArtifact { .. } => EXIT_CONFIG,
            CliError::Infeasible(_) => EXIT_INFEASIBLE,
            CliError::Core(e) => match e {
                Error::InvalidPlant(_)
                | Error::InvalidArgument(_)
                | Error::Config(_)
                | Error::Dimension(_)
                | Error::InvalidTargets(_)
                | Error::SpectrumTooShort { .. }
                | Error::MissingHistory(_)
                | Error::MissingSources => EXIT_CONFIG,
                Error::NotFeasibleWithinBudget { .. } | Error::NotControllable(_) => EXIT_INFEASIBLE,
                Error::Resolution { .. }
                | Error::DivergenceGuard(_)
                | Error::DegenerateSpectrum(..)
                | Error::IllConditioned(_)
                | Error::LyapunovFailure(_)
                | Error::BlowupDetected { .. }
                | Error::NonPositiveData => EXIT_NUMERICAL,
            },
        }
    }
}

/// Writes `contents` to `dir/name` through a temporary file in `dir`.
pub fn write_atomic(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    let io = |e: std::io::Error| CliError::Config(format!("cannot write {name} in {}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents.as_bytes()).map_err(io)?;
    let path = dir.join(name);
    tmp.persist(&path).map_err(|e| io(e.error))?;
    Ok(path)
}
