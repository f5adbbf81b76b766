//! Output-feedback boundary stabilization of 1-D reaction-diffusion
//! equations with a long input delay.
//!
//! The pipeline is: [`compute_spectrum`] and [`project_sources`] for the
//! modal data, [`synthesize`] for the gains of the unstable modes,
//! [`find_minimal_n`] for the smallest certified observer dimension, and
//! [`simulate`] to run the closed loop.

pub mod certification;
pub mod error;
pub mod export;
pub mod kind;
pub mod linalg;
pub mod plant;
pub mod simulator;
pub mod spectral;
pub mod synthesis;

pub use certification::{
    assemble, check_certificate, constructive_candidate, find_minimal_n, p_norm_scan,
    refined_candidate, Certificate, ClosedLoopMatrices, Construction, Margins, NBest,
    SearchGrid, SearchOutcome,
};
pub use error::{Error, Result};
pub use kind::CertificateKind;
pub use plant::{split_reaction, Coefficient, Measurement, PlantSpec, ReactionSplit, TrigTerm};
pub use simulator::{
    fit_decay_rate, lyapunov_diagnostic, norms, simulate, ControllerState, LyapunovSeries,
    SimulationConfig, Trajectory,
};
pub use spectral::{
    compute_spectrum, project_sources, residual_norms, tail_constant, SourceProjections,
    SpectralData, TailConstant,
};
pub use synthesis::{explicit_gains, kalman_check, place_poles, synthesize, GainSet, GainSource};

/// Published gains for the reference plant with decay rate 0.5:
/// `(K, L)` for the given measurement.
pub fn reference_gains(measurement: Measurement) -> (f64, f64) {
    match measurement {
        Measurement::Dirichlet => (-0.6950, 1.7695),
        Measurement::Neumann => (-0.6950, 1.2856),
    }
}
