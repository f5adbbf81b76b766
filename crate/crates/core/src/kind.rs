use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::Measurement;

/// Which stability certificate is being checked.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateKind {
    /// Boundary-value measurement, H^1 stability.
    DirichletH1,
    /// Boundary-value measurement, L^2 stability.
    DirichletL2,
    /// Boundary-flux measurement, H^1 stability.
    NeumannH1,
}

impl CertificateKind {
    pub const ALL: [CertificateKind; 3] = [
        CertificateKind::DirichletH1,
        CertificateKind::DirichletL2,
        CertificateKind::NeumannH1,
    ];

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Self::DirichletH1),
            2 => Ok(Self::DirichletL2),
            3 => Ok(Self::NeumannH1),
            _ => Err(Error::InvalidArgument(format!(
                "theorem must be 1, 2 or 3, got {n}"
            ))),
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Self::DirichletH1 => 1,
            Self::DirichletL2 => 2,
            Self::NeumannH1 => 3,
        }
    }

    pub fn measurement(self) -> Measurement {
        match self {
            Self::DirichletH1 | Self::DirichletL2 => Measurement::Dirichlet,
            Self::NeumannH1 => Measurement::Neumann,
        }
    }

    /// Whether the tail energy is weighted by lambda_n (H^1 functionals).
    pub fn weights_tail_by_lambda(self) -> bool {
        !matches!(self, Self::DirichletL2)
    }

    /// Lower bound on the free parameter alpha.
    pub fn alpha_lower_bound(self) -> f64 {
        match self {
            Self::DirichletL2 => 0.0,
            _ => 1.0,
        }
    }

    /// Reference parameter schedule `(beta, gamma)` at observer dimension `n`.
    pub fn schedule(self, n: usize) -> (f64, f64) {
        let n = n as f64;
        match self {
            Self::DirichletH1 => (n.sqrt(), 1.0 / n),
            Self::DirichletL2 => (n.powf(0.125), n.powf(-0.25)),
            Self::NeumannH1 => (n.powf(0.125), n.powf(-0.1875)),
        }
    }

    pub fn default_epsilon(self) -> Option<f64> {
        match self {
            Self::NeumannH1 => Some(0.125),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::DirichletH1 => "Dirichlet measurement, H1 stability",
            Self::DirichletL2 => "Dirichlet measurement, L2 stability",
            Self::NeumannH1 => "Neumann measurement, H1 stability",
        }
    }
}
