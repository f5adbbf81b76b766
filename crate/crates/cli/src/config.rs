//! Job configuration document.

use std::path::{Path, PathBuf};

use delaystab_core::{CertificateKind, Coefficient, Measurement, PlantSpec, SearchGrid};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    pub schema_version: u32,
    pub plant: PlantSpec,
    /// Target decay rate.
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<ExplicitGains>,
    /// Observer dimension N used by `simulate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observer_dim: Option<usize>,
    #[serde(default)]
    pub spectral: SpectralSettings,
    #[serde(default)]
    pub certification: CertificationSettings,
    #[serde(default)]
    pub simulation: SimulationSettings,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitGains {
    pub k: Vec<f64>,
    pub l: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralSettings {
    pub n_modes: usize,
    pub grid_size: usize,
}

impl Default for SpectralSettings {
    fn default() -> Self {
        SpectralSettings {
            n_modes: delaystab_core::spectral::DEFAULT_N_MODES,
            grid_size: delaystab_core::spectral::DEFAULT_GRID_SIZE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificationSettings {
    /// Theorem numbers 1, 2, 3. Empty means every kind that matches the
    /// measurement.
    #[serde(default)]
    pub theorems: Vec<u8>,
    pub n_max: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scales: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default = "yes")]
    pub refine: bool,
}

impl Default for CertificationSettings {
    fn default() -> Self {
        CertificationSettings {
            theorems: Vec::new(),
            n_max: 60,
            alphas: None,
            scales: None,
            epsilon: None,
            refine: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSettings {
    pub t_final: f64,
    /// Defaults to delay / 200.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub grid_size: usize,
    pub record_stride: usize,
    #[serde(default)]
    pub open_loop: bool,
    pub initial_condition: Coefficient,
    /// Window for the decay-rate fit of the squared L2 norm.
    pub fit_window: [f64; 2],
}

impl Default for SimulationSettings {
    fn default() -> Self {
        SimulationSettings {
            t_final: 15.0,
            dt: None,
            grid_size: 201,
            record_stride: 1,
            open_loop: false,
            initial_condition: Coefficient::Polynomial {
                coeffs: vec![0.0, 0.0, -10.0, 10.0],
            },
            fit_window: [3.0, 10.0],
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn yes() -> bool {
    true
}

impl JobConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: JobConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("schema error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        self.plant.validate(self.spectral.grid_size.max(2))?;
        if !(self.delta.is_finite() && self.delta > 0.0 && self.delta <= 100.0) {
            return bad(format!("delta = {} must lie in (0, 100]", self.delta));
        }
        if self.spectral.n_modes < 2 {
            return bad("spectral.n_modes must be at least 2".into());
        }
        if self.spectral.grid_size < 10 * self.spectral.n_modes {
            return bad(format!(
                "spectral.grid_size = {} must be at least 10 * n_modes = {}",
                self.spectral.grid_size,
                10 * self.spectral.n_modes
            ));
        }
        if let Some(g) = &self.gains {
            if g.k.len() != g.l.len() || g.k.iter().chain(&g.l).any(|v| !v.is_finite()) {
                return bad("gains.k and gains.l must be finite and of equal length".into());
            }
        }
        if let Some(n) = self.observer_dim {
            if n == 0 || n >= self.spectral.n_modes {
                return bad(format!("observer_dim = {n} must lie in [1, n_modes)"));
            }
        }
        for &t in &self.certification.theorems {
            let kind = CertificateKind::from_number(t)
                .map_err(|_| CliError::Config(format!("unknown theorem {t}")))?;
            if kind.measurement() != self.plant.measurement {
                return bad(format!(
                    "theorem {t} needs {:?} measurement, plant has {:?}",
                    kind.measurement(),
                    self.plant.measurement
                ));
            }
        }
        let c = &self.certification;
        if c.n_max == 0 || c.n_max >= self.spectral.n_modes {
            return bad(format!("certification.n_max = {} must lie in [1, n_modes)", c.n_max));
        }
        let positive = |v: &Option<Vec<f64>>| {
            v.as_ref()
                .map_or(true, |v| !v.is_empty() && v.iter().all(|x| x.is_finite() && *x > 0.0))
        };
        if !positive(&c.alphas) || !positive(&c.scales) {
            return bad("certification.alphas and scales must be nonempty and positive".into());
        }
        if let Some(e) = c.epsilon {
            if !(e > 0.0 && e <= 0.5) {
                return bad(format!("certification.epsilon = {e} must lie in (0, 1/2]"));
            }
        }
        let s = &self.simulation;
        if !(s.t_final.is_finite() && s.t_final > 0.0) {
            return bad("simulation.t_final must be positive".into());
        }
        if let Some(dt) = s.dt {
            if !(dt.is_finite() && dt > 0.0) {
                return bad("simulation.dt must be positive".into());
            }
        }
        if s.grid_size < 5 || s.record_stride == 0 {
            return bad("simulation.grid_size must be >= 5 and record_stride >= 1".into());
        }
        s.initial_condition.validate("simulation.initial_condition")?;
        let [a, b] = s.fit_window;
        if !(a >= 0.0 && b > a && b <= s.t_final) {
            return bad(format!("simulation.fit_window [{a}, {b}] must lie inside [0, t_final]"));
        }
        Ok(())
    }

    /// Certificate kinds to run: the override, the configured list, or every
    /// kind that matches the measurement.
    pub fn kinds(&self, theorem: Option<u8>) -> Result<Vec<CertificateKind>, CliError> {
        let numbers: Vec<u8> = match theorem {
            Some(t) => vec![t],
            None if !self.certification.theorems.is_empty() => self.certification.theorems.clone(),
            None => CertificateKind::ALL
                .iter()
                .filter(|k| k.measurement() == self.plant.measurement)
                .map(|k| k.number())
                .collect(),
        };
        numbers
            .into_iter()
            .map(|t| {
                let kind = CertificateKind::from_number(t)
                    .map_err(|_| CliError::Config(format!("unknown theorem {t}")))?;
                if kind.measurement() != self.plant.measurement {
                    return Err(CliError::Config(format!(
                        "theorem {t} needs {:?} measurement",
                        kind.measurement()
                    )));
                }
                Ok(kind)
            })
            .collect()
    }

    pub fn search_grid(&self, kind: CertificateKind) -> SearchGrid {
        let c = &self.certification;
        let mut grid = SearchGrid::default_for(kind, c.n_max);
        if let Some(a) = &c.alphas {
            grid.alphas = a.clone();
        }
        if let Some(s) = &c.scales {
            grid.beta_scales = s.clone();
            grid.gamma_scales = s.clone();
        }
        if c.epsilon.is_some() {
            grid.epsilon = c.epsilon;
        }
        grid.refine = c.refine;
        grid
    }

    /// The reference plant with the published decay rate.
    pub fn reference(measurement: Measurement) -> Self {
        JobConfig {
            schema_version: SCHEMA_VERSION,
            plant: PlantSpec::reference(measurement),
            delta: 0.5,
            gains: None,
            observer_dim: None,
            spectral: SpectralSettings::default(),
            certification: CertificationSettings::default(),
            simulation: SimulationSettings::default(),
            output_dir: default_output_dir(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut cfg = JobConfig::reference(Measurement::Neumann);
        cfg.gains = Some(ExplicitGains { k: vec![-0.695], l: vec![1.2856] });
        cfg.certification.theorems = vec![3];
        cfg.simulation.dt = Some(0.01);
        let again = JobConfig::parse(&cfg.to_json()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn minimal_document_takes_defaults() {
        let text = r#"{
            "schema_version": 1,
            "delta": 0.5,
            "plant": {
                "p": {"kind": "constant", "value": 1.0},
                "q_tilde": {"kind": "constant", "value": -5.0},
                "theta1": 0.6283185307179586, "theta2": 0.0, "delay": 1.0,
                "measurement": "dirichlet"
            }
        }"#;
        let cfg = JobConfig::parse(text).unwrap();
        assert_eq!(cfg.spectral, SpectralSettings::default());
        assert_eq!(cfg.kinds(None).unwrap().len(), 2);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_ranges() {
        let mut v: serde_json::Value = serde_json::from_str(&JobConfig::reference(Measurement::Dirichlet).to_json()).unwrap();
        v["extra"] = serde_json::json!(1);
        assert!(JobConfig::parse(&v.to_string()).is_err());

        let mut cfg = JobConfig::reference(Measurement::Dirichlet);
        cfg.delta = -1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = JobConfig::reference(Measurement::Dirichlet);
        cfg.certification.theorems = vec![3];
        assert!(cfg.validate().is_err());
        let mut cfg = JobConfig::reference(Measurement::Dirichlet);
        cfg.schema_version = 2;
        assert!(cfg.validate().is_err());
    }
}
