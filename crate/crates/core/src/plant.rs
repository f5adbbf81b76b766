//! Plant description: diffusion and reaction coefficients, boundary angles,
//! input delay and measurement type.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Angle tolerance used to decide whether a boundary is of Dirichlet type.
pub(crate) const ANGLE_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigTerm {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

/// A scalar function on [0, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Coefficient {
    Constant {
        value: f64,
    },
    /// Coefficients in ascending powers of x.
    Polynomial {
        coeffs: Vec<f64>,
    },
    /// `offset + sum amplitude * cos(2 pi frequency x + phase)`.
    Trig {
        offset: f64,
        terms: Vec<TrigTerm>,
    },
    /// Values on a uniform grid over [0, 1] including both endpoints,
    /// linearly interpolated.
    Sampled {
        values: Vec<f64>,
    },
}

impl Coefficient {
    pub fn constant(value: f64) -> Self {
        Coefficient::Constant { value }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Coefficient::Constant { value } => *value,
            Coefficient::Polynomial { coeffs } => {
                coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
            }
            Coefficient::Trig { offset, terms } => {
                offset
                    + terms
                        .iter()
                        .map(|t| t.amplitude * (2.0 * PI * t.frequency * x + t.phase).cos())
                        .sum::<f64>()
            }
            Coefficient::Sampled { values } => {
                let (i, s) = locate(values.len(), x);
                values[i] * (1.0 - s) + values[i + 1] * s
            }
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Coefficient::Constant { .. } => 0.0,
            Coefficient::Polynomial { coeffs } => coeffs
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (k, c)| acc * x + k as f64 * c),
            Coefficient::Trig { terms, .. } => terms
                .iter()
                .map(|t| {
                    let w = 2.0 * PI * t.frequency;
                    -t.amplitude * w * (w * x + t.phase).sin()
                })
                .sum(),
            Coefficient::Sampled { values } => {
                let n = values.len();
                let dx = 1.0 / (n - 1) as f64;
                let nodal = |j: usize| -> f64 {
                    if n == 2 {
                        (values[1] - values[0]) / dx
                    } else if j == 0 {
                        (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * dx)
                    } else if j == n - 1 {
                        (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * dx)
                    } else {
                        (values[j + 1] - values[j - 1]) / (2.0 * dx)
                    }
                };
                let (i, s) = locate(n, x);
                nodal(i) * (1.0 - s) + nodal(i + 1) * s
            }
        }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidPlant(format!("{name}: {msg}")));
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            Coefficient::Constant { value } if !value.is_finite() => bad("non-finite value".into()),
            Coefficient::Polynomial { coeffs } if coeffs.is_empty() || !finite(coeffs) => {
                bad("polynomial needs finite coefficients".into())
            }
            Coefficient::Trig { offset, terms }
                if !offset.is_finite()
                    || terms.iter().any(|t| {
                        !(t.amplitude.is_finite() && t.frequency.is_finite() && t.phase.is_finite())
                    }) =>
            {
                bad("non-finite trigonometric term".into())
            }
            Coefficient::Sampled { values } if values.len() < 2 || !finite(values) => {
                bad("sampled data needs at least two finite values".into())
            }
            _ => Ok(()),
        }
    }

    /// Minimum and maximum over a uniform grid of `points` points.
    pub fn range_on_grid(&self, points: usize) -> (f64, f64) {
        let points = points.max(2);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..points {
            let v = self.eval(i as f64 / (points - 1) as f64);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if let Coefficient::Sampled { values } = self {
            for &v in values {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        (lo, hi)
    }
}

fn locate(n: usize, x: f64) -> (usize, f64) {
    let t = x.clamp(0.0, 1.0) * (n - 1) as f64;
    let i = (t.floor() as usize).min(n - 2);
    (i, t - i as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measurement {
    /// y = z(t, 0)
    Dirichlet,
    /// y = z_x(t, 0)
    Neumann,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    pub p: Coefficient,
    pub q_tilde: Coefficient,
    pub theta1: f64,
    pub theta2: f64,
    pub delay: f64,
    pub measurement: Measurement,
}

impl PlantSpec {
    /// Unstable constant-coefficient plant with unit delay used throughout
    /// the examples and tests: p = 1, q = -5, theta1 = pi/5, theta2 = 0.
    pub fn reference(measurement: Measurement) -> Self {
        PlantSpec {
            p: Coefficient::constant(1.0),
            q_tilde: Coefficient::constant(-5.0),
            theta1: PI / 5.0,
            theta2: 0.0,
            delay: 1.0,
            measurement,
        }
    }

    /// Checks admissibility; `points` is the resolution used for the
    /// positivity check on p.
    pub fn validate(&self, points: usize) -> Result<()> {
        self.p.validate("p")?;
        self.q_tilde.validate("q_tilde")?;
        for (name, th) in [("theta1", self.theta1), ("theta2", self.theta2)] {
            if !th.is_finite() || th < -ANGLE_EPS || th > FRAC_PI_2 + ANGLE_EPS {
                return Err(Error::InvalidPlant(format!(
                    "{name} = {th} must lie in [0, pi/2]"
                )));
            }
        }
        match self.measurement {
            Measurement::Dirichlet if self.theta1 <= ANGLE_EPS => {
                return Err(Error::InvalidPlant(
                    "Dirichlet measurement needs theta1 in (0, pi/2]".into(),
                ))
            }
            Measurement::Neumann if self.theta1 >= FRAC_PI_2 - ANGLE_EPS => {
                return Err(Error::InvalidPlant(
                    "Neumann measurement needs theta1 in [0, pi/2)".into(),
                ))
            }
            _ => {}
        }
        if !(self.delay.is_finite() && self.delay > 0.0) {
            return Err(Error::InvalidPlant(format!(
                "delay must be positive, got {}",
                self.delay
            )));
        }
        let (pmin, _) = self.p.range_on_grid(points);
        if !(pmin > 0.0) {
            return Err(Error::InvalidPlant(format!(
                "p must be positive on [0, 1], minimum {pmin}"
            )));
        }
        Ok(())
    }

    pub fn dirichlet_left(&self) -> bool {
        self.theta1.sin() < ANGLE_EPS
    }

    pub fn dirichlet_right(&self) -> bool {
        self.theta2.sin() < ANGLE_EPS
    }
}

/// Decomposition q_tilde = q - q_c with q >= 1 on [0, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReactionSplit {
    pub q_tilde: Coefficient,
    pub q_c: f64,
}

impl ReactionSplit {
    pub fn q(&self, x: f64) -> f64 {
        self.q_tilde.eval(x) + self.q_c
    }
}

pub fn split_reaction(q_tilde: &Coefficient, points: usize) -> ReactionSplit {
    let (qmin, _) = q_tilde.range_on_grid(points);
    ReactionSplit {
        q_tilde: q_tilde.clone(),
        q_c: (1.0 - qmin).max(0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_and_derivative() {
        let c = Coefficient::Polynomial {
            coeffs: vec![1.0, -2.0, 3.0],
        };
        assert!((c.eval(0.5) - 0.75).abs() < 1e-15);
        assert!((c.derivative(0.5) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn trig_derivative_matches_difference() {
        let c = Coefficient::Trig {
            offset: 0.3,
            terms: vec![TrigTerm {
                amplitude: 1.5,
                frequency: 2.0,
                phase: 0.4,
            }],
        };
        let x = 0.37;
        let fd = (c.eval(x + 1e-6) - c.eval(x - 1e-6)) / 2e-6;
        assert!((fd - c.derivative(x)).abs() < 1e-6);
    }

    #[test]
    fn sampled_interpolates_linear_data_exactly() {
        let c = Coefficient::Sampled {
            values: (0..11).map(|i| 2.0 + 0.1 * i as f64).collect(),
        };
        assert!((c.eval(0.33) - 2.33).abs() < 1e-12);
        assert!((c.derivative(0.71) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn split_of_reference_plant() {
        let s = split_reaction(&Coefficient::constant(-5.0), 101);
        assert_eq!(s.q_c, 6.0);
        assert_eq!(s.q(0.3), 1.0);
        let s = split_reaction(&Coefficient::constant(3.0), 101);
        assert_eq!(s.q_c, 0.0);
    }

    #[test]
    fn measurement_angle_constraints() {
        let mut p = PlantSpec::reference(Measurement::Dirichlet);
        assert!(p.validate(101).is_ok());
        p.theta1 = 0.0;
        assert!(matches!(p.validate(101), Err(Error::InvalidPlant(_))));
        p.measurement = Measurement::Neumann;
        assert!(p.validate(101).is_ok());
        p.theta1 = FRAC_PI_2;
        assert!(matches!(p.validate(101), Err(Error::InvalidPlant(_))));
    }

    #[test]
    fn nonpositive_diffusion_rejected() {
        let mut p = PlantSpec::reference(Measurement::Dirichlet);
        p.p = Coefficient::Polynomial {
            coeffs: vec![1.0, -2.0],
        };
        assert!(matches!(p.validate(101), Err(Error::InvalidPlant(_))));
    }

    #[test]
    fn coefficient_json_round_trip() {
        let c = Coefficient::Trig {
            offset: 1.0,
            terms: vec![TrigTerm {
                amplitude: 0.5,
                frequency: 1.0,
                phase: 0.0,
            }],
        };
        let s = serde_json::to_string(&c).unwrap();
        let back: Coefficient = serde_json::from_str(&s).unwrap();
        assert_eq!(c, back);
    }
}
