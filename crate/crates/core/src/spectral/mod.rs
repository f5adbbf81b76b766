//! Sturm-Liouville spectrum, boundary traces and source projections.
//!
//! Every scalar quantity (eigenvalues, traces, inner products) is computed on
//! two nested grids and Richardson-extrapolated, which lifts the second-order
//! finite-volume scheme to fourth order for smooth data.

pub mod grid;
pub mod tridiag;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kind::CertificateKind;
use crate::plant::{split_reaction, PlantSpec, ReactionSplit};
use grid::{interpolate, left_derivative, right_derivative, trapezoid_weights, Discretization};

pub const DEFAULT_N_MODES: usize = 120;
pub const DEFAULT_GRID_SIZE: usize = 4001;
pub const RESOLUTION_TOL: f64 = 1e-4;

/// Eigenpairs on one grid, eigenvectors on the full grid with unit
/// trapezoid L2 norm.
#[derive(Clone, Debug)]
struct Level {
    intervals: usize,
    lambda: Vec<f64>,
    vecs: Vec<Vec<f64>>,
}

impl Level {
    fn solve(disc: &Discretization, n_modes: usize, with_vectors: bool) -> Self {
        let sym = disc.symmetrized();
        let lambda = sym.smallest_eigenvalues(n_modes);
        let mut vecs = Vec::new();
        if with_vectors {
            let dx = disc.dx;
            for &l in &lambda {
                let v = sym.eigenvector(l);
                let f: Vec<f64> = v
                    .iter()
                    .zip(&disc.mass)
                    .map(|(vi, w)| vi / w.sqrt())
                    .collect();
                let mut full = disc.embed(&f);
                let lead = if full[0].abs() > 1e-8 {
                    full[0]
                } else {
                    left_derivative(&full, dx)
                };
                if lead < 0.0 {
                    full.iter_mut().for_each(|x| *x = -*x);
                }
                vecs.push(full);
            }
        }
        Level {
            intervals: disc.intervals,
            lambda,
            vecs,
        }
    }

    fn dx(&self) -> f64 {
        1.0 / self.intervals as f64
    }
}

fn richardson(fine: f64, coarse: f64, ratio: f64) -> f64 {
    let r2 = ratio * ratio;
    (r2 * fine - coarse) / (r2 - 1.0)
}

/// Projections of the lifting sources onto the eigenbasis.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SourceProjections {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub beta: Vec<f64>,
    pub a_norm_sq: f64,
    pub b_norm_sq: f64,
    /// `|beta_n - (a_n + (-lambda_n + q_c) b_n)|` for each mode.
    pub identity_residual: Vec<f64>,
}

/// Spectral data of the plant operator.
#[derive(Clone, Debug)]
pub struct SpectralData {
    pub plant: PlantSpec,
    pub split: ReactionSplit,
    pub n_modes: usize,
    pub grid_size: usize,
    pub lambda: Vec<f64>,
    /// phi_n(0)
    pub phi0: Vec<f64>,
    /// phi_n'(0)
    pub dphi0: Vec<f64>,
    /// phi_n(1)
    pub phi1: Vec<f64>,
    /// phi_n'(1)
    pub dphi1: Vec<f64>,
    /// Relative error estimate of the last eigenvalue.
    pub resolution_estimate: f64,
    pub p_min: f64,
    pub sources: Option<SourceProjections>,
    fine: Level,
    coarse: Level,
}

/// Computes the first `n_modes` eigenpairs of the plant operator.
pub fn compute_spectrum(plant: &PlantSpec, n_modes: usize, grid_size: usize) -> Result<SpectralData> {
    if n_modes == 0 {
        return Err(Error::InvalidArgument("n_modes must be positive".into()));
    }
    if grid_size < 10 * n_modes {
        return Err(Error::InvalidArgument(format!(
            "grid_size {grid_size} must be at least 10 * n_modes = {}",
            10 * n_modes
        )));
    }
    plant.validate(grid_size)?;
    let split = split_reaction(&plant.q_tilde, grid_size);
    let p = |x: f64| plant.p.eval(x);
    let q = |x: f64| split.q(x);
    let m = grid_size - 1;
    let m2 = (m + 1) / 2;
    let m4 = (m2 + 1) / 2;
    let disc = |k: usize| Discretization::new(&p, &q, plant.theta1, plant.theta2, k);
    let fine = Level::solve(&disc(m), n_modes, true);
    let coarse = Level::solve(&disc(m2), n_modes, true);
    let coarsest = Level::solve(&disc(m4), n_modes, false);

    let r = m as f64 / m2 as f64;
    let r_low = m2 as f64 / m4 as f64;
    let lambda: Vec<f64> = (0..n_modes)
        .map(|n| richardson(fine.lambda[n], coarse.lambda[n], r))
        .collect();
    let last = n_modes - 1;
    let alt = richardson(coarse.lambda[last], coarsest.lambda[last], r_low);
    let resolution_estimate = (lambda[last] - alt).abs() / lambda[last].abs().max(1.0);
    if resolution_estimate > RESOLUTION_TOL {
        return Err(Error::Resolution {
            mode: n_modes,
            estimate: resolution_estimate,
            tolerance: RESOLUTION_TOL,
        });
    }

    let trace = |f: &dyn Fn(&[f64], f64) -> f64| -> Vec<f64> {
        (0..n_modes)
            .map(|n| {
                richardson(
                    f(&fine.vecs[n], fine.dx()),
                    f(&coarse.vecs[n], coarse.dx()),
                    r,
                )
            })
            .collect()
    };
    let phi0 = trace(&|v, _| v[0]);
    let dphi0 = trace(&left_derivative);
    let phi1 = trace(&|v, _| v[v.len() - 1]);
    let dphi1 = trace(&right_derivative);
    let (p_min, _) = plant.p.range_on_grid(grid_size);

    Ok(SpectralData {
        plant: plant.clone(),
        split,
        n_modes,
        grid_size,
        lambda,
        phi0,
        dphi0,
        phi1,
        dphi1,
        resolution_estimate,
        p_min,
        sources: None,
        fine,
        coarse,
    })
}

impl SpectralData {
    pub fn q_c(&self) -> f64 {
        self.split.q_c
    }

    /// Grid of the fine level.
    pub fn grid(&self) -> Vec<f64> {
        let m = self.fine.intervals;
        (0..=m).map(|i| i as f64 / m as f64).collect()
    }

    /// Eigenfunction `n` (0-based) sampled on the fine grid.
    pub fn eigenvector(&self, n: usize) -> &[f64] {
        &self.fine.vecs[n]
    }

    /// `<f, phi_n>` for every computed mode.
    pub fn project(&self, f: &dyn Fn(f64) -> f64) -> Vec<f64> {
        let sample = |lvl: &Level| -> Vec<f64> {
            let w = trapezoid_weights(lvl.intervals);
            let m = lvl.intervals as f64;
            (0..=lvl.intervals)
                .map(|i| w[i] * f(i as f64 / m))
                .collect()
        };
        let wf = sample(&self.fine);
        let wc = sample(&self.coarse);
        let r = self.fine.intervals as f64 / self.coarse.intervals as f64;
        (0..self.n_modes)
            .map(|n| {
                let a: f64 = wf.iter().zip(&self.fine.vecs[n]).map(|(x, y)| x * y).sum();
                let b: f64 = wc.iter().zip(&self.coarse.vecs[n]).map(|(x, y)| x * y).sum();
                richardson(a, b, r)
            })
            .collect()
    }

    /// Extrapolated trapezoid integral of `f` over [0, 1].
    pub fn integrate(&self, f: &dyn Fn(f64) -> f64) -> f64 {
        let quad = |m: usize| -> f64 {
            let w = trapezoid_weights(m);
            w.iter()
                .enumerate()
                .map(|(i, wi)| wi * f(i as f64 / m as f64))
                .sum()
        };
        let r = self.fine.intervals as f64 / self.coarse.intervals as f64;
        richardson(quad(self.fine.intervals), quad(self.coarse.intervals), r)
    }

    /// First `count` eigenfunctions sampled on a uniform grid of `intervals`
    /// cells (linear interpolation from the fine grid).
    pub fn basis_on(&self, intervals: usize, count: usize) -> Vec<Vec<f64>> {
        let fm = self.fine.intervals;
        let exact = fm % intervals == 0;
        self.fine.vecs[..count.min(self.n_modes)]
            .iter()
            .map(|v| {
                (0..=intervals)
                    .map(|i| {
                        if exact {
                            v[i * (fm / intervals)]
                        } else {
                            interpolate(v, i as f64 / intervals as f64)
                        }
                    })
                    .collect()
            })
            .collect()
    }

    pub fn sources(&self) -> Result<&SourceProjections> {
        self.sources.as_ref().ok_or(Error::MissingSources)
    }

    /// Trace entering the output matrix: phi_n(0) or phi_n'(0).
    pub fn output_trace(&self, measurement: crate::plant::Measurement) -> &[f64] {
        match measurement {
            crate::plant::Measurement::Dirichlet => &self.phi0,
            crate::plant::Measurement::Neumann => &self.dphi0,
        }
    }
}

/// Attaches the projections of the lifting sources a(x), b(x) and the
/// boundary input coefficients beta_n.
pub fn project_sources(spec: &SpectralData) -> Result<SpectralData> {
    let plant = &spec.plant;
    let (c2, s2) = (plant.theta2.cos(), plant.theta2.sin());
    let den = c2 + 2.0 * s2;
    let a_fn = |x: f64| {
        (2.0 * plant.p.eval(x) + 2.0 * x * plant.p.derivative(x) - x * x * plant.q_tilde.eval(x)) / den
    };
    let b_fn = |x: f64| -x * x / den;
    let a = spec.project(&a_fn);
    let b = spec.project(&b_fn);
    let p1 = plant.p.eval(1.0);
    let beta: Vec<f64> = (0..spec.n_modes)
        .map(|n| p1 * (-c2 * spec.dphi1[n] + s2 * spec.phi1[n]))
        .collect();
    let q_c = spec.q_c();
    let identity_residual = (0..spec.n_modes)
        .map(|n| (beta[n] - (a[n] + (-spec.lambda[n] + q_c) * b[n])).abs())
        .collect();
    let a_norm_sq = spec.integrate(&|x| a_fn(x).powi(2));
    let b_norm_sq = spec.integrate(&|x| b_fn(x).powi(2));
    let mut out = spec.clone();
    out.sources = Some(SourceProjections {
        a,
        b,
        beta,
        a_norm_sq,
        b_norm_sq,
        identity_residual,
    });
    Ok(out)
}

/// Truncation residuals `(||a||^2 - sum_{n<=N} a_n^2, ||b||^2 - sum b_n^2)`,
/// clamped at zero.
pub fn residual_norms(spec: &SpectralData, n: usize) -> Result<(f64, f64)> {
    let src = spec.sources()?;
    if n >= spec.n_modes {
        return Err(Error::InvalidArgument(format!(
            "N = {n} must be below n_modes = {}",
            spec.n_modes
        )));
    }
    let sa: f64 = src.a[..n].iter().map(|v| v * v).sum();
    let sb: f64 = src.b[..n].iter().map(|v| v * v).sum();
    Ok(((src.a_norm_sq - sa).max(0.0), (src.b_norm_sq - sb).max(0.0)))
}

/// Tail series `M_phi = sum_{n>N} trace_n^2 / lambda_n^s`, split into the
/// explicitly summed part and an upper bound for the modes not computed.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct TailConstant {
    pub partial: f64,
    pub tail_bound: f64,
}

impl TailConstant {
    pub fn total(&self) -> f64 {
        self.partial + self.tail_bound
    }
}

pub fn tail_constant(
    spec: &SpectralData,
    n: usize,
    kind: CertificateKind,
    epsilon: Option<f64>,
) -> Result<TailConstant> {
    if n >= spec.n_modes {
        return Err(Error::InvalidArgument(format!(
            "N = {n} must be below n_modes = {}",
            spec.n_modes
        )));
    }
    if spec.lambda[n] <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "lambda_{} = {} must be positive",
            n + 1,
            spec.lambda[n]
        )));
    }
    let (trace, s, eff) = match kind {
        CertificateKind::DirichletH1 => (&spec.phi0, 1.0, 1.0),
        CertificateKind::DirichletL2 => (&spec.phi0, 0.75, 0.75),
        CertificateKind::NeumannH1 => {
            let eps = epsilon.unwrap_or(0.125);
            if eps <= 0.0 {
                return Err(Error::DivergenceGuard(0.5 + eps));
            }
            if eps > 0.5 {
                return Err(Error::InvalidArgument(format!(
                    "epsilon = {eps} must lie in (0, 1/2]"
                )));
            }
            (&spec.dphi0, 1.5 + eps, 0.5 + eps)
        }
    };
    if eff <= 0.5 {
        return Err(Error::DivergenceGuard(eff));
    }
    let partial: f64 = (n..spec.n_modes)
        .map(|k| trace[k] * trace[k] / spec.lambda[k].powf(s))
        .sum();
    // Uniform trace bound over the computed modes, used for the uncomputed ones.
    let c = match kind {
        CertificateKind::NeumannH1 => (0..spec.n_modes)
            .filter(|&k| spec.lambda[k] > 0.0)
            .map(|k| 2.0 * spec.dphi0[k].abs() / spec.lambda[k].sqrt())
            .fold(0.0, f64::max),
        _ => 2.0 * spec.phi0.iter().fold(0.0f64, |a, v| a.max(v.abs())),
    };
    let nm = spec.n_modes as f64;
    let two_s = 2.0 * eff;
    let sum_bound = nm.powf(-two_s) + nm.powf(1.0 - two_s) / (two_s - 1.0);
    let tail_bound = c * c / (PI * PI * spec.p_min).powf(eff) * sum_bound;
    Ok(TailConstant {
        partial,
        tail_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{Coefficient, Measurement};

    fn dd_plant() -> PlantSpec {
        PlantSpec {
            p: Coefficient::constant(1.0),
            q_tilde: Coefficient::constant(1.0),
            theta1: 0.0,
            theta2: 0.0,
            delay: 1.0,
            measurement: Measurement::Neumann,
        }
    }

    #[test]
    fn dirichlet_dirichlet_spectrum_is_fourth_order_accurate() {
        let s = compute_spectrum(&dd_plant(), 20, 1001).unwrap();
        for n in 0..5 {
            let exact = ((n + 1) as f64 * PI).powi(2) + 1.0;
            assert!((s.lambda[n] / exact - 1.0).abs() < 1e-6, "mode {n}");
        }
        assert_eq!(s.q_c(), 0.0);
    }

    #[test]
    fn eigenvectors_are_normalized_and_signed() {
        let plant = PlantSpec::reference(Measurement::Dirichlet);
        let s = compute_spectrum(&plant, 10, 401).unwrap();
        let w = trapezoid_weights(400);
        for n in 0..10 {
            let v = s.eigenvector(n);
            let nrm: f64 = v.iter().zip(&w).map(|(a, b)| a * a * b).sum();
            assert!((nrm - 1.0).abs() < 1e-12);
            assert!(s.phi0[n] > 0.0);
        }
        assert_eq!(s.q_c(), 6.0);
    }

    #[test]
    fn guards() {
        let plant = PlantSpec::reference(Measurement::Dirichlet);
        assert!(matches!(
            compute_spectrum(&plant, 50, 101),
            Err(Error::InvalidArgument(_))
        ));
        let s = compute_spectrum(&plant, 10, 201).unwrap();
        assert!(matches!(residual_norms(&s, 3), Err(Error::MissingSources)));
        assert!(matches!(
            tail_constant(&s, 3, CertificateKind::NeumannH1, Some(0.0)),
            Err(Error::DivergenceGuard(_))
        ));
    }

    #[test]
    fn resolution_guard_fires_on_coarse_grid() {
        let plant = PlantSpec::reference(Measurement::Dirichlet);
        assert!(matches!(
            compute_spectrum(&plant, 30, 301),
            Err(Error::Resolution { .. })
        ));
    }

    #[test]
    fn residual_norms_decrease() {
        let plant = PlantSpec::reference(Measurement::Dirichlet);
        let s = project_sources(&compute_spectrum(&plant, 20, 801).unwrap()).unwrap();
        let mut prev = f64::INFINITY;
        for n in 1..19 {
            let (ra, _) = residual_norms(&s, n).unwrap();
            assert!(ra <= prev + 1e-12);
            prev = ra;
        }
    }
}
