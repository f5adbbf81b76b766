//! Finite-volume discretization of `-(p f')' + q f` with Robin or Dirichlet ends.

use crate::plant::ANGLE_EPS;

/// Discrete operator on a uniform grid with `intervals` cells.
///
/// Only active nodes (those not fixed by a Dirichlet condition) carry
/// unknowns; `first` is the index of the first active node on the full grid.
#[derive(Clone, Debug)]
pub struct Discretization {
    pub intervals: usize,
    pub dx: f64,
    pub first: usize,
    /// Lumped mass (quadrature weights) on active nodes.
    pub mass: Vec<f64>,
    /// Stiffness diagonal on active nodes, including the reaction term.
    pub diag: Vec<f64>,
    /// Stiffness off-diagonal between consecutive active nodes.
    pub off: Vec<f64>,
    /// Flux coefficient p(x_{M-1/2}) / dx of the last cell.
    pub last_flux: f64,
    pub dirichlet_left: bool,
    pub dirichlet_right: bool,
}

impl Discretization {
    pub fn new(
        p: &dyn Fn(f64) -> f64,
        q: &dyn Fn(f64) -> f64,
        theta1: f64,
        theta2: f64,
        intervals: usize,
    ) -> Self {
        let m = intervals;
        assert!(m >= 2);
        let dx = 1.0 / m as f64;
        let nodes = m + 1;
        let mut diag = vec![0.0; nodes];
        let mut off = vec![0.0; m];
        let mut mass = vec![dx; nodes];
        mass[0] = 0.5 * dx;
        mass[m] = 0.5 * dx;
        for i in 0..m {
            let k = p((i as f64 + 0.5) * dx) / dx;
            diag[i] += k;
            diag[i + 1] += k;
            off[i] = -k;
        }
        for i in 0..nodes {
            diag[i] += q(i as f64 * dx) * mass[i];
        }
        let last_flux = -off[m - 1];
        let dirichlet_left = theta1.sin() < ANGLE_EPS;
        let dirichlet_right = theta2.sin() < ANGLE_EPS;
        if !dirichlet_left {
            diag[0] += p(0.0) * theta1.cos() / theta1.sin();
        }
        if !dirichlet_right {
            diag[m] += p(1.0) * theta2.cos() / theta2.sin();
        }
        let first = usize::from(dirichlet_left);
        let last = if dirichlet_right { m - 1 } else { m };
        Discretization {
            intervals: m,
            dx,
            first,
            mass: mass[first..=last].to_vec(),
            diag: diag[first..=last].to_vec(),
            off: off[first..last].to_vec(),
            last_flux,
            dirichlet_left,
            dirichlet_right,
        }
    }

    pub fn active(&self) -> usize {
        self.diag.len()
    }

    pub fn nodes(&self) -> usize {
        self.intervals + 1
    }

    /// Embeds active-node values into the full grid with zero boundary values.
    pub fn embed(&self, active: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.nodes()];
        full[self.first..self.first + active.len()].copy_from_slice(active);
        full
    }

    /// Symmetrized matrix `W^{-1/2} S W^{-1/2}`.
    pub fn symmetrized(&self) -> super::tridiag::SymTridiagonal {
        let s: Vec<f64> = self.mass.iter().map(|w| 1.0 / w.sqrt()).collect();
        let diag = self.diag.iter().zip(&s).map(|(d, si)| d * si * si).collect();
        let off = self
            .off
            .iter()
            .enumerate()
            .map(|(i, e)| e * s[i] * s[i + 1])
            .collect();
        super::tridiag::SymTridiagonal::new(diag, off)
    }
}

/// Trapezoid weights on a uniform grid with `intervals` cells.
pub fn trapezoid_weights(intervals: usize) -> Vec<f64> {
    let dx = 1.0 / intervals as f64;
    let mut w = vec![dx; intervals + 1];
    w[0] = 0.5 * dx;
    w[intervals] = 0.5 * dx;
    w
}

/// Second-order one-sided derivative at x = 0.
pub fn left_derivative(f: &[f64], dx: f64) -> f64 {
    (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * dx)
}

/// Second-order one-sided derivative at x = 1.
pub fn right_derivative(f: &[f64], dx: f64) -> f64 {
    let n = f.len();
    (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * dx)
}

/// Second-order derivative at every node (central inside, one-sided at ends).
pub fn gradient(f: &[f64], dx: f64) -> Vec<f64> {
    let n = f.len();
    (0..n)
        .map(|i| {
            if i == 0 {
                left_derivative(f, dx)
            } else if i == n - 1 {
                right_derivative(f, dx)
            } else {
                (f[i + 1] - f[i - 1]) / (2.0 * dx)
            }
        })
        .collect()
}

/// Linear interpolation of uniform-grid data at `x`.
pub fn interpolate(f: &[f64], x: f64) -> f64 {
    let n = f.len();
    let t = x.clamp(0.0, 1.0) * (n - 1) as f64;
    let i = (t.floor() as usize).min(n - 2);
    let s = t - i as f64;
    f[i] * (1.0 - s) + f[i + 1] * s
}
