//! CSV rendering of spectra and trajectories, and the plotting script.
//!
//! All writers return strings; numbers use Rust's shortest round-trip
//! formatting so that output is byte-identical across runs.

use std::fmt::Write as _;

use crate::simulator::{LyapunovSeries, Trajectory};
use crate::spectral::SpectralData;

fn row(out: &mut String, cells: impl IntoIterator<Item = f64>) {
    let mut first = true;
    for c in cells {
        if !first {
            out.push(',');
        }
        first = false;
        let _ = write!(out, "{c:e}");
    }
    out.push('\n');
}

/// Columns: n, lambda, phi(0), phi'(0), phi(1), phi'(1) and, when available,
/// a_n, b_n, beta_n.
pub fn spectrum_csv(spec: &SpectralData) -> String {
    let mut s = String::from("n,lambda,phi0,dphi0,phi1,dphi1");
    if spec.sources.is_some() {
        s.push_str(",a,b,beta");
    }
    s.push('\n');
    for n in 0..spec.n_modes {
        let _ = write!(s, "{},", n + 1);
        let mut cells = vec![
            spec.lambda[n],
            spec.phi0[n],
            spec.dphi0[n],
            spec.phi1[n],
            spec.dphi1[n],
        ];
        if let Some(src) = &spec.sources {
            cells.extend([src.a[n], src.b[n], src.beta[n]]);
        }
        row(&mut s, cells);
    }
    s
}

/// Time by grid matrix with a header row of x coordinates.
pub fn matrix_csv(x: &[f64], times: &[f64], rows: &[Vec<f64>]) -> String {
    let mut s = String::from("t");
    for xi in x {
        let _ = write!(s, ",{xi:e}");
    }
    s.push('\n');
    for (t, r) in times.iter().zip(rows) {
        row(&mut s, std::iter::once(*t).chain(r.iter().copied()));
    }
    s
}

/// Per-step controller series: t, u, u(t-h), y, zhat_1..N, Z_A,1..N0.
pub fn controller_csv(traj: &Trajectory) -> String {
    let mut s = String::from("t,u,u_delayed,y");
    for i in 1..=traj.n_observer {
        let _ = write!(s, ",zhat{i}");
    }
    for i in 1..=traj.n0 {
        let _ = write!(s, ",za{i}");
    }
    s.push('\n');
    for k in 0..traj.step_times.len() {
        let cells = [traj.step_times[k], traj.u[k], traj.u_delayed[k], traj.output[k]]
            .into_iter()
            .chain(traj.zhat[k].iter().copied())
            .chain(traj.artstein[k].iter().copied());
        row(&mut s, cells);
    }
    s
}

pub fn norms_csv(traj: &Trajectory) -> String {
    let mut s = String::from("t,l2,h1\n");
    for i in 0..traj.times.len() {
        row(&mut s, [traj.times[i], traj.norms_l2[i], traj.norms_h1[i]]);
    }
    s
}

pub fn lyapunov_csv(v: &LyapunovSeries, delta: f64) -> String {
    let mut s = String::from("t,v0,v1,v2,v,v_exp\n");
    for i in 0..v.times.len() {
        let t = v.times[i];
        row(
            &mut s,
            [t, v.v0[i], v.v1[i], v.v2[i], v.v[i], v.v[i] * (2.0 * delta * t).exp()],
        );
    }
    s
}

/// File names written by `trajectory_files`.
pub const STATE_CSV: &str = "state.csv";
pub const ERROR_CSV: &str = "observation_error.csv";
pub const CONTROLLER_CSV: &str = "controller.csv";
pub const NORMS_CSV: &str = "norms.csv";
pub const PLOT_SCRIPT: &str = "plot_trajectory.py";

/// `(file name, contents)` for every trajectory artifact.
pub fn trajectory_files(traj: &Trajectory) -> Vec<(&'static str, String)> {
    vec![
        (STATE_CSV, matrix_csv(&traj.x, &traj.times, &traj.snapshots)),
        (ERROR_CSV, matrix_csv(&traj.x, &traj.times, &traj.error_snapshots)),
        (CONTROLLER_CSV, controller_csv(traj)),
        (NORMS_CSV, norms_csv(traj)),
        (PLOT_SCRIPT, plot_script()),
    ]
}

/// Matplotlib script drawing the state surface, the observation error
/// surface and the delayed input from the CSV files in its directory.
pub fn plot_script() -> String {
    format!(
        r#"#!/usr/bin/env python3
import csv
import os
import sys

import matplotlib.pyplot as plt
import numpy as np

here = os.path.dirname(os.path.abspath(__file__))


def load_matrix(name):
    with open(os.path.join(here, name)) as f:
        rows = list(csv.reader(f))
    x = np.array([float(v) for v in rows[0][1:]])
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    return x, data[:, 0], data[:, 1:]


def surface(ax, name, title):
    x, t, z = load_matrix(name)
    stride = max(1, len(t) // 300)
    X, T = np.meshgrid(x, t[::stride])
    ax.plot_surface(X, T, z[::stride], cmap="viridis", linewidth=0)
    ax.set_xlabel("x")
    ax.set_ylabel("t")
    ax.set_title(title)


fig = plt.figure(figsize=(15, 4.5))
surface(fig.add_subplot(1, 3, 1, projection="3d"), "{state}", "state z(t, x)")
surface(fig.add_subplot(1, 3, 2, projection="3d"), "{error}", "observation error")
with open(os.path.join(here, "{ctrl}")) as f:
    rows = list(csv.reader(f))
head = rows[0]
data = np.array([[float(v) for v in r] for r in rows[1:]])
ax = fig.add_subplot(1, 3, 3)
ax.plot(data[:, head.index("t")], data[:, head.index("u_delayed")])
ax.set_xlabel("t")
ax.set_title("delayed input u(t - h)")
fig.tight_layout()
out = sys.argv[1] if len(sys.argv) > 1 else os.path.join(here, "trajectory.png")
fig.savefig(out, dpi=150)
"#,
        state = STATE_CSV,
        error = ERROR_CSV,
        ctrl = CONTROLLER_CSV
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_layout() {
        let s = matrix_csv(&[0.0, 0.5, 1.0], &[0.0, 0.1], &[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "t,0e0,5e-1,1e0");
        assert_eq!(lines[2].split(',').count(), 4);
        assert!(!s.contains('\r'));
    }
}
