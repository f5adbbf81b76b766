//! Closed-loop simulation of the delayed PDE with observer and predictor,
//! plus norm, decay-rate and Lyapunov-functional diagnostics.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::certification::{Certificate, ClosedLoopMatrices};
use crate::error::{Error, Result};
use crate::plant::Measurement;
use crate::spectral::grid::{gradient, left_derivative, trapezoid_weights, Discretization};
use crate::spectral::tridiag::TridiagLu;
use crate::spectral::SpectralData;
use crate::synthesis::GainSet;

const BLOWUP_FACTOR: f64 = 1e6;
const BC_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    /// Observer dimension N.
    pub n_observer: usize,
    pub t_final: f64,
    pub dt: f64,
    /// Number of grid points of the simulation mesh.
    pub grid_size: usize,
    pub open_loop: bool,
    /// Record a snapshot every `record_stride` steps.
    pub record_stride: usize,
}

impl SimulationConfig {
    /// `dt = h / 200`, 201 grid points, a snapshot every step.
    pub fn for_delay(delay: f64, n_observer: usize, t_final: f64) -> Self {
        SimulationConfig {
            n_observer,
            t_final,
            dt: delay / 200.0,
            grid_size: 201,
            open_loop: false,
            record_stride: 1,
        }
    }
}

/// Controller memory: observer state, input history and predictor state.
#[derive(Clone, Debug)]
pub struct ControllerState {
    pub zhat: Vec<f64>,
    /// `u(t), u(t - dt), ..., u(t - h)`, most recent first; zero before t = 0.
    pub u_history: VecDeque<f64>,
    pub artstein: Vec<f64>,
}

impl ControllerState {
    fn new(n: usize, n0: usize, delay_steps: usize) -> Self {
        ControllerState {
            zhat: vec![0.0; n],
            u_history: std::iter::repeat(0.0).take(delay_steps + 1).collect(),
            artstein: vec![0.0; n0],
        }
    }

    fn push(&mut self, u: f64) {
        self.u_history.pop_back();
        self.u_history.push_front(u);
    }

    /// u(t - h)
    pub fn delayed(&self) -> f64 {
        *self.u_history.back().expect("history is never empty")
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub x: Vec<f64>,
    pub dt: f64,
    pub delay_steps: usize,
    pub record_stride: usize,
    pub n_observer: usize,
    pub n0: usize,
    pub open_loop: bool,
    pub measurement: Measurement,
    /// Per-step series (length steps + 1).
    pub step_times: Vec<f64>,
    pub u: Vec<f64>,
    pub u_delayed: Vec<f64>,
    pub output: Vec<f64>,
    pub zhat: Vec<Vec<f64>>,
    pub artstein: Vec<Vec<f64>>,
    /// Recorded series.
    pub record_steps: Vec<usize>,
    pub times: Vec<f64>,
    pub snapshots: Vec<Vec<f64>>,
    /// `z(t, x) - sum_{n <= N} zhat_n(t) phi_n(x)`
    pub error_snapshots: Vec<Vec<f64>>,
    pub norms_l2: Vec<f64>,
    pub norms_h1: Vec<f64>,
}

struct Pde {
    disc: Discretization,
    lu: TridiagLu,
    forcing_row: usize,
    forcing_gain: f64,
    right_value_gain: Option<f64>,
    half: f64,
}

impl Pde {
    fn new(spec: &SpectralData, intervals: usize, dt: f64) -> Result<Self> {
        let plant = &spec.plant;
        let p = |x: f64| plant.p.eval(x);
        let q = |x: f64| plant.q_tilde.eval(x);
        let disc = Discretization::new(&p, &q, plant.theta1, plant.theta2, intervals);
        let half = 0.5 * dt;
        let n = disc.active();
        let d: Vec<f64> = (0..n).map(|i| disc.mass[i] + half * disc.diag[i]).collect();
        let o: Vec<f64> = disc.off.iter().map(|v| half * v).collect();
        let lu = TridiagLu::factor(o.clone(), d, o)
            .ok_or_else(|| Error::Config("Crank-Nicolson matrix is singular; reduce dt".into()))?;
        let (c2, s2) = (plant.theta2.cos(), plant.theta2.sin());
        let (forcing_gain, right_value_gain) = if disc.dirichlet_right {
            (disc.last_flux / c2, Some(1.0 / c2))
        } else {
            (plant.p.eval(1.0) / s2, None)
        };
        Ok(Pde {
            forcing_row: n - 1,
            disc,
            lu,
            forcing_gain,
            right_value_gain,
            half,
        })
    }

    fn step(&self, z: &mut Vec<f64>, ud_now: f64, ud_next: f64) {
        let d = &self.disc;
        let n = z.len();
        let mut rhs: Vec<f64> = (0..n)
            .map(|i| {
                let mut s = d.diag[i] * z[i];
                if i > 0 {
                    s += d.off[i - 1] * z[i - 1];
                }
                if i + 1 < n {
                    s += d.off[i] * z[i + 1];
                }
                d.mass[i] * z[i] - self.half * s
            })
            .collect();
        rhs[self.forcing_row] += self.half * self.forcing_gain * (ud_now + ud_next);
        self.lu.solve_in_place(&mut rhs);
        *z = rhs;
    }

    fn full(&self, z: &[f64], ud: f64) -> Vec<f64> {
        let mut f = self.disc.embed(z);
        if let Some(g) = self.right_value_gain {
            let m = self.disc.intervals;
            f[m] = g * ud;
        }
        f
    }
}

fn l2_norm(f: &[f64], w: &[f64]) -> f64 {
    f.iter().zip(w).map(|(a, b)| a * a * b).sum::<f64>().sqrt()
}

/// `(L2, H1)` norms of a grid function on a uniform mesh over [0, 1].
pub fn snapshot_norms(f: &[f64]) -> (f64, f64) {
    let m = f.len() - 1;
    let w = trapezoid_weights(m);
    let l2 = l2_norm(f, &w);
    let df = gradient(f, 1.0 / m as f64);
    let d2 = l2_norm(&df, &w);
    (l2, (l2 * l2 + d2 * d2).sqrt())
}

/// L2 and H1 norm series of a trajectory.
pub fn norms(traj: &Trajectory) -> (Vec<f64>, Vec<f64>) {
    (traj.norms_l2.clone(), traj.norms_h1.clone())
}

fn check_initial_condition(spec: &SpectralData, z0: &dyn Fn(f64) -> f64) -> Result<()> {
    let plant = &spec.plant;
    let eta = 1e-5;
    let d0 = (-3.0 * z0(0.0) + 4.0 * z0(eta) - z0(2.0 * eta)) / (2.0 * eta);
    let d1 = (3.0 * z0(1.0) - 4.0 * z0(1.0 - eta) + z0(1.0 - 2.0 * eta)) / (2.0 * eta);
    let scale = 1.0 + (0..=100).map(|i| z0(i as f64 / 100.0).abs()).fold(0.0, f64::max);
    let left = plant.theta1.cos() * z0(0.0) - plant.theta1.sin() * d0;
    let right = plant.theta2.cos() * z0(1.0) + plant.theta2.sin() * d1;
    if left.abs() > BC_TOL * scale || right.abs() > BC_TOL * scale {
        return Err(Error::Config(format!(
            "initial condition violates the boundary conditions (residuals {left:.3e}, {right:.3e})"
        )));
    }
    Ok(())
}

/// Simulates the closed loop from `z0` with zero observer state and zero
/// input history.
pub fn simulate(
    spec: &SpectralData,
    gains: &GainSet,
    cfg: &SimulationConfig,
    z0: &dyn Fn(f64) -> f64,
) -> Result<Trajectory> {
    let src = spec.sources()?;
    let plant = &spec.plant;
    let h = plant.delay;
    let n = cfg.n_observer;
    let n0 = gains.n0;
    if gains.measurement != plant.measurement {
        return Err(Error::Config("gains were designed for a different measurement".into()));
    }
    if n < n0.max(1) || n >= spec.n_modes {
        return Err(Error::Config(format!(
            "observer dimension {n} must lie in [max(N0, 1), n_modes) = [{}, {})",
            n0.max(1),
            spec.n_modes
        )));
    }
    if !(cfg.dt > 0.0 && cfg.t_final > 0.0 && cfg.dt.is_finite() && cfg.t_final.is_finite()) {
        return Err(Error::Config("dt and t_final must be positive".into()));
    }
    let ratio = h / cfg.dt;
    let delay_steps = ratio.round() as usize;
    if delay_steps < 1 || (ratio - delay_steps as f64).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::Config(format!(
            "delay / dt = {ratio} must be an integer >= 1"
        )));
    }
    if cfg.grid_size < 5 {
        return Err(Error::Config("simulation grid needs at least 5 points".into()));
    }
    if cfg.record_stride == 0 {
        return Err(Error::Config("record_stride must be positive".into()));
    }
    check_initial_condition(spec, z0)?;

    let intervals = cfg.grid_size - 1;
    let dx = 1.0 / intervals as f64;
    let x: Vec<f64> = (0..=intervals).map(|i| i as f64 * dx).collect();
    let w = trapezoid_weights(intervals);
    let pde = Pde::new(spec, intervals, cfg.dt)?;
    let basis = spec.basis_on(intervals, n);
    let steps = (cfg.t_final / cfg.dt).round() as usize;

    // Observer: zhat' = M zhat + g_u u_d + l y.
    let trace = spec.output_trace(plant.measurement);
    let q_c = spec.q_c();
    let mut l_ext = vec![0.0; n];
    l_ext[..n0].copy_from_slice(&gains.l);
    let cb: f64 = (0..n).map(|k| trace[k] * src.b[k]).sum();
    let obs = DMatrix::from_fn(n, n, |i, j| {
        (if i == j { -spec.lambda[i] + q_c } else { 0.0 }) - l_ext[i] * trace[j]
    });
    let eye = DMatrix::<f64>::identity(n, n);
    let half = 0.5 * cfg.dt;
    let implicit = (&eye - &obs * half).lu();
    let explicit = &eye + &obs * half;
    let g_u = DVector::from_fn(n, |i, _| src.beta[i] - l_ext[i] * cb);
    let g_y = DVector::from_column_slice(&l_ext);

    // Predictor weights e^{A0 j dt} B0, j = 0..D.
    let a0: Vec<f64> = spec.lambda[..n0].iter().map(|l| -l + q_c).collect();
    let b0 = &src.beta[..n0];
    let weights: Vec<Vec<f64>> = (0..=delay_steps)
        .map(|j| {
            let wj = if j == 0 || j == delay_steps { half } else { cfg.dt };
            (0..n0)
                .map(|i| wj * (a0[i] * j as f64 * cfg.dt).exp() * b0[i])
                .collect()
        })
        .collect();
    let eah: Vec<f64> = a0.iter().map(|a| (a * h).exp()).collect();
    let solve_predictor = {
        let m = DMatrix::from_fn(n0, n0, |i, j| {
            (if i == j { 1.0 } else { 0.0 }) - weights[0][i] * gains.k[j]
        });
        m.lu()
    };

    let mut state = ControllerState::new(n, n0, delay_steps);
    let mut z: Vec<f64> = x[pde.disc.first..pde.disc.first + pde.disc.active()]
        .iter()
        .map(|&xi| z0(xi))
        .collect();

    let z0_full = pde.full(&z, 0.0);
    let z0_norm = l2_norm(&z0_full, &w);
    let limit = BLOWUP_FACTOR * (1.0 + z0_norm);
    let measure = |full: &[f64]| match plant.measurement {
        Measurement::Dirichlet => full[0],
        Measurement::Neumann => left_derivative(full, dx),
    };

    let mut traj = Trajectory {
        x: x.clone(),
        dt: cfg.dt,
        delay_steps,
        record_stride: cfg.record_stride,
        n_observer: n,
        n0,
        open_loop: cfg.open_loop,
        measurement: plant.measurement,
        step_times: Vec::with_capacity(steps + 1),
        u: Vec::with_capacity(steps + 1),
        u_delayed: Vec::with_capacity(steps + 1),
        output: Vec::with_capacity(steps + 1),
        zhat: Vec::with_capacity(steps + 1),
        artstein: Vec::with_capacity(steps + 1),
        record_steps: Vec::new(),
        times: Vec::new(),
        snapshots: Vec::new(),
        error_snapshots: Vec::new(),
        norms_l2: Vec::new(),
        norms_h1: Vec::new(),
    };

    let record = |traj: &mut Trajectory, k: usize, full: Vec<f64>, zhat: &[f64]| {
        let (l2, h1) = snapshot_norms(&full);
        let err: Vec<f64> = (0..full.len())
            .map(|i| full[i] - (0..n).map(|m| zhat[m] * basis[m][i]).sum::<f64>())
            .collect();
        traj.record_steps.push(k);
        traj.times.push(k as f64 * cfg.dt);
        traj.snapshots.push(full);
        traj.error_snapshots.push(err);
        traj.norms_l2.push(l2);
        traj.norms_h1.push(h1);
    };

    let mut y = measure(&z0_full);
    traj.step_times.push(0.0);
    traj.u.push(0.0);
    traj.u_delayed.push(0.0);
    traj.output.push(y);
    traj.zhat.push(state.zhat.clone());
    traj.artstein.push(state.artstein.clone());
    record(&mut traj, 0, z0_full, &state.zhat);

    for k in 0..steps {
        let t_next = (k + 1) as f64 * cfg.dt;
        // u_d(t_k) and u_d(t_{k+1}): the history holds u(t_k - j dt), j = 0..D.
        let ud_now = state.delayed();
        let ud_next = state.u_history[delay_steps - 1];
        pde.step(&mut z, ud_now, ud_next);
        let full = pde.full(&z, ud_next);
        let y_next = measure(&full);

        let zh = DVector::from_column_slice(&state.zhat);
        let rhs = &explicit * zh + &g_u * (half * (ud_now + ud_next)) + &g_y * (half * (y + y_next));
        let zh_next = implicit
            .solve(&rhs)
            .ok_or_else(|| Error::Config("observer step matrix is singular".into()))?;
        state.zhat = zh_next.iter().copied().collect();
        y = y_next;

        // Predictor at t_{k+1}: history entries j = 1..D are u(t_{k+1} - j dt).
        let mut c: Vec<f64> = (0..n0).map(|i| eah[i] * state.zhat[i]).collect();
        for j in 1..=delay_steps {
            let uj = state.u_history[j - 1];
            if uj != 0.0 {
                for i in 0..n0 {
                    c[i] += weights[j][i] * uj;
                }
            }
        }
        let u_next = if cfg.open_loop || n0 == 0 {
            state.artstein = c;
            0.0
        } else {
            let za = solve_predictor
                .solve(&DVector::from_column_slice(&c))
                .ok_or_else(|| Error::Config("predictor matrix is singular".into()))?;
            state.artstein = za.iter().copied().collect();
            gains.k.iter().zip(&state.artstein).map(|(a, b)| a * b).sum()
        };
        state.push(u_next);

        traj.step_times.push(t_next);
        traj.u.push(u_next);
        traj.u_delayed.push(ud_next);
        traj.output.push(y);
        traj.zhat.push(state.zhat.clone());
        traj.artstein.push(state.artstein.clone());

        let norm = l2_norm(&full, &w);
        if !norm.is_finite() || norm > limit {
            return Err(Error::BlowupDetected { time: t_next, norm });
        }
        if (k + 1) % cfg.record_stride == 0 || k + 1 == steps {
            record(&mut traj, k + 1, full, &state.zhat);
        }
    }
    Ok(traj)
}

/// Negated least-squares slope of `ln(series)` over `times` in `[t_a, t_b]`.
pub fn fit_decay_rate(series: &[f64], times: &[f64], window: (f64, f64)) -> Result<f64> {
    if series.len() != times.len() {
        return Err(Error::Dimension("series and times differ in length".into()));
    }
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(series)
        .filter(|(t, _)| **t >= window.0 && **t <= window.1)
        .map(|(t, v)| (*t, *v))
        .collect();
    if pts.len() < 2 || pts.iter().any(|(_, v)| !(*v > 0.0)) {
        return Err(Error::NonPositiveData);
    }
    let m = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let lm = pts.iter().map(|p| p.1.ln()).sum::<f64>() / m;
    let (mut num, mut den) = (0.0, 0.0);
    for (t, v) in &pts {
        num += (t - tm) * (v.ln() - lm);
        den += (t - tm) * (t - tm);
    }
    Ok(-num / den)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LyapunovSeries {
    pub times: Vec<f64>,
    pub v0: Vec<f64>,
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
    pub v: Vec<f64>,
}

impl LyapunovSeries {
    /// Largest relative increase of `V(t) e^{2 delta t}` between consecutive
    /// recorded times with `t >= t_from`.
    pub fn max_relative_increase(&self, delta: f64, t_from: f64) -> f64 {
        let wv: Vec<f64> = self
            .v
            .iter()
            .zip(&self.times)
            .map(|(v, t)| v * (2.0 * delta * t).exp())
            .collect();
        (1..wv.len())
            .filter(|&i| self.times[i - 1] >= t_from - 1e-12)
            .map(|i| (wv[i] - wv[i - 1]) / wv[i - 1].abs().max(f64::MIN_POSITIVE))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Evaluates the Lyapunov functional of the certificate along a trajectory.
pub fn lyapunov_diagnostic(
    traj: &Trajectory,
    cert: &Certificate,
    spec: &SpectralData,
    gains: &GainSet,
    mats: &ClosedLoopMatrices,
) -> Result<LyapunovSeries> {
    let src = spec.sources()?;
    let n = cert.n;
    let n0 = cert.n0;
    if traj.n_observer != n || mats.n != n || gains.n0 != n0 || traj.n0 != n0 {
        return Err(Error::Dimension(format!(
            "trajectory N = {}, certificate N = {n}, matrices N = {}",
            traj.n_observer, mats.n
        )));
    }
    let steps = traj.step_times.len();
    if traj.u.len() != steps || traj.zhat.len() != steps || traj.artstein.len() != steps || steps < 3 {
        return Err(Error::MissingHistory("per-step controller series are incomplete".into()));
    }
    if traj.record_steps.iter().any(|&k| k >= steps) {
        return Err(Error::MissingHistory("snapshot index beyond the controller series".into()));
    }
    let dt = traj.dt;
    let d = traj.delay_steps;
    let delta = cert.delta;
    let h = spec.plant.delay;
    let q_c = spec.q_c();
    let lam = &spec.lambda;
    let nm = spec.n_modes;
    let intervals = traj.x.len() - 1;
    let w = trapezoid_weights(intervals);
    let basis = spec.basis_on(intervals, nm);

    // Second predictor for modes N0+1..N.
    let a1: Vec<f64> = (n0..n).map(|i| -lam[i] + q_c).collect();
    let b1: Vec<f64> = (n0..n).map(|i| src.beta[i] / lam[i]).collect();
    let u_at = |k: isize| if k >= 0 { traj.u[k as usize] } else { 0.0 };
    let second_artstein = |k: usize| -> Vec<f64> {
        (0..n - n0)
            .map(|i| {
                let mut c = (a1[i] * h).exp() * traj.zhat[k][n0 + i] / lam[n0 + i];
                for j in 0..=d {
                    let wj = if j == 0 || j == d { 0.5 * dt } else { dt };
                    c += wj * (a1[i] * j as f64 * dt).exp() * b1[i] * u_at(k as isize - j as isize);
                }
                c
            })
            .collect()
    };

    // Z_A derivative by centered differences.
    let za_dot: Vec<Vec<f64>> = (0..steps)
        .map(|k| {
            (0..n0)
                .map(|i| {
                    let a = &traj.artstein;
                    if k == 0 {
                        (a[1][i] - a[0][i]) / dt
                    } else if k == steps - 1 {
                        (a[k][i] - a[k - 1][i]) / dt
                    } else {
                        (a[k + 1][i] - a[k - 1][i]) / (2.0 * dt)
                    }
                })
                .collect()
        })
        .collect();
    let quad = |q: &DMatrix<f64>, v: &[f64]| -> f64 {
        let x = DVector::from_column_slice(v);
        (x.transpose() * q * &x)[(0, 0)]
    };
    let f1: Vec<f64> = traj.artstein.iter().map(|a| quad(&cert.q1, a)).collect();
    let f2: Vec<f64> = za_dot.iter().map(|a| quad(&cert.q2, a)).collect();
    let windowed = |f: &[f64], k: usize| -> f64 {
        let lo = k.saturating_sub(d);
        if k == lo {
            return 0.0;
        }
        (lo..=k)
            .map(|j| {
                let wj = if j == lo || j == k { 0.5 * dt } else { dt };
                wj * (-2.0 * delta * (k - j) as f64 * dt).exp() * f[j]
            })
            .sum()
    };

    let scale_e = |i: usize| match gains.measurement {
        Measurement::Dirichlet => lam[i].sqrt(),
        Measurement::Neumann => lam[i],
    };
    let tail_weight = cert.kind.weights_tail_by_lambda();
    let mut out = LyapunovSeries {
        times: Vec::new(),
        v0: Vec::new(),
        v1: Vec::new(),
        v2: Vec::new(),
        v: Vec::new(),
    };
    for (r, &k) in traj.record_steps.iter().enumerate() {
        let snap = &traj.snapshots[r];
        let zn: Vec<f64> = basis
            .iter()
            .map(|phi| phi.iter().zip(snap).zip(&w).map(|((a, b), c)| a * b * c).sum())
            .collect();
        let ud = traj.u_delayed[k];
        let zh = &traj.zhat[k];
        let mut x = Vec::with_capacity(2 * n);
        x.extend_from_slice(&traj.artstein[k]);
        x.extend((0..n0).map(|i| zn[i] - zh[i]));
        x.extend(second_artstein(k));
        x.extend((n0..n).map(|i| scale_e(i) * (zn[i] - zh[i])));
        let xv = DVector::from_vec(x);
        let mut v0 = (xv.transpose() * &cert.p * &xv)[(0, 0)];
        let tail: f64 = (n..nm)
            .map(|i| {
                let wn = zn[i] + src.b[i] * ud;
                (if tail_weight { lam[i] } else { 1.0 }) * wn * wn
            })
            .sum();
        v0 += cert.gamma * tail;
        let v1 = windowed(&f1, k);
        let v2 = windowed(&f2, k);
        out.times.push(traj.step_times[k]);
        out.v0.push(v0);
        out.v1.push(v1);
        out.v2.push(v2);
        out.v.push(v0 + v1 + v2);
    }
    Ok(out)
}
