//! Closed-loop matrices and Lyapunov-based stability certificates.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kind::CertificateKind;
use crate::linalg::{spectral_abscissa, sym_eigenvalues, LyapunovSolver};
use crate::plant::Measurement;
use crate::spectral::{residual_norms, tail_constant, SpectralData, TailConstant};
use crate::synthesis::GainSet;

/// Relative tolerance of the semidefiniteness tests.
pub const PSD_TOL: f64 = 1e-9;

const REFINE_MAX_ITER: usize = 600;
const REFINE_RTOL: f64 = 1e-11;
const REFINE_BLOWUP: f64 = 1e15;

/// Matrices of the truncated closed loop in the coordinates
/// `X = col(Z_A, E^{N0}, Z~_A, E~)`.
#[derive(Clone, Debug)]
pub struct ClosedLoopMatrices {
    pub n: usize,
    pub n0: usize,
    pub delta: f64,
    pub delay: f64,
    pub measurement: Measurement,
    pub a0: Vec<f64>,
    pub a1: Vec<f64>,
    pub b0: Vec<f64>,
    pub b1: Vec<f64>,
    pub c0: Vec<f64>,
    pub c1: Vec<f64>,
    pub k: Vec<f64>,
    pub l: Vec<f64>,
    pub f: DMatrix<f64>,
    pub l_cal: DVector<f64>,
    /// `N0 x (2N + 1)`
    pub e: DMatrix<f64>,
    pub k_tilde: DVector<f64>,
}

impl ClosedLoopMatrices {
    pub fn dim(&self) -> usize {
        2 * self.n
    }

    /// `K E` as a row vector of length 2N + 1.
    fn ke(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim() + 1);
        for (i, ki) in self.k.iter().enumerate() {
            v += self.e.row(i).transpose() * *ki;
        }
        v
    }

    fn kt_k(&self) -> DMatrix<f64> {
        let k = DVector::from_column_slice(&self.k);
        &k * k.transpose()
    }
}

/// Builds the closed-loop matrices for observer dimension `n`.
pub fn assemble(spec: &SpectralData, gains: &GainSet, n: usize) -> Result<ClosedLoopMatrices> {
    let src = spec.sources()?;
    let n0 = gains.n0;
    if n <= n0 || n >= spec.n_modes {
        return Err(Error::Dimension(format!(
            "N = {n} must satisfy N0 = {n0} < N < n_modes = {}",
            spec.n_modes
        )));
    }
    if gains.k.len() != n0 || gains.l.len() != n0 {
        return Err(Error::Dimension("gain length differs from N0".into()));
    }
    let q_c = spec.q_c();
    let lam = &spec.lambda;
    let trace = spec.output_trace(gains.measurement);
    let a0: Vec<f64> = lam[..n0].iter().map(|l| -l + q_c).collect();
    let a1: Vec<f64> = lam[n0..n].iter().map(|l| -l + q_c).collect();
    let b0 = src.beta[..n0].to_vec();
    let b1: Vec<f64> = (n0..n).map(|i| src.beta[i] / lam[i]).collect();
    let c0 = trace[..n0].to_vec();
    let c1: Vec<f64> = (n0..n)
        .map(|i| match gains.measurement {
            Measurement::Dirichlet => trace[i] / lam[i].sqrt(),
            Measurement::Neumann => trace[i] / lam[i],
        })
        .collect();
    let h = spec.plant.delay;
    let n1 = n - n0;
    let dim = 2 * n;
    let (o_e, o_z, o_t) = (n0, 2 * n0, 2 * n0 + n1);
    let el: Vec<f64> = (0..n0).map(|i| (a0[i] * h).exp() * gains.l[i]).collect();

    let mut f = DMatrix::zeros(dim, dim);
    for i in 0..n0 {
        f[(i, i)] += a0[i];
        for j in 0..n0 {
            f[(i, j)] += b0[i] * gains.k[j];
            f[(i, o_e + j)] = el[i] * c0[j];
            f[(o_e + i, o_e + j)] = -gains.l[i] * c0[j];
        }
        f[(o_e + i, o_e + i)] += a0[i];
        for j in 0..n1 {
            f[(i, o_t + j)] = el[i] * c1[j];
            f[(o_e + i, o_t + j)] = -gains.l[i] * c1[j];
        }
    }
    for i in 0..n1 {
        for j in 0..n0 {
            f[(o_z + i, j)] = b1[i] * gains.k[j];
        }
        f[(o_z + i, o_z + i)] = a1[i];
        f[(o_t + i, o_t + i)] = a1[i];
    }
    let mut l_cal = DVector::zeros(dim);
    for i in 0..n0 {
        l_cal[i] = el[i];
        l_cal[o_e + i] = -gains.l[i];
    }
    let mut e = DMatrix::zeros(n0, dim + 1);
    e.view_mut((0, 0), (n0, dim)).copy_from(&f.view((0, 0), (n0, dim)));
    for i in 0..n0 {
        e[(i, dim)] = el[i];
    }
    let mut k_tilde = DVector::zeros(dim);
    for j in 0..n0 {
        k_tilde[j] = gains.k[j];
    }
    Ok(ClosedLoopMatrices {
        n,
        n0,
        delta: gains.delta,
        delay: h,
        measurement: gains.measurement,
        a0,
        a1,
        b0,
        b1,
        c0,
        c1,
        k: gains.k.clone(),
        l: gains.l.clone(),
        f,
        l_cal,
        e,
        k_tilde,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Construction {
    /// P solves `F^T P + P F + 2 delta P = -I`.
    Lyapunov,
    /// P from fixed-point iteration on the Riccati form of the first constraint.
    RiccatiRefined,
    /// P supplied by the caller.
    External,
}

/// Constraint margins. Each is `<= 0` exactly when the constraint holds;
/// matrix margins are the largest eigenvalue net of the PSD tolerance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    pub theta1: f64,
    pub theta2: f64,
    /// `-Theta3`, present for the kinds that have a third scalar condition.
    pub theta3: Option<f64>,
    pub r1: f64,
    pub r2: f64,
    pub p_min_eig: f64,
    pub q_min_eig: f64,
}

impl Margins {
    pub fn feasible(&self) -> bool {
        self.theta1 <= 0.0
            && self.theta2 <= 0.0
            && self.theta3.map_or(true, |t| t <= 0.0)
            && self.r1 <= 0.0
            && self.r2 <= 0.0
            && self.p_min_eig > 0.0
            && self.q_min_eig >= 0.0
    }

    /// Largest scalar violation, used to rank infeasible candidates.
    pub fn violation(&self) -> f64 {
        [self.theta1, self.theta2, self.theta3.unwrap_or(f64::NEG_INFINITY), self.r1, self.r2]
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Certificate {
    pub kind: CertificateKind,
    pub n: usize,
    pub n0: usize,
    pub delta: f64,
    pub delay: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub epsilon: Option<f64>,
    pub p: DMatrix<f64>,
    pub q1: DMatrix<f64>,
    pub q2: DMatrix<f64>,
    pub m_phi: TailConstant,
    pub res_a: f64,
    pub res_b: f64,
    pub lambda_next: f64,
    pub construction: Construction,
    pub margins: Margins,
    pub feasible: bool,
}

fn psd_margin(m: &DMatrix<f64>) -> f64 {
    let ev = sym_eigenvalues(m);
    let norm = ev.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    ev.last().copied().unwrap_or(0.0) - PSD_TOL * (1.0 + norm)
}

fn check_parameters(kind: CertificateKind, alpha: f64, beta: f64, gamma: f64, eps: Option<f64>) -> Result<()> {
    if !(alpha > kind.alpha_lower_bound() && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "alpha = {alpha} must exceed {}",
            kind.alpha_lower_bound()
        )));
    }
    if !(beta > 0.0 && gamma > 0.0 && beta.is_finite() && gamma.is_finite()) {
        return Err(Error::InvalidArgument("beta and gamma must be positive".into()));
    }
    if kind == CertificateKind::NeumannH1 {
        let e = eps.unwrap_or(0.125);
        if !(e > 0.0 && e <= 0.5) {
            return Err(Error::InvalidArgument(format!("epsilon = {e} must lie in (0, 1/2]")));
        }
    }
    Ok(())
}

/// `(Theta2, -Theta3)` margins of the scalar conditions.
#[allow(clippy::too_many_arguments)]
fn scalar_margins(
    kind: CertificateKind,
    alpha: f64,
    beta: f64,
    gamma: f64,
    eps: f64,
    lam: f64,
    q_c: f64,
    delta: f64,
    m_phi: f64,
) -> (f64, Option<f64>) {
    match kind {
        CertificateKind::DirichletH1 => (
            2.0 * gamma * (-(1.0 - 1.0 / alpha) * lam + q_c + delta) + beta * m_phi,
            None,
        ),
        CertificateKind::DirichletL2 => (
            2.0 * gamma * (-lam + q_c + delta + 1.0 / alpha) + beta * m_phi * lam.powf(0.75),
            Some(-(2.0 * gamma - beta * m_phi / lam.powf(0.25))),
        ),
        CertificateKind::NeumannH1 => (
            2.0 * gamma * (-(1.0 - 1.0 / alpha) * lam + q_c + delta)
                + beta * m_phi * lam.powf(0.5 + eps),
            Some(-(2.0 * gamma * (1.0 - 1.0 / alpha) - beta * m_phi / lam.powf(0.5 - eps))),
        ),
    }
}

/// The first constraint matrix Theta1.
pub fn theta1_matrix(
    mats: &ClosedLoopMatrices,
    p: &DMatrix<f64>,
    q1: &DMatrix<f64>,
    q2: &DMatrix<f64>,
    beta: f64,
) -> DMatrix<f64> {
    let dim = mats.dim();
    let fp = mats.f.transpose() * p;
    let mut t = DMatrix::zeros(dim + 1, dim + 1);
    let top = &fp + fp.transpose() + p * (2.0 * mats.delta);
    t.view_mut((0, 0), (dim, dim)).copy_from(&top);
    let n0 = mats.n0;
    let mut blk = t.view_mut((0, 0), (n0, n0));
    blk += q1;
    let pl = p * &mats.l_cal;
    for i in 0..dim {
        t[(i, dim)] = pl[i];
        t[(dim, i)] = pl[i];
    }
    t[(dim, dim)] = -beta;
    t += mats.e.transpose() * q2 * &mats.e;
    crate::linalg::symmetrize(&t)
}

fn q_schedule(mats: &ClosedLoopMatrices, alpha: f64, gamma: f64, res_a: f64, res_b: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let c = 2.0 * (2.0 * mats.delta * mats.delay).exp() * alpha * gamma;
    let kk = mats.kt_k();
    (&kk * (c * res_a), &kk * (c * res_b))
}

/// Recomputes every constraint of `cert` from scratch.
pub fn check_certificate(
    cert: &Certificate,
    mats: &ClosedLoopMatrices,
    spec: &SpectralData,
) -> Result<Certificate> {
    if cert.n != mats.n || cert.n0 != mats.n0 {
        return Err(Error::Dimension(format!(
            "certificate is for N = {}, matrices for N = {}",
            cert.n, mats.n
        )));
    }
    if cert.kind.measurement() != mats.measurement {
        return Err(Error::InvalidArgument(
            "certificate kind does not match the measurement of the gains".into(),
        ));
    }
    let dim = mats.dim();
    if cert.p.shape() != (dim, dim) || cert.q1.shape() != (mats.n0, mats.n0) || cert.q2.shape() != (mats.n0, mats.n0) {
        return Err(Error::Dimension("certificate matrix shapes do not match".into()));
    }
    check_parameters(cert.kind, cert.alpha, cert.beta, cert.gamma, cert.epsilon)?;
    let n = mats.n;
    let m_phi = tail_constant(spec, n, cert.kind, cert.epsilon)?;
    let (res_a, res_b) = residual_norms(spec, n)?;
    let lam = spec.lambda[n];
    let eps = cert.epsilon.unwrap_or(0.125);
    let (theta2, theta3) = scalar_margins(
        cert.kind, cert.alpha, cert.beta, cert.gamma, eps, lam, spec.q_c(), mats.delta, m_phi.total(),
    );
    let t1 = theta1_matrix(mats, &cert.p, &cert.q1, &cert.q2, cert.beta);
    let kk = mats.kt_k();
    let decay = (-2.0 * mats.delta * mats.delay).exp();
    let ag = cert.alpha * cert.gamma;
    let r1 = &kk * (ag * res_a) - &cert.q1 * decay;
    let r2 = &kk * (ag * res_b) - &cert.q2 * decay;
    // Q1 and Q2 are empty when N0 = 0.
    let q_min = if mats.n0 == 0 {
        0.0
    } else {
        crate::linalg::sym_min_eigenvalue(&cert.q1).min(crate::linalg::sym_min_eigenvalue(&cert.q2))
    };
    let q_scale = crate::linalg::sym_norm(&cert.q1).max(crate::linalg::sym_norm(&cert.q2));
    let margins = Margins {
        theta1: psd_margin(&t1),
        theta2,
        theta3,
        r1: psd_margin(&r1),
        r2: psd_margin(&r2),
        p_min_eig: crate::linalg::sym_min_eigenvalue(&cert.p),
        q_min_eig: q_min + PSD_TOL * (1.0 + q_scale),
    };
    let mut out = cert.clone();
    out.delta = mats.delta;
    out.delay = mats.delay;
    out.m_phi = m_phi;
    out.res_a = res_a;
    out.res_b = res_b;
    out.lambda_next = lam;
    out.feasible = margins.feasible();
    out.margins = margins;
    Ok(out)
}

fn proof_p(mats: &ClosedLoopMatrices, solver: &LyapunovSolver) -> Result<DMatrix<f64>> {
    let dim = mats.dim();
    solver.solve(&(-DMatrix::<f64>::identity(dim, dim)))
}

fn shifted(mats: &ClosedLoopMatrices) -> Result<DMatrix<f64>> {
    let dim = mats.dim();
    let a = &mats.f + DMatrix::<f64>::identity(dim, dim) * mats.delta;
    let abscissa = spectral_abscissa(&a);
    if !(abscissa < 0.0) {
        return Err(Error::LyapunovFailure(format!(
            "F + delta I is not Hurwitz (spectral abscissa {abscissa:.3e})"
        )));
    }
    Ok(a)
}

#[allow(clippy::too_many_arguments)]
fn build_certificate(
    mats: &ClosedLoopMatrices,
    spec: &SpectralData,
    kind: CertificateKind,
    alpha: f64,
    beta: f64,
    gamma: f64,
    eps: Option<f64>,
    p: DMatrix<f64>,
    construction: Construction,
) -> Result<Certificate> {
    let (res_a, res_b) = residual_norms(spec, mats.n)?;
    let (q1, q2) = q_schedule(mats, alpha, gamma, res_a, res_b);
    let draft = Certificate {
        kind,
        n: mats.n,
        n0: mats.n0,
        delta: mats.delta,
        delay: mats.delay,
        alpha,
        beta,
        gamma,
        epsilon: if kind == CertificateKind::NeumannH1 { Some(eps.unwrap_or(0.125)) } else { None },
        p,
        q1,
        q2,
        m_phi: TailConstant { partial: 0.0, tail_bound: 0.0 },
        res_a,
        res_b,
        lambda_next: spec.lambda[mats.n],
        construction,
        margins: Margins {
            theta1: f64::NAN,
            theta2: f64::NAN,
            theta3: None,
            r1: f64::NAN,
            r2: f64::NAN,
            p_min_eig: f64::NAN,
            q_min_eig: f64::NAN,
        },
        feasible: false,
    };
    check_certificate(&draft, mats, spec)
}

/// Certificate candidate from the proof construction: P from the shifted
/// Lyapunov equation with right-hand side -I and Q1, Q2 from the residual
/// norms.
pub fn constructive_candidate(
    mats: &ClosedLoopMatrices,
    spec: &SpectralData,
    kind: CertificateKind,
    alpha: f64,
    beta: f64,
    gamma: f64,
    eps: Option<f64>,
) -> Result<Certificate> {
    check_parameters(kind, alpha, beta, gamma, eps)?;
    let solver = LyapunovSolver::new(&shifted(mats)?)?;
    let p = proof_p(mats, &solver)?;
    build_certificate(mats, spec, kind, alpha, beta, gamma, eps, p, Construction::Lyapunov)
}

/// Fixed-point iteration `(F + delta I)^T P + P (F + delta I) = -(Qx + S S^T / R + mu I)`
/// with `S = P Lcal + Ex^T Q2 Ez`, `R = beta - Ez^T Q2 Ez`. A converged P
/// makes Theta1 negative definite.
fn refine_p(
    mats: &ClosedLoopMatrices,
    solver: &LyapunovSolver,
    q1: &DMatrix<f64>,
    q2: &DMatrix<f64>,
    beta: f64,
) -> Option<DMatrix<f64>> {
    let dim = mats.dim();
    let ex = mats.e.columns(0, dim).clone_owned();
    let ez = mats.e.column(dim).clone_owned();
    let mut qx = ex.transpose() * q2 * &ex;
    {
        let mut blk = qx.view_mut((0, 0), (mats.n0, mats.n0));
        blk += q1;
    }
    let cross = ex.transpose() * q2 * &ez;
    let r = beta - (ez.transpose() * q2 * &ez)[(0, 0)];
    if !(r > 0.0) {
        return None;
    }
    let mu = 1e-6 * qx.amax().max(f64::MIN_POSITIVE);
    let eye = DMatrix::<f64>::identity(dim, dim);
    let base = &qx + &eye * mu;
    let mut p = DMatrix::<f64>::zeros(dim, dim);
    for _ in 0..REFINE_MAX_ITER {
        let s = &p * &mats.l_cal + &cross;
        let rhs = &base + &s * s.transpose() / r;
        let next = solver.solve(&(-rhs)).ok()?;
        let scale = next.amax();
        if !scale.is_finite() || scale > REFINE_BLOWUP {
            return None;
        }
        let change = (&next - &p).amax() / scale.max(f64::MIN_POSITIVE);
        p = crate::linalg::symmetrize(&next);
        if change < REFINE_RTOL {
            return Some(p);
        }
    }
    None
}

/// Certificate candidate with the Riccati-refined P.
pub fn refined_candidate(
    mats: &ClosedLoopMatrices,
    spec: &SpectralData,
    kind: CertificateKind,
    alpha: f64,
    beta: f64,
    gamma: f64,
    eps: Option<f64>,
) -> Result<Certificate> {
    check_parameters(kind, alpha, beta, gamma, eps)?;
    let solver = LyapunovSolver::new(&shifted(mats)?)?;
    let (res_a, res_b) = residual_norms(spec, mats.n)?;
    let (q1, q2) = q_schedule(mats, alpha, gamma, res_a, res_b);
    let p = refine_p(mats, &solver, &q1, &q2, beta)
        .ok_or_else(|| Error::LyapunovFailure("Riccati refinement did not converge".into()))?;
    build_certificate(mats, spec, kind, alpha, beta, gamma, eps, p, Construction::RiccatiRefined)
}

/// Search grid for `find_minimal_n`. Candidate parameters are
/// `beta = beta_N * s_beta`, `gamma = gamma_N * s_gamma` with the kind's
/// reference schedule `(beta_N, gamma_N)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchGrid {
    pub alphas: Vec<f64>,
    pub beta_scales: Vec<f64>,
    pub gamma_scales: Vec<f64>,
    pub n_max: usize,
    pub epsilon: Option<f64>,
    /// Try the Riccati-refined construction when the Lyapunov one fails.
    pub refine: bool,
}

impl SearchGrid {
    pub fn default_for(kind: CertificateKind, n_max: usize) -> Self {
        let mut alphas = vec![1.1, 2.0, 4.0, 8.0];
        if kind == CertificateKind::DirichletL2 {
            alphas.splice(0..0, [0.05, 0.1, 0.25, 0.5, 1.0]);
        }
        let scales: Vec<f64> = (-4..=6).map(|k| 2f64.powi(k)).collect();
        SearchGrid {
            alphas,
            beta_scales: scales.clone(),
            gamma_scales: scales,
            n_max,
            epsilon: kind.default_epsilon(),
            refine: true,
        }
    }
}

/// Best candidate found at one observer dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NBest {
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub margins: Option<Margins>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub n_star: usize,
    pub certificate: Certificate,
    pub history: Vec<NBest>,
}

/// Smallest observer dimension with a feasible certificate.
///
/// Dimensions are scanned in ascending order. At each N the Lyapunov
/// construction is tried over the grid in order (alpha, then beta scale,
/// then gamma scale); if none is feasible and refinement is enabled, the
/// Riccati-refined construction is tried per alpha with the smallest ratio
/// gamma / beta that passes the scalar conditions.
pub fn find_minimal_n(
    spec: &SpectralData,
    gains: &GainSet,
    kind: CertificateKind,
    grid: &SearchGrid,
) -> Result<SearchOutcome> {
    if kind.measurement() != gains.measurement {
        return Err(Error::InvalidArgument(format!(
            "{} requires {:?} measurement gains",
            kind.label(),
            kind.measurement()
        )));
    }
    if grid.alphas.is_empty() || grid.beta_scales.is_empty() || grid.gamma_scales.is_empty() {
        return Err(Error::InvalidArgument("search grid must be nonempty".into()));
    }
    let alphas: Vec<f64> = grid
        .alphas
        .iter()
        .copied()
        .filter(|&a| a > kind.alpha_lower_bound())
        .collect();
    if alphas.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no alpha above {} in the grid",
            kind.alpha_lower_bound()
        )));
    }
    let eps = grid.epsilon.or(kind.default_epsilon());
    let n_hi = grid.n_max.min(spec.n_modes - 1);
    let mut history = Vec::new();
    for n in gains.n0 + 1..=n_hi {
        let mats = assemble(spec, gains, n)?;
        let (best, found) = search_at(spec, &mats, kind, &alphas, grid, eps)?;
        if let Some(cert) = found {
            history.push(NBest {
                n,
                alpha: cert.alpha,
                beta: cert.beta,
                gamma: cert.gamma,
                margins: Some(cert.margins),
                note: None,
            });
            return Ok(SearchOutcome {
                n_star: n,
                certificate: cert,
                history,
            });
        }
        history.push(best);
    }
    Err(Error::NotFeasibleWithinBudget {
        n_max: grid.n_max,
        best: history,
    })
}

fn search_at(
    spec: &SpectralData,
    mats: &ClosedLoopMatrices,
    kind: CertificateKind,
    alphas: &[f64],
    grid: &SearchGrid,
    eps: Option<f64>,
) -> Result<(NBest, Option<Certificate>)> {
    let n = mats.n;
    let dim = mats.dim();
    let (beta_n, gamma_n) = kind.schedule(n);
    let m_phi = tail_constant(spec, n, kind, eps)?.total();
    let (res_a, res_b) = residual_norms(spec, n)?;
    let lam = spec.lambda[n];
    let q_c = spec.q_c();
    let e_val = eps.unwrap_or(0.125);
    let mut best = NBest {
        n,
        alpha: alphas[0],
        beta: beta_n,
        gamma: gamma_n,
        margins: None,
        note: None,
    };
    let consider = |best: &mut NBest, c: &Certificate| {
        let better = best
            .margins
            .map_or(true, |m| c.margins.violation() < m.violation());
        if better {
            best.alpha = c.alpha;
            best.beta = c.beta;
            best.gamma = c.gamma;
            best.margins = Some(c.margins);
        }
    };

    let shifted_a = match shifted(mats) {
        Ok(a) => a,
        Err(e) => {
            best.note = Some(e.to_string());
            return Ok((best, None));
        }
    };
    let solver = LyapunovSolver::new(&shifted_a)?;
    let p0 = proof_p(mats, &solver)?;

    // Theta1 for the Lyapunov P is base + c1 v1 v1^T + c2 v2 v2^T - beta e e^T,
    // with the rank-one terms coming from Q1 = c1 K^T K and Q2 = c2 K^T K.
    let zeros = DMatrix::<f64>::zeros(mats.n0, mats.n0);
    let base = theta1_matrix(mats, &p0, &zeros, &zeros, 0.0);
    let mut v1 = DVector::<f64>::zeros(dim + 1);
    for j in 0..mats.n0 {
        v1[j] = mats.k[j];
    }
    let v2 = mats.ke();
    let exp2 = (2.0 * mats.delta * mats.delay).exp();

    let mut scalar_ok = Vec::new();
    let mut evaluated = false;
    for &alpha in alphas {
        for &sb in &grid.beta_scales {
            for &sg in &grid.gamma_scales {
                let beta = beta_n * sb;
                let gamma = gamma_n * sg;
                let (t2, t3) = scalar_margins(kind, alpha, beta, gamma, e_val, lam, q_c, mats.delta, m_phi);
                if t2 > 0.0 || t3.map_or(false, |t| t > 0.0) {
                    continue;
                }
                scalar_ok.push((alpha, beta, gamma));
                let c = 2.0 * exp2 * alpha * gamma;
                let (c1, c2) = (c * res_a, c * res_b);
                // Necessary conditions from the diagonal and the 2x2 minors
                // with the last row.
                let d_last = -beta + c2 * v2[dim] * v2[dim];
                let tol = PSD_TOL * (1.0 + beta + base.amax());
                if d_last > tol {
                    continue;
                }
                let mut pruned = false;
                for i in 0..dim {
                    let d = base[(i, i)] + c1 * v1[i] * v1[i] + c2 * v2[i] * v2[i];
                    let off = base[(i, dim)] + c2 * v2[i] * v2[dim];
                    if d > tol || d * d_last < off * off - tol * (1.0 + off * off) {
                        pruned = true;
                        break;
                    }
                }
                if pruned {
                    continue;
                }
                let cert = build_certificate(
                    mats,
                    spec,
                    kind,
                    alpha,
                    beta,
                    gamma,
                    eps,
                    p0.clone(),
                    Construction::Lyapunov,
                )?;
                evaluated = true;
                if cert.feasible {
                    return Ok((best, Some(cert)));
                }
                consider(&mut best, &cert);
            }
        }
    }

    if grid.refine {
        for &alpha in alphas {
            let mut cands: Vec<(f64, f64)> = scalar_ok
                .iter()
                .filter(|c| c.0 == alpha)
                .map(|c| (c.1, c.2))
                .collect();
            cands.sort_by(|a, b| (a.1 / a.0).total_cmp(&(b.1 / b.0)));
            cands.dedup_by(|a, b| ((a.1 / a.0) / (b.1 / b.0) - 1.0).abs() < 1e-12);
            for (beta, gamma) in cands.into_iter().take(3) {
                let (q1, q2) = q_schedule(mats, alpha, gamma, res_a, res_b);
                let Some(p) = refine_p(mats, &solver, &q1, &q2, beta) else {
                    // Feasibility is monotone in gamma / beta.
                    break;
                };
                let cert = build_certificate(
                    mats,
                    spec,
                    kind,
                    alpha,
                    beta,
                    gamma,
                    eps,
                    p,
                    Construction::RiccatiRefined,
                )?;
                evaluated = true;
                if cert.feasible {
                    return Ok((best, Some(cert)));
                }
                consider(&mut best, &cert);
            }
        }
    }

    if !evaluated {
        let cert = build_certificate(
            mats,
            spec,
            kind,
            alphas[0],
            beta_n,
            gamma_n,
            eps,
            p0,
            Construction::Lyapunov,
        )?;
        consider(&mut best, &cert);
        best.note = Some("no grid point passed the scalar and diagonal tests".into());
    }
    Ok((best, None))
}

/// `||P(N)||_2` of the Lyapunov construction for each N in `ns`.
pub fn p_norm_scan(spec: &SpectralData, gains: &GainSet, ns: &[usize]) -> Result<Vec<(usize, f64)>> {
    ns.iter()
        .map(|&n| {
            let mats = assemble(spec, gains, n)?;
            let solver = LyapunovSolver::new(&shifted(&mats)?)?;
            let p = proof_p(&mats, &solver)?;
            Ok((n, crate::linalg::sym_norm(&p)))
        })
        .collect()
}

impl Certificate {
    /// Human-readable summary.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let m = &self.margins;
        let _ = writeln!(s, "certificate: {}", self.kind.label());
        let _ = writeln!(s, "  N = {}, N0 = {}, delta = {}, h = {}", self.n, self.n0, self.delta, self.delay);
        let _ = writeln!(
            s,
            "  alpha = {:.6}, beta = {:.6e}, gamma = {:.6e}{}",
            self.alpha,
            self.beta,
            self.gamma,
            self.epsilon.map(|e| format!(", epsilon = {e}")).unwrap_or_default()
        );
        let _ = writeln!(s, "  construction: {:?}", self.construction);
        let _ = writeln!(
            s,
            "  M_phi = {:.6e} (partial {:.6e} + tail bound {:.6e})",
            self.m_phi.total(),
            self.m_phi.partial,
            self.m_phi.tail_bound
        );
        let _ = writeln!(s, "  residuals: ||a||^2 {:.6e}, ||b||^2 {:.6e}", self.res_a, self.res_b);
        let _ = writeln!(s, "  lambda_(N+1) = {:.6}", self.lambda_next);
        let _ = writeln!(s, "  margin theta1 {:+.6e}", m.theta1);
        let _ = writeln!(s, "  margin theta2 {:+.6e}", m.theta2);
        if let Some(t3) = m.theta3 {
            let _ = writeln!(s, "  margin theta3 {:+.6e}", t3);
        }
        let _ = writeln!(s, "  margin R1     {:+.6e}", m.r1);
        let _ = writeln!(s, "  margin R2     {:+.6e}", m.r2);
        let _ = writeln!(s, "  min eig P     {:.6e}", m.p_min_eig);
        let _ = writeln!(s, "  feasible: {}", self.feasible);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::PlantSpec;
    use crate::spectral::{compute_spectrum, project_sources};
    use crate::synthesis::synthesize;

    fn setup(meas: Measurement) -> (SpectralData, GainSet) {
        let plant = PlantSpec::reference(meas);
        let spec = project_sources(&compute_spectrum(&plant, 30, 601).unwrap()).unwrap();
        let gains = synthesize(&spec, 0.5, meas).unwrap();
        (spec, gains)
    }

    #[test]
    fn assembled_shapes_and_blocks() {
        let (spec, gains) = setup(Measurement::Dirichlet);
        let m = assemble(&spec, &gains, 4).unwrap();
        assert_eq!(m.f.shape(), (8, 8));
        assert_eq!(m.e.shape(), (1, 9));
        assert_eq!(m.l_cal.len(), 8);
        assert_eq!(m.f[(3, 3)], m.a1[1]);
        assert_eq!(m.f[(5, 5)], m.a1[0]);
        assert_eq!(m.f[(1, 1)], m.a0[0] - m.l[0] * m.c0[0]);
        assert!(matches!(assemble(&spec, &gains, 1), Err(Error::Dimension(_))));
        assert!(spectral_abscissa(&m.f) < -0.5);
    }

    #[test]
    fn lyapunov_construction_r1_value() {
        let (spec, gains) = setup(Measurement::Dirichlet);
        let m = assemble(&spec, &gains, 3).unwrap();
        let c = constructive_candidate(&m, &spec, CertificateKind::DirichletH1, 2.0, 1.0, 0.5, None).unwrap();
        let want = -2.0 * 0.5 * c.res_a * gains.k[0] * gains.k[0];
        let tol = PSD_TOL * (1.0 + want.abs());
        assert!((c.margins.r1 - (want - tol)).abs() < 1e-12 * (1.0 + want.abs()));
    }

    #[test]
    fn rejects_bad_alpha() {
        let (spec, gains) = setup(Measurement::Dirichlet);
        let m = assemble(&spec, &gains, 3).unwrap();
        assert!(matches!(
            constructive_candidate(&m, &spec, CertificateKind::DirichletH1, 1.0, 1.0, 1.0, None),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn refined_p_makes_theta1_negative() {
        let (spec, gains) = setup(Measurement::Dirichlet);
        let m = assemble(&spec, &gains, 3).unwrap();
        let c = refined_candidate(&m, &spec, CertificateKind::DirichletH1, 2.0, 8.0, 0.05, None).unwrap();
        assert!(c.margins.theta1 < 0.0);
        assert!(c.margins.p_min_eig > 0.0);
    }
}
