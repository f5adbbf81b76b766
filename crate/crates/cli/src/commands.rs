//! The pipeline verbs. Each verb recomputes what it needs from the config
//! and writes its artifacts plus a JSON summary that `report` merges.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use delaystab_core::export;
use delaystab_core::{
    assemble, check_certificate, compute_spectrum, explicit_gains, find_minimal_n, fit_decay_rate,
    lyapunov_diagnostic, project_sources, reference_gains, simulate, synthesize, Certificate,
    CertificateKind, Construction, Error, GainSet, GainSource, Margins, NBest, SimulationConfig,
    SpectralData,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::JobConfig;
use crate::{write_atomic, CliError};

/// Allowed relative increase of `V e^{2 delta t}` between recorded times.
pub const MONOTONE_TOL: f64 = 0.02;
const IDENTITY_TOL: f64 = 1e-6;
const IDENTITY_MODES: usize = 20;

pub const SPECTRUM_SUMMARY: &str = "spectrum_summary.json";
pub const SYNTHESIS_SUMMARY: &str = "synthesis_summary.json";
pub const CERTIFY_SUMMARY: &str = "certify_summary.json";
pub const SIMULATION_SUMMARY: &str = "simulation_summary.json";
pub const REPORT: &str = "report.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verb {
    Spectrum,
    Synthesize,
    Certify,
    Simulate,
    Report,
}

#[derive(Clone, Debug, Default)]
pub struct Options {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub theorem: Option<u8>,
    pub open_loop: bool,
    pub paper_gains: bool,
    pub certificate: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub n_modes: usize,
    pub grid_size: usize,
    pub q_c: f64,
    pub p_min: f64,
    pub resolution_estimate: f64,
    pub lambda_head: Vec<f64>,
    pub unstable_modes: usize,
    pub identity_max_relative: f64,
    pub identity_ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisSummary {
    pub delta: f64,
    pub n0: usize,
    pub k: Vec<f64>,
    pub l: Vec<f64>,
    pub margin_k: Option<f64>,
    pub margin_l: Option<f64>,
    pub provenance: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KindResult {
    pub theorem: u8,
    pub label: String,
    pub n_max: usize,
    pub n_star: Option<usize>,
    pub construction: Option<Construction>,
    pub margins: Option<Margins>,
    /// Dimension reported for the published gains with a general LMI solver.
    pub reference_n: Option<usize>,
    pub certificate_file: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertifySummary {
    pub gains: String,
    pub results: Vec<KindResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSummary {
    pub theorem: u8,
    pub certificate_feasible: bool,
    pub max_relative_increase: f64,
    pub monotone: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub n_observer: usize,
    pub dt: f64,
    pub t_final: f64,
    pub open_loop: bool,
    pub fit_window: [f64; 2],
    /// Negated slope of ln ||z||^2_{L2}; `None` when the norm vanishes.
    pub decay_rate: Option<f64>,
    pub max_delayed_input_before_delay: f64,
    pub final_l2: f64,
    pub lyapunov: Option<LyapunovSummary>,
}

pub fn run(verb: Verb, opts: &Options) -> Result<String, CliError> {
    let cfg = JobConfig::load(&opts.config)?;
    let out = opts.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    match verb {
        Verb::Spectrum => cmd_spectrum(&cfg, &out),
        Verb::Synthesize => cmd_synthesize(&cfg, opts, &out),
        Verb::Certify => cmd_certify(&cfg, opts, &out),
        Verb::Simulate => cmd_simulate(&cfg, opts, &out),
        Verb::Report => cmd_report(&out),
    }
}

fn spectrum(cfg: &JobConfig) -> Result<SpectralData, CliError> {
    let raw = compute_spectrum(&cfg.plant, cfg.spectral.n_modes, cfg.spectral.grid_size)?;
    Ok(project_sources(&raw)?)
}

fn resolve_gains(cfg: &JobConfig, opts: &Options, spec: &SpectralData) -> Result<(GainSet, String), CliError> {
    let meas = cfg.plant.measurement;
    if opts.paper_gains {
        let (k, l) = reference_gains(meas);
        let gains = explicit_gains(spec, cfg.delta, meas, vec![k], vec![l])?;
        return Ok((gains, "published reference gains".into()));
    }
    if let Some(g) = &cfg.gains {
        let gains = explicit_gains(spec, cfg.delta, meas, g.k.clone(), g.l.clone())?;
        return Ok((gains, "explicit gains from the config".into()));
    }
    let gains = synthesize(spec, cfg.delta, meas)?;
    debug_assert_eq!(gains.source, GainSource::Synthesized);
    Ok((gains, "synthesized with the default pole targets".into()))
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("summary serializes") + "\n"
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn cmd_spectrum(cfg: &JobConfig, out: &Path) -> Result<String, CliError> {
    let spec = spectrum(cfg)?;
    let src = spec.sources()?;
    let q_c = spec.q_c();
    let checked = IDENTITY_MODES.min(spec.n_modes);
    let rel = |n: usize| src.identity_residual[n] / src.beta[n].abs().max(1.0);
    let worst = (0..checked).map(rel).fold(0.0, f64::max);
    let summary = SpectrumSummary {
        n_modes: spec.n_modes,
        grid_size: spec.grid_size,
        q_c,
        p_min: spec.p_min,
        resolution_estimate: spec.resolution_estimate,
        lambda_head: spec.lambda.iter().take(5).copied().collect(),
        unstable_modes: spec.lambda.iter().filter(|&&l| -l + q_c >= -cfg.delta).count(),
        identity_max_relative: worst,
        identity_ok: worst <= IDENTITY_TOL,
    };

    let mut s = String::new();
    let _ = writeln!(s, "spectrum: {} modes on {} grid points", spec.n_modes, spec.grid_size);
    let _ = writeln!(s, "q_c = {q_c:.6}, p_min = {:.6}", spec.p_min);
    let _ = writeln!(s, "resolution estimate: {:.3e}", spec.resolution_estimate);
    let _ = writeln!(s, "modes with -lambda_n + q_c >= -delta: {}", summary.unstable_modes);
    let _ = writeln!(
        s,
        "beta identity, max |beta - (a + (q_c - lambda) b)| / max(1, |beta|) over n <= {checked}: {worst:.3e} ({})",
        if summary.identity_ok { "ok" } else { "exceeds 1e-6" }
    );
    let _ = writeln!(s, "{:>4} {:>16} {:>14} {:>11}", "n", "lambda", "beta", "residual");
    for n in 0..checked {
        let _ = writeln!(
            s,
            "{:>4} {:>16.8} {:>14.6} {:>11.3e}",
            n + 1,
            spec.lambda[n],
            src.beta[n],
            src.identity_residual[n]
        );
    }
    write_atomic(out, "spectrum.csv", &export::spectrum_csv(&spec))?;
    write_atomic(out, "spectrum_report.txt", &s)?;
    write_atomic(out, SPECTRUM_SUMMARY, &json(&summary))?;
    Ok(s)
}

pub fn cmd_synthesize(cfg: &JobConfig, opts: &Options, out: &Path) -> Result<String, CliError> {
    let spec = spectrum(cfg)?;
    let (gains, provenance) = resolve_gains(cfg, opts, &spec)?;
    let summary = SynthesisSummary {
        delta: gains.delta,
        n0: gains.n0,
        k: gains.k.clone(),
        l: gains.l.clone(),
        margin_k: finite(gains.margin_k),
        margin_l: finite(gains.margin_l),
        provenance: provenance.clone(),
    };
    let mut s = String::new();
    let _ = writeln!(s, "gains: {provenance}");
    let _ = writeln!(s, "delta = {}, N0 = {}", gains.delta, gains.n0);
    let _ = writeln!(s, "K = {}", list(&gains.k));
    let _ = writeln!(s, "L = {}", list(&gains.l));
    if gains.n0 > 0 {
        let _ = writeln!(
            s,
            "margins beyond delta: A0 + B0 K {:.6}, A0 - L C0 {:.6}",
            gains.margin_k, gains.margin_l
        );
    }
    write_atomic(out, "synthesis_report.txt", &s)?;
    write_atomic(out, SYNTHESIS_SUMMARY, &json(&summary))?;
    Ok(s)
}

fn list(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("[{}]", items.join(", "))
}

fn certificate_name(kind: CertificateKind) -> String {
    format!("certificate_thm{}.json", kind.number())
}

fn margin_table(history: &[NBest]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>4} {:>7} {:>11} {:>11} {:>12} {:>12} {:>12} {:>12} {:>12}",
        "N", "alpha", "beta", "gamma", "theta1", "theta2", "theta3", "R1", "R2"
    );
    for b in history {
        let cell = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:+.4e}"));
        let m = b.margins;
        let _ = write!(
            s,
            "{:>4} {:>7.3} {:>11.4e} {:>11.4e} {:>12} {:>12} {:>12} {:>12} {:>12}",
            b.n,
            b.alpha,
            b.beta,
            b.gamma,
            cell(m.map(|m| m.theta1)),
            cell(m.map(|m| m.theta2)),
            cell(m.and_then(|m| m.theta3)),
            cell(m.map(|m| m.r1)),
            cell(m.map(|m| m.r2)),
        );
        if let Some(note) = &b.note {
            let _ = write!(s, "  {note}");
        }
        s.push('\n');
    }
    s
}

pub fn cmd_certify(cfg: &JobConfig, opts: &Options, out: &Path) -> Result<String, CliError> {
    let kinds = cfg.kinds(opts.theorem)?;
    let spec = spectrum(cfg)?;
    let (gains, provenance) = resolve_gains(cfg, opts, &spec)?;
    let mut s = String::new();
    let _ = writeln!(s, "gains: {provenance}; N0 = {}, K = {}, L = {}", gains.n0, list(&gains.k), list(&gains.l));
    if opts.paper_gains {
        let _ = writeln!(
            s,
            "note: the reference LMI-solved dimensions for these gains are N = 2 (theorems 1, 2) and \
             N = 6 (theorem 3). The search below fixes P by a Lyapunov or Riccati construction \
             instead of solving the LMIs, so its N* can be larger."
        );
    }
    let mut results = Vec::new();
    let mut infeasible = Vec::new();
    for kind in kinds {
        let grid = cfg.search_grid(kind);
        let reference_n = opts.paper_gains.then_some(if kind == CertificateKind::NeumannH1 { 6 } else { 2 });
        let _ = writeln!(s);
        let _ = writeln!(s, "theorem {} ({}), N_max = {}", kind.number(), kind.label(), grid.n_max);
        match find_minimal_n(&spec, &gains, kind, &grid) {
            Ok(found) => {
                let name = certificate_name(kind);
                write_atomic(out, &name, &json(&found.certificate))?;
                let _ = write!(s, "N* = {}", found.n_star);
                if let Some(r) = reference_n {
                    let _ = write!(s, " (reference LMI-solved dimension {r})");
                }
                let _ = writeln!(s);
                s.push_str(&found.certificate.report());
                results.push(KindResult {
                    theorem: kind.number(),
                    label: kind.label().into(),
                    n_max: grid.n_max,
                    n_star: Some(found.n_star),
                    construction: Some(found.certificate.construction),
                    margins: Some(found.certificate.margins),
                    reference_n,
                    certificate_file: Some(name),
                });
            }
            Err(Error::NotFeasibleWithinBudget { n_max, best }) => {
                let _ = writeln!(s, "no feasible certificate for N <= {n_max}; best candidate per N:");
                s.push_str(&margin_table(&best));
                infeasible.push(kind.number());
                results.push(KindResult {
                    theorem: kind.number(),
                    label: kind.label().into(),
                    n_max,
                    n_star: None,
                    construction: None,
                    margins: None,
                    reference_n,
                    certificate_file: None,
                });
            }
            Err(e) => return Err(e.into()),
        }
    }
    let summary = CertifySummary { gains: provenance, results };
    write_atomic(out, "certify_report.txt", &s)?;
    write_atomic(out, CERTIFY_SUMMARY, &json(&summary))?;
    if infeasible.is_empty() {
        Ok(s)
    } else {
        Err(CliError::Infeasible(format!(
            "{s}\nno certificate within the budget for theorem(s) {infeasible:?}"
        )))
    }
}

fn read_json<T: DeserializeOwned>(path: &Path, stage: &'static str) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|_| CliError::MissingArtifact {
        stage,
        path: path.to_path_buf(),
    })?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("cannot parse {}: {e}", path.display())))
}

pub fn cmd_simulate(cfg: &JobConfig, opts: &Options, out: &Path) -> Result<String, CliError> {
    let spec = spectrum(cfg)?;
    let (gains, provenance) = resolve_gains(cfg, opts, &spec)?;
    let cert: Option<Certificate> = match &opts.certificate {
        Some(p) => Some(read_json(p, "certify")?),
        None => None,
    };
    let n = match (cfg.observer_dim, &cert) {
        (Some(n), Some(c)) if n != c.n => {
            return Err(CliError::Config(format!(
                "observer_dim = {n} differs from the certificate's N = {}",
                c.n
            )))
        }
        (Some(n), _) => n,
        (None, Some(c)) => c.n,
        (None, None) => {
            return Err(CliError::Config(
                "set observer_dim in the config or pass --certificate".into(),
            ))
        }
    };
    let s_cfg = &cfg.simulation;
    let mut sim = SimulationConfig::for_delay(cfg.plant.delay, n, s_cfg.t_final);
    if let Some(dt) = s_cfg.dt {
        sim.dt = dt;
    }
    sim.grid_size = s_cfg.grid_size;
    sim.record_stride = s_cfg.record_stride;
    sim.open_loop = s_cfg.open_loop || opts.open_loop;
    let ic = s_cfg.initial_condition.clone();
    let traj = simulate(&spec, &gains, &sim, &|x| ic.eval(x))?;

    let squared: Vec<f64> = traj.norms_l2.iter().map(|v| v * v).collect();
    let window = (s_cfg.fit_window[0], s_cfg.fit_window[1]);
    let decay_rate = match fit_decay_rate(&squared, &traj.times, window) {
        Ok(r) => Some(r),
        Err(Error::NonPositiveData) => None,
        Err(e) => return Err(e.into()),
    };
    let max_early = traj
        .step_times
        .iter()
        .zip(&traj.u_delayed)
        .filter(|(t, _)| **t < cfg.plant.delay - 0.5 * sim.dt)
        .fold(0.0f64, |m, (_, u)| m.max(u.abs()));

    for (name, contents) in export::trajectory_files(&traj) {
        write_atomic(out, name, &contents)?;
    }

    let lyapunov = match &cert {
        Some(c) => {
            if c.kind.measurement() != cfg.plant.measurement {
                return Err(CliError::Config("certificate kind does not match the measurement".into()));
            }
            let mats = assemble(&spec, &gains, c.n)?;
            let rechecked = check_certificate(c, &mats, &spec)?;
            let series = lyapunov_diagnostic(&traj, c, &spec, &gains, &mats)?;
            write_atomic(out, "lyapunov.csv", &export::lyapunov_csv(&series, cfg.delta))?;
            let inc = series.max_relative_increase(cfg.delta, cfg.plant.delay);
            Some(LyapunovSummary {
                theorem: c.kind.number(),
                certificate_feasible: rechecked.feasible,
                max_relative_increase: inc,
                monotone: inc <= MONOTONE_TOL,
            })
        }
        None => None,
    };

    let summary = SimulationSummary {
        n_observer: n,
        dt: sim.dt,
        t_final: sim.t_final,
        open_loop: sim.open_loop,
        fit_window: s_cfg.fit_window,
        decay_rate,
        max_delayed_input_before_delay: max_early,
        final_l2: *traj.norms_l2.last().expect("at least one snapshot"),
        lyapunov,
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        "simulation: N = {n}, dt = {}, T = {}, {} loop; gains: {provenance}",
        sim.dt,
        sim.t_final,
        if sim.open_loop { "open" } else { "closed" }
    );
    match decay_rate {
        Some(r) => {
            let _ = writeln!(
                s,
                "fitted decay rate of ||z||^2 on [{}, {}]: {r:.6} (target 2 delta = {})",
                window.0,
                window.1,
                2.0 * cfg.delta
            );
        }
        None => {
            let _ = writeln!(s, "state norm vanishes on the fit window; no decay rate");
        }
    }
    let _ = writeln!(s, "max |u(t - h)| for t < h: {max_early:e}");
    let _ = writeln!(s, "final ||z||_L2: {:.6e}", summary.final_l2);
    if let Some(l) = &summary.lyapunov {
        let _ = writeln!(
            s,
            "Lyapunov functional (theorem {}): max relative increase of V e^(2 delta t) on [h, T] = {:.3e} ({})",
            l.theorem,
            l.max_relative_increase,
            if l.monotone { "nonincreasing within 2%" } else { "NOT monotone" }
        );
    }
    write_atomic(out, "simulation_report.txt", &s)?;
    write_atomic(out, SIMULATION_SUMMARY, &json(&summary))?;
    Ok(s)
}

pub fn cmd_report(out: &Path) -> Result<String, CliError> {
    let sp: SpectrumSummary = read_json(&out.join(SPECTRUM_SUMMARY), "spectrum")?;
    let sy: SynthesisSummary = read_json(&out.join(SYNTHESIS_SUMMARY), "synthesize")?;
    let ce: CertifySummary = read_json(&out.join(CERTIFY_SUMMARY), "certify")?;
    let si: SimulationSummary = read_json(&out.join(SIMULATION_SUMMARY), "simulate")?;

    let mut s = String::new();
    let _ = writeln!(s, "# delaystab report");
    let _ = writeln!(s);
    let _ = writeln!(s, "## Spectrum [computed]");
    let _ = writeln!(s, "modes: {}, grid points: {}, resolution estimate {:.3e}", sp.n_modes, sp.grid_size, sp.resolution_estimate);
    let _ = writeln!(s, "q_c = {:.6}, p_min = {:.6}", sp.q_c, sp.p_min);
    let _ = writeln!(s, "lambda_1..: {}", list(&sp.lambda_head));
    let _ = writeln!(
        s,
        "beta identity: {:.3e} ({})",
        sp.identity_max_relative,
        if sp.identity_ok { "ok" } else { "FAILED" }
    );
    let _ = writeln!(s);
    let _ = writeln!(s, "## Gains [{}]", sy.provenance);
    let _ = writeln!(s, "delta = {}, N0 = {}, K = {}, L = {}", sy.delta, sy.n0, list(&sy.k), list(&sy.l));
    let _ = writeln!(s);
    let _ = writeln!(s, "## Certification [computed; gains: {}]", ce.gains);
    for r in &ce.results {
        match r.n_star {
            Some(n) => {
                let _ = write!(s, "theorem {} ({}): N* = {n}", r.theorem, r.label);
                if let Some(c) = r.construction {
                    let _ = write!(s, ", {c:?} construction");
                }
                if let Some(rn) = r.reference_n {
                    let _ = write!(s, " [reference LMI-solved dimension: {rn}]");
                }
                let _ = writeln!(s);
                if let Some(m) = r.margins {
                    let _ = writeln!(
                        s,
                        "  margins: theta1 {:+.3e}, theta2 {:+.3e}, theta3 {}, R1 {:+.3e}, R2 {:+.3e}",
                        m.theta1,
                        m.theta2,
                        m.theta3.map_or("-".into(), |t| format!("{t:+.3e}")),
                        m.r1,
                        m.r2
                    );
                }
            }
            None => {
                let _ = writeln!(s, "theorem {} ({}): not certified for N <= {}", r.theorem, r.label, r.n_max);
            }
        }
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "## Simulation [computed]");
    let _ = writeln!(
        s,
        "N = {}, dt = {}, T = {}, {} loop",
        si.n_observer,
        si.dt,
        si.t_final,
        if si.open_loop { "open" } else { "closed" }
    );
    match si.decay_rate {
        Some(r) => {
            let _ = writeln!(
                s,
                "decay rate of ||z||^2 on [{}, {}]: {r:.6} (target 2 delta = {})",
                si.fit_window[0],
                si.fit_window[1],
                2.0 * sy.delta
            );
        }
        None => {
            let _ = writeln!(s, "decay rate: n/a (zero state)");
        }
    }
    let _ = writeln!(s, "max |u(t - h)| for t < h: {:e}", si.max_delayed_input_before_delay);
    match &si.lyapunov {
        Some(l) => {
            let _ = writeln!(
                s,
                "V(t) e^(2 delta t) monotonicity (theorem {}): {} (max relative increase {:.3e}, tolerance {MONOTONE_TOL}); certificate rechecked: {}",
                l.theorem,
                if l.monotone { "PASS" } else { "FAIL" },
                l.max_relative_increase,
                if l.certificate_feasible { "feasible" } else { "infeasible" }
            );
        }
        None => {
            let _ = writeln!(s, "V(t) e^(2 delta t) monotonicity: not evaluated (no certificate supplied)");
        }
    }
    write_atomic(out, REPORT, &s)?;
    Ok(s)
}
