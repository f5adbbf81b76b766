use std::sync::OnceLock;

use delaystab_core::*;

fn reference(meas: Measurement) -> (SpectralData, GainSet) {
    let spec = project_sources(&compute_spectrum(&PlantSpec::reference(meas), 60, 1201).unwrap()).unwrap();
    let gains = synthesize(&spec, 0.5, meas).unwrap();
    (spec, gains)
}

fn dirichlet() -> &'static (SpectralData, GainSet) {
    static CELL: OnceLock<(SpectralData, GainSet)> = OnceLock::new();
    CELL.get_or_init(|| reference(Measurement::Dirichlet))
}

/// Satisfies the reference boundary conditions with zero input.
fn initial(x: f64) -> f64 {
    let c = (std::f64::consts::PI / 5.0).tan().recip();
    (1.0 - x) * (1.0 + (1.0 + c) * x)
}

#[test]
fn default_targets_reproduce_published_gains() {
    for meas in [Measurement::Dirichlet, Measurement::Neumann] {
        let (_, gains) = reference(meas);
        let (k, l) = reference_gains(meas);
        assert_eq!(gains.n0, 1);
        assert!((gains.k[0] - k).abs() < 5e-5, "{meas:?} K = {}", gains.k[0]);
        assert!((gains.l[0] - l).abs() < 5e-5, "{meas:?} L = {}", gains.l[0]);
    }
}

#[test]
fn zero_initial_condition_stays_at_rest() {
    let (spec, gains) = dirichlet();
    let cfg = SimulationConfig::for_delay(1.0, 4, 3.0);
    let traj = simulate(spec, gains, &cfg, &|_| 0.0).unwrap();
    assert!(traj.output.iter().all(|&y| y == 0.0));
    assert!(traj.u.iter().all(|&u| u == 0.0));
    assert!(traj.norms_h1.iter().all(|&v| v == 0.0));
}

#[test]
fn input_is_invisible_before_the_delay() {
    let (spec, gains) = dirichlet();
    let closed = SimulationConfig::for_delay(1.0, 4, 1.5);
    let open = SimulationConfig { open_loop: true, ..closed.clone() };
    let a = simulate(spec, gains, &closed, &initial).unwrap();
    let b = simulate(spec, gains, &open, &initial).unwrap();
    let d = a.delay_steps;
    for k in 0..=d {
        assert_eq!(a.u_delayed[k], 0.0);
        assert_eq!(a.snapshots[k], b.snapshots[k], "step {k}");
    }
    assert!(a.u[1..d].iter().any(|&u| u != 0.0));
    assert!(a.snapshots[d + 20] != b.snapshots[d + 20]);
}

#[test]
fn boundary_value_tracks_delayed_input() {
    let (spec, gains) = dirichlet();
    let cfg = SimulationConfig::for_delay(1.0, 4, 3.0);
    let traj = simulate(spec, gains, &cfg, &initial).unwrap();
    for (k, snap) in traj.record_steps.iter().zip(&traj.snapshots) {
        assert!((snap.last().unwrap() - traj.u_delayed[*k]).abs() < 1e-12);
    }
}

#[test]
fn predictor_state_matches_independent_quadrature() {
    let (spec, gains) = dirichlet();
    let cfg = SimulationConfig::for_delay(1.0, 4, 3.0);
    let traj = simulate(spec, gains, &cfg, &initial).unwrap();
    let src = spec.sources().unwrap();
    let a0 = -spec.lambda[0] + spec.q_c();
    let b0 = src.beta[0];
    let d = traj.delay_steps;
    let dt = traj.dt;
    let scale = traj.artstein.iter().map(|v| v[0].abs()).fold(0.0, f64::max);
    for k in (d..traj.u.len()).step_by(37) {
        // Composite Simpson over s in [0, h] of e^{a0 s} b0 u(t_k - s).
        let f = |j: usize| (a0 * j as f64 * dt).exp() * b0 * traj.u[k - j];
        let mut acc = f(0) + f(d);
        for j in 1..d {
            acc += if j % 2 == 1 { 4.0 * f(j) } else { 2.0 * f(j) };
        }
        let expect = (a0 * 1.0).exp() * traj.zhat[k][0] + acc * dt / 3.0;
        assert!((traj.artstein[k][0] - expect).abs() < 1e-4 * scale, "step {k}");
    }
}

#[test]
fn closed_loop_decays_and_open_loop_grows() {
    let (spec, gains) = dirichlet();
    let cfg = SimulationConfig::for_delay(1.0, 4, 8.0);
    let closed = simulate(spec, gains, &cfg, &initial).unwrap();
    let rate = fit_decay_rate(&closed.norms_h1, &closed.times, (4.0, 8.0)).unwrap();
    assert!(rate >= 0.9, "rate {rate}");
    let open = simulate(spec, gains, &SimulationConfig { open_loop: true, ..cfg }, &initial).unwrap();
    let rate = fit_decay_rate(&open.norms_h1, &open.times, (4.0, 8.0)).unwrap();
    assert!(rate < 0.0, "open-loop rate {rate}");
}

#[test]
fn rejects_inconsistent_configuration() {
    let (spec, gains) = dirichlet();
    let mut cfg = SimulationConfig::for_delay(1.0, 4, 1.0);
    cfg.dt = 0.003;
    assert!(matches!(simulate(spec, gains, &cfg, &initial), Err(Error::Config(_))));
    let cfg = SimulationConfig::for_delay(1.0, 4, 1.0);
    assert!(matches!(simulate(spec, gains, &cfg, &|_| 1.0), Err(Error::Config(_))));
    let cfg = SimulationConfig::for_delay(1.0, 80, 1.0);
    assert!(matches!(simulate(spec, gains, &cfg, &initial), Err(Error::Config(_))));
}

#[test]
fn certificate_survives_independent_recheck() {
    let (spec, gains) = dirichlet();
    let grid = SearchGrid::default_for(CertificateKind::DirichletH1, 20);
    let out = find_minimal_n(spec, gains, CertificateKind::DirichletH1, &grid).unwrap();
    assert!(out.certificate.feasible);
    let mats = assemble(spec, gains, out.n_star).unwrap();
    let again = check_certificate(&out.certificate, &mats, spec).unwrap();
    assert!(again.feasible);
    assert_eq!(again.margins, out.certificate.margins);

    let mut broken = out.certificate.clone();
    broken.p = -broken.p;
    assert!(!check_certificate(&broken, &mats, spec).unwrap().feasible);
}

#[test]
fn feasibility_is_invariant_under_joint_scaling() {
    let (spec, gains) = dirichlet();
    let grid = SearchGrid::default_for(CertificateKind::DirichletH1, 20);
    let out = find_minimal_n(spec, gains, CertificateKind::DirichletH1, &grid).unwrap();
    let mats = assemble(spec, gains, out.n_star).unwrap();
    for c in [0.1, 10.0] {
        let mut scaled = out.certificate.clone();
        scaled.p *= c;
        scaled.q1 *= c;
        scaled.q2 *= c;
        scaled.beta *= c;
        scaled.gamma *= c;
        let re = check_certificate(&scaled, &mats, spec).unwrap();
        assert!(re.feasible, "scale {c}");
        assert!((re.margins.theta2 / out.certificate.margins.theta2 - c).abs() < 1e-9);
    }
}

#[test]
fn lyapunov_functional_is_nonnegative_without_state_weight() {
    let (spec, gains) = dirichlet();
    let grid = SearchGrid::default_for(CertificateKind::DirichletH1, 20);
    let out = find_minimal_n(spec, gains, CertificateKind::DirichletH1, &grid).unwrap();
    let n = out.n_star;
    let mats = assemble(spec, gains, n).unwrap();
    let traj = simulate(spec, gains, &SimulationConfig::for_delay(1.0, n, 3.0), &initial).unwrap();
    let mut cert = out.certificate.clone();
    cert.p.fill(0.0);
    cert.gamma = 0.0;
    let v = lyapunov_diagnostic(&traj, &cert, spec, gains, &mats).unwrap();
    assert!(v.v.iter().all(|&x| x >= 0.0));
    assert!(v.v0.iter().all(|&x| x == 0.0));

    let v = lyapunov_diagnostic(&traj, &out.certificate, spec, gains, &mats).unwrap();
    assert!(v.max_relative_increase(0.5, 1.0) <= 0.02);
}

#[test]
fn stable_plant_certifies_with_one_mode() {
    let plant = PlantSpec {
        p: Coefficient::constant(1.0),
        q_tilde: Coefficient::constant(0.0),
        theta1: 0.5,
        theta2: 0.0,
        delay: 1.0,
        measurement: Measurement::Dirichlet,
    };
    let spec = project_sources(&compute_spectrum(&plant, 40, 801).unwrap()).unwrap();
    let gains = synthesize(&spec, 0.01, Measurement::Dirichlet).unwrap();
    assert_eq!(gains.n0, 0);
    for kind in [CertificateKind::DirichletH1, CertificateKind::DirichletL2] {
        let out = find_minimal_n(&spec, &gains, kind, &SearchGrid::default_for(kind, 10)).unwrap();
        assert_eq!(out.n_star, 1);
        assert!(out.certificate.margins.feasible());
    }
}
