use delaystab_core::linalg::{solve_lyapunov, spectral_abscissa};
use delaystab_core::synthesis::place_poles;
use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;

fn distinct(v: &[f64], gap: f64) -> bool {
    v.iter()
        .enumerate()
        .all(|(i, a)| v[..i].iter().all(|b| (a - b).abs() > gap))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn placed_poles_round_trip(
        a in prop::collection::vec(-5.0f64..5.0, 1..5),
        b_seed in prop::collection::vec(0.2f64..2.0, 5),
        signs in prop::collection::vec(any::<bool>(), 5),
        t in prop::collection::vec(-6.0f64..-1.0, 5),
    ) {
        let n = a.len();
        prop_assume!(distinct(&a, 0.3));
        prop_assume!(distinct(&t[..n], 0.3));
        let b: Vec<f64> = (0..n).map(|i| if signs[i] { b_seed[i] } else { -b_seed[i] }).collect();
        let targets: Vec<Complex64> = t[..n].iter().map(|&r| Complex64::new(r, 0.0)).collect();
        let k = place_poles(&a, &b, &targets).unwrap();
        let m = DMatrix::from_fn(n, n, |i, j| if i == j { a[i] } else { 0.0 } + b[i] * k[j]);
        let mut got: Vec<f64> = m.complex_eigenvalues().iter().map(|z| z.re).collect();
        let mut want = t[..n].to_vec();
        got.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g - w).abs() < 1e-6, "got {:?}, want {:?}", got, want);
        }
    }

    #[test]
    fn lyapunov_residual_is_small(
        n in 1usize..8,
        entries in prop::collection::vec(-1.0f64..1.0, 64),
        rhs in prop::collection::vec(-1.0f64..1.0, 64),
    ) {
        let mut a = DMatrix::from_fn(n, n, |i, j| entries[i * 8 + j]);
        let shift = spectral_abscissa(&a) + 0.5;
        for i in 0..n {
            a[(i, i)] -= shift;
        }
        let c = DMatrix::from_fn(n, n, |i, j| rhs[i * 8 + j] + rhs[j * 8 + i]);
        let x = solve_lyapunov(&a, &c).unwrap();
        let r = a.transpose() * &x + &x * &a - &c;
        prop_assert!(r.amax() < 1e-10 * (1.0 + x.amax() * a.amax()));
    }
}
