//! Gain synthesis for the finite-dimensional unstable part.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::spectral_abscissa;
use crate::plant::Measurement;
use crate::spectral::SpectralData;

/// Condition number above which pole placement is refused.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainSource {
    Synthesized,
    Explicit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainSet {
    pub delta: f64,
    pub n0: usize,
    pub measurement: Measurement,
    /// Feedback gain, u = K Z.
    pub k: Vec<f64>,
    /// Observer gain.
    pub l: Vec<f64>,
    /// `-max Re eig(A0 + B0 K) - delta`.
    pub margin_k: f64,
    /// `-max Re eig(A0 - L C0) - delta`.
    pub margin_l: f64,
    pub source: GainSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KalmanReport {
    pub controllable: bool,
    /// 1-based index of the first mode with vanishing coefficient.
    pub offending_mode: Option<usize>,
}

/// Smallest N0 with `-lambda_n + q_c < -delta` for all n > N0.
pub fn select_n0(spec: &SpectralData, delta: f64) -> Result<usize> {
    let q_c = spec.q_c();
    match spec.lambda.iter().position(|&l| -l + q_c < -delta) {
        Some(n0) if n0 < spec.n_modes => Ok(n0),
        _ => Err(Error::SpectrumTooShort {
            delta,
            n_modes: spec.n_modes,
        }),
    }
}

/// Kalman test for a pair with diagonal state matrix.
pub fn kalman_check(a_diag: &[f64], coeffs: &[f64]) -> Result<KalmanReport> {
    if a_diag.len() != coeffs.len() {
        return Err(Error::Dimension(format!(
            "{} eigenvalues but {} coefficients",
            a_diag.len(),
            coeffs.len()
        )));
    }
    for i in 0..a_diag.len() {
        for j in i + 1..a_diag.len() {
            if (a_diag[i] - a_diag[j]).abs() <= 1e-10 * (1.0 + a_diag[i].abs()) {
                return Err(Error::DegenerateSpectrum(i + 1, j + 1));
            }
        }
    }
    let scale = coeffs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let offending = coeffs
        .iter()
        .position(|v| v.abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE))
        .map(|i| i + 1);
    Ok(KalmanReport {
        controllable: offending.is_none(),
        offending_mode: offending,
    })
}

/// Real polynomial coefficients (ascending) of `prod (s - t_k)`.
fn char_poly(targets: &[Complex64]) -> Result<Vec<f64>> {
    let mut c = vec![Complex64::new(1.0, 0.0)];
    for t in targets {
        if !(t.re.is_finite() && t.im.is_finite()) {
            return Err(Error::InvalidTargets("non-finite target".into()));
        }
        let mut next = vec![Complex64::new(0.0, 0.0); c.len() + 1];
        for (k, ck) in c.iter().enumerate() {
            next[k + 1] += ck;
            next[k] -= ck * t;
        }
        c = next;
    }
    let scale = c.iter().fold(1.0f64, |a, z| a.max(z.norm()));
    if c.iter().any(|z| z.im.abs() > 1e-9 * scale) {
        return Err(Error::InvalidTargets(
            "targets must be closed under conjugation".into(),
        ));
    }
    Ok(c.iter().map(|z| z.re).collect())
}

/// Gain `K` with `eig(diag(a) + b K) = targets`, via Ackermann's formula on
/// the diagonal realization.
pub fn place_poles(a_diag: &[f64], b: &[f64], targets: &[Complex64]) -> Result<Vec<f64>> {
    let n = a_diag.len();
    if targets.len() != n {
        return Err(Error::InvalidTargets(format!(
            "{} targets for a system of order {n}",
            targets.len()
        )));
    }
    let report = kalman_check(a_diag, b)?;
    if let Some(i) = report.offending_mode {
        return Err(Error::NotControllable(i));
    }
    let poly = char_poly(targets)?;
    let ctrb = DMatrix::from_fn(n, n, |i, j| b[i] * a_diag[i].powi(j as i32));
    let sv = ctrb.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if cond > MAX_CONDITION {
        return Err(Error::IllConditioned(cond));
    }
    let mut en = DVector::zeros(n);
    en[n - 1] = 1.0;
    let r = ctrb
        .transpose()
        .lu()
        .solve(&en)
        .ok_or(Error::IllConditioned(f64::INFINITY))?;
    Ok((0..n)
        .map(|i| {
            let pa = poly.iter().rev().fold(0.0, |acc, c| acc * a_diag[i] + c);
            -r[i] * pa
        })
        .collect())
}

/// Distinct real targets `min(a_i, 0) - delta - 1 - 0.3 (i - 1)`.
pub fn default_targets(a_diag: &[f64], delta: f64) -> Vec<Complex64> {
    a_diag
        .iter()
        .enumerate()
        .map(|(i, a)| Complex64::new(a.min(0.0) - delta - 1.0 - 0.3 * i as f64, 0.0))
        .collect()
}

/// Diagonal entries `-lambda_n + q_c`, n <= n0.
pub fn unstable_block(spec: &SpectralData, n0: usize) -> Vec<f64> {
    spec.lambda[..n0].iter().map(|l| -l + spec.q_c()).collect()
}

fn margin(a_diag: &[f64], outer_left: &[f64], outer_right: &[f64], sign: f64, delta: f64) -> f64 {
    let n = a_diag.len();
    let m = DMatrix::from_fn(n, n, |i, j| {
        let d = if i == j { a_diag[i] } else { 0.0 };
        d + sign * outer_left[i] * outer_right[j]
    });
    -spectral_abscissa(&m) - delta
}

pub fn margin_k(a_diag: &[f64], b: &[f64], k: &[f64], delta: f64) -> f64 {
    margin(a_diag, b, k, 1.0, delta)
}

pub fn margin_l(a_diag: &[f64], c: &[f64], l: &[f64], delta: f64) -> f64 {
    margin(a_diag, l, c, -1.0, delta)
}

/// Designs K and L for the N0 unstable modes with the default targets.
pub fn synthesize(spec: &SpectralData, delta: f64, measurement: Measurement) -> Result<GainSet> {
    synthesize_with_targets(spec, delta, measurement, None, None)
}

pub fn synthesize_with_targets(
    spec: &SpectralData,
    delta: f64,
    measurement: Measurement,
    k_targets: Option<&[Complex64]>,
    l_targets: Option<&[Complex64]>,
) -> Result<GainSet> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
    }
    let src = spec.sources()?;
    let n0 = select_n0(spec, delta)?;
    if n0 == 0 {
        return Ok(GainSet {
            delta,
            n0,
            measurement,
            k: vec![],
            l: vec![],
            margin_k: f64::INFINITY,
            margin_l: f64::INFINITY,
            source: GainSource::Synthesized,
        });
    }
    let a0 = unstable_block(spec, n0);
    let b0 = &src.beta[..n0];
    let c0 = &spec.output_trace(measurement)[..n0];
    let defaults = default_targets(&a0, delta);
    let kt = k_targets.unwrap_or(&defaults);
    let lt = l_targets.unwrap_or(&defaults);
    let k = place_poles(&a0, b0, kt)?;
    // Duality: eig(A0^T + C0^T K') = targets  =>  L = -K'^T.
    let l: Vec<f64> = place_poles(&a0, c0, lt)?.iter().map(|v| -v).collect();
    let mk = margin_k(&a0, b0, &k, delta);
    let ml = margin_l(&a0, c0, &l, delta);
    if !(mk > 0.0 && ml > 0.0) {
        return Err(Error::InvalidTargets(format!(
            "targets do not clear the decay rate: margins {mk:.3e}, {ml:.3e}"
        )));
    }
    Ok(GainSet {
        delta,
        n0,
        measurement,
        k,
        l,
        margin_k: mk,
        margin_l: ml,
        source: GainSource::Synthesized,
    })
}

/// Wraps externally supplied gains after checking their margins.
pub fn explicit_gains(
    spec: &SpectralData,
    delta: f64,
    measurement: Measurement,
    k: Vec<f64>,
    l: Vec<f64>,
) -> Result<GainSet> {
    let src = spec.sources()?;
    let n0 = select_n0(spec, delta)?;
    if k.len() != n0 || l.len() != n0 {
        return Err(Error::Dimension(format!(
            "gains must have length N0 = {n0}, got K: {}, L: {}",
            k.len(),
            l.len()
        )));
    }
    let a0 = unstable_block(spec, n0);
    let mk = margin_k(&a0, &src.beta[..n0], &k, delta);
    let ml = margin_l(&a0, &spec.output_trace(measurement)[..n0], &l, delta);
    if !(mk > 0.0 && ml > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "supplied gains do not clear the decay rate: margins {mk:.3e}, {ml:.3e}"
        )));
    }
    Ok(GainSet {
        delta,
        n0,
        measurement,
        k,
        l,
        margin_k: mk,
        margin_l: ml,
        source: GainSource::Explicit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn places_real_and_complex_targets() {
        let a = [0.5, 2.0, -1.0];
        let b = [1.0, -0.7, 0.3];
        let t = [
            Complex64::new(-2.0, 1.0),
            Complex64::new(-2.0, -1.0),
            Complex64::new(-3.0, 0.0),
        ];
        let k = place_poles(&a, &b, &t).unwrap();
        let m = DMatrix::from_fn(3, 3, |i, j| (if i == j { a[i] } else { 0.0 }) + b[i] * k[j]);
        let mut ev: Vec<Complex64> = m.complex_eigenvalues().iter().copied().collect();
        ev.sort_by(|x, y| (x.re, x.im).partial_cmp(&(y.re, y.im)).unwrap());
        assert!((ev[0] - Complex64::new(-3.0, 0.0)).norm() < 1e-9);
        assert!((ev[1] - Complex64::new(-2.0, -1.0)).norm() < 1e-9);
        assert!((ev[2] - Complex64::new(-2.0, 1.0)).norm() < 1e-9);
    }

    #[test]
    fn scalar_case() {
        let k = place_poles(&[2.0], &[1.0], &[Complex64::new(-1.0, 0.0)]).unwrap();
        assert!((k[0] + 3.0).abs() < 1e-14);
    }

    #[test]
    fn kalman_flags_zero_coefficient() {
        let r = kalman_check(&[1.0, 2.0], &[1.0, 0.0]).unwrap();
        assert!(!r.controllable);
        assert_eq!(r.offending_mode, Some(2));
        assert!(matches!(
            kalman_check(&[1.0, 1.0], &[1.0, 1.0]),
            Err(Error::DegenerateSpectrum(1, 2))
        ));
    }

    #[test]
    fn rejects_unpaired_complex_target() {
        let r = place_poles(
            &[1.0, 2.0],
            &[1.0, 1.0],
            &[Complex64::new(-1.0, 1.0), Complex64::new(-2.0, 0.0)],
        );
        assert!(matches!(r, Err(Error::InvalidTargets(_))));
    }

    #[test]
    fn ill_conditioned_pair() {
        let a: Vec<f64> = (0..12).map(|i| 1.0 + 1e-4 * i as f64).collect();
        let b = vec![1.0; 12];
        let t: Vec<Complex64> = (0..12).map(|i| Complex64::new(-1.0 - i as f64, 0.0)).collect();
        assert!(matches!(place_poles(&a, &b, &t), Err(Error::IllConditioned(_))));
    }
}
